//! Noisy multipath measurement synthesis and its inverse: every geometric
//! path is reported as a (theta, phi, distance) triple measured on the
//! straightened link from the path's virtual transmitter to the UE.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as GaussianDist};

use crate::world::{visible_paths, Position3, ScenarioWorld, VehicleTruth};
use crate::{Error, Result};

/// Smallest distance a measurement may report; keeps logs and ray geometry
/// away from zero.
pub const MIN_DISTANCE: f64 = 1e-6;

/// One measured path: two arrival angles plus ToA expressed as a distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathObservation {
    pub theta: f64,
    pub phi: f64,
    pub distance: f64,
    /// Vehicle that measured the path.
    pub vehicle: usize,
    /// 1-based path index within that vehicle's slot observation.
    pub path: usize,
}

/// Measurement and motion noise magnitudes. All Gaussian draws are rejected
/// outside `truncation` standard deviations and redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// ToA-distance noise, meters.
    pub sigma_d: f64,
    /// Noise on each arrival angle, radians.
    pub sigma_angle: f64,
    /// Speed noise, m/s.
    pub sigma_v: f64,
    /// Speed-orientation noise, rad.
    pub sigma_omega: f64,
    /// Initial-fix noise per axis, meters.
    pub sigma_gps: f64,
    /// Truncation bound as a multiple of sigma.
    pub truncation: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_d: 2.61,
            sigma_angle: 2.08_f64.to_radians(),
            sigma_v: 0.1,
            sigma_omega: 0.1_f64.to_radians(),
            sigma_gps: 3.0,
            truncation: 2.0,
        }
    }
}

impl NoiseModel {
    /// A noise model with every sigma zero.
    pub fn noiseless() -> Self {
        Self {
            sigma_d: 0.0,
            sigma_angle: 0.0,
            sigma_v: 0.0,
            sigma_omega: 0.0,
            sigma_gps: 0.0,
            truncation: 2.0,
        }
    }
}

/// Reported (noisy) velocity of one vehicle for one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionReport {
    pub velocity: [f64; 2],
}

/// Zero-mean Gaussian draw with sigma `sigma`, redrawn until it lies within
/// `bound` standard deviations.
pub fn truncated_gaussian(sigma: f64, bound: f64, rng: &mut impl Rng) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let dist = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    loop {
        let x = dist.sample(rng);
        if x.abs() <= bound * sigma {
            return x;
        }
    }
}

/// The measurement vector operator: offset of length `d` in the direction
/// given by the two arrival angles.
pub fn direction_vector(theta: f64, phi: f64, d: f64) -> [f64; 3] {
    [
        d * phi.sin() * theta.cos(),
        d * phi.sin() * theta.sin(),
        d * phi.cos(),
    ]
}

/// Inverse of [`direction_vector`]: angles and length of an offset.
pub fn angles_of_offset(offset: [f64; 3]) -> (f64, f64, f64) {
    let d = (offset[0].powi(2) + offset[1].powi(2) + offset[2].powi(2)).sqrt();
    if d == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let phi = (offset[2] / d).clamp(-1.0, 1.0).acos();
    let theta = offset[1].atan2(offset[0]);
    (theta, phi, d)
}

/// VT position implied by a vehicle position estimate and one measurement.
pub fn vt_from_observation(vehicle: Position3, z: &MultipathObservation) -> Position3 {
    vehicle.add(direction_vector(z.theta, z.phi, z.distance))
}

/// Synthesizes this slot's noisy measurements for one vehicle: the exact
/// angles/distance of each visible path's straightened link, plus truncated
/// Gaussian noise on each component.
pub fn observe_paths(
    world: &ScenarioWorld,
    truth: &VehicleTruth,
    vehicle: usize,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Vec<MultipathObservation> {
    let ue = truth.position3();
    visible_paths(world, truth)
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let (theta, phi, d) = angles_of_offset(path.virtual_transmitter.sub(ue));
            let d_noisy = d + truncated_gaussian(noise.sigma_d, noise.truncation, rng);
            let theta_noisy = theta + truncated_gaussian(noise.sigma_angle, noise.truncation, rng);
            let phi_noisy = phi + truncated_gaussian(noise.sigma_angle, noise.truncation, rng);
            MultipathObservation {
                theta: theta_noisy,
                phi: phi_noisy,
                distance: d_noisy.max(MIN_DISTANCE),
                vehicle,
                path: i + 1,
            }
        })
        .collect()
}

/// Reports a velocity with speed/orientation noise: a perturbation of
/// magnitude `n_v` at angle `n_omega` relative to the true heading.
pub fn report_motion(
    true_velocity: [f64; 2],
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> MotionReport {
    let n_v = truncated_gaussian(noise.sigma_v, noise.truncation, rng);
    let n_omega = truncated_gaussian(noise.sigma_omega, noise.truncation, rng);
    let heading = true_velocity[1].atan2(true_velocity[0]);
    let dir = heading + n_omega;
    MotionReport {
        velocity: [
            true_velocity[0] + n_v * dir.cos(),
            true_velocity[1] + n_v * dir.sin(),
        ],
    }
}

/// Solves for the Gaussian sigma whose absolute value has the given median:
/// the sigma with `P(|X| <= median_error) = 1/2`.
pub fn calibrate_sigma_from_median(median_error: f64) -> Result<f64> {
    if !(median_error > 0.0) {
        return Err(Error::NonPositive {
            what: "median error",
            value: median_error,
        });
    }
    let std_normal = GaussianDist::standard();
    Ok(median_error / std_normal.inverse_cdf(0.75))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{
        mirror_transmitter, PathKind, Position2, ReflectingPlane, RoadBounds, ScenarioWorld,
        Trajectory, TrajectoryModel,
    };
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn direction_vector_axis_cases() {
        let v = direction_vector(0.0, FRAC_PI_2, 5.0);
        assert_relative_eq!(v[0], 5.0);
        assert_relative_eq!(v[1], 0.0);
        assert_relative_eq!(v[2], 0.0, epsilon = 1e-12);

        let v = direction_vector(FRAC_PI_2, FRAC_PI_2, 1.0);
        assert_relative_eq!(v[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(v[1], 1.0);

        let v = direction_vector(1.234, 0.0, 3.0);
        assert_relative_eq!(v[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(v[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(v[2], 3.0);
    }

    #[test]
    fn direction_vector_norm_equals_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let theta = rng.random_range(-PI..PI);
            let phi = rng.random_range(0.0..PI);
            let d = rng.random_range(0.0..500.0);
            let v = direction_vector(theta, phi, d);
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert_relative_eq!(n, d, epsilon = 1e-9 * (1.0 + d));
        }
    }

    #[test]
    fn vt_from_observation_axis_case() {
        let z = MultipathObservation {
            theta: 0.0,
            phi: FRAC_PI_2,
            distance: 10.0,
            vehicle: 0,
            path: 1,
        };
        let vt = vt_from_observation(Position3::new(0.0, 0.0, 1.5), &z);
        assert_relative_eq!(vt.x, 10.0);
        assert_relative_eq!(vt.y, 0.0);
        assert_relative_eq!(vt.z, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn vt_estimate_is_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let z = MultipathObservation {
                theta: rng.random_range(-PI..PI),
                phi: rng.random_range(0.0..PI),
                distance: rng.random_range(0.1..200.0),
                vehicle: 0,
                path: 1,
            };
            let base = Position3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                1.5,
            );
            let delta = [1.0, -2.5, 0.0];
            let a = vt_from_observation(base.add(delta), &z);
            let b = vt_from_observation(base, &z).add(delta);
            assert!(a.distance_to(b) < 1e-9);
        }
    }

    fn test_world() -> ScenarioWorld {
        ScenarioWorld {
            base_station: Position3::new(50.0, 0.0, 8.0),
            planes: vec![ReflectingPlane::new(
                Position2::new(0.0, 16.0),
                Position2::new(132.0, 16.0),
                10.0,
            )],
            vehicles: vec![Trajectory::new(vec![TrajectoryModel::Uniform {
                start_time: 0.0,
                start: Position2::new(60.0, -3.0),
                velocity: [8.0, 0.0],
            }])],
            slot_duration: 0.1,
            slot_count: 300,
            bounds: RoadBounds {
                x_min: 0.0,
                x_max: 132.0,
                y_min: -16.0,
                y_max: 16.0,
            },
            ue_height: 1.5,
        }
    }

    #[test]
    fn zero_noise_observation_round_trips_exactly() {
        let world = test_world();
        let truth = world.vehicle_truth(0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = observe_paths(&world, &truth, 0, &NoiseModel::noiseless(), &mut rng);
        let geo = visible_paths(&world, &truth);
        assert_eq!(obs.len(), geo.len());
        for (z, g) in obs.iter().zip(&geo) {
            let vt = vt_from_observation(truth.position3(), z);
            assert!(vt.distance_to(g.virtual_transmitter) < 1e-9);
        }
    }

    #[test]
    fn los_path_recovers_base_station() {
        let world = test_world();
        let truth = world.vehicle_truth(0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs = observe_paths(&world, &truth, 0, &NoiseModel::noiseless(), &mut rng);
        let geo = visible_paths(&world, &truth);
        let los = geo
            .iter()
            .position(|p| p.kind == PathKind::LineOfSight)
            .unwrap();
        let vt = vt_from_observation(truth.position3(), &obs[los]);
        assert!(vt.distance_to(world.base_station) < 1e-9);
    }

    #[test]
    fn zero_noise_reflection_recovers_mirror_point() {
        let world = test_world();
        let truth = world.vehicle_truth(0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs = observe_paths(&world, &truth, 0, &NoiseModel::noiseless(), &mut rng);
        let geo = visible_paths(&world, &truth);
        let refl = geo
            .iter()
            .position(|p| matches!(p.kind, PathKind::Reflection(_)))
            .unwrap();
        let vt = vt_from_observation(truth.position3(), &obs[refl]);
        let mirror = mirror_transmitter(world.base_station, &world.planes[0]);
        assert!(vt.distance_to(mirror) < 1e-9);
    }

    #[test]
    fn distance_noise_respects_truncation_bound() {
        let world = test_world();
        let truth = world.vehicle_truth(0, 0.0).unwrap();
        let noise = NoiseModel {
            sigma_d: 2.61,
            sigma_angle: 0.0,
            ..NoiseModel::noiseless()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let geo = visible_paths(&world, &truth);
        let ue = truth.position3();
        for _ in 0..2000 {
            let obs = observe_paths(&world, &truth, 0, &noise, &mut rng);
            for (z, g) in obs.iter().zip(&geo) {
                let d_true = g.virtual_transmitter.distance_to(ue);
                assert!((z.distance - d_true).abs() <= 2.0 * 2.61 + 1e-12);
            }
        }
    }

    #[test]
    fn truncated_gaussian_never_exceeds_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1_000_000 {
            let x = truncated_gaussian(1.7, 2.0, &mut rng);
            assert!(x.abs() <= 3.4);
        }
    }

    #[test]
    fn report_motion_zero_noise_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let exact = report_motion([3.0, 4.0], &NoiseModel::noiseless(), &mut rng);
        assert_eq!(exact.velocity, [3.0, 4.0]);

        let noise = NoiseModel {
            sigma_v: 0.1,
            ..NoiseModel::noiseless()
        };
        for _ in 0..5000 {
            let r = report_motion([3.0, 4.0], &noise, &mut rng);
            let dv = ((r.velocity[0] - 3.0).powi(2) + (r.velocity[1] - 4.0).powi(2)).sqrt();
            assert!(dv <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn report_motion_is_deterministic_per_seed() {
        let noise = NoiseModel::default();
        let a = report_motion([1.0, 0.5], &noise, &mut ChaCha8Rng::seed_from_u64(77));
        let b = report_motion([1.0, 0.5], &noise, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a.velocity, b.velocity);
    }

    #[test]
    fn calibration_reproduces_reported_sigmas() {
        let sigma_d = calibrate_sigma_from_median(1.76).unwrap();
        assert!((sigma_d - 2.61).abs() < 0.01);
        let sigma_deg = calibrate_sigma_from_median(1.4).unwrap();
        assert!((sigma_deg - 2.08).abs() < 0.01);
    }

    #[test]
    fn calibration_rejects_non_positive_input() {
        assert!(calibrate_sigma_from_median(0.0).is_err());
        assert!(calibrate_sigma_from_median(-1.0).is_err());
    }

    /// Independent check of the calibration identity: Simpson quadrature of
    /// the N(0, sigma^2) density over [-e, e] must give 1/2.
    #[test]
    fn calibration_satisfies_the_median_integral() {
        fn gaussian_mass(sigma: f64, e: f64) -> f64 {
            let n = 20_000;
            let h = 2.0 * e / n as f64;
            let pdf = |x: f64| {
                (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
            };
            let mut acc = pdf(-e) + pdf(e);
            for i in 1..n {
                let x = -e + i as f64 * h;
                acc += pdf(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        }
        for e in [0.5, 1.4, 1.76, 10.0] {
            let sigma = calibrate_sigma_from_median(e).unwrap();
            assert!((gaussian_mass(sigma, e) - 0.5).abs() < 1e-6);
        }
    }

    /// The calibration is the inverse of the median-of-|samples| map.
    #[test]
    fn calibration_inverts_the_sample_median() {
        let e = 1.76;
        let sigma = calibrate_sigma_from_median(e).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dist = Normal::new(0.0, sigma).unwrap();
        let mut abs: Vec<f64> = (0..200_000).map(|_| dist.sample(&mut rng).abs()).collect();
        abs.sort_by(f64::total_cmp);
        let median = abs[abs.len() / 2];
        assert!((median - e).abs() < 0.02);
    }
}
