//! Joint vehicle and CVT position estimation with interleaved particle
//! filters.
//!
//! Each vehicle carries a 2D particle filter, each CVT cluster a 3D one.
//! Within a slot the particle indices of every filter are partitioned into
//! random batches; iteration `b` re-weights batch `b` of the CVT filters
//! against a frozen snapshot of the vehicle filters and then batch `b` of
//! the vehicle filters against the just-updated CVT filters, with
//! ESS-gated systematic resampling after each update.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::{direction_vector, truncated_gaussian, MultipathObservation, NoiseModel};
use crate::cvtmap::ClusterId;
use crate::rng::{RngFactory, Stream};
use crate::world::{Position2, Position3};

const VEHICLE_KIND: u64 = 0;
const CVT_KIND: u64 = 1;
/// Kernel width floor; keeps the noise-free degenerate case well defined.
const SIGMA_W_FLOOR: f64 = 1e-9;

/// One weighted 2D hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle2 {
    pub position: Position2,
    pub weight: f64,
}

/// One weighted 3D hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle3 {
    pub position: Position3,
    pub weight: f64,
}

/// Particle filter over one vehicle's 2D position.
#[derive(Debug, Clone)]
pub struct VehicleFilter {
    pub vehicle: usize,
    pub particles: Vec<Particle2>,
    pub ue_height: f64,
    pub degeneracy_events: u64,
}

/// Particle filter over one CVT's 3D position.
#[derive(Debug, Clone)]
pub struct CvtFilter {
    pub cluster: ClusterId,
    pub particles: Vec<Particle3>,
    pub degeneracy_events: u64,
}

/// Filter-bank configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpfConfig {
    pub vehicle_particles: usize,
    pub cvt_particles: usize,
    /// Number of batch iterations per slot.
    pub batches: usize,
    /// Early-exit threshold on per-iteration vehicle estimate movement,
    /// meters.
    pub convergence_xi: f64,
    /// Fixed likelihood kernel width; `None` derives it per observation from
    /// the measurement noise.
    pub sigma_w_override: Option<f64>,
    /// Resample when the effective sample size drops below this fraction of
    /// the particle count.
    pub resample_fraction: f64,
}

impl Default for TpfConfig {
    fn default() -> Self {
        Self {
            vehicle_particles: 120,
            cvt_particles: 120,
            batches: 10,
            convergence_xi: 0.01,
            sigma_w_override: None,
            resample_fraction: 0.5,
        }
    }
}

impl TpfConfig {
    /// Kernel width for one observation: first-order propagation of the
    /// distance and angle noise at the measured range.
    pub fn sigma_w(&self, noise: &NoiseModel, obs: &MultipathObservation) -> f64 {
        self.sigma_w_override
            .unwrap_or_else(|| {
                let transverse = obs.distance * noise.sigma_angle;
                (noise.sigma_d.powi(2) + transverse.powi(2)).sqrt()
            })
            .max(SIGMA_W_FLOOR)
    }
}

/// One path association for the current slot: the observation and the CVT
/// cluster it is assigned to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLink {
    pub cluster: ClusterId,
    pub obs: MultipathObservation,
}

/// Per-slot output of the filter bank.
#[derive(Debug, Clone)]
pub struct SlotEstimates {
    pub vehicles: Vec<Position2>,
    pub cvts: BTreeMap<ClusterId, Position3>,
    pub iterations: usize,
}

impl VehicleFilter {
    /// Initial belief: particles drawn around the true position with
    /// truncated per-axis GPS noise and uniform weights.
    pub fn init_gps(
        vehicle: usize,
        truth: Position2,
        ue_height: f64,
        count: usize,
        noise: &NoiseModel,
        rng: &mut impl Rng,
    ) -> Self {
        let w = 1.0 / count as f64;
        let particles = (0..count)
            .map(|_| Particle2 {
                position: Position2::new(
                    truth.x + truncated_gaussian(noise.sigma_gps, noise.truncation, rng),
                    truth.y + truncated_gaussian(noise.sigma_gps, noise.truncation, rng),
                ),
                weight: w,
            })
            .collect();
        Self {
            vehicle,
            particles,
            ue_height,
            degeneracy_events: 0,
        }
    }

    /// Weighted mean position.
    pub fn estimate(&self) -> Position2 {
        let (mut x, mut y) = (0.0, 0.0);
        for p in &self.particles {
            x += p.weight * p.position.x;
            y += p.weight * p.position.y;
        }
        Position2::new(x, y)
    }

    pub fn weights_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }
}

impl CvtFilter {
    /// Weighted mean position.
    pub fn estimate(&self) -> Position3 {
        let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
        for p in &self.particles {
            x += p.weight * p.position.x;
            y += p.weight * p.position.y;
            z += p.weight * p.position.z;
        }
        Position3::new(x, y, z)
    }

    pub fn weights_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }
}

/// Moves every particle by the trapezoidal integral of the two velocity
/// reports, perturbed per particle by truncated speed/orientation noise.
/// Weights are untouched.
pub fn predict_vehicle(
    filter: &mut VehicleFilter,
    report_prev: [f64; 2],
    report_now: [f64; 2],
    dt: f64,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) {
    let v_avg = [
        0.5 * (report_prev[0] + report_now[0]),
        0.5 * (report_prev[1] + report_now[1]),
    ];
    let heading = v_avg[1].atan2(v_avg[0]);
    for p in &mut filter.particles {
        let n_v = truncated_gaussian(noise.sigma_v, noise.truncation, rng);
        let n_omega = truncated_gaussian(noise.sigma_omega, noise.truncation, rng);
        let dir = heading + n_omega;
        let v = [v_avg[0] + n_v * dir.cos(), v_avg[1] + n_v * dir.sin()];
        p.position = p.position + [v[0] * dt, v[1] * dt];
    }
}

/// CVT transition: the map feature is static, so prediction is the identity.
pub fn predict_cvt(filter: &mut CvtFilter) {
    let _ = filter;
}

/// Births a CVT filter from one observation: vehicle particles are sampled
/// by weight, pushed out along the measured ray, and perturbed with fresh
/// measurement-scale noise (sigma_d along the ray, range times sigma_angle
/// across it). Weights start uniform.
pub fn init_cvt_filter(
    cluster: ClusterId,
    vehicle_filter: &VehicleFilter,
    obs: &MultipathObservation,
    count: usize,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> CvtFilter {
    init_cvt_filter_multi(cluster, &[(vehicle_filter, *obs)], count, noise, rng)
}

/// Multi-observation variant used when a first-slot cluster has members
/// from several vehicles; particles cycle over the member observations.
pub fn init_cvt_filter_multi(
    cluster: ClusterId,
    members: &[(&VehicleFilter, MultipathObservation)],
    count: usize,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> CvtFilter {
    assert!(!members.is_empty(), "CVT filter needs a seeding observation");
    let w = 1.0 / count as f64;
    let particles = (0..count)
        .map(|i| {
            let (vf, obs) = &members[i % members.len()];
            let anchor = sample_by_weight(&vf.particles, rng)
                .position
                .with_z(vf.ue_height);
            let d = (obs.distance + gaussian(noise.sigma_d, rng)).max(crate::channel::MIN_DISTANCE);
            let theta = obs.theta + gaussian(noise.sigma_angle, rng);
            let phi = obs.phi + gaussian(noise.sigma_angle, rng);
            Particle3 {
                position: anchor.add(direction_vector(theta, phi, d)),
                weight: w,
            }
        })
        .collect();
    CvtFilter {
        cluster,
        particles,
        degeneracy_events: 0,
    }
}

fn gaussian(sigma: f64, rng: &mut impl Rng) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

fn sample_by_weight<'a>(particles: &'a [Particle2], rng: &mut impl Rng) -> &'a Particle2 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for p in particles {
        acc += p.weight;
        if u <= acc {
            return p;
        }
    }
    particles.last().expect("non-empty filter")
}

/// Frozen copy of a vehicle filter (particles lifted to UE height) used
/// while updating CVT filters.
#[derive(Debug, Clone)]
pub struct VehicleSnapshot {
    pub positions: Vec<Position3>,
    pub weights: Vec<f64>,
}

impl VehicleSnapshot {
    pub fn of(filter: &VehicleFilter) -> Self {
        Self {
            positions: filter
                .particles
                .iter()
                .map(|p| p.position.with_z(filter.ue_height))
                .collect(),
            weights: filter.particles.iter().map(|p| p.weight).collect(),
        }
    }
}

/// Frozen copy of a CVT filter used while updating vehicle filters.
#[derive(Debug, Clone)]
pub struct CvtSnapshot {
    pub positions: Vec<Position3>,
    pub weights: Vec<f64>,
}

impl CvtSnapshot {
    pub fn of(filter: &CvtFilter) -> Self {
        Self {
            positions: filter.particles.iter().map(|p| p.position).collect(),
            weights: filter.particles.iter().map(|p| p.weight).collect(),
        }
    }
}

/// Multiplies the weights of the batch particles of a CVT filter by the
/// product over associated paths of the weighted kernel sum against each
/// path's implied CVT points, then renormalizes the whole filter.
pub fn update_cvt_batch(
    filter: &mut CvtFilter,
    batch: &[usize],
    paths: &[(MultipathObservation, &VehicleSnapshot, f64)],
) {
    // Per path: candidate CVT points implied by each vehicle particle.
    let implied: Vec<(Vec<Position3>, &[f64], f64)> = paths
        .iter()
        .map(|(obs, snap, sigma_w)| {
            let ray = direction_vector(obs.theta, obs.phi, obs.distance);
            let pts = snap.positions.iter().map(|p| p.add(ray)).collect();
            (pts, snap.weights.as_slice(), *sigma_w)
        })
        .collect();

    for &a in batch {
        let mut factor = 1.0;
        for (pts, weights, sigma_w) in &implied {
            let inv_two_var = 1.0 / (2.0 * sigma_w * sigma_w);
            let mut path_sum = 0.0;
            for (pt, w) in pts.iter().zip(*weights) {
                let d2 = (filter.particles[a].position.x - pt.x).powi(2)
                    + (filter.particles[a].position.y - pt.y).powi(2)
                    + (filter.particles[a].position.z - pt.z).powi(2);
                path_sum += w * (-d2 * inv_two_var).exp();
            }
            factor *= path_sum;
        }
        filter.particles[a].weight *= factor;
    }
    if !normalize3(&mut filter.particles) {
        filter.degeneracy_events += 1;
    }
}

/// Vehicle counterpart: each batch particle is scored against the 2D
/// projections of the CVT particles pulled back along the measured ray.
pub fn update_vehicle_batch(
    filter: &mut VehicleFilter,
    batch: &[usize],
    paths: &[(MultipathObservation, &CvtSnapshot, f64)],
) {
    if paths.is_empty() {
        return;
    }
    let implied: Vec<(Vec<Position2>, &[f64], f64)> = paths
        .iter()
        .map(|(obs, snap, sigma_w)| {
            let ray = direction_vector(obs.theta, obs.phi, obs.distance);
            let pts = snap
                .positions
                .iter()
                .map(|p| Position2::new(p.x - ray[0], p.y - ray[1]))
                .collect();
            (pts, snap.weights.as_slice(), *sigma_w)
        })
        .collect();

    for &j in batch {
        let mut factor = 1.0;
        for (pts, weights, sigma_w) in &implied {
            let inv_two_var = 1.0 / (2.0 * sigma_w * sigma_w);
            let mut path_sum = 0.0;
            for (pt, w) in pts.iter().zip(*weights) {
                let d2 = (filter.particles[j].position.x - pt.x).powi(2)
                    + (filter.particles[j].position.y - pt.y).powi(2);
                path_sum += w * (-d2 * inv_two_var).exp();
            }
            factor *= path_sum;
        }
        filter.particles[j].weight *= factor;
    }
    if !normalize2(&mut filter.particles) {
        filter.degeneracy_events += 1;
    }
}

fn normalize2(particles: &mut [Particle2]) -> bool {
    let sum: f64 = particles.iter().map(|p| p.weight).sum();
    if sum > 0.0 && sum.is_finite() {
        particles.iter_mut().for_each(|p| p.weight /= sum);
        true
    } else {
        let w = 1.0 / particles.len() as f64;
        particles.iter_mut().for_each(|p| p.weight = w);
        false
    }
}

fn normalize3(particles: &mut [Particle3]) -> bool {
    let sum: f64 = particles.iter().map(|p| p.weight).sum();
    if sum > 0.0 && sum.is_finite() {
        particles.iter_mut().for_each(|p| p.weight /= sum);
        true
    } else {
        let w = 1.0 / particles.len() as f64;
        particles.iter_mut().for_each(|p| p.weight = w);
        false
    }
}

/// Effective sample size of a normalized weight set.
pub fn effective_sample_size(weights: impl Iterator<Item = f64>) -> f64 {
    let sum_sq: f64 = weights.map(|w| w * w).sum();
    if sum_sq > 0.0 {
        1.0 / sum_sq
    } else {
        0.0
    }
}

/// Systematic resampling index pattern for normalized weights.
fn systematic_indices(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut u: f64 = rng.random_range(0.0..step);
    let mut indices = Vec::with_capacity(n);
    let mut acc = weights[0];
    let mut j = 0;
    for _ in 0..n {
        while u > acc && j < n - 1 {
            j += 1;
            acc += weights[j];
        }
        indices.push(j);
        u += step;
    }
    indices
}

/// Resamples to equal weights when the effective sample size falls below
/// `trigger_fraction * N`; otherwise leaves the filter unchanged.
pub fn resample_vehicle(filter: &mut VehicleFilter, trigger_fraction: f64, rng: &mut impl Rng) {
    let n = filter.particles.len();
    let ess = effective_sample_size(filter.particles.iter().map(|p| p.weight));
    if ess >= trigger_fraction * n as f64 {
        return;
    }
    let weights: Vec<f64> = filter.particles.iter().map(|p| p.weight).collect();
    let picks = systematic_indices(&weights, rng);
    let w = 1.0 / n as f64;
    filter.particles = picks
        .iter()
        .map(|&i| Particle2 {
            position: filter.particles[i].position,
            weight: w,
        })
        .collect();
}

/// CVT counterpart of [`resample_vehicle`].
pub fn resample_cvt(filter: &mut CvtFilter, trigger_fraction: f64, rng: &mut impl Rng) {
    let n = filter.particles.len();
    let ess = effective_sample_size(filter.particles.iter().map(|p| p.weight));
    if ess >= trigger_fraction * n as f64 {
        return;
    }
    let weights: Vec<f64> = filter.particles.iter().map(|p| p.weight).collect();
    let picks = systematic_indices(&weights, rng);
    let w = 1.0 / n as f64;
    filter.particles = picks
        .iter()
        .map(|&i| Particle3 {
            position: filter.particles[i].position,
            weight: w,
        })
        .collect();
}

/// Random near-equal partition of `0..n` into exactly `batches` index sets
/// (empty sets when `n < batches`).
pub fn batch_partition(n: usize, batches: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        indices.swap(i, rng.random_range(0..=i));
    }
    let batches = batches.max(1);
    let base = n / batches;
    let extra = n % batches;
    let mut out = Vec::with_capacity(batches);
    let mut at = 0;
    for b in 0..batches {
        let size = base + usize::from(b < extra);
        out.push(indices[at..at + size].to_vec());
        at += size;
    }
    out
}

/// Runs one slot of interleaved batch updates. Predictions must already be
/// applied; `links` carries this slot's path-to-cluster associations.
/// Returns the final estimates and the number of iterations executed.
pub fn run_slot(
    vehicles: &mut [VehicleFilter],
    cvts: &mut BTreeMap<ClusterId, CvtFilter>,
    links: &[PathLink],
    cfg: &TpfConfig,
    noise: &NoiseModel,
    rng: &RngFactory,
    slot: u64,
) -> SlotEstimates {
    let vehicle_count = vehicles.len();

    let mut cluster_paths: BTreeMap<ClusterId, Vec<MultipathObservation>> = BTreeMap::new();
    let mut vehicle_paths: Vec<Vec<(ClusterId, MultipathObservation)>> =
        vec![Vec::new(); vehicle_count];
    for link in links {
        cluster_paths.entry(link.cluster).or_default().push(link.obs);
        vehicle_paths[link.obs.vehicle].push((link.cluster, link.obs));
    }

    let vehicle_batches: Vec<Vec<Vec<usize>>> = vehicles
        .iter()
        .map(|f| {
            let mut r = rng.stream(Stream::Batch {
                kind: VEHICLE_KIND,
                id: f.vehicle as u64,
                slot,
            });
            batch_partition(f.particles.len(), cfg.batches, &mut r)
        })
        .collect();
    let cvt_batches: BTreeMap<ClusterId, Vec<Vec<usize>>> = cvts
        .iter()
        .map(|(&id, f)| {
            let mut r = rng.stream(Stream::Batch {
                kind: CVT_KIND,
                id,
                slot,
            });
            (id, batch_partition(f.particles.len(), cfg.batches, &mut r))
        })
        .collect();

    let mut prev_estimates: Vec<Position2> = vehicles.iter().map(|f| f.estimate()).collect();
    let mut iterations = 0;

    for b in 0..cfg.batches {
        iterations = b + 1;

        // Sub-process one: CVT mapping against frozen vehicle beliefs.
        let vehicle_snapshots: Vec<VehicleSnapshot> =
            vehicles.iter().map(VehicleSnapshot::of).collect();
        for (&id, filter) in cvts.iter_mut() {
            let Some(obs_list) = cluster_paths.get(&id) else {
                continue;
            };
            let batch = &cvt_batches[&id][b];
            let paths: Vec<(MultipathObservation, &VehicleSnapshot, f64)> = obs_list
                .iter()
                .map(|obs| {
                    (
                        *obs,
                        &vehicle_snapshots[obs.vehicle],
                        cfg.sigma_w(noise, obs),
                    )
                })
                .collect();
            update_cvt_batch(filter, batch, &paths);
            let mut r = rng.stream(Stream::Resample {
                kind: CVT_KIND,
                id,
                slot,
                iter: b as u64,
            });
            resample_cvt(filter, cfg.resample_fraction, &mut r);
        }

        // Sub-process two: vehicle localization against the updated CVTs.
        let cvt_snapshots: BTreeMap<ClusterId, CvtSnapshot> =
            cvts.iter().map(|(&id, f)| (id, CvtSnapshot::of(f))).collect();
        for filter in vehicles.iter_mut() {
            let assigned = &vehicle_paths[filter.vehicle];
            if assigned.is_empty() {
                continue;
            }
            let paths: Vec<(MultipathObservation, &CvtSnapshot, f64)> = assigned
                .iter()
                .filter_map(|(cluster, obs)| {
                    cvt_snapshots
                        .get(cluster)
                        .map(|snap| (*obs, snap, cfg.sigma_w(noise, obs)))
                })
                .collect();
            if paths.is_empty() {
                continue;
            }
            let batch = &vehicle_batches[filter.vehicle][b];
            update_vehicle_batch(filter, batch, &paths);
            let mut r = rng.stream(Stream::Resample {
                kind: VEHICLE_KIND,
                id: filter.vehicle as u64,
                slot,
                iter: b as u64,
            });
            resample_vehicle(filter, cfg.resample_fraction, &mut r);
        }

        // Sub-process three: state estimation and the early exit on vehicle
        // estimate movement.
        let estimates: Vec<Position2> = vehicles.iter().map(|f| f.estimate()).collect();
        let converged = estimates
            .iter()
            .zip(&prev_estimates)
            .all(|(now, before)| now.distance_to(*before) < cfg.convergence_xi);
        prev_estimates = estimates;
        if converged {
            break;
        }
    }

    SlotEstimates {
        vehicles: prev_estimates,
        cvts: cvts.iter().map(|(&id, f)| (id, f.estimate())).collect(),
        iterations,
    }
}
