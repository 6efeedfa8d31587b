//! Ground-truth scene: base station, reflecting building faces, vehicle
//! trajectories, and the mirror-image virtual transmitters each path implies.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// 2D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position2 {
    pub x: f64,
    pub y: f64,
}

impl Position2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, other: Position2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// Lifts to 3D at the given height.
    pub fn with_z(&self, z: f64) -> Position3 {
        Position3::new(self.x, self.y, z)
    }
}

impl std::ops::Add<[f64; 2]> for Position2 {
    type Output = Position2;
    fn add(self, v: [f64; 2]) -> Position2 {
        Position2::new(self.x + v[0], self.y + v[1])
    }
}

/// 3D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance_to(&self, other: Position3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2))
            .sqrt()
    }

    pub fn xy(&self) -> Position2 {
        Position2::new(self.x, self.y)
    }

    pub fn add(&self, v: [f64; 3]) -> Position3 {
        Position3::new(self.x + v[0], self.y + v[1], self.z + v[2])
    }

    pub fn sub(&self, other: Position3) -> [f64; 3] {
        [self.x - other.x, self.y - other.y, self.z - other.z]
    }
}

/// Vertical planar building face: a 2D ground segment extruded up to `height`.
///
/// The face reflects on both sides; its supporting plane is the infinite
/// vertical plane through the segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectingPlane {
    pub a: Position2,
    pub b: Position2,
    pub height: f64,
}

impl ReflectingPlane {
    pub fn new(a: Position2, b: Position2, height: f64) -> Self {
        debug_assert!(a.distance_to(b) > 0.0, "degenerate face segment");
        debug_assert!(height > 0.0, "face height must be positive");
        Self { a, b, height }
    }

    /// Horizontal unit normal of the supporting plane.
    pub fn normal(&self) -> [f64; 2] {
        let dx = self.b.x - self.a.x;
        let dy = self.b.y - self.a.y;
        let len = (dx * dx + dy * dy).sqrt();
        [-dy / len, dx / len]
    }

    /// Signed distance of a 2D point from the supporting plane.
    fn signed_distance(&self, p: Position2) -> f64 {
        let n = self.normal();
        (p.x - self.a.x) * n[0] + (p.y - self.a.y) * n[1]
    }

    /// Fraction along the segment of the closest point on the supporting line.
    fn segment_param(&self, p: Position2) -> f64 {
        let dx = self.b.x - self.a.x;
        let dy = self.b.y - self.a.y;
        ((p.x - self.a.x) * dx + (p.y - self.a.y) * dy) / (dx * dx + dy * dy)
    }
}

/// Reflects `point` across the infinite vertical plane containing `plane`'s
/// face. The z component is unchanged.
pub fn mirror_transmitter(point: Position3, plane: &ReflectingPlane) -> Position3 {
    let n = plane.normal();
    let d = plane.signed_distance(point.xy());
    Position3::new(point.x - 2.0 * d * n[0], point.y - 2.0 * d * n[1], point.z)
}

/// Specular reflection point of the path `tx -> rx` via `plane`, if the
/// bounce is geometrically valid: both endpoints on the same side, the
/// specular point inside the face segment and below its height.
pub fn reflection_point(tx: Position3, rx: Position3, plane: &ReflectingPlane) -> Option<Position3> {
    let vt = mirror_transmitter(tx, plane);
    let d_vt = plane.signed_distance(vt.xy());
    let d_rx = plane.signed_distance(rx.xy());
    // The straightened path vt -> rx must cross the plane strictly.
    if d_vt * d_rx >= 0.0 {
        return None;
    }
    let t = d_vt / (d_vt - d_rx);
    let p = Position3::new(
        vt.x + t * (rx.x - vt.x),
        vt.y + t * (rx.y - vt.y),
        vt.z + t * (rx.z - vt.z),
    );
    if p.z < 0.0 || p.z > plane.height {
        return None;
    }
    let s = plane.segment_param(p.xy());
    if !(0.0..=1.0).contains(&s) {
        return None;
    }
    Some(p)
}

/// Whether the 3D segment `p -> q` is blocked by the face. Uses the 2D
/// crossing of the ground segments plus the crossing height against the face
/// height; touching an endpoint of `p -> q` does not block.
fn face_blocks(p: Position3, q: Position3, plane: &ReflectingPlane) -> bool {
    const EPS: f64 = 1e-9;
    let dp = plane.signed_distance(p.xy());
    let dq = plane.signed_distance(q.xy());
    if dp * dq >= 0.0 {
        return false;
    }
    let t = dp / (dp - dq);
    if t <= EPS || t >= 1.0 - EPS {
        return false;
    }
    let hit = Position2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y));
    let s = plane.segment_param(hit);
    if !(0.0..=1.0).contains(&s) {
        return false;
    }
    let z = p.z + t * (q.z - p.z);
    z < plane.height
}

/// One motion phase. Each variant carries its own start time so that a
/// sequence of phases forms a piecewise-smooth trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrajectoryModel {
    /// Constant-velocity motion.
    Uniform {
        start_time: f64,
        start: Position2,
        velocity: [f64; 2],
    },
    /// Constant-acceleration motion.
    Accelerated {
        start_time: f64,
        start: Position2,
        velocity: [f64; 2],
        accel: [f64; 2],
    },
    /// Constant-rate circular motion; positive rate is counter-clockwise.
    Circular {
        start_time: f64,
        center: Position2,
        radius: f64,
        angular_rate: f64,
        start_angle: f64,
    },
}

impl TrajectoryModel {
    pub fn start_time(&self) -> f64 {
        match *self {
            TrajectoryModel::Uniform { start_time, .. }
            | TrajectoryModel::Accelerated { start_time, .. }
            | TrajectoryModel::Circular { start_time, .. } => start_time,
        }
    }
}

/// Exact vehicle state at time `t`: position, velocity, antenna height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleTruth {
    pub position: Position2,
    pub velocity: [f64; 2],
    pub ue_height: f64,
}

impl VehicleTruth {
    /// UE antenna position in 3D.
    pub fn position3(&self) -> Position3 {
        self.position.with_z(self.ue_height)
    }

    pub fn speed(&self) -> f64 {
        (self.velocity[0].powi(2) + self.velocity[1].powi(2)).sqrt()
    }
}

/// Evaluates one motion phase at absolute time `t`. `t` must not precede the
/// phase start. `ue_height` is attached to the returned state.
pub fn evaluate_trajectory(model: &TrajectoryModel, t: f64, ue_height: f64) -> Result<VehicleTruth> {
    let tau = t - model.start_time();
    if tau < 0.0 {
        return Err(Error::OutOfHorizon {
            t,
            min: model.start_time(),
            max: f64::INFINITY,
        });
    }
    let (position, velocity) = match *model {
        TrajectoryModel::Uniform { start, velocity, .. } => {
            (start + [velocity[0] * tau, velocity[1] * tau], velocity)
        }
        TrajectoryModel::Accelerated {
            start,
            velocity,
            accel,
            ..
        } => (
            start
                + [
                    velocity[0] * tau + 0.5 * accel[0] * tau * tau,
                    velocity[1] * tau + 0.5 * accel[1] * tau * tau,
                ],
            [velocity[0] + accel[0] * tau, velocity[1] + accel[1] * tau],
        ),
        TrajectoryModel::Circular {
            center,
            radius,
            angular_rate,
            start_angle,
            ..
        } => {
            let theta = start_angle + angular_rate * tau;
            let position = center + [radius * theta.cos(), radius * theta.sin()];
            let speed = radius * angular_rate;
            (position, [-speed * theta.sin(), speed * theta.cos()])
        }
    };
    Ok(VehicleTruth {
        position,
        velocity,
        ue_height,
    })
}

/// Piecewise trajectory: consecutive motion phases sorted by start time.
/// Phases may start before t = 0 so that a vehicle can begin mid-lap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub segments: Vec<TrajectoryModel>,
}

impl Trajectory {
    pub fn new(segments: Vec<TrajectoryModel>) -> Self {
        debug_assert!(!segments.is_empty());
        debug_assert!(segments
            .windows(2)
            .all(|w| w[0].start_time() <= w[1].start_time()));
        Self { segments }
    }

    /// Evaluates the active phase at time `t`.
    pub fn evaluate(&self, t: f64, ue_height: f64) -> Result<VehicleTruth> {
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| s.start_time() <= t)
            .ok_or(Error::OutOfHorizon {
                t,
                min: self.segments[0].start_time(),
                max: f64::INFINITY,
            })?;
        evaluate_trajectory(seg, t, ue_height)
    }
}

/// Axis-aligned road rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl RoadBounds {
    pub fn contains(&self, p: Position2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// How an observed path reached the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    LineOfSight,
    /// Single bounce off the indexed plane.
    Reflection(usize),
}

/// One geometric (noise-free) propagation path and its virtual transmitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricPath {
    pub kind: PathKind,
    pub virtual_transmitter: Position3,
}

/// Full ground-truth scene.
#[derive(Debug, Clone)]
pub struct ScenarioWorld {
    pub base_station: Position3,
    pub planes: Vec<ReflectingPlane>,
    pub vehicles: Vec<Trajectory>,
    pub slot_duration: f64,
    pub slot_count: u64,
    pub bounds: RoadBounds,
    pub ue_height: f64,
}

impl ScenarioWorld {
    pub fn horizon(&self) -> f64 {
        self.slot_count as f64 * self.slot_duration
    }

    /// Absolute time of slot `k` (slot 0 is the initial state).
    pub fn slot_time(&self, slot: u64) -> f64 {
        slot as f64 * self.slot_duration
    }

    /// Ground-truth state of vehicle `m` at time `t`.
    pub fn vehicle_truth(&self, vehicle: usize, t: f64) -> Result<VehicleTruth> {
        if t < 0.0 || t > self.horizon() {
            return Err(Error::OutOfHorizon {
                t,
                min: 0.0,
                max: self.horizon(),
            });
        }
        self.vehicles[vehicle].evaluate(t, self.ue_height)
    }

    /// All true VT positions: the base station plus its mirror across every
    /// face's supporting plane.
    pub fn true_virtual_transmitters(&self) -> Vec<Position3> {
        let mut vts = vec![self.base_station];
        vts.extend(
            self.planes
                .iter()
                .map(|p| mirror_transmitter(self.base_station, p)),
        );
        vts
    }
}

/// Geometric paths from the base station to the given vehicle: the LOS link
/// when unobstructed, plus one single-bounce path per face with a valid
/// specular point whose sub-segments are clear of the other faces.
pub fn visible_paths(world: &ScenarioWorld, vehicle: &VehicleTruth) -> Vec<GeometricPath> {
    let ue = vehicle.position3();
    let bs = world.base_station;
    let mut paths = Vec::new();

    let los_clear = !world.planes.iter().any(|p| face_blocks(bs, ue, p));
    if los_clear {
        paths.push(GeometricPath {
            kind: PathKind::LineOfSight,
            virtual_transmitter: bs,
        });
    }

    for (i, plane) in world.planes.iter().enumerate() {
        let Some(point) = reflection_point(bs, ue, plane) else {
            continue;
        };
        let obstructed = world.planes.iter().enumerate().any(|(j, other)| {
            j != i && (face_blocks(bs, point, other) || face_blocks(point, ue, other))
        });
        if !obstructed {
            paths.push(GeometricPath {
                kind: PathKind::Reflection(i),
                virtual_transmitter: mirror_transmitter(bs, plane),
            });
        }
    }
    paths
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wall_y16() -> ReflectingPlane {
        ReflectingPlane::new(Position2::new(0.0, 16.0), Position2::new(132.0, 16.0), 10.0)
    }

    #[test]
    fn uniform_trajectory_example() {
        let m = TrajectoryModel::Uniform {
            start_time: 0.0,
            start: Position2::new(0.0, 0.0),
            velocity: [10.0, 0.0],
        };
        let s = evaluate_trajectory(&m, 1.0, 1.5).unwrap();
        assert_relative_eq!(s.position.x, 10.0);
        assert_relative_eq!(s.position.y, 0.0);
        assert_eq!(s.velocity, [10.0, 0.0]);
    }

    #[test]
    fn accelerated_trajectory_example() {
        let m = TrajectoryModel::Accelerated {
            start_time: 0.0,
            start: Position2::new(0.0, 0.0),
            velocity: [0.0, 0.0],
            accel: [2.0, 0.0],
        };
        let s = evaluate_trajectory(&m, 3.0, 1.5).unwrap();
        assert_relative_eq!(s.position.x, 9.0);
        assert_eq!(s.velocity, [6.0, 0.0]);
    }

    #[test]
    fn circular_trajectory_example() {
        let m = TrajectoryModel::Circular {
            start_time: 0.0,
            center: Position2::new(0.0, 0.0),
            radius: 10.0,
            angular_rate: std::f64::consts::FRAC_PI_2,
            start_angle: 0.0,
        };
        let s = evaluate_trajectory(&m, 1.0, 1.5).unwrap();
        assert_relative_eq!(s.position.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.position.y, 10.0);
        assert_relative_eq!(s.speed(), 5.0 * std::f64::consts::PI);
    }

    #[test]
    fn trajectory_before_start_errors() {
        let m = TrajectoryModel::Uniform {
            start_time: 2.0,
            start: Position2::new(0.0, 0.0),
            velocity: [1.0, 0.0],
        };
        assert!(evaluate_trajectory(&m, 1.0, 1.5).is_err());
    }

    #[test]
    fn world_rejects_time_outside_horizon() {
        let world = one_plane_world();
        assert!(world.vehicle_truth(0, -0.1).is_err());
        assert!(world.vehicle_truth(0, world.horizon() + 0.1).is_err());
        assert!(world.vehicle_truth(0, 1.0).is_ok());
    }

    #[test]
    fn mirror_across_y16() {
        let vt = mirror_transmitter(Position3::new(50.0, 0.0, 8.0), &wall_y16());
        assert_relative_eq!(vt.x, 50.0, epsilon = 1e-12);
        assert_relative_eq!(vt.y, 32.0, epsilon = 1e-12);
        assert_relative_eq!(vt.z, 8.0);
    }

    #[test]
    fn mirror_across_x0() {
        let plane = ReflectingPlane::new(
            Position2::new(0.0, -16.0),
            Position2::new(0.0, 16.0),
            10.0,
        );
        let vt = mirror_transmitter(Position3::new(50.0, 0.0, 8.0), &plane);
        assert_relative_eq!(vt.x, -50.0, epsilon = 1e-12);
        assert_relative_eq!(vt.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mirror_fixes_points_on_plane() {
        let p = Position3::new(12.0, 16.0, 3.0);
        let vt = mirror_transmitter(p, &wall_y16());
        assert_relative_eq!(vt.distance_to(p), 0.0, epsilon = 1e-12);
    }

    fn random_plane(rng: &mut impl Rng) -> ReflectingPlane {
        let a = Position2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let len: f64 = rng.random_range(2.0..40.0);
        let b = Position2::new(a.x + len * ang.cos(), a.y + len * ang.sin());
        ReflectingPlane::new(a, b, rng.random_range(3.0..20.0))
    }

    #[test]
    fn mirror_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let plane = random_plane(&mut rng);
            let p = Position3::new(
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
                rng.random_range(0.0..15.0),
            );
            let back = mirror_transmitter(mirror_transmitter(p, &plane), &plane);
            assert!(back.distance_to(p) < 1e-9);
        }
    }

    #[test]
    fn image_source_identity_and_specular_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 300 {
            let plane = random_plane(&mut rng);
            let n = plane.normal();
            // Sample both endpoints on the same side of the plane.
            let side: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mid = Position2::new(
                (plane.a.x + plane.b.x) / 2.0,
                (plane.a.y + plane.b.y) / 2.0,
            );
            let mut sample = |rng: &mut ChaCha8Rng| {
                let off: f64 = rng.random_range(0.5..30.0);
                let along: f64 = rng.random_range(-10.0..10.0);
                Position3::new(
                    mid.x + side * off * n[0] + along * (plane.b.x - plane.a.x) / 20.0,
                    mid.y + side * off * n[1] + along * (plane.b.y - plane.a.y) / 20.0,
                    rng.random_range(0.5..plane.height),
                )
            };
            let tx = sample(&mut rng);
            let rx = sample(&mut rng);
            let Some(p) = reflection_point(tx, rx, &plane) else {
                continue;
            };
            checked += 1;

            let vt = mirror_transmitter(tx, &plane);
            let bounced = tx.distance_to(p) + p.distance_to(rx);
            assert!((bounced - vt.distance_to(rx)).abs() < 1e-9);

            // Specular property: both rays make the same angle with the
            // horizontal plane normal at the bounce point.
            let din = p.sub(tx);
            let dout = rx.sub(p);
            let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let cos_in = (din[0] * n[0] + din[1] * n[1]).abs() / norm(din);
            let cos_out = (dout[0] * n[0] + dout[1] * n[1]).abs() / norm(dout);
            assert!((cos_in.acos() - cos_out.acos()).abs() < 1e-9);
        }
    }

    fn one_plane_world() -> ScenarioWorld {
        ScenarioWorld {
            base_station: Position3::new(50.0, 0.0, 8.0),
            planes: vec![wall_y16()],
            vehicles: vec![Trajectory::new(vec![TrajectoryModel::Uniform {
                start_time: 0.0,
                start: Position2::new(50.0, 2.0),
                velocity: [1.0, 0.0],
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
    fn single_plane_gives_los_plus_reflection() {
        let world = one_plane_world();
        let truth = world.vehicle_truth(0, 0.0).unwrap();
        let paths = visible_paths(&world, &truth);
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[0].kind, PathKind::LineOfSight);
        assert_eq!(paths[0].virtual_transmitter, world.base_station);
        assert_eq!(paths[1].kind, PathKind::Reflection(0));
        let vt = paths[1].virtual_transmitter;
        assert_relative_eq!(vt.y, 32.0, epsilon = 1e-12);
    }

    #[test]
    fn no_planes_gives_los_only() {
        let mut world = one_plane_world();
        world.planes.clear();
        let truth = world.vehicle_truth(0, 0.0).unwrap();
        let paths = visible_paths(&world, &truth);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].virtual_transmitter, world.base_station);
    }

    #[test]
    fn reflection_beyond_face_end_is_excluded() {
        let mut world = one_plane_world();
        // Shrink the face so the specular point (near x = 50) falls outside.
        world.planes[0] = ReflectingPlane::new(
            Position2::new(100.0, 16.0),
            Position2::new(112.0, 16.0),
            10.0,
        );
        let truth = world.vehicle_truth(0, 0.0).unwrap();
        let paths = visible_paths(&world, &truth);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].kind, PathKind::LineOfSight);
    }

    #[test]
    fn los_blocked_by_interposed_face() {
        let mut world = one_plane_world();
        // A face crossing the straight line from BS (50,0) to UE (50,2).
        world.planes.push(ReflectingPlane::new(
            Position2::new(45.0, 1.0),
            Position2::new(55.0, 1.0),
            10.0,
        ));
        let truth = world.vehicle_truth(0, 0.0).unwrap();
        let paths = visible_paths(&world, &truth);
        assert!(paths.iter().all(|p| p.kind != PathKind::LineOfSight));
    }

    #[test]
    fn los_passes_over_short_building() {
        let mut world = one_plane_world();
        // Same interposed face but only 1 m tall: the BS-to-UE segment
        // crosses it well above its top.
        world.planes.push(ReflectingPlane::new(
            Position2::new(45.0, 1.0),
            Position2::new(55.0, 1.0),
            1.0,
        ));
        let truth = world.vehicle_truth(0, 0.0).unwrap();
        let paths = visible_paths(&world, &truth);
        assert!(paths.iter().any(|p| p.kind == PathKind::LineOfSight));
    }

    #[test]
    fn visible_paths_is_deterministic() {
        let world = one_plane_world();
        let truth = world.vehicle_truth(0, 12.3).unwrap();
        assert_eq!(visible_paths(&world, &truth), visible_paths(&world, &truth));
    }
}
