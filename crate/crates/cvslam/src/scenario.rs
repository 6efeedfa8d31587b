//! Concrete road scene construction: building faces along both road edges
//! and clockwise loop trajectories over the lane rings, mixing constant,
//! accelerated, and circular motion phases.

use crate::config::ScenarioConfig;
use crate::world::{
    Position2, ReflectingPlane, RoadBounds, ScenarioWorld, Trajectory, TrajectoryModel,
};
use crate::{Error, Result};

/// Builds the full scene for `vehicle_count` vehicles over `slots` slots.
pub fn build_world(
    cfg: &ScenarioConfig,
    vehicle_count: usize,
    slots: u64,
    slot_duration: f64,
) -> Result<ScenarioWorld> {
    if vehicle_count == 0 {
        return Err(Error::Config("scene needs at least one vehicle".into()));
    }
    let bounds = RoadBounds {
        x_min: cfg.road_x[0] + cfg.origin[0],
        x_max: cfg.road_x[1] + cfg.origin[0],
        y_min: cfg.road_y[0] + cfg.origin[1],
        y_max: cfg.road_y[1] + cfg.origin[1],
    };
    let horizon = slots as f64 * slot_duration;
    let vehicles = (0..vehicle_count)
        .map(|v| loop_trajectory(cfg, &bounds, v, vehicle_count, horizon))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioWorld {
        base_station: crate::world::Position3::new(
            cfg.base_station[0] + cfg.origin[0],
            cfg.base_station[1] + cfg.origin[1],
            cfg.base_station[2],
        ),
        planes: building_faces(cfg, &bounds),
        vehicles,
        slot_duration,
        slot_count: slots,
        bounds,
        ue_height: cfg.ue_height,
    })
}

/// Road-facing building faces along both road edges: length `D` faces
/// separated by gap `d`, starting at the road's x origin. An infinite gap
/// yields an open scene.
pub fn building_faces(cfg: &ScenarioConfig, bounds: &RoadBounds) -> Vec<ReflectingPlane> {
    let mut faces = Vec::new();
    if !cfg.building_gap.is_finite() || cfg.building_length <= 0.0 {
        return faces;
    }
    let period = cfg.building_length + cfg.building_gap;
    for side in [bounds.y_min, bounds.y_max] {
        let mut start = bounds.x_min;
        while start + cfg.building_length <= bounds.x_max + 1e-9 {
            faces.push(ReflectingPlane::new(
                Position2::new(start, side),
                Position2::new(start + cfg.building_length, side),
                cfg.building_height,
            ));
            start += period;
        }
    }
    faces
}

/// Lane-center half-widths of the nested loop rings, innermost first.
fn ring_half_widths(cfg: &ScenarioConfig, bounds: &RoadBounds) -> Vec<f64> {
    let half_extent = 0.5 * (bounds.y_max - bounds.y_min);
    let rings = (half_extent / cfg.lane_width).floor() as usize;
    (0..rings.max(1))
        .map(|r| cfg.lane_width * (r as f64 + 0.5))
        .collect()
}

/// One vehicle's clockwise loop: accelerate over the first half of the top
/// straight, cruise the second half, round the right end on a half circle,
/// mirror that on the bottom at the lower speed, and close with the left
/// half circle. Vehicles are spread over the rings and staggered around the
/// lap.
fn loop_trajectory(
    cfg: &ScenarioConfig,
    bounds: &RoadBounds,
    vehicle: usize,
    vehicle_count: usize,
    horizon: f64,
) -> Result<Trajectory> {
    let rings = ring_half_widths(cfg, bounds);
    let w = rings[vehicle % rings.len()];
    let mid_y = 0.5 * (bounds.y_min + bounds.y_max);

    let v_hi = (8.0 + 2.0 * (vehicle % 3) as f64).min(cfg.max_speed);
    let v_lo = v_hi - 4.0;

    let x_lo = bounds.x_min + w;
    let x_hi = bounds.x_max - w;
    let length = x_hi - x_lo;
    if length <= 0.0 {
        return Err(Error::Config(
            "road too short for the lane ring geometry".into(),
        ));
    }
    let half = 0.5 * length;
    let accel = (v_hi * v_hi - v_lo * v_lo) / length;

    // Phase durations around one lap.
    let t_accel = (v_hi - v_lo) / accel;
    let t_cruise_hi = half / v_hi;
    let t_arc_hi = std::f64::consts::PI * w / v_hi;
    let t_cruise_lo = half / v_lo;
    let t_arc_lo = std::f64::consts::PI * w / v_lo;
    let lap = 2.0 * t_accel + t_cruise_hi + t_arc_hi + t_cruise_lo + t_arc_lo;

    // Stagger the start around the lap and emit phases from before t = 0
    // until the horizon is covered.
    let offset = lap * vehicle as f64 / vehicle_count as f64;
    let mut t = -offset;
    let mut segments = Vec::new();
    while t <= horizon {
        let top_y = mid_y + w;
        let bottom_y = mid_y - w;
        segments.push(TrajectoryModel::Accelerated {
            start_time: t,
            start: Position2::new(x_lo, top_y),
            velocity: [v_lo, 0.0],
            accel: [accel, 0.0],
        });
        t += t_accel;
        segments.push(TrajectoryModel::Uniform {
            start_time: t,
            start: Position2::new(x_lo + half, top_y),
            velocity: [v_hi, 0.0],
        });
        t += t_cruise_hi;
        segments.push(TrajectoryModel::Circular {
            start_time: t,
            center: Position2::new(x_hi, mid_y),
            radius: w,
            angular_rate: -v_hi / w,
            start_angle: std::f64::consts::FRAC_PI_2,
        });
        t += t_arc_hi;
        segments.push(TrajectoryModel::Accelerated {
            start_time: t,
            start: Position2::new(x_hi, bottom_y),
            velocity: [-v_hi, 0.0],
            accel: [accel, 0.0],
        });
        t += t_accel;
        segments.push(TrajectoryModel::Uniform {
            start_time: t,
            start: Position2::new(x_hi - half, bottom_y),
            velocity: [-v_lo, 0.0],
        });
        t += t_cruise_lo;
        segments.push(TrajectoryModel::Circular {
            start_time: t,
            center: Position2::new(x_lo, mid_y),
            radius: w,
            angular_rate: -v_lo / w,
            start_angle: -std::f64::consts::FRAC_PI_2,
        });
        t += t_arc_lo;
    }
    Ok(Trajectory::new(segments))
}
