//! Experiment configuration. A default-constructed config reproduces the
//! reference road scene: one base station over an 8-lane loop road with
//! buildings along both edges, LTE-grade measurement noise, and 120-particle
//! filters over 300 slots of 0.1 s.

use serde::{Deserialize, Serialize};

use crate::apcluster::{ApConfig, Preference};
use crate::channel::NoiseModel;
use crate::cvtmap::{compute_thresholds, MaintenanceConfig};
use crate::tpf::TpfConfig;
use crate::{Error, Result};

/// Scene geometry and motion limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Base station position [x, y, z], meters.
    pub base_station: [f64; 3],
    /// Road extent along x: [min, max].
    pub road_x: [f64; 2],
    /// Road extent along y: [min, max].
    pub road_y: [f64; 2],
    pub lane_width: f64,
    /// Building face length D, meters.
    pub building_length: f64,
    /// Gap d between building faces, meters; `inf` removes all buildings.
    pub building_gap: f64,
    pub building_height: f64,
    /// UE antenna height used to lift 2D vehicle states to 3D.
    pub ue_height: f64,
    pub max_speed: f64,
    /// World-frame offset applied to every coordinate.
    pub origin: [f64; 2],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            base_station: [50.0, 0.0, 8.0],
            road_x: [0.0, 132.0],
            road_y: [-16.0, 16.0],
            lane_width: 4.0,
            building_length: 12.0,
            building_gap: 6.0,
            building_height: 10.0,
            ue_height: 1.5,
            max_speed: 15.0,
            origin: [0.0, 0.0],
        }
    }
}

/// Noise magnitudes in file-friendly units (angles in degrees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_d: f64,
    pub sigma_angle_deg: f64,
    pub sigma_v: f64,
    pub sigma_omega_deg_s: f64,
    pub sigma_gps: f64,
    pub truncation: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_d: 2.61,
            sigma_angle_deg: 2.08,
            sigma_v: 0.1,
            sigma_omega_deg_s: 0.1,
            sigma_gps: 3.0,
            truncation: 2.0,
        }
    }
}

impl NoiseConfig {
    pub fn to_model(&self) -> NoiseModel {
        NoiseModel {
            sigma_d: self.sigma_d,
            sigma_angle: self.sigma_angle_deg.to_radians(),
            sigma_v: self.sigma_v,
            sigma_omega: self.sigma_omega_deg_s.to_radians(),
            sigma_gps: self.sigma_gps,
            truncation: self.truncation,
        }
    }
}

/// Cluster maintenance thresholds and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaintenanceSection {
    pub association_threshold: f64,
    pub merge_threshold: f64,
    /// When true, both thresholds are derived from the near-worst VT error
    /// formula instead of the fixed values above.
    pub derive_thresholds: bool,
    /// Maximum communication range used by the derivation, meters.
    pub max_range: f64,
    /// Sigma multiple used by the derivation.
    pub sigma_multiple: f64,
    pub delete_after_slots: u64,
    pub member_window: u64,
}

impl Default for MaintenanceSection {
    fn default() -> Self {
        Self {
            association_threshold: -2.36,
            merge_threshold: -2.36,
            derive_thresholds: false,
            max_range: 100.0,
            sigma_multiple: 2.0,
            delete_after_slots: 10,
            member_window: 20,
        }
    }
}

impl MaintenanceSection {
    pub fn to_config(&self, noise: &NoiseModel) -> MaintenanceConfig {
        let (association_threshold, merge_threshold) = if self.derive_thresholds {
            compute_thresholds(
                self.max_range,
                self.sigma_multiple,
                noise.sigma_d,
                noise.sigma_angle,
            )
        } else {
            (self.association_threshold, self.merge_threshold)
        };
        MaintenanceConfig {
            association_threshold,
            merge_threshold,
            delete_after_slots: self.delete_after_slots,
            member_window: self.member_window,
        }
    }
}

/// Affinity-propagation section; `preference = <number>` overrides the
/// median policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApSection {
    pub damping: f64,
    pub max_iterations: usize,
    pub convergence_iterations: usize,
    pub preference: Option<f64>,
}

impl Default for ApSection {
    fn default() -> Self {
        let d = ApConfig::default();
        Self {
            damping: d.damping,
            max_iterations: d.max_iterations,
            convergence_iterations: d.convergence_iterations,
            preference: None,
        }
    }
}

impl ApSection {
    pub fn to_config(&self) -> ApConfig {
        ApConfig {
            damping: self.damping,
            max_iterations: self.max_iterations,
            convergence_iterations: self.convergence_iterations,
            preference: self
                .preference
                .map_or(Preference::Median, Preference::Value),
        }
    }
}

/// Particle filter section; `sigma_w = <number>` overrides the per-path
/// noise-derived kernel width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpfSection {
    pub vehicle_particles: usize,
    pub cvt_particles: usize,
    pub batches: usize,
    pub convergence_xi: f64,
    pub sigma_w: Option<f64>,
    pub resample_fraction: f64,
}

impl Default for TpfSection {
    fn default() -> Self {
        let d = TpfConfig::default();
        Self {
            vehicle_particles: d.vehicle_particles,
            cvt_particles: d.cvt_particles,
            batches: d.batches,
            convergence_xi: d.convergence_xi,
            sigma_w: None,
            resample_fraction: d.resample_fraction,
        }
    }
}

impl TpfSection {
    pub fn to_config(&self) -> TpfConfig {
        TpfConfig {
            vehicle_particles: self.vehicle_particles,
            cvt_particles: self.cvt_particles,
            batches: self.batches,
            convergence_xi: self.convergence_xi,
            sigma_w_override: self.sigma_w,
            resample_fraction: self.resample_fraction,
        }
    }
}

/// Density/seed grid for the main experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Vehicles per scene.
    pub densities: Vec<usize>,
    pub seeds: Vec<u64>,
    pub slots: u64,
    pub slot_duration: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            densities: vec![1, 2, 4, 8, 12, 16, 24],
            seeds: (1..=100).collect(),
            slots: 300,
            slot_duration: 0.1,
        }
    }
}

/// Gap/density grid for the building-density sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Building gaps to sweep, meters; include `inf` for the no-building
    /// case.
    pub gaps: Vec<f64>,
    pub densities: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            gaps: vec![6.0, 24.0, 60.0, f64::INFINITY],
            densities: vec![1, 2, 4],
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub run: RunSection,
    pub noise: NoiseConfig,
    pub maintenance: MaintenanceSection,
    pub ap: ApSection,
    pub tpf: TpfSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.run.densities.is_empty() || self.run.densities.iter().any(|&d| d == 0) {
            return fail("run.densities must be non-empty positive counts");
        }
        if self.run.seeds.is_empty() {
            return fail("run.seeds must be non-empty");
        }
        if !(self.run.slot_duration > 0.0) {
            return fail("run.slot_duration must be positive");
        }
        if self.run.slots == 0 {
            return fail("run.slots must be at least 1");
        }
        if !(self.scenario.lane_width > 0.0) || !(self.scenario.building_height > 0.0) {
            return fail("scenario lane_width and building_height must be positive");
        }
        if self.scenario.road_x[0] >= self.scenario.road_x[1]
            || self.scenario.road_y[0] >= self.scenario.road_y[1]
        {
            return fail("scenario road bounds must be non-empty");
        }
        if !(self.scenario.ue_height > 0.0) {
            return fail("scenario.ue_height must be positive");
        }
        if !(self.noise.truncation > 0.0) {
            return fail("noise.truncation must be positive");
        }
        if self.maintenance.association_threshold > 0.0 || self.maintenance.merge_threshold > 0.0
        {
            return fail("maintenance thresholds must be non-positive");
        }
        if self.maintenance.delete_after_slots == 0 {
            return fail("maintenance.delete_after_slots must be at least 1");
        }
        if !(0.0..1.0).contains(&self.ap.damping) {
            return fail("ap.damping must lie in [0, 1)");
        }
        if self.tpf.vehicle_particles == 0 || self.tpf.cvt_particles == 0 {
            return fail("tpf particle counts must be positive");
        }
        if self.tpf.batches == 0 {
            return fail("tpf.batches must be at least 1");
        }
        if !(self.tpf.convergence_xi > 0.0) {
            return fail("tpf.convergence_xi must be positive");
        }
        if self.sweep.gaps.is_empty() || self.sweep.densities.is_empty() {
            return fail("sweep.gaps and sweep.densities must be non-empty");
        }
        Ok(())
    }
}
