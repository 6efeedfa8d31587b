//! Experiment runner: one simulated cell per (density, gap, seed), a slot
//! loop interleaving cluster maintenance with the filter bank, and CSV
//! emission over the whole grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::channel::{observe_paths, report_motion, MultipathObservation};
use crate::config::RunConfig;
use crate::cvtmap::{ClusterId, CvtMap};
use crate::metrics::{mae, quantile_error};
use crate::rng::{RngFactory, Stream};
use crate::scenario::build_world;
use crate::tpf::{
    init_cvt_filter_multi, predict_cvt, predict_vehicle, run_slot, CvtFilter, PathLink,
    VehicleFilter,
};
use crate::world::Position3;
use crate::Result;

/// Per-slot vehicle record.
#[derive(Debug, Clone, Copy)]
pub struct VehicleRow {
    pub slot: u64,
    pub vehicle: usize,
    pub true_x: f64,
    pub true_y: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub error_m: f64,
}

/// Per-slot CVT record; the error is against the nearest true VT.
#[derive(Debug, Clone, Copy)]
pub struct CvtRow {
    pub slot: u64,
    pub cvt_id: ClusterId,
    pub est_x: f64,
    pub est_y: f64,
    pub est_z: f64,
    pub nearest_true_vt_error_m: f64,
    pub member_count: usize,
}

/// Output of one simulated cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub run_id: u32,
    pub seed: u64,
    pub density: usize,
    pub gap_m: f64,
    pub vehicle_rows: Vec<VehicleRow>,
    pub cvt_rows: Vec<CvtRow>,
    pub vehicle_mae: f64,
    pub cvt_mae: f64,
    pub vehicle_q80: f64,
    pub mean_vt_per_vehicle_slot: f64,
}

/// Runs one full cell: builds the scene for the density and gap, then loops
/// maintenance plus filtering over every slot. Fully deterministic in
/// (config, density, gap, seed).
pub fn simulate_cell(
    cfg: &RunConfig,
    density: usize,
    gap_m: f64,
    seed: u64,
    run_id: u32,
) -> Result<CellResult> {
    let mut scenario = cfg.scenario.clone();
    scenario.building_gap = gap_m;
    let world = build_world(&scenario, density, cfg.run.slots, cfg.run.slot_duration)?;

    let noise = cfg.noise.to_model();
    let maintenance = cfg.maintenance.to_config(&noise);
    let ap = cfg.ap.to_config();
    let tpf = cfg.tpf.to_config();
    let rng = RngFactory::new(seed);
    let vehicle_count = density;

    // Initial beliefs from the GPS fix at t = 0; initial motion reports
    // anchor the velocity trapezoid.
    let mut vehicles: Vec<VehicleFilter> = (0..vehicle_count)
        .map(|m| {
            let truth = world.vehicle_truth(m, 0.0)?;
            let mut stream = rng.stream(Stream::InitParticles { vehicle: m as u64 });
            Ok(VehicleFilter::init_gps(
                m,
                truth.position,
                world.ue_height,
                tpf.vehicle_particles,
                &noise,
                &mut stream,
            ))
        })
        .collect::<Result<_>>()?;
    let mut prev_reports: Vec<[f64; 2]> = (0..vehicle_count)
        .map(|m| {
            let truth = world.vehicle_truth(m, 0.0)?;
            let mut stream = rng.stream(Stream::Motion { vehicle: m as u64, slot: 0 });
            Ok(report_motion(truth.velocity, &noise, &mut stream).velocity)
        })
        .collect::<Result<_>>()?;

    let mut map = CvtMap::new(vehicle_count);
    let mut cvt_filters: BTreeMap<ClusterId, CvtFilter> = BTreeMap::new();
    let true_vts = world.true_virtual_transmitters();

    let mut vehicle_rows = Vec::with_capacity((cfg.run.slots as usize) * vehicle_count);
    let mut cvt_rows = Vec::new();
    let mut observation_total = 0usize;

    for slot in 1..=cfg.run.slots {
        let t = world.slot_time(slot);
        let truths: Vec<_> = (0..vehicle_count)
            .map(|m| world.vehicle_truth(m, t))
            .collect::<Result<Vec<_>>>()?;

        // Measurements and motion reports for this slot.
        let mut observations: Vec<MultipathObservation> = Vec::new();
        for (m, truth) in truths.iter().enumerate() {
            let mut stream = rng.stream(Stream::Observation { vehicle: m as u64, slot });
            observations.extend(observe_paths(&world, truth, m, &noise, &mut stream));
        }
        observation_total += observations.len();
        let reports: Vec<[f64; 2]> = truths
            .iter()
            .enumerate()
            .map(|(m, truth)| {
                let mut stream = rng.stream(Stream::Motion { vehicle: m as u64, slot });
                report_motion(truth.velocity, &noise, &mut stream).velocity
            })
            .collect();

        // Prediction: vehicles dead-reckon on the reports, CVTs are static.
        for (m, filter) in vehicles.iter_mut().enumerate() {
            let mut stream = rng.stream(Stream::Predict { vehicle: m as u64, slot });
            predict_vehicle(
                filter,
                prev_reports[m],
                reports[m],
                cfg.run.slot_duration,
                &noise,
                &mut stream,
            );
        }
        prev_reports = reports;
        for filter in cvt_filters.values_mut() {
            predict_cvt(filter);
        }

        // Cluster maintenance against the predicted vehicle estimates.
        let estimates3: Vec<Position3> = vehicles
            .iter()
            .map(|f| f.estimate().with_z(world.ue_height))
            .collect();
        let outcome = map.maintain(&estimates3, &observations, slot, &maintenance, &ap);

        for (id, seed_obs) in &outcome.spawned {
            let members: Vec<(&VehicleFilter, MultipathObservation)> = seed_obs
                .iter()
                .map(|obs| (&vehicles[obs.vehicle], *obs))
                .collect();
            let mut stream = rng.stream(Stream::CvtInit { cluster: *id });
            cvt_filters.insert(
                *id,
                init_cvt_filter_multi(*id, &members, tpf.cvt_particles, &noise, &mut stream),
            );
        }
        for (_kept, absorbed) in &outcome.merged {
            cvt_filters.remove(absorbed);
        }
        for id in &outcome.deleted {
            cvt_filters.remove(id);
        }

        // This slot's path associations from the index vectors.
        let mut links: Vec<PathLink> = Vec::new();
        for cluster in map.clusters() {
            for (m, &path) in cluster.index_vector.iter().enumerate() {
                if path == 0 {
                    continue;
                }
                if let Some(&obs) = observations
                    .iter()
                    .find(|z| z.vehicle == m && z.path == path)
                {
                    links.push(PathLink {
                        cluster: cluster.id,
                        obs,
                    });
                }
            }
        }

        let estimates = run_slot(
            &mut vehicles,
            &mut cvt_filters,
            &links,
            &tpf,
            &noise,
            &rng,
            slot,
        );

        for (m, truth) in truths.iter().enumerate() {
            let est = estimates.vehicles[m];
            vehicle_rows.push(VehicleRow {
                slot,
                vehicle: m,
                true_x: truth.position.x,
                true_y: truth.position.y,
                est_x: est.x,
                est_y: est.y,
                error_m: est.distance_to(truth.position),
            });
        }
        for (&id, est) in &estimates.cvts {
            let nearest = true_vts
                .iter()
                .map(|vt| est.distance_to(*vt))
                .fold(f64::INFINITY, f64::min);
            cvt_rows.push(CvtRow {
                slot,
                cvt_id: id,
                est_x: est.x,
                est_y: est.y,
                est_z: est.z,
                nearest_true_vt_error_m: nearest,
                member_count: map.get(id).map_or(0, |c| c.members.len()),
            });
        }
    }

    let vehicle_errors: Vec<f64> = vehicle_rows.iter().map(|r| r.error_m).collect();
    let cvt_errors: Vec<f64> = cvt_rows.iter().map(|r| r.nearest_true_vt_error_m).collect();
    Ok(CellResult {
        run_id,
        seed,
        density,
        gap_m,
        vehicle_mae: mae(&vehicle_errors)?,
        cvt_mae: if cvt_errors.is_empty() {
            f64::NAN
        } else {
            mae(&cvt_errors)?
        },
        vehicle_q80: quantile_error(&vehicle_errors, 0.8)?,
        mean_vt_per_vehicle_slot: observation_total as f64
            / (vehicle_count as f64 * cfg.run.slots as f64),
        vehicle_rows,
        cvt_rows,
    })
}

/// Runs the (density, seed) grid of the main experiment in parallel and
/// returns the cells sorted by (density, seed).
pub fn run_grid(cfg: &RunConfig) -> Result<Vec<CellResult>> {
    let mut cells: Vec<(usize, f64, u64)> = Vec::new();
    for &density in &cfg.run.densities {
        for &seed in &cfg.run.seeds {
            cells.push((density, cfg.scenario.building_gap, seed));
        }
    }
    run_cells(cfg, &cells)
}

/// Runs the building-density sweep grid: gaps x densities x seeds.
pub fn run_sweep_grid(cfg: &RunConfig) -> Result<Vec<CellResult>> {
    let mut cells: Vec<(usize, f64, u64)> = Vec::new();
    for &gap in &cfg.sweep.gaps {
        for &density in &cfg.sweep.densities {
            for &seed in &cfg.run.seeds {
                cells.push((density, gap, seed));
            }
        }
    }
    run_cells(cfg, &cells)
}

fn run_cells(cfg: &RunConfig, cells: &[(usize, f64, u64)]) -> Result<Vec<CellResult>> {
    let indexed: Vec<(u32, (usize, f64, u64))> = cells
        .iter()
        .enumerate()
        .map(|(i, &cell)| (i as u32, cell))
        .collect();
    let mut results = indexed
        .par_iter()
        .map(|&(run_id, (density, gap, seed))| simulate_cell(cfg, density, gap, seed, run_id))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|r| r.run_id);
    Ok(results)
}

/// Writes `vehicles.csv`, `cvts.csv`, and `summary.csv` into `dir`.
pub fn write_csv(results: &[CellResult], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut vehicles = String::from(
        "run_id,seed,density,slot,vehicle_id,true_x,true_y,est_x,est_y,error_m\n",
    );
    for cell in results {
        for r in &cell.vehicle_rows {
            writeln!(
                vehicles,
                "{},{},{},{},{},{},{},{},{},{}",
                cell.run_id,
                cell.seed,
                cell.density,
                r.slot,
                r.vehicle,
                r.true_x,
                r.true_y,
                r.est_x,
                r.est_y,
                r.error_m
            )
            .expect("string write");
        }
    }
    std::fs::write(dir.join("vehicles.csv"), vehicles)?;

    let mut cvts = String::from(
        "run_id,slot,cvt_id,est_x,est_y,est_z,nearest_true_vt_error_m,member_count\n",
    );
    for cell in results {
        for r in &cell.cvt_rows {
            writeln!(
                cvts,
                "{},{},{},{},{},{},{},{}",
                cell.run_id,
                r.slot,
                r.cvt_id,
                r.est_x,
                r.est_y,
                r.est_z,
                r.nearest_true_vt_error_m,
                r.member_count
            )
            .expect("string write");
        }
    }
    std::fs::write(dir.join("cvts.csv"), cvts)?;

    std::fs::write(dir.join("summary.csv"), summary_csv(results))?;
    Ok(())
}

/// Summary table alone, one row per cell.
pub fn summary_csv(results: &[CellResult]) -> String {
    let mut out = String::from(
        "run_id,seed,density,gap_m,vehicle_mae,cvt_mae,vehicle_q80,mean_vt_per_vehicle_slot\n",
    );
    for cell in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            cell.run_id,
            cell.seed,
            cell.density,
            cell.gap_m,
            cell.vehicle_mae,
            cell.cvt_mae,
            cell.vehicle_q80,
            cell.mean_vt_per_vehicle_slot
        )
        .expect("string write");
    }
    out
}

/// Writes the sweep output: the summary schema under a sweep-specific name.
pub fn write_sweep_csv(results: &[CellResult], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("building_sweep.csv"), summary_csv(results))?;
    Ok(())
}
