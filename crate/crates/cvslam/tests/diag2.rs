use std::collections::BTreeMap;
use cvslam::channel::{observe_paths, report_motion};
use cvslam::config::RunConfig;
use cvslam::cvtmap::{ClusterId, CvtMap};
use cvslam::rng::{RngFactory, Stream};
use cvslam::scenario::build_world;
use cvslam::tpf::*;
use cvslam::world::Position3;

#[test]
#[ignore]
fn deep_diag() {
    let cfg = RunConfig::default();
    let density = 4usize;
    let world = build_world(&cfg.scenario, density, 300, 0.1).unwrap();
    let noise = cfg.noise.to_model();
    let maintenance = cfg.maintenance.to_config(&noise);
    let ap = cfg.ap.to_config();
    let tpf = cfg.tpf.to_config();
    let rng = RngFactory::new(1);

    let mut vehicles: Vec<VehicleFilter> = (0..density).map(|m| {
        let truth = world.vehicle_truth(m, 0.0).unwrap();
        let mut s = rng.stream(Stream::InitParticles { vehicle: m as u64 });
        VehicleFilter::init_gps(m, truth.position, world.ue_height, tpf.vehicle_particles, &noise, &mut s)
    }).collect();
    let mut prev_reports: Vec<[f64;2]> = (0..density).map(|m| {
        let truth = world.vehicle_truth(m, 0.0).unwrap();
        let mut s = rng.stream(Stream::Motion { vehicle: m as u64, slot: 0 });
        report_motion(truth.velocity, &noise, &mut s).velocity
    }).collect();
    let mut map = CvtMap::new(density);
    let mut cvt_filters: BTreeMap<ClusterId, CvtFilter> = BTreeMap::new();
    let true_vts = world.true_virtual_transmitters();

    for slot in 1..=300u64 {
        let t = world.slot_time(slot);
        let truths: Vec<_> = (0..density).map(|m| world.vehicle_truth(m, t).unwrap()).collect();
        let mut observations = Vec::new();
        for (m, truth) in truths.iter().enumerate() {
            let mut s = rng.stream(Stream::Observation { vehicle: m as u64, slot });
            observations.extend(observe_paths(&world, truth, m, &noise, &mut s));
        }
        let reports: Vec<[f64;2]> = truths.iter().enumerate().map(|(m, tr)| {
            let mut s = rng.stream(Stream::Motion { vehicle: m as u64, slot });
            report_motion(tr.velocity, &noise, &mut s).velocity
        }).collect();
        for (m, f) in vehicles.iter_mut().enumerate() {
            let mut s = rng.stream(Stream::Predict { vehicle: m as u64, slot });
            predict_vehicle(f, prev_reports[m], reports[m], 0.1, &noise, &mut s);
        }
        prev_reports = reports;
        let est3: Vec<Position3> = vehicles.iter().map(|f| f.estimate().with_z(world.ue_height)).collect();
        let outcome = map.maintain(&est3, &observations, slot, &maintenance, &ap);
        for (id, seed_obs) in &outcome.spawned {
            let members: Vec<_> = seed_obs.iter().map(|o| (&vehicles[o.vehicle], *o)).collect();
            let mut s = rng.stream(Stream::CvtInit { cluster: *id });
            cvt_filters.insert(*id, init_cvt_filter_multi(*id, &members, tpf.cvt_particles, &noise, &mut s));
        }
        for (_, absorbed) in &outcome.merged { cvt_filters.remove(absorbed); }
        for id in &outcome.deleted { cvt_filters.remove(id); }
        let mut links = Vec::new();
        for c in map.clusters() {
            for (m, &p) in c.index_vector.iter().enumerate() {
                if p != 0 {
                    if let Some(&obs) = observations.iter().find(|z| z.vehicle == m && z.path == p) {
                        links.push(PathLink { cluster: c.id, obs });
                    }
                }
            }
        }
        let est = run_slot(&mut vehicles, &mut cvt_filters, &links, &tpf, &noise, &rng, slot);

        if slot % 30 == 1 || slot <= 5 {
            let veh_err: f64 = truths.iter().enumerate().map(|(m, tr)| est.vehicles[m].distance_to(tr.position)).sum::<f64>() / density as f64;
            let spread = |f: &VehicleFilter| {
                let e = f.estimate();
                (f.particles.iter().map(|p| p.weight * (p.position.distance_to(e)).powi(2)).sum::<f64>()).sqrt()
            };
            let veh_spread: f64 = vehicles.iter().map(spread).sum::<f64>() / density as f64;
            let cvt_spread: f64 = cvt_filters.values().map(|f| {
                let e = f.estimate();
                (f.particles.iter().map(|p| p.weight * (p.position.distance_to(e)).powi(2)).sum::<f64>()).sqrt()
            }).sum::<f64>() / cvt_filters.len().max(1) as f64;
            let cvt_err: f64 = cvt_filters.values().map(|f| {
                let e = f.estimate();
                true_vts.iter().map(|vt| e.distance_to(*vt)).fold(f64::INFINITY, f64::min)
            }).sum::<f64>() / cvt_filters.len().max(1) as f64;
            println!("slot {:3}: iters {:2} clusters {} veh_err {:.3} veh_spread {:.3} cvt_err {:.3} cvt_spread {:.3} links {}",
                slot, est.iterations, cvt_filters.len(), veh_err, veh_spread, cvt_err, cvt_spread, links.len());
        }
    }
}
