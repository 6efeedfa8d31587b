//! Dynamic CVT cluster store: first-slot clustering of the VT cloud, then
//! per-slot association of new VTs, merging of near-duplicate clusters, and
//! deletion of clusters that stay unobserved.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::apcluster::{
    build_similarity, clusters_to_cvts, mean_position, propagate, ApConfig, CvtSeed, PathId,
};
use crate::channel::{vt_from_observation, MultipathObservation};
use crate::world::Position3;

/// Stable cluster identifier; ids are never reused within a run.
pub type ClusterId = u64;

/// One retained VT sample backing a cluster position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VtSample {
    pub path: PathId,
    pub slot: u64,
    pub position: Position3,
}

/// A common virtual transmitter cluster: the map feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CvtCluster {
    pub id: ClusterId,
    /// Mean of the retained member VT samples.
    pub position: Position3,
    /// Retained member samples (sliding window over slots).
    pub members: Vec<VtSample>,
    /// Entry m holds vehicle m's path index for the current slot, or 0.
    pub index_vector: Vec<usize>,
    /// Consecutive slots with an all-zero index vector.
    pub stale_slots: u64,
}

impl CvtCluster {
    pub fn observed_this_slot(&self) -> bool {
        self.index_vector.iter().any(|&p| p != 0)
    }

    fn recompute_position(&mut self) {
        if !self.members.is_empty() {
            self.position = mean_position(self.members.iter().map(|s| s.position));
        }
    }

    fn prune_window(&mut self, slot: u64, window: u64) {
        let cutoff = slot.saturating_sub(window.saturating_sub(1));
        self.members.retain(|s| s.slot >= cutoff);
    }
}

/// Thresholds and timing for cluster maintenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceConfig {
    /// Association threshold on the quality score (non-positive).
    pub association_threshold: f64,
    /// Merge threshold on the quality score (non-positive).
    pub merge_threshold: f64,
    /// Slots of non-observation before a cluster is deleted.
    pub delete_after_slots: u64,
    /// Slots of VT samples retained when averaging a cluster position.
    pub member_window: u64,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        Self {
            association_threshold: -2.36,
            merge_threshold: -2.36,
            delete_after_slots: 10,
            member_window: 20,
        }
    }
}

/// Data-association quality between a cluster position and a VT position:
/// `-ln(distance + 1)`, zero iff coincident.
pub fn association_quality(cluster: Position3, vt: Position3) -> f64 {
    -(cluster.distance_to(vt) + 1.0).ln()
}

/// Association/merge threshold from a near-worst VT estimation error: the
/// law-of-cosines error of a maximum-range measurement off by `n` sigmas in
/// both distance and angle.
pub fn compute_thresholds(max_range: f64, n: f64, sigma_d: f64, sigma_angle: f64) -> (f64, f64) {
    let far = max_range + n * sigma_d;
    let eps_sq =
        far * far + max_range * max_range - 2.0 * max_range * far * (n * sigma_angle).cos();
    let threshold = -(eps_sq.max(0.0).sqrt() + 1.0).ln();
    (threshold, threshold)
}

/// Outcome of one maintenance step, for the filter bank to mirror.
#[derive(Debug, Clone, Default)]
pub struct MaintenanceOutcome {
    /// Clusters created this slot, with the observations that seeded them.
    pub spawned: Vec<(ClusterId, Vec<MultipathObservation>)>,
    /// Cluster pairs merged this slot: (kept, absorbed).
    pub merged: Vec<(ClusterId, ClusterId)>,
    /// Clusters deleted this slot.
    pub deleted: Vec<ClusterId>,
}

/// The cluster store for one run.
#[derive(Debug, Clone, Default)]
pub struct CvtMap {
    clusters: BTreeMap<ClusterId, CvtCluster>,
    next_id: ClusterId,
    vehicle_count: usize,
}

impl CvtMap {
    pub fn new(vehicle_count: usize) -> Self {
        Self {
            clusters: BTreeMap::new(),
            next_id: 0,
            vehicle_count,
        }
    }

    pub fn clusters(&self) -> impl Iterator<Item = &CvtCluster> {
        self.clusters.values()
    }

    pub fn get(&self, id: ClusterId) -> Option<&CvtCluster> {
        self.clusters.get(&id)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    fn insert_seed(&mut self, seed: CvtSeed, slot: u64) -> ClusterId {
        let id = self.next_id;
        self.next_id += 1;
        self.clusters.insert(
            id,
            CvtCluster {
                id,
                position: seed.position,
                members: seed
                    .members
                    .iter()
                    .map(|&(path, position)| VtSample { path, slot, position })
                    .collect(),
                index_vector: seed.index_vector,
                stale_slots: 0,
            },
        );
        id
    }

    /// One slot of Algorithm-style maintenance. `vehicle_estimates` are the
    /// current (predicted) 3D vehicle positions used to recast observations
    /// into VT positions. On an empty store the whole VT cloud is clustered;
    /// afterwards VTs are associated one by one, then clusters merge and
    /// stale clusters age out.
    pub fn maintain(
        &mut self,
        vehicle_estimates: &[Position3],
        observations: &[MultipathObservation],
        slot: u64,
        cfg: &MaintenanceConfig,
        ap: &ApConfig,
    ) -> MaintenanceOutcome {
        assert_eq!(vehicle_estimates.len(), self.vehicle_count);
        let mut outcome = MaintenanceOutcome::default();

        let vts: Vec<(PathId, Position3, MultipathObservation)> = observations
            .iter()
            .map(|z| {
                let vt = vt_from_observation(vehicle_estimates[z.vehicle], z);
                (PathId { vehicle: z.vehicle, path: z.path }, vt, *z)
            })
            .collect();

        if self.clusters.is_empty() {
            if !vts.is_empty() {
                let points: Vec<Position3> = vts.iter().map(|v| v.1).collect();
                let paths: Vec<PathId> = vts.iter().map(|v| v.0).collect();
                let sim = build_similarity(&points, ap.preference);
                let assignment = propagate(&sim, ap);
                for seed in clusters_to_cvts(&assignment, &points, &paths, self.vehicle_count) {
                    let obs = seed
                        .members
                        .iter()
                        .map(|(path, _)| {
                            vts.iter().find(|(p, _, _)| p == path).expect("seed path").2
                        })
                        .collect();
                    let id = self.insert_seed(seed, slot);
                    outcome.spawned.push((id, obs));
                }
            }
            self.age_and_delete(slot, cfg, &mut outcome);
            return outcome;
        }

        self.associate_new_vts(&vts, slot, cfg, &mut outcome);
        self.merge_clusters(cfg, &mut outcome);
        self.age_and_delete(slot, cfg, &mut outcome);
        outcome
    }

    /// Associates each new VT to the cluster maximizing the association
    /// quality, subject to the threshold and the one-path-per-vehicle rule;
    /// the rest spawn standalone clusters. VTs are processed in descending
    /// best-quality order; quality is scored against slot-start positions.
    pub fn associate_new_vts(
        &mut self,
        vts: &[(PathId, Position3, MultipathObservation)],
        slot: u64,
        cfg: &MaintenanceConfig,
        outcome: &mut MaintenanceOutcome,
    ) {
        // This slot's index vectors are rebuilt from scratch.
        for cluster in self.clusters.values_mut() {
            cluster.index_vector.iter_mut().for_each(|p| *p = 0);
        }

        let snapshot: Vec<(ClusterId, Position3)> = self
            .clusters
            .values()
            .map(|c| (c.id, c.position))
            .collect();

        // Best candidate per VT; ties go to the lowest cluster id, which the
        // ordered snapshot yields via strict improvement.
        let mut scored: Vec<(usize, Option<(ClusterId, f64)>)> = vts
            .iter()
            .enumerate()
            .map(|(i, (_, vt, _))| {
                let mut best: Option<(ClusterId, f64)> = None;
                for &(id, pos) in &snapshot {
                    let q = association_quality(pos, *vt);
                    if best.map_or(true, |(_, bq)| q > bq) {
                        best = Some((id, q));
                    }
                }
                (i, best)
            })
            .collect();
        scored.sort_by(|a, b| {
            let qa = a.1.map_or(f64::NEG_INFINITY, |(_, q)| q);
            let qb = b.1.map_or(f64::NEG_INFINITY, |(_, q)| q);
            qb.total_cmp(&qa).then(a.0.cmp(&b.0))
        });

        for (i, best) in scored {
            let (path, vt, obs) = &vts[i];
            let joined = match best {
                Some((id, q)) if q >= cfg.association_threshold => {
                    let cluster = self.clusters.get_mut(&id).expect("snapshot id");
                    if cluster.index_vector[path.vehicle] == 0 {
                        cluster.index_vector[path.vehicle] = path.path;
                        cluster.members.push(VtSample {
                            path: *path,
                            slot,
                            position: *vt,
                        });
                        cluster.prune_window(slot, cfg.member_window);
                        cluster.recompute_position();
                        true
                    } else {
                        false
                    }
                }
                _ => false,
            };
            if !joined {
                let mut index_vector = vec![0usize; self.vehicle_count];
                index_vector[path.vehicle] = path.path;
                let id = self.insert_seed(
                    CvtSeed {
                        position: *vt,
                        members: vec![(*path, *vt)],
                        index_vector,
                    },
                    slot,
                );
                outcome.spawned.push((id, vec![*obs]));
            }
        }
    }

    /// Greedily merges cluster pairs in descending merge quality. A pair is
    /// eligible when its quality clears the threshold and the index vectors
    /// do not share a vehicle; each cluster merges at most once per slot.
    pub fn merge_clusters(&mut self, cfg: &MaintenanceConfig, outcome: &mut MaintenanceOutcome) {
        let ids: Vec<ClusterId> = self.clusters.keys().copied().collect();
        let mut pairs: Vec<(f64, ClusterId, ClusterId)> = Vec::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let q = association_quality(self.clusters[&a].position, self.clusters[&b].position);
                if q >= cfg.merge_threshold {
                    pairs.push((q, a, b));
                }
            }
        }
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));

        let mut taken: Vec<ClusterId> = Vec::new();
        for (_, a, b) in pairs {
            if taken.contains(&a) || taken.contains(&b) {
                continue;
            }
            let disjoint = {
                let ca = &self.clusters[&a];
                let cb = &self.clusters[&b];
                ca.index_vector
                    .iter()
                    .zip(&cb.index_vector)
                    .all(|(&x, &y)| x * y == 0)
            };
            if !disjoint {
                continue;
            }
            let absorbed = self.clusters.remove(&b).expect("merge source");
            let kept = self.clusters.get_mut(&a).expect("merge target");
            kept.members.extend(absorbed.members);
            for (x, y) in kept.index_vector.iter_mut().zip(&absorbed.index_vector) {
                *x += *y;
            }
            kept.stale_slots = kept.stale_slots.min(absorbed.stale_slots);
            kept.recompute_position();
            taken.push(a);
            taken.push(b);
            outcome.merged.push((a, b));
        }
    }

    fn age_and_delete(&mut self, _slot: u64, cfg: &MaintenanceConfig, outcome: &mut MaintenanceOutcome) {
        for cluster in self.clusters.values_mut() {
            if cluster.observed_this_slot() {
                cluster.stale_slots = 0;
            } else {
                cluster.stale_slots += 1;
            }
        }
        let dead: Vec<ClusterId> = self
            .clusters
            .values()
            .filter(|c| c.stale_slots >= cfg.delete_after_slots)
            .map(|c| c.id)
            .collect();
        for id in dead {
            self.clusters.remove(&id);
            outcome.deleted.push(id);
        }
    }

    /// Ages index vectors and deletes clusters unobserved for the configured
    /// number of slots. Exposed for direct use; `maintain` already calls it.
    pub fn delete_stale(&mut self, cfg: &MaintenanceConfig) -> Vec<ClusterId> {
        let mut outcome = MaintenanceOutcome::default();
        self.age_and_delete(0, cfg, &mut outcome);
        outcome.deleted
    }
}
