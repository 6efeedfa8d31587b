//! Affinity-propagation clustering of a slot's virtual-transmitter cloud.
//!
//! Similarity between two VTs is the negative log of their distance plus one,
//! so coincident points score 0 and everything else is negative. Exemplars
//! are elected by the usual responsibility/availability message passing.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::world::Position3;

/// Identifies one multipath: (vehicle, 1-based per-slot path index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathId {
    pub vehicle: usize,
    pub path: usize,
}

/// Diagonal (self-similarity) policy. Larger preferences produce more
/// clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    /// Fixed value.
    Value(f64),
}

/// Affinity-propagation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    /// Message damping in (0, 1); the retained fraction of the old message.
    pub damping: f64,
    pub max_iterations: usize,
    /// Stop early after this many iterations without an assignment change.
    pub convergence_iterations: usize,
    pub preference: Preference,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            damping: 0.9,
            max_iterations: 500,
            convergence_iterations: 10,
            preference: Preference::Median,
        }
    }
}

/// Pairwise similarity with preference values on the diagonal.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.values[p * self.n + q]
    }
}

/// Similarity of two VT positions: `-ln(distance + 1)`.
pub fn similarity(a: Position3, b: Position3) -> f64 {
    -(a.distance_to(b) + 1.0).ln()
}

/// Builds the similarity matrix for a point cloud; the diagonal holds the
/// preference.
pub fn build_similarity(points: &[Position3], preference: Preference) -> SimilarityMatrix {
    let n = points.len();
    assert!(n >= 1, "similarity needs at least one point");
    let mut values = vec![0.0; n * n];
    let mut off_diagonal = Vec::with_capacity(n * (n - 1));
    for p in 0..n {
        for q in 0..n {
            if p != q {
                let s = similarity(points[p], points[q]);
                values[p * n + q] = s;
                off_diagonal.push(s);
            }
        }
    }
    let pref = match preference {
        Preference::Value(v) => v,
        Preference::Median => {
            if off_diagonal.is_empty() {
                0.0
            } else {
                off_diagonal.sort_by(f64::total_cmp);
                let mid = off_diagonal.len() / 2;
                if off_diagonal.len() % 2 == 1 {
                    off_diagonal[mid]
                } else {
                    0.5 * (off_diagonal[mid - 1] + off_diagonal[mid])
                }
            }
        }
    };
    for p in 0..n {
        values[p * n + p] = pref;
    }

    // Exact ties make the message passing oscillate between degenerate fixed
    // points; break them with deterministic jitter far below any real margin.
    let spread = off_diagonal
        .last()
        .map_or(0.0, |hi| hi - off_diagonal[0])
        .max(pref.abs());
    if spread > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let normal = Normal::new(0.0, spread * 1e-6).expect("finite jitter scale");
        for v in &mut values {
            *v += normal.sample(&mut rng);
        }
    }
    SimilarityMatrix { n, values }
}

/// Result of message passing: a self-consistent exemplar per point and the
/// member sets grouped by exemplar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// Exemplar point index per point.
    pub exemplar_of: Vec<usize>,
    /// Clusters as member index lists; `members[u]` is led by `exemplars[u]`.
    pub exemplars: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }
}

/// Runs responsibility/availability message passing and groups points by
/// elected exemplar.
pub fn propagate(sim: &SimilarityMatrix, cfg: &ApConfig) -> ClusterAssignment {
    let n = sim.len();
    if n == 1 {
        return ClusterAssignment {
            exemplar_of: vec![0],
            exemplars: vec![0],
            members: vec![vec![0]],
        };
    }

    let lam = cfg.damping;
    let mut resp = vec![0.0_f64; n * n];
    let mut avail = vec![0.0_f64; n * n];
    let mut last_assign: Vec<usize> = vec![usize::MAX; n];
    let mut stable_iters = 0;

    for _ in 0..cfg.max_iterations {
        // Responsibilities: how strongly p insists on q as its exemplar,
        // relative to p's best alternative.
        for p in 0..n {
            let (mut best, mut second, mut best_q) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for q in 0..n {
                let v = avail[p * n + q] + sim.get(p, q);
                if v > best {
                    second = best;
                    best = v;
                    best_q = q;
                } else if v > second {
                    second = v;
                }
            }
            for q in 0..n {
                let alt = if q == best_q { second } else { best };
                let new = sim.get(p, q) - alt;
                resp[p * n + q] = lam * resp[p * n + q] + (1.0 - lam) * new;
            }
        }

        // Availabilities: q's accumulated support for serving as an exemplar.
        for q in 0..n {
            let mut positive_sum = 0.0;
            for p in 0..n {
                if p != q {
                    positive_sum += resp[p * n + q].max(0.0);
                }
            }
            for p in 0..n {
                let new = if p == q {
                    positive_sum
                } else {
                    (resp[q * n + q] + positive_sum - resp[p * n + q].max(0.0)).min(0.0)
                };
                avail[p * n + q] = lam * avail[p * n + q] + (1.0 - lam) * new;
            }
        }

        // Count stability only once some point elects itself; early message
        // states have no exemplar at all and must not trip the stop. High
        // damping also produces long metastable plateaus, so a stable
        // assignment must additionally survive a one-step optimality check
        // before the loop may exit.
        let assign = raw_assignment(&resp, &avail, sim);
        let has_exemplar = assign.iter().enumerate().any(|(p, &e)| p == e);
        if has_exemplar && assign == last_assign {
            stable_iters += 1;
            if stable_iters >= cfg.convergence_iterations && locally_optimal(&assign, sim) {
                break;
            }
        } else {
            stable_iters = 0;
            last_assign = assign;
        }
    }

    finalize(&resp, &avail, sim)
}

/// Net similarity of the best assignment under a given exemplar set.
fn exemplar_score(exemplars: &[usize], sim: &SimilarityMatrix) -> f64 {
    let n = sim.len();
    (0..n)
        .map(|p| {
            if exemplars.contains(&p) {
                sim.get(p, p)
            } else {
                exemplars
                    .iter()
                    .map(|&e| sim.get(p, e))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .sum()
}

/// Whether no single exemplar addition or removal improves the net
/// similarity. Guards the early stop against metastable message states.
fn locally_optimal(assign: &[usize], sim: &SimilarityMatrix) -> bool {
    let n = sim.len();
    let exemplars: Vec<usize> = (0..n).filter(|&p| assign[p] == p).collect();
    let base = exemplar_score(&exemplars, sim);
    let margin = 1e-12 * (1.0 + base.abs());

    for p in 0..n {
        if !exemplars.contains(&p) {
            let mut grown = exemplars.clone();
            grown.push(p);
            if exemplar_score(&grown, sim) > base + margin {
                return false;
            }
        }
    }
    if exemplars.len() > 1 {
        for &e in &exemplars {
            let shrunk: Vec<usize> = exemplars.iter().copied().filter(|&x| x != e).collect();
            if exemplar_score(&shrunk, sim) > base + margin {
                return false;
            }
        }
    }
    true
}

fn raw_assignment(resp: &[f64], avail: &[f64], sim: &SimilarityMatrix) -> Vec<usize> {
    let n = sim.len();
    (0..n)
        .map(|p| {
            (0..n)
                .max_by(|&a, &b| {
                    (avail[p * n + a] + resp[p * n + a])
                        .total_cmp(&(avail[p * n + b] + resp[p * n + b]))
                })
                .unwrap()
        })
        .collect()
}

/// Picks the exemplar set from the converged messages and reassigns every
/// point to its most similar exemplar, so exemplars always elect themselves.
fn finalize(resp: &[f64], avail: &[f64], sim: &SimilarityMatrix) -> ClusterAssignment {
    let n = sim.len();
    let raw = raw_assignment(resp, avail, sim);
    let mut exemplars: Vec<usize> = (0..n).filter(|&p| raw[p] == p).collect();
    if exemplars.is_empty() {
        // Degenerate run: fall back to the strongest self-electing candidate.
        let best = (0..n)
            .max_by(|&a, &b| {
                (avail[a * n + a] + resp[a * n + a]).total_cmp(&(avail[b * n + b] + resp[b * n + b]))
            })
            .unwrap();
        exemplars = vec![best];
    }

    let mut exemplar_of = vec![0usize; n];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); exemplars.len()];
    for p in 0..n {
        let (slot, &ex) = exemplars
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| {
                let sa = if p == a { f64::INFINITY } else { sim.get(p, a) };
                let sb = if p == b { f64::INFINITY } else { sim.get(p, b) };
                sa.total_cmp(&sb)
            })
            .unwrap();
        exemplar_of[p] = ex;
        members[slot].push(p);
    }
    ClusterAssignment {
        exemplar_of,
        exemplars,
        members,
    }
}

/// A freshly clustered CVT before it enters the cluster store: mean position,
/// member paths, and the per-vehicle path index vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CvtSeed {
    pub position: Position3,
    /// Member (path, VT position) pairs backing the mean.
    pub members: Vec<(PathId, Position3)>,
    /// Index vector: entry m holds vehicle m's contributing path index, or 0.
    pub index_vector: Vec<usize>,
}

/// Turns a cluster assignment into CVT seeds. Each seed's position is the
/// mean of its member VTs. If affinity propagation grouped two paths of one
/// vehicle together, only the path nearest the cluster mean stays; the rest
/// are ejected as standalone seeds, keeping index vectors one-per-vehicle.
pub fn clusters_to_cvts(
    assignment: &ClusterAssignment,
    points: &[Position3],
    paths: &[PathId],
    vehicle_count: usize,
) -> Vec<CvtSeed> {
    assert_eq!(points.len(), paths.len());
    let mut seeds = Vec::new();
    let mut ejected: Vec<usize> = Vec::new();

    for member_idx in &assignment.members {
        let mean = mean_position(member_idx.iter().map(|&i| points[i]));
        let mut kept: Vec<usize> = Vec::with_capacity(member_idx.len());
        for &i in member_idx {
            match kept.iter().position(|&j| paths[j].vehicle == paths[i].vehicle) {
                None => kept.push(i),
                Some(slot) => {
                    // Same vehicle twice: keep whichever VT is nearer the mean.
                    let j = kept[slot];
                    if points[i].distance_to(mean) < points[j].distance_to(mean) {
                        kept[slot] = i;
                        ejected.push(j);
                    } else {
                        ejected.push(i);
                    }
                }
            }
        }
        seeds.push(seed_from_members(&kept, points, paths, vehicle_count));
    }

    for i in ejected {
        seeds.push(seed_from_members(&[i], points, paths, vehicle_count));
    }
    seeds
}

fn seed_from_members(
    idx: &[usize],
    points: &[Position3],
    paths: &[PathId],
    vehicle_count: usize,
) -> CvtSeed {
    let mut index_vector = vec![0usize; vehicle_count];
    let mut members = Vec::with_capacity(idx.len());
    for &i in idx {
        index_vector[paths[i].vehicle] = paths[i].path;
        members.push((paths[i], points[i]));
    }
    CvtSeed {
        position: mean_position(idx.iter().map(|&i| points[i])),
        members,
        index_vector,
    }
}

/// Arithmetic mean of a non-empty position iterator.
pub fn mean_position(points: impl IntoIterator<Item = Position3>) -> Position3 {
    let (mut sx, mut sy, mut sz, mut n) = (0.0, 0.0, 0.0, 0usize);
    for p in points {
        sx += p.x;
        sy += p.y;
        sz += p.z;
        n += 1;
    }
    assert!(n > 0, "mean of empty position set");
    Position3::new(sx / n as f64, sy / n as f64, sz / n as f64)
}
