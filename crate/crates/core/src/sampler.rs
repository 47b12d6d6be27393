//! k-means segmentation of coarse snapshots on (P, T, rho, Y_H2O) and
//! cluster-conditioned sampling of query elements.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::feature;
use crate::mesh::Snapshot;
use crate::P_COARSE;

pub const CLUSTER_DIM: usize = 4;
pub const MAX_LLOYD_ITERS: usize = 300;
const STD_FLOOR: f64 = 1e-12;

/// Per-element mean over its GLL points of `(P, T, rho, Y_H2O)`, with
/// `rho = P / (r_s T)` evaluated pointwise before averaging.
pub fn element_cluster_features(coarse: &Snapshot, r_s: f64) -> Result<Vec<[f64; CLUSTER_DIM]>> {
    if coarse.p != P_COARSE {
        return Err(Error::UnsupportedOrder {
            found: coarse.p,
            expected: P_COARSE,
        });
    }
    let npe = coarse.points_per_element();
    let mut out = Vec::with_capacity(coarse.n_elements());
    for e in 0..coarse.n_elements() {
        let mut acc = [0.0; CLUSTER_DIM];
        for j in 0..npe {
            let p = coarse.value(e, j, feature::P);
            let t = coarse.value(e, j, feature::T);
            if !(t > 0.0) {
                return Err(Error::InvalidState(format!(
                    "non-positive temperature {t} at element {e}, point {j}"
                )));
            }
            acc[0] += p;
            acc[1] += t;
            acc[2] += p / (r_s * t);
            acc[3] += coarse.value(e, j, feature::Y_H2O);
        }
        out.push(acc.map(|v| v / npe as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// Centroids in standardized feature space.
    pub centroids: Vec<[f64; CLUSTER_DIM]>,
    pub feature_means: [f64; CLUSTER_DIM],
    pub feature_stds: [f64; CLUSTER_DIM],
    pub assignments: Vec<usize>,
    /// Sum of squared standardized distances after each Lloyd iteration.
    pub objective_history: Vec<f64>,
}

impl ClusterModel {
    pub fn standardize(&self, x: &[f64; CLUSTER_DIM]) -> [f64; CLUSTER_DIM] {
        std::array::from_fn(|i| (x[i] - self.feature_means[i]) / self.feature_stds[i])
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64; CLUSTER_DIM], b: &[f64; CLUSTER_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64; CLUSTER_DIM], centroids: &[[f64; CLUSTER_DIM]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(x, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(data: &[[f64; CLUSTER_DIM]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; CLUSTER_DIM]> {
    let mut centroids = vec![data[rng.gen_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.gen_range(0..data.len())
        };
        let c = data[pick];
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Standardizes the features, seeds with k-means++ and runs Lloyd iterations
/// until the assignment set is stable (or [`MAX_LLOYD_ITERS`]).
pub fn kmeans_fit(features: &[[f64; CLUSTER_DIM]], k: usize, seed: u64) -> Result<ClusterModel> {
    let n = features.len();
    if k == 0 || n < k {
        return Err(Error::InsufficientData { n, k });
    }
    let mut means = [0.0; CLUSTER_DIM];
    for x in features {
        for i in 0..CLUSTER_DIM {
            means[i] += x[i];
        }
    }
    means = means.map(|m| m / n as f64);
    let mut stds = [0.0; CLUSTER_DIM];
    for x in features {
        for i in 0..CLUSTER_DIM {
            stds[i] += (x[i] - means[i]).powi(2);
        }
    }
    stds = stds.map(|s| (s / n as f64).sqrt().max(STD_FLOOR));
    let data: Vec<[f64; CLUSTER_DIM]> = features
        .iter()
        .map(|x| std::array::from_fn(|i| (x[i] - means[i]) / stds[i]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(&data, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();

    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, x) in data.iter().enumerate() {
            let (c, d) = nearest(x, &centroids);
            dists[i] = d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        // Re-seed empty clusters from the point farthest from its centroid.
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            let Some(far) = far else { break };
            centroids[empty] = data[far];
            assignments[far] = empty;
            dists[far] = 0.0;
            changed = true;
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; CLUSTER_DIM]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assignments) {
            counts[a] += 1;
            for i in 0..CLUSTER_DIM {
                sums[a][i] += x[i];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
        let objective: f64 = data
            .iter()
            .zip(&assignments)
            .map(|(x, &a)| sq_dist(x, &centroids[a]))
            .sum();
        if let Some(&prev) = history.last() {
            assert!(
                objective <= prev * (1.0 + 1e-12) + 1e-12,
                "Lloyd objective increased: {prev} -> {objective}"
            );
        }
        history.push(objective);
    }

    Ok(ClusterModel {
        k,
        centroids,
        feature_means: means,
        feature_stds: stds,
        assignments,
        objective_history: history,
    })
}

/// Draws `min(per_cluster, |cluster|)` elements from every cluster, uniformly
/// without replacement. Output is cluster-major, then in draw order.
pub fn cluster_conditioned_sample(
    assignments: &[usize],
    per_cluster: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in 0..k {
        let mut members: Vec<usize> = (0..assignments.len())
            .filter(|&e| assignments[e] == c)
            .collect();
        let take = per_cluster.min(members.len());
        let (drawn, _) = members.partial_shuffle(&mut rng, take);
        out.extend(drawn.iter().map(|&e| (e, c)));
    }
    out
}

const CLUSTER_MAGIC: &str = "SRGTCLST";
const CLUSTER_VERSION: u32 = 1;

pub fn write_cluster_labels(k: usize, labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer::with_capacity(20 + labels.len());
    w.bytes(CLUSTER_MAGIC.as_bytes());
    w.u32(CLUSTER_VERSION);
    w.u32(k as u32);
    w.u32(labels.len() as u32);
    for &l in labels {
        if l >= k || l > u8::MAX as usize {
            return Err(Error::Config(format!("label {l} does not fit k={k} / u8")));
        }
        w.u8(l as u8);
    }
    fs::write(path.as_ref(), w.into_inner()).map_err(|e| Error::io(path, e))
}

pub fn read_cluster_labels(path: impl AsRef<Path>) -> Result<(usize, Vec<usize>)> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    let mut r = Reader::new(&bytes);
    r.magic(CLUSTER_MAGIC)?;
    r.version(CLUSTER_VERSION)?;
    let k = r.u32()? as usize;
    let n = r.u32()? as usize;
    let labels: Vec<usize> = r.take(n)?.iter().map(|&b| b as usize).collect();
    r.finish()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(FormatError::CorruptRecord(format!("label {bad} >= k={k}")).into());
    }
    Ok((k, labels))
}
