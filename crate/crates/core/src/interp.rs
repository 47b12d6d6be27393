//! KNN inverse-distance interpolation from the coarse point cloud to fine GLL points.

use crate::config::KvConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpConfig {
    /// Source points averaged per query point.
    pub k_interp: usize,
    /// Added to every distance before inversion.
    pub epsilon_d: f64,
    /// A source closer than this is copied verbatim.
    pub match_tol: f64,
}

impl Default for InterpConfig {
    fn default() -> Self {
        Self {
            k_interp: 4,
            epsilon_d: 1e-12,
            match_tol: 1e-12,
        }
    }
}

impl InterpConfig {
    pub fn write_to(&self, c: &mut KvConfig) {
        c.set("interp_k", self.k_interp);
        c.set("interp_epsilon_d", self.epsilon_d);
        c.set("interp_match_tol", self.match_tol);
    }

    pub fn read_from(c: &KvConfig) -> Result<Self> {
        let mut cfg = Self::default();
        c.apply("interp_k", &mut cfg.k_interp)?;
        c.apply("interp_epsilon_d", &mut cfg.epsilon_d)?;
        c.apply("interp_match_tol", &mut cfg.match_tol)?;
        if cfg.k_interp == 0 {
            return Err(Error::Config("interp_k must be >= 1".into()));
        }
        Ok(cfg)
    }
}

/// Interpolates `nf`-feature `source_values` (row per source point) onto `queries`.
pub fn knn_interpolate(
    sources: &[[f64; 2]],
    source_values: &[f64],
    nf: usize,
    queries: &[[f64; 2]],
    cfg: &InterpConfig,
) -> Result<Vec<f64>> {
    if cfg.k_interp == 0 {
        return Err(Error::Config("k_interp must be >= 1".into()));
    }
    if sources.len() < cfg.k_interp {
        return Err(Error::InsufficientSources {
            needed: cfg.k_interp,
            available: sources.len(),
        });
    }
    if source_values.len() != sources.len() * nf {
        return Err(Error::Shape(format!(
            "{} source values for {} points x {nf} features",
            source_values.len(),
            sources.len()
        )));
    }
    let mut out = Vec::with_capacity(queries.len() * nf);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(sources.len());
    for &[qx, qy] in queries {
        dist.clear();
        dist.extend(
            sources
                .iter()
                .enumerate()
                .map(|(i, &[x, y])| ((x - qx).hypot(y - qy), i)),
        );
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = cfg.k_interp;
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, by_distance);
            dist.truncate(k);
        }
        dist.sort_unstable_by(by_distance);

        let (d0, i0) = dist[0];
        if d0 <= cfg.match_tol {
            out.extend_from_slice(&source_values[i0 * nf..(i0 + 1) * nf]);
            continue;
        }
        let weights: Vec<f64> = dist.iter().map(|(d, _)| 1.0 / (d + cfg.epsilon_d)).collect();
        let total: f64 = weights.iter().sum();
        let base = out.len();
        out.resize(base + nf, 0.0);
        let row = &mut out[base..];
        for (w, &(_, i)) in weights.iter().zip(&dist) {
            let w = w / total;
            for (o, v) in row.iter_mut().zip(&source_values[i * nf..(i + 1) * nf]) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Interpolates the coarse neighborhood point cloud onto the 16 fine GLL
/// points of the query element.
pub fn interp_element(
    coarse_coords: &[[f64; 2]],
    coarse_values: &[f64],
    nf: usize,
    fine_coords: &[[f64; 2]],
    cfg: &InterpConfig,
) -> Result<Vec<f64>> {
    knn_interpolate(coarse_coords, coarse_values, nf, fine_coords, cfg)
}
