//! Token matrices, neighborhood normalization and persisted training samples.
//!
//! A sample for query element `q` stacks the coarse fields of `q` and its K
//! nearest elements into a `(1 + K) x 52` token matrix (row 0 = query), each
//! row in snapshot layout (GLL point major, feature fastest). Every quantity
//! is scaled with per-feature statistics gathered over the coarse neighborhood
//! only, so the same construction is available at inference time.

use std::fs;
use std::path::{Path, PathBuf};

use crate::binio::{Reader, Writer};
use crate::config::KvConfig;
use crate::error::{Error, FormatError, Result};
use crate::interp::{interp_element, InterpConfig};
use crate::mesh::{Mesh, Snapshot};
use crate::neighborhood::{knn_neighbors, relative_positions};
use crate::{FINE_DIM, N_FEATURES, P_COARSE, P_FINE, TOKEN_DIM};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn nf(&self) -> usize {
        self.mean.len()
    }
}

/// Per-feature mean and population std over point-major `values`.
pub fn neighborhood_stats(values: &[f64], nf: usize) -> NormStats {
    assert!(nf > 0 && !values.is_empty() && values.len() % nf == 0);
    let n = (values.len() / nf) as f64;
    let mut mean = vec![0.0; nf];
    for pt in values.chunks_exact(nf) {
        for (m, v) in mean.iter_mut().zip(pt) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; nf];
    for pt in values.chunks_exact(nf) {
        for ((s, v), m) in var.iter_mut().zip(pt).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    NormStats { mean, std }
}

pub fn normalize(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values
        .chunks_exact(stats.nf())
        .flat_map(|pt| {
            pt.iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((v, m), s)| (v - m) / s)
        })
        .collect()
}

pub fn denormalize(scaled: &[f64], stats: &NormStats) -> Vec<f64> {
    scaled
        .chunks_exact(stats.nf())
        .flat_map(|pt| {
            pt.iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((v, m), s)| v * s + m)
        })
        .collect()
}

/// Everything the model reads for one query element.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput {
    /// `n_tokens x TOKEN_DIM`, normalized.
    pub tokens: Vec<f64>,
    /// `n_tokens x 3` rows of `(u_x, u_y, d)`.
    pub positions: Vec<f64>,
    /// Normalized KNN-interpolated fine query field, `FINE_DIM` values.
    pub baseline: Vec<f64>,
    pub stats: NormStats,
}

impl SampleInput {
    pub fn n_tokens(&self) -> usize {
        self.positions.len() / 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub snapshot: u32,
    pub element: u32,
    pub cluster: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: SampleInput,
    /// Normalized fine query field, `FINE_DIM` values.
    pub target: Vec<f64>,
    pub provenance: Provenance,
}

/// Builds samples for one mesh; shared by dataset construction and inference.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub coarse_mesh: Mesh,
    pub fine_mesh: Mesh,
    pub k: usize,
    pub interp: InterpConfig,
}

impl Tokenizer {
    pub fn new(coarse: &Snapshot, k: usize, interp: InterpConfig) -> Result<Self> {
        let coarse_mesh = coarse.mesh()?;
        if coarse_mesh.p != P_COARSE {
            return Err(Error::UnsupportedOrder {
                found: coarse_mesh.p,
                expected: P_COARSE,
            });
        }
        if k + 1 > coarse_mesh.n_elements() {
            return Err(Error::InsufficientElements {
                requested: k,
                available: coarse_mesh.n_elements(),
            });
        }
        Ok(Self {
            fine_mesh: coarse_mesh.with_order(P_FINE)?,
            coarse_mesh,
            k,
            interp,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.k + 1
    }

    fn check_coarse(&self, coarse: &Snapshot) -> Result<()> {
        if coarse.p != P_COARSE || coarse.nf() != N_FEATURES {
            return Err(Error::Shape(format!(
                "expected a p={P_COARSE} snapshot with {N_FEATURES} features"
            )));
        }
        if (coarse.nex, coarse.ney) != (self.coarse_mesh.nex, self.coarse_mesh.ney)
            || coarse.lx != self.coarse_mesh.lx
            || coarse.ly != self.coarse_mesh.ly
        {
            return Err(Error::Pairing("snapshot mesh differs from tokenizer mesh".into()));
        }
        Ok(())
    }

    /// Inference-time sample construction (no fine field involved).
    pub fn input(&self, coarse: &Snapshot, query: usize) -> Result<SampleInput> {
        Ok(self.input_with_interp(coarse, query)?.0)
    }

    /// The sample input plus the unnormalized interpolated fine field of the query.
    pub fn input_with_interp(&self, coarse: &Snapshot, query: usize) -> Result<(SampleInput, Vec<f64>)> {
        self.check_coarse(coarse)?;
        let nbh = knn_neighbors(&self.coarse_mesh, query, self.k)?;
        let positions = relative_positions(&self.coarse_mesh, &nbh)?.flat();

        let mut raw = Vec::with_capacity(self.n_tokens() * TOKEN_DIM);
        let mut coords = Vec::with_capacity(self.n_tokens() * 4);
        for e in nbh.elements() {
            raw.extend_from_slice(coarse.element(e));
            coords.extend(self.coarse_mesh.element_gll_coords(e)?);
        }
        let stats = neighborhood_stats(&raw, N_FEATURES);
        let fine_coords = self.fine_mesh.element_gll_coords(query)?;
        let interp = interp_element(&coords, &raw, N_FEATURES, &fine_coords, &self.interp)?;
        let input = SampleInput {
            tokens: normalize(&raw, &stats),
            positions,
            baseline: normalize(&interp, &stats),
            stats,
        };
        Ok((input, interp))
    }

    pub fn sample(
        &self,
        coarse: &Snapshot,
        fine: &Snapshot,
        query: usize,
        snapshot_id: u32,
        cluster: u8,
    ) -> Result<TrainingSample> {
        check_pair(coarse, fine)?;
        let input = self.input(coarse, query)?;
        let target = normalize(fine.element(query), &input.stats);
        Ok(TrainingSample {
            input,
            target,
            provenance: Provenance {
                snapshot: snapshot_id,
                element: query as u32,
                cluster,
            },
        })
    }
}

fn check_pair(coarse: &Snapshot, fine: &Snapshot) -> Result<()> {
    if !coarse.same_layout(fine) || coarse.time != fine.time {
        return Err(Error::Pairing(
            "coarse and fine snapshots differ in mesh, features or time".into(),
        ));
    }
    if fine.p != P_FINE {
        return Err(Error::UnsupportedOrder {
            found: fine.p,
            expected: P_FINE,
        });
    }
    Ok(())
}

/// One-off sample construction with the default interpolation settings.
pub fn build_sample(
    coarse: &Snapshot,
    fine: &Snapshot,
    query: usize,
    k: usize,
) -> Result<TrainingSample> {
    check_pair(coarse, fine)?;
    Tokenizer::new(coarse, k, InterpConfig::default())?.sample(coarse, fine, query, 0, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    pub k: usize,
    pub nf: usize,
    pub p_in: usize,
    pub p_out: usize,
    pub n_tokens: usize,
}

impl DatasetConfig {
    pub fn for_k(k: usize) -> Self {
        Self {
            k,
            nf: N_FEATURES,
            p_in: P_COARSE,
            p_out: P_FINE,
            n_tokens: k + 1,
        }
    }

    fn record_f64s(&self) -> usize {
        2 * self.nf + self.n_tokens * 3 + self.n_tokens * TOKEN_DIM + 2 * FINE_DIM
    }

    fn record_bytes(&self) -> usize {
        9 + 8 * self.record_f64s()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn expect_config(&self, expected: &DatasetConfig) -> Result<()> {
        if self.config != *expected {
            return Err(FormatError::ConfigMismatch(format!(
                "dataset has {:?}, pipeline expects {expected:?}",
                self.config
            ))
            .into());
        }
        Ok(())
    }

    pub fn cluster_counts(&self) -> Vec<usize> {
        let mut counts = Vec::new();
        for s in &self.samples {
            let c = s.provenance.cluster as usize;
            if counts.len() <= c {
                counts.resize(c + 1, 0);
            }
            counts[c] += 1;
        }
        counts
    }
}

const DATASET_MAGIC: &str = "SRGTDSET";
const DATASET_VERSION: u32 = 1;

pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes the dataset and a `<path>.manifest` sidecar. `extra` entries are
/// copied into the manifest verbatim.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>, extra: &KvConfig) -> Result<()> {
    let path = path.as_ref();
    let cfg = dataset.config;
    if dataset.samples.is_empty() {
        return Err(Error::Config("refusing to write an empty dataset".into()));
    }
    let mut w = Writer::with_capacity(48 + dataset.samples.len() * cfg.record_bytes());
    w.bytes(DATASET_MAGIC.as_bytes());
    w.u32(DATASET_VERSION);
    for v in [cfg.k, cfg.nf, cfg.p_in, cfg.p_out, cfg.n_tokens] {
        w.u32(v as u32);
    }
    w.u64(dataset.samples.len() as u64);
    for s in &dataset.samples {
        let inp = &s.input;
        if inp.n_tokens() != cfg.n_tokens
            || inp.tokens.len() != cfg.n_tokens * TOKEN_DIM
            || inp.baseline.len() != FINE_DIM
            || s.target.len() != FINE_DIM
            || inp.stats.nf() != cfg.nf
        {
            return Err(Error::Shape("sample does not match dataset config".into()));
        }
        w.u32(s.provenance.snapshot);
        w.u32(s.provenance.element);
        w.u8(s.provenance.cluster);
        w.f64s(&inp.stats.mean);
        w.f64s(&inp.stats.std);
        w.f64s(&inp.positions);
        w.f64s(&inp.tokens);
        w.f64s(&inp.baseline);
        w.f64s(&s.target);
    }
    fs::write(path, w.into_inner()).map_err(|e| Error::io(path, e))?;

    let mut m = extra.clone();
    m.set("K", cfg.k);
    m.set("N_f", cfg.nf);
    m.set("p_in", cfg.p_in);
    m.set("p_out", cfg.p_out);
    m.set("N_t", cfg.n_tokens);
    m.set("n_samples", dataset.samples.len());
    for (c, n) in dataset.cluster_counts().iter().enumerate() {
        m.set(&format!("cluster_{c}"), n);
    }
    m.save(manifest_path(path))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes);
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let mut v = [0usize; 5];
    for x in &mut v {
        *x = r.u32()? as usize;
    }
    let config = DatasetConfig {
        k: v[0],
        nf: v[1],
        p_in: v[2],
        p_out: v[3],
        n_tokens: v[4],
    };
    if config.n_tokens != config.k + 1
        || config.nf != N_FEATURES
        || config.p_in != P_COARSE
        || config.p_out != P_FINE
    {
        return Err(FormatError::ConfigMismatch(format!("unsupported dataset config {config:?}")).into());
    }
    let count = r.u64()? as usize;
    let expected = count
        .checked_mul(config.record_bytes())
        .ok_or_else(|| FormatError::CorruptRecord("sample count overflows".into()))?;
    if r.remaining() != expected {
        return Err(FormatError::CorruptRecord(format!(
            "{} payload bytes for {count} records of {} bytes",
            r.remaining(),
            config.record_bytes()
        ))
        .into());
    }
    let nt = config.n_tokens;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let provenance = Provenance {
            snapshot: r.u32()?,
            element: r.u32()?,
            cluster: r.u8()?,
        };
        let mean = r.f64s(config.nf)?;
        let std = r.f64s(config.nf)?;
        let positions = r.f64s(nt * 3)?;
        let tokens = r.f64s(nt * TOKEN_DIM)?;
        let baseline = r.f64s(FINE_DIM)?;
        let target = r.f64s(FINE_DIM)?;
        samples.push(TrainingSample {
            input: SampleInput {
                tokens,
                positions,
                baseline,
                stats: NormStats { mean, std },
            },
            target,
            provenance,
        });
    }
    r.finish()?;
    Ok(Dataset { config, samples })
}
