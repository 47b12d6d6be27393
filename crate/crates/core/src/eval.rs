//! Whole-snapshot inference, error metrics and report/image export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::interp::InterpConfig;
use crate::mesh::Snapshot;
use crate::model::{predict_residuals, ModelParams};
use crate::tokenizer::{SampleInput, Tokenizer};
use crate::{feature, P_FINE};

/// Percent errors are normalized by a target range floored at this value.
pub const RANGE_FLOOR: f64 = 1e-12;
/// Front elements have an internal temperature range above this fraction of `T_b - T_u`.
pub const FRONT_FRACTION: f64 = 0.2;

const INFER_CHUNK: usize = 256;

fn assemble(coarse: &Snapshot, tok: &Tokenizer, fine_elements: Vec<f64>) -> Result<Snapshot> {
    Snapshot::new(&tok.fine_mesh, coarse.time, coarse.feature_names.clone(), fine_elements)
}

fn inputs_for(tok: &Tokenizer, coarse: &Snapshot, range: std::ops::Range<usize>) -> Result<Vec<(SampleInput, Vec<f64>)>> {
    range.map(|e| tok.input_with_interp(coarse, e)).collect()
}

/// Model super-resolution of every element: the interpolated field plus the
/// residual scaled back by the neighborhood std. A zero residual reproduces
/// the interpolation baseline bit for bit.
pub fn super_resolve_snapshot(
    coarse: &Snapshot,
    params: &ModelParams,
    k: usize,
    interp: &InterpConfig,
) -> Result<Snapshot> {
    let tok = Tokenizer::new(coarse, k, *interp)?;
    let n = coarse.n_elements();
    let mut data = Vec::with_capacity(n * tok.fine_mesh.points_per_element() * coarse.nf());
    for start in (0..n).step_by(INFER_CHUNK) {
        let inputs = inputs_for(&tok, coarse, start..(start + INFER_CHUNK).min(n))?;
        let refs: Vec<&SampleInput> = inputs.iter().map(|(inp, _)| inp).collect();
        for (res, (inp, base)) in predict_residuals(&refs, params)?.iter().zip(&inputs) {
            let std = inp.stats.std.iter().cycle();
            // skipping zero residuals keeps signed zeros of the baseline intact
            data.extend(base.iter().zip(res).zip(std).map(|((&b, &r), s)| if r == 0.0 { b } else { b + r * s }));
        }
    }
    assemble(coarse, &tok, data)
}

/// The interpolation baseline, built through the same sample path as the model.
pub fn interp_snapshot(coarse: &Snapshot, k: usize, interp: &InterpConfig) -> Result<Snapshot> {
    let tok = Tokenizer::new(coarse, k, *interp)?;
    let mut data = Vec::new();
    for e in 0..coarse.n_elements() {
        data.extend(tok.input_with_interp(coarse, e)?.1);
    }
    assemble(coarse, &tok, data)
}

fn check_aligned(a: &Snapshot, b: &Snapshot) -> Result<()> {
    if !a.same_layout(b) || a.p != b.p || a.time != b.time {
        return Err(Error::Pairing("snapshots differ in mesh, order, features or time".into()));
    }
    Ok(())
}

fn feature_values(s: &Snapshot, f: usize) -> impl Iterator<Item = f64> + '_ {
    s.points().map(move |pt| pt[f])
}

fn range_of(s: &Snapshot, f: usize) -> f64 {
    let (lo, hi) = feature_values(s, f).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    (hi - lo).max(RANGE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorField {
    pub abs: Vec<f64>,
    /// `100 * abs / range(target)`.
    pub percent: Vec<f64>,
}

/// Pointwise error of one feature, in point order.
pub fn error_field(pred: &Snapshot, target: &Snapshot, f: usize) -> Result<ErrorField> {
    check_aligned(pred, target)?;
    if f >= target.nf() {
        return Err(Error::Index { index: f, len: target.nf() });
    }
    let range = range_of(target, f);
    let abs: Vec<f64> = feature_values(pred, f)
        .zip(feature_values(target, f))
        .map(|(a, b)| (a - b).abs())
        .collect();
    let percent = abs.iter().map(|e| 100.0 * e / range).collect();
    Ok(ErrorField { abs, percent })
}

/// Mean and max of `|sum of species mass fractions - 1|` over all points.
pub fn mass_conservation(s: &Snapshot) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut n = 0usize;
    for pt in s.points() {
        let dev = (pt[feature::SPECIES].iter().sum::<f64>() - 1.0).abs();
        sum += dev;
        max = max.max(dev);
        n += 1;
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub rmse: f64,
    pub max_abs: f64,
    pub pct_mean: f64,
    pub pct_p99: f64,
    pub pct_max: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn stats_from(fields: &[&ErrorField]) -> FeatureStats {
    let n: usize = fields.iter().map(|f| f.abs.len()).sum();
    let sq: f64 = fields.iter().flat_map(|f| &f.abs).map(|e| e * e).sum();
    let max_abs = fields.iter().flat_map(|f| &f.abs).cloned().fold(0.0, f64::max);
    let mut pct: Vec<f64> = fields.iter().flat_map(|f| f.percent.iter().copied()).collect();
    pct.sort_by(f64::total_cmp);
    let nn = n.max(1) as f64;
    FeatureStats {
        rmse: (sq / nn).sqrt(),
        max_abs,
        pct_mean: pct.iter().sum::<f64>() / nn,
        pct_p99: percentile(&pct, 0.99),
        pct_max: pct.last().copied().unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotReport {
    pub name: String,
    pub time: f64,
    pub features: Vec<FeatureStats>,
    pub mass_mean: f64,
    pub mass_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub feature_names: Vec<String>,
    pub snapshots: Vec<SnapshotReport>,
    /// Pooled over every point of every snapshot.
    pub overall: Vec<FeatureStats>,
    pub mass_mean: f64,
    pub mass_max: f64,
}

/// Error statistics of `preds` against `targets`, snapshot by snapshot and pooled.
pub fn evaluate(names: &[String], preds: &[Snapshot], targets: &[Snapshot]) -> Result<EvalReport> {
    if preds.len() != targets.len() || preds.len() != names.len() || preds.is_empty() {
        return Err(Error::Pairing(format!(
            "{} predictions, {} targets, {} names",
            preds.len(),
            targets.len(),
            names.len()
        )));
    }
    let nf = targets[0].nf();
    let mut per_feature: Vec<Vec<ErrorField>> = vec![Vec::new(); nf];
    let mut snapshots = Vec::new();
    let (mut mass_sum, mut mass_max, mut n_points) = (0.0, 0.0f64, 0usize);
    for ((name, p), t) in names.iter().zip(preds).zip(targets) {
        if t.nf() != nf {
            return Err(Error::Pairing("feature count changes across snapshots".into()));
        }
        let mut features = Vec::with_capacity(nf);
        for (f, acc) in per_feature.iter_mut().enumerate() {
            let ef = error_field(p, t, f)?;
            features.push(stats_from(&[&ef]));
            acc.push(ef);
        }
        let (mm, mx) = mass_conservation(p);
        let np = p.n_elements() * p.points_per_element();
        mass_sum += mm * np as f64;
        n_points += np;
        mass_max = mass_max.max(mx);
        snapshots.push(SnapshotReport {
            name: name.clone(),
            time: t.time,
            features,
            mass_mean: mm,
            mass_max: mx,
        });
    }
    let overall = per_feature
        .iter()
        .map(|fields| stats_from(&fields.iter().collect::<Vec<_>>()))
        .collect();
    Ok(EvalReport {
        feature_names: targets[0].feature_names.clone(),
        snapshots,
        overall,
        mass_mean: mass_sum / n_points.max(1) as f64,
        mass_max,
    })
}

const CSV_HEADER: &str = "snapshot,time,feature,rmse,max_abs,pct_mean,pct_p99,pct_max,mass_mean,mass_max";

impl EvalReport {
    /// One row per (snapshot, feature), then pooled rows under the snapshot name `ALL`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        let mut rows = |name: &str, time: f64, stats: &[FeatureStats], mm: f64, mx: f64| {
            for (fname, s) in self.feature_names.iter().zip(stats) {
                let _ = writeln!(
                    out,
                    "{name},{time:e},{fname},{:e},{:e},{:e},{:e},{:e},{mm:e},{mx:e}",
                    s.rmse, s.max_abs, s.pct_mean, s.pct_p99, s.pct_max
                );
            }
        };
        for s in &self.snapshots {
            rows(&s.name, s.time, &s.features, s.mass_mean, s.mass_max);
        }
        rows("ALL", f64::NAN, &self.overall, self.mass_mean, self.mass_max);
        out
    }

    pub fn from_csv(text: &str) -> Result<EvalReport> {
        let bad = |m: String| Error::Config(format!("report CSV: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(bad("missing header".into()));
        }
        let mut names: Vec<String> = Vec::new();
        let mut snapshots: Vec<SnapshotReport> = Vec::new();
        let mut overall = Vec::new();
        let (mut mass_mean, mut mass_max) = (0.0, 0.0);
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 10 {
                return Err(bad(format!("expected 10 columns: {line}")));
            }
            let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad(format!("bad number {:?}", cols[i])));
            let stats = FeatureStats {
                rmse: num(3)?,
                max_abs: num(4)?,
                pct_mean: num(5)?,
                pct_p99: num(6)?,
                pct_max: num(7)?,
            };
            let (mm, mx) = (num(8)?, num(9)?);
            if cols[0] == "ALL" {
                if overall.is_empty() && names.is_empty() {
                    return Err(bad("pooled rows before snapshot rows".into()));
                }
                overall.push(stats);
                mass_mean = mm;
                mass_max = mx;
                continue;
            }
            if snapshots.last().map(|s| s.name.as_str()) != Some(cols[0]) {
                snapshots.push(SnapshotReport {
                    name: cols[0].to_string(),
                    time: num(1)?,
                    features: Vec::new(),
                    mass_mean: mm,
                    mass_max: mx,
                });
            }
            if snapshots.len() == 1 {
                names.push(cols[2].to_string());
            }
            snapshots.last_mut().expect("pushed above").features.push(stats);
        }
        Ok(EvalReport {
            feature_names: names,
            snapshots,
            overall,
            mass_mean,
            mass_max,
        })
    }

    pub fn to_text(&self, title: &str) -> String {
        let mut out = format!("{title}\n{} snapshot(s)\n\n", self.snapshots.len());
        let _ = writeln!(
            out,
            "{:<8} {:>12} {:>12} {:>10} {:>10} {:>10}",
            "feature", "rmse", "max_abs", "pct_mean", "pct_p99", "pct_max"
        );
        for (n, s) in self.feature_names.iter().zip(&self.overall) {
            let _ = writeln!(
                out,
                "{:<8} {:>12.4e} {:>12.4e} {:>10.4} {:>10.4} {:>10.4}",
                n, s.rmse, s.max_abs, s.pct_mean, s.pct_p99, s.pct_max
            );
        }
        let _ = writeln!(
            out,
            "\nspecies closure |sum Y - 1|: mean {:.3e}, max {:.3e}",
            self.mass_mean, self.mass_max
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub feature_names: Vec<String>,
    pub rmse_model: Vec<f64>,
    pub rmse_interp: Vec<f64>,
    /// `rmse_model / rmse_interp` per feature; 1 when both are zero.
    pub ratios: Vec<f64>,
    pub median_ratio: f64,
    /// Absolute temperature-range threshold defining front elements.
    pub front_threshold: f64,
    pub front_elements: usize,
    pub front_t_rmse_model: f64,
    pub front_t_rmse_interp: f64,
}

fn ratio(model: f64, interp: f64) -> f64 {
    if interp == 0.0 {
        if model == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        model / interp
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Elements whose target temperature range exceeds `threshold`.
pub fn front_elements(target: &Snapshot, threshold: f64) -> Vec<usize> {
    (0..target.n_elements())
        .filter(|&e| {
            let ts = target.element(e).chunks_exact(target.nf()).map(|pt| pt[feature::T]);
            let (lo, hi) = ts.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            hi - lo > threshold
        })
        .collect()
}

/// Per-feature RMSE ratios of model over interpolation, plus temperature
/// errors restricted to front elements.
pub fn compare_baseline(
    model: &[Snapshot],
    interp: &[Snapshot],
    target: &[Snapshot],
    front_threshold: f64,
) -> Result<Comparison> {
    if model.len() != target.len() || interp.len() != target.len() || target.is_empty() {
        return Err(Error::Pairing("model, interp and target series differ in length".into()));
    }
    let nf = target[0].nf();
    let mut sq_m = vec![0.0; nf];
    let mut sq_i = vec![0.0; nf];
    let mut n = 0usize;
    let (mut fm, mut fi, mut fn_) = (0.0, 0.0, 0usize);
    let mut front_count = 0;
    for ((m, i), t) in model.iter().zip(interp).zip(target) {
        check_aligned(m, t)?;
        check_aligned(i, t)?;
        for ((pm, pi), pt) in m.points().zip(i.points()).zip(t.points()) {
            for f in 0..nf {
                sq_m[f] += (pm[f] - pt[f]).powi(2);
                sq_i[f] += (pi[f] - pt[f]).powi(2);
            }
            n += 1;
        }
        let front = front_elements(t, front_threshold);
        front_count += front.len();
        let ppe = t.points_per_element();
        for e in front {
            for j in 0..ppe {
                let tv = t.value(e, j, feature::T);
                fm += (m.value(e, j, feature::T) - tv).powi(2);
                fi += (i.value(e, j, feature::T) - tv).powi(2);
                fn_ += 1;
            }
        }
    }
    let rmse = |s: &[f64]| s.iter().map(|v| (v / n as f64).sqrt()).collect::<Vec<f64>>();
    let (rm, ri) = (rmse(&sq_m), rmse(&sq_i));
    let ratios: Vec<f64> = rm.iter().zip(&ri).map(|(&a, &b)| ratio(a, b)).collect();
    let fden = fn_.max(1) as f64;
    Ok(Comparison {
        feature_names: target[0].feature_names.clone(),
        median_ratio: median(&ratios),
        rmse_model: rm,
        rmse_interp: ri,
        ratios,
        front_threshold,
        front_elements: front_count,
        front_t_rmse_model: (fm / fden).sqrt(),
        front_t_rmse_interp: (fi / fden).sqrt(),
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,rmse_model,rmse_interp,ratio\n");
        for (k, n) in self.feature_names.iter().enumerate() {
            let _ = writeln!(out, "{n},{:e},{:e},{:e}", self.rmse_model[k], self.rmse_interp[k], self.ratios[k]);
        }
        let _ = writeln!(out, "MEDIAN,,,{:e}", self.median_ratio);
        let _ = writeln!(
            out,
            "FRONT_T,{:e},{:e},{:e}",
            self.front_t_rmse_model,
            self.front_t_rmse_interp,
            ratio(self.front_t_rmse_model, self.front_t_rmse_interp)
        );
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("model vs KNN interpolation (RMSE ratio, lower is better)\n");
        for (k, n) in self.feature_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<8} model {:>11.4e}  interp {:>11.4e}  ratio {:.4}",
                n, self.rmse_model[k], self.rmse_interp[k], self.ratios[k]
            );
        }
        let _ = writeln!(out, "median ratio {:.4}", self.median_ratio);
        let _ = writeln!(
            out,
            "front region (element T range > {:.4e}, {} elements): T rmse model {:.4e}, interp {:.4e}",
            self.front_threshold, self.front_elements, self.front_t_rmse_model, self.front_t_rmse_interp
        );
        out
    }
}

/// 8-bit grayscale raster: 4x4 pixels per element, top row = largest y.
pub struct FieldImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub min: f64,
    pub max: f64,
}

pub fn field_image(s: &Snapshot, f: usize) -> Result<FieldImage> {
    if f >= s.nf() {
        return Err(Error::Index { index: f, len: s.nf() });
    }
    let values: Vec<f64> = feature_values(s, f).collect();
    image_from_points(s, &values)
}

/// Rasterizes one value per GLL point (point order of `s`).
pub fn image_from_points(s: &Snapshot, values: &[f64]) -> Result<FieldImage> {
    let ppe = s.points_per_element();
    if values.len() != s.n_elements() * ppe {
        return Err(Error::Shape(format!("{} values for {} points", values.len(), s.n_elements() * ppe)));
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let (width, height) = (4 * s.nex, 4 * s.ney);
    let mut pixels = vec![0u8; width * height];
    let n1 = s.p + 1;
    let gray = |v: f64| -> u8 {
        if max > min {
            (255.0 * (v - min) / (max - min)).round() as u8
        } else {
            128
        }
    };
    for ey in 0..s.ney {
        for ex in 0..s.nex {
            let e = ey * s.nex + ex;
            for ty in 0..4 {
                for tx in 0..4 {
                    let (gi, gj) = (tx * n1 / 4, ty * n1 / 4);
                    let v = values[e * ppe + gj * n1 + gi];
                    let (px, py) = (ex * 4 + tx, ey * 4 + ty);
                    pixels[(height - 1 - py) * width + px] = gray(v);
                }
            }
        }
    }
    Ok(FieldImage {
        width,
        height,
        pixels,
        min,
        max,
    })
}

impl FieldImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub fn scale_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".scale");
    PathBuf::from(s)
}

fn write_image(img: &FieldImage, label: &str, path: &Path) -> Result<()> {
    fs::write(path, img.to_pgm()).map_err(|e| Error::io(path, e))?;
    let side = scale_path(path);
    let text = format!("field = {label}\nmin = {:e}\nmax = {:e}\n", img.min, img.max);
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Writes a PGM of one feature plus a `.scale` sidecar holding the gray-level mapping.
pub fn export_field_image(s: &Snapshot, f: usize, path: impl AsRef<Path>) -> Result<()> {
    let img = field_image(s, f)?;
    write_image(&img, &s.feature_names[f], path.as_ref())
}

/// Writes the absolute-error map of one feature as a PGM.
pub fn export_error_image(pred: &Snapshot, target: &Snapshot, f: usize, path: impl AsRef<Path>) -> Result<()> {
    let ef = error_field(pred, target, f)?;
    let img = image_from_points(target, &ef.abs)?;
    write_image(&img, &format!("abs error {}", target.feature_names[f]), path.as_ref())
}

pub fn export_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), report.to_csv()).map_err(|e| Error::io(path, e))
}

/// Absolute front threshold for the given unburnt and burnt temperatures.
pub fn front_threshold(t_u: f64, t_b: f64) -> f64 {
    FRONT_FRACTION * (t_b - t_u)
}

/// Reject anything but a fine-order snapshot as ground truth.
pub fn require_fine(s: &Snapshot) -> Result<()> {
    if s.p != P_FINE {
        return Err(Error::UnsupportedOrder { found: s.p, expected: P_FINE });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, coarsen_snapshot};
    use crate::synth::{generate_snapshot, SurrogateParams};

    fn truth() -> Snapshot {
        let m = build_mesh(8, 4, 2.0, 1.0, 3).unwrap();
        generate_snapshot(&m, 1e-5, &SurrogateParams::for_mesh(&m)).unwrap()
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
        assert_eq!(percentile(&[3.0], 0.99), 3.0);
    }

    #[test]
    fn error_field_examples() {
        let t = truth();
        let z = error_field(&t, &t, feature::P).unwrap();
        assert!(z.abs.iter().chain(&z.percent).all(|&v| v == 0.0));

        let eps = 1e-3;
        let mut p = t.clone();
        for pt in p.data.chunks_exact_mut(13) {
            pt[feature::T] += eps;
        }
        let r = range_of(&t, feature::T);
        let ef = error_field(&p, &t, feature::T).unwrap();
        for v in &ef.percent {
            assert!((v - 100.0 * eps / r).abs() < 1e-9 * (100.0 * eps / r));
        }
    }

    #[test]
    fn percent_error_affine_invariant() {
        let t = truth();
        let mut p = t.clone();
        for (i, pt) in p.data.chunks_exact_mut(13).enumerate() {
            pt[feature::P] *= 1.0 + 0.01 * ((i as f64) * 0.37).sin();
        }
        let (a, b) = (3.5, -120.0);
        let map = |s: &Snapshot| {
            let mut s = s.clone();
            for pt in s.data.chunks_exact_mut(13) {
                pt[feature::P] = a * pt[feature::P] + b;
            }
            s
        };
        let e1 = error_field(&p, &t, feature::P).unwrap();
        let e2 = error_field(&map(&p), &map(&t), feature::P).unwrap();
        for (x, y) in e1.percent.iter().zip(&e2.percent) {
            assert!((x - y).abs() < 1e-8 * x.abs().max(1e-6));
        }
    }

    #[test]
    fn misaligned_snapshots_rejected() {
        let t = truth();
        let c = coarsen_snapshot(&t).unwrap();
        assert!(matches!(error_field(&c, &t, 0), Err(Error::Pairing(_))));
        let mut later = t.clone();
        later.time += 1.0;
        assert!(matches!(error_field(&later, &t, 0), Err(Error::Pairing(_))));
    }

    #[test]
    fn mass_conservation_examples() {
        let mut t = truth();
        assert!(mass_conservation(&t).1 < 1e-14);
        t.data[5 * 13 + feature::Y_N2] += 0.002;
        let (_, max) = mass_conservation(&t);
        assert!((max - 0.002).abs() < 1e-12);
    }

    #[test]
    fn compare_trivial_ratios() {
        let t = truth();
        let c = coarsen_snapshot(&t).unwrap();
        let i = interp_snapshot(&c, 8, &InterpConfig::default()).unwrap();
        let same = compare_baseline(&[i.clone()], &[i.clone()], &[t.clone()], 100.0).unwrap();
        assert!(same.ratios.iter().all(|&r| r == 1.0));
        let perfect = compare_baseline(&[t.clone()], &[i], &[t.clone()], 100.0).unwrap();
        assert!(perfect.ratios.iter().all(|&r| r == 0.0));
        assert_eq!(perfect.median_ratio, 0.0);
    }

    #[test]
    fn image_geometry_and_flip() {
        let m = build_mesh(3, 2, 3.0, 2.0, 3).unwrap();
        let mut data = Vec::new();
        for e in 0..6 {
            for _ in 0..16 {
                data.push(e as f64);
            }
        }
        let s = Snapshot::new(&m, 0.0, vec!["e".into()], data).unwrap();
        let img = field_image(&s, 0).unwrap();
        assert_eq!((img.width, img.height), (12, 8));
        // element 0 sits at the bottom-left, element 5 at the top-right
        assert_eq!(img.pixels[7 * 12], 0);
        assert_eq!(img.pixels[11], 255);
        let flat = Snapshot::new(&m, 0.0, vec!["c".into()], vec![2.5; 96]).unwrap();
        assert!(field_image(&flat, 0).unwrap().pixels.iter().all(|&p| p == 128));
    }
}
