//! Acceptance criteria, one PASS/FAIL line each.
//!
//! The desk-scale reproduction (criterion 8 and the trained-model part of 9)
//! takes over an hour and only runs when `SRGT_DESK_DIR` names a directory:
//! an empty one is filled by running the full pipeline, a finished one is
//! re-checked from its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use srgt_cli::{save_checkpoint, DATASET_MANIFEST};
use srgt_core::config::KvConfig;
use srgt_core::eval::{interp_snapshot, mass_conservation, EvalReport};
use srgt_core::interp::InterpConfig;
use srgt_core::mesh::{build_mesh, coarsen_snapshot, gll_nodes, Snapshot, CORNER_INDICES};
use srgt_core::model::{attention_maps, forward, init_params, loss_and_grads, ModelConfig, ModelParams, Mode};
use srgt_core::sampler::{cluster_conditioned_sample, kmeans_fit, CLUSTER_DIM};
use srgt_core::synth::{generate_snapshot, SurrogateParams};
use srgt_core::tokenizer::{denormalize, normalize, Tokenizer, TrainingSample};
use srgt_core::train::{lr_at, train, AdamWConfig, TrainConfig};
use srgt_core::{FEATURE_NAMES, N_FEATURES};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn srgt(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_srgt"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "srgt {} exited with {:?}: {}",
            args.first().unwrap_or(&""),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn fine_pair(nex: usize, ney: usize, t: f64) -> (Snapshot, Snapshot) {
    let m = build_mesh(nex, ney, nex as f64 * 1e-3, ney as f64 * 1e-3, 3).unwrap();
    let fine = generate_snapshot(&m, t, &SurrogateParams::for_mesh(&m)).unwrap();
    let coarse = coarsen_snapshot(&fine).unwrap();
    (coarse, fine)
}

fn c1_gll() -> Check {
    let g3 = gll_nodes(3).map_err(|e| e.to_string())?;
    let r = 1.0 / 5f64.sqrt();
    let expected = [-1.0, -r, r, 1.0];
    let err = g3.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(g3.len() == 4 && err <= 1e-14, format!("p=3 nodes {g3:?}"))?;
    let g1 = gll_nodes(1).map_err(|e| e.to_string())?;
    ensure(g1.iter().all(|x| g3.iter().any(|y| y.to_bits() == x.to_bits())), "p=1 nodes not a subset")?;

    let (coarse, fine) = fine_pair(8, 4, 3e-6);
    for e in 0..fine.n_elements() {
        let f = fine.element(e);
        let c = coarse.element(e);
        for (j, &ci) in CORNER_INDICES.iter().enumerate() {
            for k in 0..N_FEATURES {
                ensure(
                    c[j * N_FEATURES + k].to_bits() == f[ci * N_FEATURES + k].to_bits(),
                    format!("element {e} corner {j} feature {k} differs"),
                )?;
            }
        }
    }
    Ok(format!("max node error {err:.1e}; corners bit-exact"))
}

fn c2_shapes() -> Check {
    let (coarse, fine) = fine_pair(8, 4, 0.0);
    let tok = Tokenizer::new(&coarse, 26, InterpConfig::default()).map_err(|e| e.to_string())?;
    let s = tok.sample(&coarse, &fine, 13, 0, 0).map_err(|e| e.to_string())?;
    ensure(s.input.tokens.len() == 27 * 52, "tokens not 27x52")?;
    ensure(s.input.positions.len() == 27 * 3, "positions not 27x3")?;
    ensure(s.input.baseline.len() == 208 && s.target.len() == 208, "output not 208")?;
    let cfg = ModelConfig::default();
    ensure(
        (cfg.n_latent, cfg.n_blocks, cfg.n_heads(), cfg.head_dim) == (256, 8, 4, 64),
        format!("default model {cfg:?}"),
    )?;
    let p = init_params(&cfg, 0).map_err(|e| e.to_string())?;
    let y = forward(&s.input, &p, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    ensure(y.len() == 208, "model output length")?;
    Ok(format!("tokens 27x52, positions 27x3, output 208; {} parameters", p.param_count()))
}

fn loss_of(batch: &[&TrainingSample], p: &ModelParams) -> f64 {
    loss_and_grads(batch, p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0
}

fn c3_gradients() -> Check {
    let cfg = ModelConfig {
        n_latent: 8,
        n_blocks: 1,
        head_dim: 8,
        dropout_p: 0.0,
        ..Default::default()
    };
    let (coarse, fine) = fine_pair(6, 4, 2e-6);
    let tok = Tokenizer::new(&coarse, 3, InterpConfig::default()).unwrap();
    let samples: Vec<TrainingSample> = [5, 14].iter().map(|&e| tok.sample(&coarse, &fine, e, 0, 0).unwrap()).collect();
    let batch: Vec<&TrainingSample> = samples.iter().collect();
    ensure(samples[0].input.n_tokens() == 4, "N_t != 4")?;
    let h = 1e-5;
    let mut checked = 0;
    let mut worst = 0.0f64;
    for seed in [1, 2, 3] {
        let mut p = init_params(&cfg, seed).unwrap();
        let (_, g) = loss_and_grads(&batch, &p, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
        let analytic: Vec<(String, Vec<f64>)> = g.tensors().into_iter().map(|(n, _, t)| (n, t.to_vec())).collect();
        for (ti, (name, an)) in analytic.iter().enumerate() {
            for (j, &a) in an.iter().enumerate() {
                let orig = p.tensors_mut()[ti][j];
                p.tensors_mut()[ti][j] = orig + h;
                let up = loss_of(&batch, &p);
                p.tensors_mut()[ti][j] = orig - h;
                let down = loss_of(&batch, &p);
                p.tensors_mut()[ti][j] = orig;
                let fd = (up - down) / (2.0 * h);
                let err = (fd - a).abs();
                let rel = err / fd.abs().max(a.abs()).max(1e-300);
                ensure(
                    err <= 1e-7 || rel <= 1e-4,
                    format!("seed {seed} {name}[{j}]: analytic {a:e}, finite difference {fd:e}"),
                )?;
                if err > 1e-7 {
                    worst = worst.max(rel);
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} gradient entries over 3 seeds; worst relative error above 1e-7 abs: {worst:.1e}"))
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_series(root: &Path, k: usize) -> std::result::Result<(PathBuf, PathBuf), String> {
    let snaps = root.join("snaps");
    let data = root.join("data");
    srgt(&["gen", "--out", s(&snaps), "--nex", "16", "--ney", "8", "--lx", "0.008", "--ly", "0.004", "--snapshots", "5"])?;
    srgt(&[
        "build-dataset", "--snapshots", s(&snaps), "--out", s(&data), "--K", &k.to_string(), "--per-cluster", "8",
        "--test-frac", "0.4",
    ])?;
    Ok((snaps, data))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn c4_residual_identity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, data) = small_series(dir.path(), 8)?;
    let manifest = KvConfig::load(data.join(DATASET_MANIFEST)).map_err(|e| e.to_string())?;
    let interp = InterpConfig::read_from(&manifest).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        n_latent: 16,
        n_blocks: 2,
        head_dim: 8,
        ..Default::default()
    };
    let mut p = init_params(&cfg, 7).unwrap();
    p.zero_decoder();
    let ckpt = dir.path().join("zero").join("checkpoint.srgt");
    fs::create_dir_all(ckpt.parent().unwrap()).unwrap();
    save_checkpoint(&ckpt, &p, 0, 8, &interp, &KvConfig::new()).map_err(|e| e.to_string())?;
    let (ev, bl) = (dir.path().join("eval"), dir.path().join("baseline"));
    srgt(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--out", s(&ev), "--images", "false"])?;
    srgt(&["baseline", "--dataset", s(&data), "--out", s(&bl), "--images", "false"])?;
    let (a, b) = (fs::read(ev.join("report.csv")).unwrap(), fs::read(bl.join("report.csv")).unwrap());
    ensure(a == b, "eval and baseline report.csv differ")?;
    let (sa, sb) = (files_under(&ev.join("sr")), files_under(&bl.join("sr")));
    ensure(!sa.is_empty() && sa == sb, "super-resolved snapshot files differ")?;
    let cmp = fs::read_to_string(ev.join("comparison.csv")).unwrap();
    let median_line = cmp.lines().find(|l| l.starts_with("MEDIAN")).unwrap_or("");
    ensure(median_line.ends_with(",1e0"), format!("median ratio line {median_line:?}"))?;
    Ok(format!("report.csv and {} snapshot files byte-identical", sa.len()))
}

fn c5_schedule() -> Check {
    let (w, c) = (1000, 19_000);
    let at = |s| lr_at(s, 1e-4, 1e-7, w, c);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    ensure(at(0) == 0.0, format!("lr(0) = {}", at(0)))?;
    ensure(rel(at(w), 1e-4) <= 1e-15, format!("lr(W) = {:e}", at(w)))?;
    ensure(rel(at(w + c), 1e-7) <= 1e-15, format!("lr(W+C) = {:e}", at(w + c)))?;
    let mid = at(w + c / 2);
    ensure(rel(mid, 5.005e-5) <= 1e-12, format!("midpoint {mid:e}"))?;
    Ok(format!("lr(0)=0, lr(W)={:e}, lr(W+C)={:e}, midpoint {mid:e}", at(w), at(w + c)))
}

fn c6_invariants() -> Check {
    let (coarse, fine) = fine_pair(10, 6, 4e-6);
    let tok = Tokenizer::new(&coarse, 26, InterpConfig::default()).unwrap();
    let cfg = ModelConfig {
        n_latent: 32,
        n_blocks: 2,
        head_dim: 8,
        ..Default::default()
    };
    let p = init_params(&cfg, 3).unwrap();
    let mut worst_row = 0.0f64;
    let mut worst_rt = 0.0f64;
    for e in [0, 9, 31, 59] {
        let smp = tok.sample(&coarse, &fine, e, 0, 0).unwrap();
        for map in attention_maps(&smp.input, &p).map_err(|e| e.to_string())? {
            for row in map.chunks_exact(27) {
                worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        // roundtrip relative to the normalization scale of each feature
        let (vals, st) = (fine.element(e), &smp.input.stats);
        let back = denormalize(&normalize(vals, st), st);
        for f in 0..N_FEATURES {
            let scale = vals
                .iter()
                .skip(f)
                .step_by(N_FEATURES)
                .fold(st.mean[f].abs().max(st.std[f]), |m, v| m.max(v.abs()));
            for (a, b) in vals.iter().zip(&back).skip(f).step_by(N_FEATURES) {
                worst_rt = worst_rt.max((a - b).abs() / scale);
            }
        }
    }
    ensure(worst_row <= 1e-6, format!("attention row sum off by {worst_row:e}"))?;
    ensure(worst_rt < 1e-12, format!("normalization roundtrip error {worst_rt:e}"))?;

    // constants survive interpolation; fine corners copy coarse values
    let m = build_mesh(10, 6, 10e-3, 6e-3, 3).unwrap();
    let consts: Vec<f64> = (0..N_FEATURES).map(|f| 0.37 + 1000.0 * f as f64).collect();
    let data: Vec<f64> = (0..m.n_elements() * 16).flat_map(|_| consts.clone()).collect();
    let names = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let flat = Snapshot::new(&m, 0.0, names, data).unwrap();
    let up = interp_snapshot(&coarsen_snapshot(&flat).unwrap(), 26, &InterpConfig::default()).unwrap();
    let const_err = up
        .points()
        .flat_map(|pt| pt.iter().zip(&consts).map(|(a, b)| (a - b).abs() / b.abs()))
        .fold(0.0, f64::max);
    ensure(const_err <= 1e-14, format!("constant field error {const_err:e}"))?;
    let base = interp_snapshot(&coarse, 26, &InterpConfig::default()).unwrap();
    for e in 0..base.n_elements() {
        for (j, &ci) in CORNER_INDICES.iter().enumerate() {
            for f in 0..N_FEATURES {
                ensure(
                    base.value(e, ci, f).to_bits() == coarse.value(e, j, f).to_bits(),
                    format!("corner copy differs at element {e}"),
                )?;
            }
        }
    }
    Ok(format!(
        "row sums within {worst_row:.1e}, roundtrip {worst_rt:.1e}, constants {const_err:.1e}, corners bit-exact"
    ))
}

fn c7_canary() -> Check {
    let (coarse, fine) = fine_pair(8, 4, 0.0);
    let tok = Tokenizer::new(&coarse, 8, InterpConfig::default()).unwrap();
    let samples = (0..32).map(|e| tok.sample(&coarse, &fine, e, 0, 0).unwrap()).collect();
    let ds = srgt_core::tokenizer::Dataset {
        config: srgt_core::tokenizer::DatasetConfig::for_k(8),
        samples,
    };
    let m = ModelConfig {
        n_latent: 64,
        n_blocks: 2,
        head_dim: 32,
        dropout_p: 0.0,
        ..Default::default()
    };
    let t = TrainConfig {
        batch_size: 32,
        max_steps: 2000,
        warmup_steps: 100,
        lr_peak: 1e-3,
        lr_final: 1e-5,
        val_interval: 50,
        early_stop_patience: 40,
        train_frac: 1.0,
        adamw: AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let t0 = Instant::now();
    let out = train(&ds, &m, &t).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let best = out.history.best_val;
    ensure(best < 1e-3, format!("best loss {best:e} after {} steps", out.history.steps.len()))?;
    ensure(secs < 300.0, format!("took {secs:.0}s"))?;
    Ok(format!("best scaled MSE {best:.2e} at step {} in {secs:.0}s", out.history.best_step))
}

fn c9_mass() -> Check {
    let (coarse, fine) = fine_pair(16, 8, 5e-6);
    let (_, gen_max) = mass_conservation(&fine);
    ensure(gen_max < 1e-14, format!("generator max {gen_max:e}"))?;
    let (_, interp_max) = mass_conservation(&interp_snapshot(&coarse, 26, &InterpConfig::default()).unwrap());
    ensure(interp_max < 1e-12, format!("interpolation max {interp_max:e}"))?;
    Ok(format!("generator max {gen_max:.1e}, interpolation max {interp_max:.1e}"))
}

fn c10_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (snaps, data) = small_series(dir.path(), 8)?;
    let model = dir.path().join("model");
    let train_args = [
        "train", "--dataset", s(&data), "--out", s(&model), "--n-latent", "16", "--n-blocks", "1", "--head-dim", "8",
        "--max-steps", "40", "--warmup-steps", "5", "--val-interval", "10", "--batch-size", "8",
    ];
    srgt(&train_args)?;
    let first = [files_under(&snaps), files_under(&data), files_under(&model)];
    small_series(dir.path(), 8)?;
    srgt(&train_args)?;
    let second = [files_under(&snaps), files_under(&data), files_under(&model)];
    for (label, (a, b)) in ["snapshots", "dataset", "training"].iter().zip(first.iter().zip(&second)) {
        ensure(a == b, format!("{label} outputs differ between runs"))?;
    }
    let history = String::from_utf8_lossy(&first[2]["history.csv"]).lines().count() - 1;
    Ok(format!(
        "{} snapshot, {} dataset and {} training files identical; {history} history rows",
        first[0].len(),
        first[1].len(),
        first[2].len()
    ))
}

fn c11_kmeans() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let sizes = [30usize, 50, 80, 100, 140];
    let mut pts: Vec<[f64; CLUSTER_DIM]> = Vec::new();
    for (b, &n) in sizes.iter().enumerate() {
        let center: [f64; CLUSTER_DIM] = std::array::from_fn(|d| 10.0 * ((b * 7 + d * 3) % 5) as f64 + b as f64);
        for _ in 0..n {
            pts.push(std::array::from_fn(|d| center[d] + noise.sample(&mut rng)));
        }
    }
    let m = kmeans_fit(&pts, 5, 11).map_err(|e| e.to_string())?;
    for (i, x) in pts.iter().enumerate() {
        let z = m.standardize(x);
        let d2 = |c: &[f64; CLUSTER_DIM]| z.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let best = (0..m.k).min_by(|&a, &b| d2(&m.centroids[a]).total_cmp(&d2(&m.centroids[b]))).unwrap();
        ensure(m.assignments[i] == best, format!("point {i}: assigned {}, nearest {best}", m.assignments[i]))?;
    }
    let mut found = m.cluster_sizes();
    found.sort();
    ensure(found == sizes, format!("cluster sizes {found:?}"))?;
    let per = 60;
    let picks = cluster_conditioned_sample(&m.assignments, per, 3);
    let counts = m.cluster_sizes();
    for c in 0..m.k {
        let mine: Vec<usize> = picks.iter().filter(|p| p.1 == c).map(|p| p.0).collect();
        ensure(mine.len() == per.min(counts[c]), format!("cluster {c}: drew {}", mine.len()))?;
        ensure(mine.iter().all(|&e| m.assignments[e] == c), "draw outside its cluster")?;
        let mut uniq = mine.clone();
        uniq.sort();
        uniq.dedup();
        ensure(uniq.len() == mine.len(), "duplicate draw")?;
    }
    Ok(format!("assignments match the nearest-centroid oracle; draws {} = sum of min(60, size)", picks.len()))
}

struct Desk {
    median_ratio: f64,
    front_model: f64,
    front_interp: f64,
    model_mass_mean: f64,
    wall_seconds: Option<f64>,
}

/// Runs the desk-scale pipeline into `dir` unless it has already finished there.
fn desk_run(dir: &Path) -> std::result::Result<Desk, String> {
    let cmp_path = dir.join("eval").join("comparison.csv");
    if !cmp_path.exists() {
        fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let j = |p: &str| dir.join(p).display().to_string();
        let t0 = Instant::now();
        srgt(&["gen", "--out", &j("snaps"), "--nex", "64", "--ney", "32", "--lx", "0.032", "--ly", "0.016", "--snapshots", "40", "--seed", "0"])?;
        srgt(&[
            "build-dataset", "--snapshots", &j("snaps"), "--out", &j("data"), "--k", "5", "--per-cluster", "40", "--K", "26",
            "--split", "0.7", "--test-frac", "0.2", "--seed", "0",
        ])?;
        srgt(&[
            "train", "--dataset", &j("data"), "--out", &j("model"), "--n-latent", "128", "--n-blocks", "4", "--head-dim", "64",
            "--max-steps", "20000", "--seed", "0",
        ])?;
        srgt(&["eval", "--checkpoint", &j("model/checkpoint.srgt"), "--dataset", &j("data"), "--out", &j("eval")])?;
        srgt(&["baseline", "--dataset", &j("data"), "--out", &j("baseline")])?;
        fs::write(dir.join("wall.txt"), format!("wall_seconds {}\n", t0.elapsed().as_secs())).map_err(|e| e.to_string())?;
    }
    let cmp = fs::read_to_string(&cmp_path).map_err(|e| e.to_string())?;
    let row = |name: &str| -> Vec<f64> {
        cmp.lines()
            .find(|l| l.starts_with(&format!("{name},")))
            .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap_or(f64::NAN)).collect())
            .unwrap_or_default()
    };
    let (median, front) = (row("MEDIAN"), row("FRONT_T"));
    let report = fs::read_to_string(dir.join("eval").join("report.csv")).map_err(|e| e.to_string())?;
    let report = EvalReport::from_csv(&report).map_err(|e| e.to_string())?;
    let wall_seconds = fs::read_to_string(dir.join("wall.txt"))
        .ok()
        .and_then(|t| t.split_whitespace().nth(1).and_then(|v| v.parse().ok()));
    Ok(Desk {
        median_ratio: median.get(2).copied().unwrap_or(f64::NAN),
        front_model: front.first().copied().unwrap_or(f64::NAN),
        front_interp: front.get(1).copied().unwrap_or(f64::NAN),
        model_mass_mean: report.mass_mean,
        wall_seconds,
    })
}

fn c8_desk(d: &Desk) -> Check {
    let detail = format!(
        "median RMSE ratio {:.3}, front T RMSE model {:.3e} vs interp {:.3e}, wall {}",
        d.median_ratio,
        d.front_model,
        d.front_interp,
        d.wall_seconds.map_or("unknown".into(), |s| format!("{:.2} h", s / 3600.0))
    );
    let ok = d.median_ratio < 0.8
        && d.front_model < d.front_interp
        && d.wall_seconds.map_or(true, |s| s <= 2.0 * 3600.0);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c9_soft(d: &Desk) -> Check {
    let detail = format!("trained-model mean |sum Y - 1| = {:.3e} (soft target < 5e-3)", d.model_mass_mean);
    if d.model_mass_mean < 5e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let mut failed = 0;
    let mut line = |n: &str, name: &str, f: &dyn Fn() -> Check| {
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match r {
            Ok(d) => println!("criterion {n} {name}: PASS ({d})"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({d})");
            }
        }
    };
    line("1", "GLL/masking exactness", &c1_gll);
    line("2", "shape contract", &c2_shapes);
    line("3", "gradient oracle", &c3_gradients);
    line("4", "residual identity through eval vs baseline", &c4_residual_identity);
    line("5", "scheduler exactness", &c5_schedule);
    line("6", "softmax/normalization/interpolation invariants", &c6_invariants);
    line("7", "overfit canary", &c7_canary);
    match std::env::var_os("SRGT_DESK_DIR") {
        Some(dir) => match desk_run(Path::new(&dir)) {
            Ok(d) => {
                line("8", "desk-scale comparison with KNN interpolation", &|| c8_desk(&d));
                line("9", "mass conservation", &c9_mass);
                line("9b", "trained-model mass deviation (soft)", &|| c9_soft(&d));
            }
            Err(e) => {
                line("8", "desk-scale comparison with KNN interpolation", &|| Err(e.clone()));
                line("9", "mass conservation", &c9_mass);
            }
        },
        None => {
            println!("criterion 8 desk-scale comparison with KNN interpolation: SKIPPED (set SRGT_DESK_DIR to run)");
            line("9", "mass conservation", &c9_mass);
            println!("criterion 9b trained-model mass deviation (soft): SKIPPED (needs the desk-scale run)");
        }
    }
    line("10", "determinism", &c10_determinism);
    line("11", "k-means sanity", &c11_kmeans);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
