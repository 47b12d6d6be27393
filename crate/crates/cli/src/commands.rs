use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use srgt_core::config::KvConfig;
use srgt_core::error::{Error, Result};
use srgt_core::eval::{
    compare_baseline, evaluate, export_csv, export_error_image, export_field_image, front_threshold,
    interp_snapshot, require_fine, super_resolve_snapshot, EvalReport,
};
use srgt_core::interp::InterpConfig;
use srgt_core::mesh::{build_mesh, coarsen_snapshot, read_snapshot, write_snapshot, Snapshot};
use srgt_core::model::{read_checkpoint, write_checkpoint, Checkpoint, ModelConfig, ModelParams};
use srgt_core::sampler::{cluster_conditioned_sample, element_cluster_features, kmeans_fit, write_cluster_labels};
use srgt_core::synth::{generate_series, SurrogateParams, PARAMS_FILE};
use srgt_core::tokenizer::{manifest_path, read_dataset, write_dataset, Dataset, DatasetConfig, Tokenizer};
use srgt_core::train::{train_with, StopReason, TrainConfig};
use srgt_core::{feature, FEATURE_NAMES, P_COARSE, P_FINE};

use crate::{create_dir, flag, layered, reject_unknown, require_path};
use crate::{BaselineArgs, BuildArgs, EvalArgs, GenArgs, InferArgs, TrainArgs};

pub const TRAINVAL_FILE: &str = "trainval.srgtds";
pub const TEST_FILE: &str = "test.srgtds";
pub const DATASET_MANIFEST: &str = "manifest.cfg";
pub const CHECKPOINT_FILE: &str = "checkpoint.srgt";
const CLUSTER_DIR: &str = "clusters";
const IMAGE_FEATURES: [usize; 3] = [feature::P, feature::T, feature::Y_H2O];

fn set_all(c: &mut KvConfig, pairs: &[(&str, &dyn std::fmt::Display)]) {
    for (k, v) in pairs {
        c.set(k, v);
    }
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let mut flags = KvConfig::new();
    flag(&mut flags, "out", &a.out);
    flag(&mut flags, "nex", &a.nex);
    flag(&mut flags, "ney", &a.ney);
    flag(&mut flags, "lx", &a.lx);
    flag(&mut flags, "ly", &a.ly);
    flag(&mut flags, "snapshots", &a.snapshots);
    flag(&mut flags, "dt", &a.dt);
    flag(&mut flags, "seed", &a.seed);
    let input = layered(&a.cfg, flags)?;

    let out = require_path(&input, "out")?;
    let nex: usize = input.get("nex")?.unwrap_or(64);
    let ney: usize = input.get("ney")?.unwrap_or(32);
    let lx: f64 = input.get("lx")?.unwrap_or(0.032);
    let ly: f64 = input.get("ly")?.unwrap_or(0.016);
    let n: usize = input.get("snapshots")?.unwrap_or(40);
    let dt: f64 = input.get("dt")?.unwrap_or(2.5e-7);
    let mesh = build_mesh(nex, ney, lx, ly, P_FINE)?;
    let mut params = SurrogateParams::for_mesh(&mesh);
    params.apply_config(&input)?;

    let mut resolved = params.to_config();
    set_all(
        &mut resolved,
        &[("out", &out.display()), ("nex", &nex), ("ney", &ney), ("lx", &lx), ("ly", &ly), ("snapshots", &n), ("dt", &dt)],
    );
    reject_unknown(&input, &resolved)?;
    let paths = generate_series(&mesh, n, dt, &params, &out)?;
    resolved.save(out.join("gen.cfg"))?;
    eprintln!("wrote {} snapshots ({nex}x{ney} elements) to {}", paths.len(), out.display());
    Ok(())
}

/// Sorted `snap_*.srgt` files in `dir`.
fn list_snapshots(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("snap_") && name.ends_with(".srgt") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::io(dir, io::Error::new(io::ErrorKind::NotFound, "no snap_*.srgt files")));
    }
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag)
}

fn load_optional(path: &Path) -> Result<KvConfig> {
    if path.exists() {
        KvConfig::load(path)
    } else {
        Ok(KvConfig::new())
    }
}

pub fn build_dataset(a: &BuildArgs) -> Result<()> {
    let mut flags = KvConfig::new();
    flag(&mut flags, "snapshots", &a.snapshots);
    flag(&mut flags, "out", &a.out);
    flag(&mut flags, "k", &a.k);
    flag(&mut flags, "K", &a.k_neighbors);
    flag(&mut flags, "per_cluster", &a.per_cluster);
    flag(&mut flags, "train_frac", &a.split);
    flag(&mut flags, "test_frac", &a.test_frac);
    flag(&mut flags, "seed", &a.seed);
    let input = layered(&a.cfg, flags)?;

    let snap_dir = require_path(&input, "snapshots")?;
    let snap_dir = fs::canonicalize(&snap_dir).map_err(|e| Error::io(&snap_dir, e))?;
    let out = require_path(&input, "out")?;
    let k_clusters: usize = input.get("k")?.unwrap_or(5);
    let k: usize = input.get("K")?.unwrap_or(26);
    let per_cluster: usize = input.get("per_cluster")?.unwrap_or(40);
    let train_frac: f64 = input.get("train_frac")?.unwrap_or(0.7);
    let test_frac: f64 = input.get("test_frac")?.unwrap_or(0.2);
    let seed: u64 = input.get("seed")?.unwrap_or(0);
    let interp = InterpConfig::read_from(&input)?;
    // physical constants default to the generator's record of the series
    let gen_params = load_optional(&snap_dir.join(PARAMS_FILE))?;
    let r_s: f64 = input.get("R_s")?.or(gen_params.get("R_s")?).unwrap_or(397.0);
    let t_u: f64 = input.get("T_u")?.or(gen_params.get("T_u")?).unwrap_or(300.0);
    let t_b: f64 = input.get("T_b")?.or(gen_params.get("T_b")?).unwrap_or(2900.0);
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::Config(format!("test_frac must be in [0, 1), got {test_frac}")));
    }
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::Config(format!("train_frac must be in (0, 1], got {train_frac}")));
    }
    if per_cluster == 0 {
        return Err(Error::Config("per_cluster must be positive".into()));
    }

    let mut resolved = KvConfig::new();
    set_all(
        &mut resolved,
        &[
            ("snapshots", &snap_dir.display()),
            ("out", &out.display()),
            ("k", &k_clusters),
            ("K", &k),
            ("per_cluster", &per_cluster),
            ("train_frac", &train_frac),
            ("test_frac", &test_frac),
            ("seed", &seed),
            ("R_s", &r_s),
            ("T_u", &t_u),
            ("T_b", &t_b),
        ],
    );
    interp.write_to(&mut resolved);
    reject_unknown(&input, &resolved)?;

    let files = list_snapshots(&snap_dir)?;
    let n = files.len();
    let n_test = (test_frac * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Config(format!(
            "test_frac {test_frac} of {n} snapshots leaves {n_test} test snapshots; need between 1 and {}",
            n - 1
        )));
    }
    let first_test = n - n_test;
    create_dir(&out)?;
    create_dir(&out.join(CLUSTER_DIR))?;
    resolved.save(out.join("build.cfg"))?;

    let mut trainval = Dataset { config: DatasetConfig::for_k(k), samples: Vec::new() };
    let mut test = Dataset { config: DatasetConfig::for_k(k), samples: Vec::new() };
    for (i, path) in files.iter().enumerate() {
        let fine = read_snapshot(path)?;
        require_fine(&fine)?;
        let coarse = coarsen_snapshot(&fine)?;
        let feats = element_cluster_features(&coarse, r_s)?;
        let km = kmeans_fit(&feats, k_clusters, derive_seed(seed, 2 * i as u64 + 1))?;
        write_cluster_labels(k_clusters, &km.assignments, out.join(CLUSTER_DIR).join(format!("{}.clst", file_stem(path))))?;
        let picks = cluster_conditioned_sample(&km.assignments, per_cluster, derive_seed(seed, 2 * i as u64 + 2));
        let tok = Tokenizer::new(&coarse, k, interp)?;
        let dest = if i < first_test { &mut trainval } else { &mut test };
        for (e, c) in picks {
            dest.samples.push(tok.sample(&coarse, &fine, e, i as u32, c as u8)?);
        }
    }

    let mut manifest = resolved.clone();
    manifest.set("n_snapshots", n);
    manifest.set("first_test", first_test);
    manifest.set(
        "test_snapshots",
        files[first_test..].iter().map(|p| file_name(p)).collect::<Vec<_>>().join(","),
    );
    manifest.set("trainval_samples", trainval.samples.len());
    manifest.set("test_samples", test.samples.len());
    write_dataset(&trainval, out.join(TRAINVAL_FILE), &manifest)?;
    write_dataset(&test, out.join(TEST_FILE), &manifest)?;
    manifest.save(out.join(DATASET_MANIFEST))?;
    eprintln!(
        "{} train/val samples from snapshots 0..{first_test}, {} test samples from {first_test}..{n}",
        trainval.samples.len(),
        test.samples.len()
    );
    Ok(())
}

/// Manifest sidecar of a checkpoint file.
pub fn checkpoint_manifest(checkpoint: &Path) -> PathBuf {
    manifest_path(checkpoint)
}

/// Writes a checkpoint and its manifest. The manifest records the neighborhood
/// size and interpolation settings the parameters were trained with.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    step: u64,
    k: usize,
    interp: &InterpConfig,
    extra: &KvConfig,
) -> Result<()> {
    write_checkpoint(&Checkpoint { params: params.clone(), step, optimizer: None }, path)?;
    let mut m = extra.clone();
    m.set("K", k);
    interp.write_to(&mut m);
    params.cfg.write_to(&mut m);
    m.set("step", step);
    m.save(checkpoint_manifest(path))
}

fn dataset_manifest(dir: &Path) -> Result<KvConfig> {
    KvConfig::load(dir.join(DATASET_MANIFEST))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut flags = KvConfig::new();
    flag(&mut flags, "dataset", &a.dataset);
    flag(&mut flags, "out", &a.out);
    flag(&mut flags, "n_latent", &a.n_latent);
    flag(&mut flags, "n_blocks", &a.n_blocks);
    flag(&mut flags, "head_dim", &a.head_dim);
    flag(&mut flags, "dropout_p", &a.dropout);
    flag(&mut flags, "batch_size", &a.batch_size);
    flag(&mut flags, "lr_peak", &a.lr_peak);
    flag(&mut flags, "lr_final", &a.lr_final);
    flag(&mut flags, "warmup_steps", &a.warmup_steps);
    flag(&mut flags, "max_steps", &a.max_steps);
    flag(&mut flags, "val_interval", &a.val_interval);
    flag(&mut flags, "early_stop_patience", &a.patience);
    flag(&mut flags, "seed", &a.seed);
    let input = layered(&a.cfg, flags)?;

    let ds_dir = require_path(&input, "dataset")?;
    let out = require_path(&input, "out")?;
    let ds_manifest = dataset_manifest(&ds_dir)?;
    let interp = InterpConfig::read_from(&ds_manifest)?;
    let mut mcfg = ModelConfig::default();
    mcfg.apply_config(&input)?;
    let mut tcfg = TrainConfig::default();
    ds_manifest.apply("train_frac", &mut tcfg.train_frac)?;
    tcfg.apply_config(&input)?;
    mcfg.validate()?;
    tcfg.validate()?;

    let mut resolved = KvConfig::new();
    resolved.set("dataset", ds_dir.display());
    resolved.set("out", out.display());
    mcfg.write_to(&mut resolved);
    tcfg.write_to(&mut resolved);
    reject_unknown(&input, &resolved)?;

    let ds = read_dataset(ds_dir.join(TRAINVAL_FILE))?;
    let k = ds.config.k;
    let manifest_k: usize = ds_manifest.require("K")?;
    if manifest_k != k {
        return Err(Error::Config(format!("dataset file has K={k}, manifest says K={manifest_k}")));
    }
    create_dir(&out)?;
    resolved.save(out.join("train.cfg"))?;
    eprintln!(
        "training {} parameters on {} samples (K={k}, {} steps max)",
        mcfg.param_count(),
        ds.samples.len(),
        tcfg.max_steps
    );
    let t0 = Instant::now();
    let outcome = train_with(&ds, &mcfg, &tcfg, &mut |v, improved| {
        eprintln!(
            "step {:>6}  val {:.6e}{}  ({:.0}s)",
            v.step,
            v.val_loss,
            if improved { "  *" } else { "" },
            t0.elapsed().as_secs_f64()
        );
    })?;
    let h = &outcome.history;
    h.write_csv(out.join("history.csv"))?;

    let mut extra = KvConfig::new();
    extra.set("dataset", ds_dir.display());
    extra.set("best_step", h.best_step);
    extra.set("best_val", h.best_val);
    extra.set("n_train", outcome.n_train);
    extra.set("n_val", outcome.n_val);
    let reason = match &h.stop_reason {
        StopReason::MaxSteps => "max_steps".to_string(),
        StopReason::EarlyStop => "early_stop".to_string(),
        StopReason::Diverged(m) => format!("diverged: {m}"),
    };
    extra.set("stop_reason", &reason);
    save_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.params, h.best_step as u64, k, &interp, &extra)?;
    eprintln!("best val {:.6e} at step {} ({reason})", h.best_val, h.best_step);
    if let StopReason::Diverged(m) = &h.stop_reason {
        return Err(Error::Divergence(format!("{m}; best checkpoint kept")));
    }
    Ok(())
}

/// Held-out snapshot files recorded by build-dataset.
fn test_files(manifest: &KvConfig, override_dir: Option<&str>) -> Result<Vec<PathBuf>> {
    let dir = match override_dir {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from(manifest.require::<String>("snapshots")?),
    };
    let names: String = manifest.require("test_snapshots")?;
    Ok(names.split(',').filter(|s| !s.is_empty()).map(|s| dir.join(s)).collect())
}

struct Predictions {
    names: Vec<String>,
    preds: Vec<Snapshot>,
    targets: Vec<Snapshot>,
}

/// Reads every test snapshot, predicts from its coarsened copy and writes the
/// prediction to `out/sr`.
fn predict_series(
    files: &[PathBuf],
    out: &Path,
    mut predict: impl FnMut(&Snapshot) -> Result<Snapshot>,
) -> Result<Predictions> {
    create_dir(&out.join("sr"))?;
    let mut p = Predictions { names: Vec::new(), preds: Vec::new(), targets: Vec::new() };
    for f in files {
        let fine = read_snapshot(f)?;
        require_fine(&fine)?;
        let pred = predict(&coarsen_snapshot(&fine)?)?;
        write_snapshot(&pred, out.join("sr").join(file_name(f)))?;
        p.names.push(file_stem(f));
        p.preds.push(pred);
        p.targets.push(fine);
    }
    Ok(p)
}

fn write_report(report: &EvalReport, out: &Path, title: &str) -> Result<()> {
    export_csv(report, out.join("report.csv"))?;
    let txt = out.join("report.txt");
    fs::write(&txt, report.to_text(title)).map_err(|e| Error::io(&txt, e))
}

/// Field and error images of the last test snapshot.
fn write_images(p: &Predictions, out: &Path, label: &str) -> Result<()> {
    let dir = out.join("images");
    create_dir(&dir)?;
    let (Some(name), Some(pred), Some(target)) = (p.names.last(), p.preds.last(), p.targets.last()) else {
        return Ok(());
    };
    for f in IMAGE_FEATURES {
        let fname = FEATURE_NAMES[f];
        export_field_image(target, f, dir.join(format!("{name}_{fname}_target.pgm")))?;
        export_field_image(pred, f, dir.join(format!("{name}_{fname}_{label}.pgm")))?;
        export_error_image(pred, target, f, dir.join(format!("{name}_{fname}_{label}_err.pgm")))?;
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut flags = KvConfig::new();
    flag(&mut flags, "checkpoint", &a.checkpoint);
    flag(&mut flags, "dataset", &a.dataset);
    flag(&mut flags, "snapshots", &a.snapshots);
    flag(&mut flags, "out", &a.out);
    flag(&mut flags, "images", &a.images);
    let input = layered(&a.cfg, flags)?;

    let ckpt_path = require_path(&input, "checkpoint")?;
    let ds_dir = require_path(&input, "dataset")?;
    let out = require_path(&input, "out")?;
    let images: bool = input.get("images")?.unwrap_or(true);
    let snapshots = input.get_str("snapshots").map(str::to_owned);

    let mut resolved = KvConfig::new();
    resolved.set("checkpoint", ckpt_path.display());
    resolved.set("dataset", ds_dir.display());
    resolved.set("out", out.display());
    resolved.set("images", images);
    if let Some(s) = &snapshots {
        resolved.set("snapshots", s);
    }
    reject_unknown(&input, &resolved)?;

    let ds_manifest = dataset_manifest(&ds_dir)?;
    let ck_manifest = KvConfig::load(checkpoint_manifest(&ckpt_path))?;
    let k: usize = ds_manifest.require("K")?;
    let ck_k: usize = ck_manifest.require("K")?;
    if ck_k != k {
        return Err(Error::Config(format!("checkpoint was trained with K={ck_k}, dataset uses K={k}")));
    }
    let interp = InterpConfig::read_from(&ds_manifest)?;
    if InterpConfig::read_from(&ck_manifest)? != interp {
        return Err(Error::Config("checkpoint and dataset interpolation settings differ".into()));
    }
    let params = read_checkpoint(&ckpt_path)?.params;
    let files = test_files(&ds_manifest, snapshots.as_deref())?;
    create_dir(&out)?;
    resolved.save(out.join("eval.cfg"))?;

    let mut interps = Vec::new();
    let p = predict_series(&files, &out, |coarse| {
        interps.push(interp_snapshot(coarse, k, &interp)?);
        super_resolve_snapshot(coarse, &params, k, &interp)
    })?;
    let report = evaluate(&p.names, &p.preds, &p.targets)?;
    write_report(&report, &out, "model super-resolution")?;
    let thr = front_threshold(ds_manifest.require("T_u")?, ds_manifest.require("T_b")?);
    let cmp = compare_baseline(&p.preds, &interps, &p.targets, thr)?;
    for (file, text) in [("comparison.csv", cmp.to_csv()), ("comparison.txt", cmp.to_text())] {
        let path = out.join(file);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    if images {
        write_images(&p, &out, "model")?;
        let baseline = Predictions { names: p.names.clone(), preds: interps, targets: p.targets.clone() };
        write_images(&baseline, &out, "interp")?;
    }
    eprint!("{}", cmp.to_text());
    eprintln!("mass deviation: mean {:.3e}, max {:.3e}", report.mass_mean, report.mass_max);
    Ok(())
}

pub fn baseline(a: &BaselineArgs) -> Result<()> {
    let mut flags = KvConfig::new();
    flag(&mut flags, "dataset", &a.dataset);
    flag(&mut flags, "snapshots", &a.snapshots);
    flag(&mut flags, "out", &a.out);
    flag(&mut flags, "K", &a.k_neighbors);
    flag(&mut flags, "images", &a.images);
    let input = layered(&a.cfg, flags)?;

    let ds_dir = require_path(&input, "dataset")?;
    let out = require_path(&input, "out")?;
    let images: bool = input.get("images")?.unwrap_or(true);
    let snapshots = input.get_str("snapshots").map(str::to_owned);
    let ds_manifest = dataset_manifest(&ds_dir)?;
    let k: usize = input.get("K")?.map_or_else(|| ds_manifest.require("K"), Ok)?;
    let mut interp_src = ds_manifest.clone();
    interp_src.merge(&input);
    let interp = InterpConfig::read_from(&interp_src)?;

    let mut resolved = KvConfig::new();
    resolved.set("dataset", ds_dir.display());
    resolved.set("out", out.display());
    resolved.set("K", k);
    resolved.set("images", images);
    interp.write_to(&mut resolved);
    if let Some(s) = &snapshots {
        resolved.set("snapshots", s);
    }
    reject_unknown(&input, &resolved)?;

    let files = test_files(&ds_manifest, snapshots.as_deref())?;
    create_dir(&out)?;
    resolved.save(out.join("baseline.cfg"))?;
    let p = predict_series(&files, &out, |coarse| interp_snapshot(coarse, k, &interp))?;
    let report = evaluate(&p.names, &p.preds, &p.targets)?;
    write_report(&report, &out, "KNN interpolation baseline")?;
    if images {
        write_images(&p, &out, "interp")?;
    }
    eprintln!("mass deviation: mean {:.3e}, max {:.3e}", report.mass_mean, report.mass_max);
    Ok(())
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let mut flags = KvConfig::new();
    flag(&mut flags, "checkpoint", &a.checkpoint);
    flag(&mut flags, "input", &a.input);
    flag(&mut flags, "output", &a.output);
    let input = layered(&a.cfg, flags)?;

    let ckpt_path = require_path(&input, "checkpoint")?;
    let in_path = require_path(&input, "input")?;
    let out_path = require_path(&input, "output")?;
    let mut resolved = KvConfig::new();
    resolved.set("checkpoint", ckpt_path.display());
    resolved.set("input", in_path.display());
    resolved.set("output", out_path.display());
    reject_unknown(&input, &resolved)?;

    let ck_manifest = KvConfig::load(checkpoint_manifest(&ckpt_path))?;
    let k: usize = ck_manifest.require("K")?;
    let interp = InterpConfig::read_from(&ck_manifest)?;
    let params = read_checkpoint(&ckpt_path)?.params;
    let s = read_snapshot(&in_path)?;
    let coarse = match s.p {
        P_COARSE => s,
        P_FINE => coarsen_snapshot(&s)?,
        p => return Err(Error::UnsupportedOrder { found: p, expected: P_COARSE }),
    };
    let fine = super_resolve_snapshot(&coarse, &params, k, &interp)?;
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_snapshot(&fine, &out_path)?;
    let mut echo = out_path.clone().into_os_string();
    echo.push(".cfg");
    resolved.save(PathBuf::from(echo))?;
    eprintln!("wrote {} ({} elements, p={})", out_path.display(), fine.n_elements(), fine.p);
    Ok(())
}
