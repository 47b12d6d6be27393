//! Mini-batch AdamW training with a three-phase schedule and early stopping.

mod optim;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::model::{init_params, loss_and_grads, predict, ModelConfig, ModelParams, OptimizerState};
use crate::tokenizer::{Dataset, SampleInput, TrainingSample};

pub use optim::{adamw_step, clip_gradients, global_norm, lr_at, AdamWConfig, EarlyStopper, Verdict};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_steps: usize,
    /// Cosine phase length; `None` means `max_steps - warmup_steps`.
    pub decay_steps: Option<usize>,
    pub max_steps: usize,
    pub adamw: AdamWConfig,
    pub clip_norm: f64,
    pub early_stop_patience: usize,
    pub val_interval: usize,
    pub seed: u64,
    pub train_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr_peak: 1e-4,
            lr_final: 1e-7,
            warmup_steps: 1000,
            decay_steps: None,
            max_steps: 20_000,
            adamw: AdamWConfig::default(),
            clip_norm: 1.0,
            early_stop_patience: 10,
            val_interval: 200,
            seed: 0,
            train_frac: 0.7,
        }
    }
}

impl TrainConfig {
    pub fn decay(&self) -> usize {
        self.decay_steps
            .unwrap_or_else(|| self.max_steps.saturating_sub(self.warmup_steps).max(1))
    }

    /// Independent seed per random stream: 1 split, 2 init, 3 shuffle, 4 dropout.
    fn stream_seed(&self, tag: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag)
    }

    /// The train/validation index split used by [`train`].
    pub fn split(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        split_indices(n, self.train_frac, self.stream_seed(1))
    }

    pub fn lr(&self, step: usize) -> f64 {
        lr_at(step, self.lr_peak, self.lr_final, self.warmup_steps, self.decay())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_peak) {
            return bad(format!("need 0 < lr_final ({}) <= lr_peak ({})", self.lr_final, self.lr_peak));
        }
        if self.warmup_steps == 0 || self.decay() == 0 {
            return bad("warmup_steps and decay_steps must be >= 1".into());
        }
        if self.batch_size == 0 || self.val_interval == 0 || self.max_steps == 0 {
            return bad("batch_size, val_interval and max_steps must be >= 1".into());
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be >= 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if !(self.train_frac > 0.0 && self.train_frac <= 1.0) {
            return bad(format!("train_frac {} not in (0, 1]", self.train_frac));
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 || a.weight_decay < 0.0 {
            return bad("invalid AdamW hyperparameters".into());
        }
        Ok(())
    }

    pub fn write_to(&self, c: &mut KvConfig) {
        c.set("batch_size", self.batch_size);
        c.set("lr_peak", self.lr_peak);
        c.set("lr_final", self.lr_final);
        c.set("warmup_steps", self.warmup_steps);
        c.set("decay_steps", self.decay());
        c.set("max_steps", self.max_steps);
        c.set("beta1", self.adamw.beta1);
        c.set("beta2", self.adamw.beta2);
        c.set("adam_eps", self.adamw.eps);
        c.set("weight_decay", self.adamw.weight_decay);
        c.set("clip_norm", self.clip_norm);
        c.set("early_stop_patience", self.early_stop_patience);
        c.set("val_interval", self.val_interval);
        c.set("seed", self.seed);
        c.set("train_frac", self.train_frac);
    }

    pub fn apply_config(&mut self, c: &KvConfig) -> Result<()> {
        c.apply("batch_size", &mut self.batch_size)?;
        c.apply("lr_peak", &mut self.lr_peak)?;
        c.apply("lr_final", &mut self.lr_final)?;
        c.apply("warmup_steps", &mut self.warmup_steps)?;
        if let Some(d) = c.get::<usize>("decay_steps")? {
            self.decay_steps = Some(d);
        }
        c.apply("max_steps", &mut self.max_steps)?;
        c.apply("beta1", &mut self.adamw.beta1)?;
        c.apply("beta2", &mut self.adamw.beta2)?;
        c.apply("adam_eps", &mut self.adamw.eps)?;
        c.apply("weight_decay", &mut self.adamw.weight_decay)?;
        c.apply("clip_norm", &mut self.clip_norm)?;
        c.apply("early_stop_patience", &mut self.early_stop_patience)?;
        c.apply("val_interval", &mut self.val_interval)?;
        c.apply("seed", &mut self.seed)?;
        c.apply("train_frac", &mut self.train_frac)?;
        self.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Loss of the batch under the parameters before this step's update.
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValRecord {
    /// Updates applied when this validation ran.
    pub step: usize,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    MaxSteps,
    EarlyStop,
    Diverged(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub vals: Vec<ValRecord>,
    pub best_step: usize,
    pub best_val: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    /// CSV with one row per update; `val_loss` is filled on rows after which a validation ran.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,train_loss,val_loss\n");
        let mut vals = self.vals.iter().peekable();
        for r in &self.steps {
            let _ = write!(out, "{},{:e},{:e},", r.step, r.lr, r.train_loss);
            if let Some(v) = vals.next_if(|v| v.step == r.step + 1) {
                let _ = write!(out, "{:e}", v.val_loss);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub params: ModelParams,
    /// Optimizer state at the end of training.
    pub optimizer: OptimizerState,
    pub history: TrainHistory,
    pub n_train: usize,
    pub n_val: usize,
}

/// Seeded split into train and validation indices.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1.min(n), n);
    let val = idx.split_off(n_train);
    (idx, val)
}

/// Mean of per-sample scaled MSE, in eval mode.
pub fn mean_loss(samples: &[&TrainingSample], params: &ModelParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Shape("no samples to evaluate".into()));
    }
    let inputs: Vec<&SampleInput> = samples.iter().map(|s| &s.input).collect();
    let preds = predict(&inputs, params)?;
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        total += p.iter().zip(&s.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

pub fn train(dataset: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, model_cfg, cfg, &mut |_, _| {})
}

/// Like [`train`], calling `on_val(record, improved)` after every validation.
pub fn train_with(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    on_val: &mut dyn FnMut(&ValRecord, bool),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::InsufficientData { n: 0, k: 1 });
    }
    let (train_idx, val_idx) = cfg.split(dataset.samples.len());
    let train_set: Vec<&TrainingSample> = train_idx.iter().map(|&i| &dataset.samples[i]).collect();
    let val_set: Vec<&TrainingSample> = if val_idx.is_empty() {
        train_set.clone()
    } else {
        val_idx.iter().map(|&i| &dataset.samples[i]).collect()
    };

    let mut params = init_params(model_cfg, cfg.stream_seed(2))?;
    let mut opt = OptimizerState::new(*model_cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.stream_seed(3));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.stream_seed(4));

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best = params.clone();
    let mut best_step = 0;
    let mut steps = Vec::with_capacity(cfg.max_steps);
    let mut vals = Vec::new();
    let mut stop_reason = StopReason::MaxSteps;
    let bs = cfg.batch_size.min(train_set.len());

    for step in 0..cfg.max_steps {
        if cursor + bs > order.len() {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let batch: Vec<&TrainingSample> = order[cursor..cursor + bs].iter().map(|&i| train_set[i]).collect();
        cursor += bs;

        let lr = cfg.lr(step);
        let (loss, mut grads) = match loss_and_grads(&batch, &params, &mut dropout_rng) {
            Ok(x) => x,
            Err(Error::Divergence(m)) => {
                stop_reason = StopReason::Diverged(format!("step {step}: {m}"));
                break;
            }
            Err(e) => return Err(e),
        };
        steps.push(StepRecord {
            step,
            lr,
            train_loss: loss,
        });
        if let Err(Error::Divergence(m)) = clip_gradients(&mut grads, cfg.clip_norm) {
            stop_reason = StopReason::Diverged(format!("step {step}: {m}"));
            break;
        }
        adamw_step(&mut params, &grads, &mut opt, lr, &cfg.adamw);

        let done = step + 1;
        if done % cfg.val_interval == 0 || done == cfg.max_steps {
            let val_loss = mean_loss(&val_set, &params)?;
            let rec = ValRecord { step: done, val_loss };
            vals.push(rec);
            if !val_loss.is_finite() {
                on_val(&rec, false);
                stop_reason = StopReason::Diverged(format!("validation loss {val_loss} at step {done}"));
                break;
            }
            let verdict = stopper.observe(val_loss);
            on_val(&rec, verdict == Verdict::Improved);
            match verdict {
                Verdict::Improved => {
                    best.clone_from(&params);
                    best_step = done;
                }
                Verdict::Stop => {
                    stop_reason = StopReason::EarlyStop;
                    break;
                }
                Verdict::Waiting => {}
            }
        }
    }

    // divergence before any validation: the initial parameters are the last good state
    let best_val = if stopper.best.is_finite() {
        stopper.best
    } else {
        mean_loss(&val_set, &best).unwrap_or(f64::INFINITY)
    };
    Ok(TrainOutcome {
        params: best,
        optimizer: opt,
        history: TrainHistory {
            steps,
            vals,
            best_step,
            best_val,
            stop_reason,
        },
        n_train: train_set.len(),
        n_val: val_idx.len(),
    })
}
