//! The graph transformer.
//!
//! Tokens (coarse element fields) are embedded linearly and summed with a
//! two-layer perceptron encoding of `(u_x, u_y, d)`. `n_blocks` pre-norm
//! blocks of multi-head self-attention and a GELU MLP follow. The query token
//! (row 0) is layer-normed and decoded to a fine-field residual that is added
//! to the cached interpolation baseline.

mod checkpoint;
mod forward;
pub(crate) mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::{FINE_DIM, TOKEN_DIM};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, OptimizerState,
};
pub use forward::{attention_maps, forward, loss_and_grads, predict, predict_residuals, Mode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_latent: usize,
    pub n_blocks: usize,
    pub head_dim: usize,
    pub mlp_ratio: usize,
    pub dropout_p: f64,
    pub token_dim: usize,
    pub out_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_latent: 256,
            n_blocks: 8,
            head_dim: 64,
            mlp_ratio: 4,
            dropout_p: 0.1,
            token_dim: TOKEN_DIM,
            out_dim: FINE_DIM,
        }
    }
}

impl ModelConfig {
    pub fn n_heads(&self) -> usize {
        self.n_latent / self.head_dim
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.n_latent
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_latent == 0 || self.head_dim == 0 || self.n_latent % self.head_dim != 0 {
            return Err(Error::Config(format!(
                "n_latent {} must be a positive multiple of head_dim {}",
                self.n_latent, self.head_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        if self.mlp_ratio == 0 || self.token_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("mlp_ratio, token_dim and out_dim must be positive".into()));
        }
        Ok(())
    }

    /// Parameter count in closed form.
    pub fn param_count(&self) -> usize {
        let d = self.n_latent;
        let f = self.mlp_hidden();
        let embed = self.token_dim * d + d;
        let pos = 3 * d + d + d * d + d;
        let block = 2 * 2 * d + 4 * (d * d + d) + d * f + f + f * d + d;
        let head = 2 * d + d * self.out_dim + self.out_dim;
        embed + pos + self.n_blocks * block + head
    }

    pub fn write_to(&self, c: &mut KvConfig) {
        c.set("n_latent", self.n_latent);
        c.set("n_blocks", self.n_blocks);
        c.set("head_dim", self.head_dim);
        c.set("mlp_ratio", self.mlp_ratio);
        c.set("dropout_p", self.dropout_p);
    }

    pub fn apply_config(&mut self, c: &KvConfig) -> Result<()> {
        c.apply("n_latent", &mut self.n_latent)?;
        c.apply("n_blocks", &mut self.n_blocks)?;
        c.apply("head_dim", &mut self.head_dim)?;
        c.apply("mlp_ratio", &mut self.mlp_ratio)?;
        c.apply("dropout_p", &mut self.dropout_p)?;
        self.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_in x n_out`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    fn new(width: usize, gamma: f64) -> Self {
        Self {
            gamma: vec![gamma; width],
            beta: vec![0.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub embed: Linear,
    pub pos1: Linear,
    pub pos2: Linear,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub head: Linear,
}

impl ModelParams {
    /// All weights and biases zero, layer-norm scales set to `ln_gamma`.
    fn filled(cfg: ModelConfig, ln_gamma: f64) -> Self {
        let d = cfg.n_latent;
        let f = cfg.mlp_hidden();
        Self {
            cfg,
            embed: Linear::zeros(cfg.token_dim, d),
            pos1: Linear::zeros(3, d),
            pos2: Linear::zeros(d, d),
            blocks: (0..cfg.n_blocks)
                .map(|_| Block {
                    ln1: LayerNorm::new(d, ln_gamma),
                    q: Linear::zeros(d, d),
                    k: Linear::zeros(d, d),
                    v: Linear::zeros(d, d),
                    o: Linear::zeros(d, d),
                    ln2: LayerNorm::new(d, ln_gamma),
                    fc1: Linear::zeros(d, f),
                    fc2: Linear::zeros(f, d),
                })
                .collect(),
            ln_f: LayerNorm::new(d, ln_gamma),
            head: Linear::zeros(d, cfg.out_dim),
        }
    }

    /// A zero tensor of every parameter's shape; used for gradients and optimizer moments.
    pub fn zeros_like(cfg: ModelConfig) -> Self {
        Self::filled(cfg, 0.0)
    }

    /// Named tensors in a fixed order, with their shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        fn lin<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, l: &'a Linear) {
            out.push((format!("{name}.w"), vec![l.n_in, l.n_out], &l.w[..]));
            out.push((format!("{name}.b"), vec![l.n_out], &l.b[..]));
        }
        fn ln<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, l: &'a LayerNorm) {
            out.push((format!("{name}.gamma"), vec![l.gamma.len()], &l.gamma[..]));
            out.push((format!("{name}.beta"), vec![l.beta.len()], &l.beta[..]));
        }
        lin(&mut out, "embed", &self.embed);
        lin(&mut out, "pos1", &self.pos1);
        lin(&mut out, "pos2", &self.pos2);
        for (i, b) in self.blocks.iter().enumerate() {
            ln(&mut out, &format!("blocks.{i}.ln1"), &b.ln1);
            lin(&mut out, &format!("blocks.{i}.attn.q"), &b.q);
            lin(&mut out, &format!("blocks.{i}.attn.k"), &b.k);
            lin(&mut out, &format!("blocks.{i}.attn.v"), &b.v);
            lin(&mut out, &format!("blocks.{i}.attn.o"), &b.o);
            ln(&mut out, &format!("blocks.{i}.ln2"), &b.ln2);
            lin(&mut out, &format!("blocks.{i}.mlp.fc1"), &b.fc1);
            lin(&mut out, &format!("blocks.{i}.mlp.fc2"), &b.fc2);
        }
        ln(&mut out, "ln_f", &self.ln_f);
        lin(&mut out, "head", &self.head);
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        out.push(&mut self.embed.w);
        out.push(&mut self.embed.b);
        out.push(&mut self.pos1.w);
        out.push(&mut self.pos1.b);
        out.push(&mut self.pos2.w);
        out.push(&mut self.pos2.b);
        for b in &mut self.blocks {
            out.push(&mut b.ln1.gamma);
            out.push(&mut b.ln1.beta);
            for l in [&mut b.q, &mut b.k, &mut b.v, &mut b.o] {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
            out.push(&mut b.ln2.gamma);
            out.push(&mut b.ln2.beta);
            out.push(&mut b.fc1.w);
            out.push(&mut b.fc1.b);
            out.push(&mut b.fc2.w);
            out.push(&mut b.fc2.b);
        }
        out.push(&mut self.ln_f.gamma);
        out.push(&mut self.ln_f.beta);
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, t)| t.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Zeroes the decoder projection, making the model output the interpolation baseline.
    pub fn zero_decoder(&mut self) {
        self.head.w.fill(0.0);
        self.head.b.fill(0.0);
    }
}

/// Xavier-uniform weights, zero biases, unit layer-norm scales.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut p = ModelParams::filled(*cfg, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |l: &mut Linear| {
        let a = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
        for w in &mut l.w {
            *w = rng.gen_range(-a..a);
        }
    };
    fill(&mut p.embed);
    fill(&mut p.pos1);
    fill(&mut p.pos2);
    for b in &mut p.blocks {
        for l in [&mut b.q, &mut b.k, &mut b.v, &mut b.o, &mut b.fc1, &mut b.fc2] {
            fill(l);
        }
    }
    fill(&mut p.head);
    Ok(p)
}
