//! Batched forward pass with activation caches and the matching backward pass.

use rand::Rng;

use super::ops::{
    gelu_gate, gelu_grad_gated, gemm, layer_norm_backward, layer_norm_forward, linear_backward, linear_forward,
    softmax_rows, LnCache, View,
};
use super::{Block, Linear, ModelParams};
use crate::error::{Error, Result};
use crate::tokenizer::{SampleInput, TrainingSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

const PREDICT_CHUNK: usize = 64;

struct Shape {
    b: usize,
    t: usize,
    d: usize,
    h: usize,
    hd: usize,
    f: usize,
}

struct EmbedCache {
    tokens: Vec<f64>,
    positions: Vec<f64>,
    p1: Vec<f64>,
    p1s: Vec<f64>,
    p1g: Vec<f64>,
}

struct BlockCache {
    /// Query rows per sample: `t` normally, 1 when only row 0 is carried forward.
    tq: usize,
    ln1: LnCache,
    a1: Vec<f64>,
    a1q: Option<Vec<f64>>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    pmask: Option<Vec<f64>>,
    attn: Vec<f64>,
    omask: Option<Vec<f64>>,
    ln2: LnCache,
    a2: Vec<f64>,
    f1: Vec<f64>,
    /// GELU gate of `f1`.
    fs: Vec<f64>,
    g: Vec<f64>,
    fmask: Option<Vec<f64>>,
}

struct Cache {
    embed: EmbedCache,
    blocks: Vec<BlockCache>,
    /// Rows per sample leaving the last block.
    t_last: usize,
    lnf: LnCache,
    af: Vec<f64>,
}

fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

/// Row 0 of every sample, `b x d`.
fn gather_first(x: &[f64], b: usize, t: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(b * d);
    for s in 0..b {
        out.extend_from_slice(&x[s * t * d..s * t * d + d]);
    }
    out
}

fn scatter_add_first(dst: &mut [f64], src: &[f64], b: usize, t: usize, d: usize) {
    for s in 0..b {
        for (o, v) in dst[s * t * d..s * t * d + d].iter_mut().zip(&src[s * d..(s + 1) * d]) {
            *o += v;
        }
    }
}

fn check_inputs(inputs: &[&SampleInput], params: &ModelParams) -> Result<Shape> {
    let cfg = &params.cfg;
    let first = inputs
        .first()
        .ok_or_else(|| Error::Shape("empty batch".into()))?;
    let t = first.n_tokens();
    if t == 0 {
        return Err(Error::Shape("sample has no tokens".into()));
    }
    for s in inputs {
        if s.n_tokens() != t
            || s.tokens.len() != t * cfg.token_dim
            || s.positions.len() != t * 3
            || s.baseline.len() != cfg.out_dim
        {
            return Err(Error::Shape(format!(
                "sample shape mismatch: {} token values, {} positions, {} baseline (expected {t}x{}, {t}x3, {})",
                s.tokens.len(),
                s.positions.len(),
                s.baseline.len(),
                cfg.token_dim,
                cfg.out_dim
            )));
        }
    }
    Ok(Shape {
        b: inputs.len(),
        t,
        d: cfg.n_latent,
        h: cfg.n_heads(),
        hd: cfg.head_dim,
        f: cfg.mlp_hidden(),
    })
}

fn lin(x: &[f64], l: &Linear, rows: usize) -> Vec<f64> {
    linear_forward(x, &l.w, &l.b, rows, l.n_in, l.n_out)
}

fn embed_forward(inputs: &[&SampleInput], params: &ModelParams, sh: &Shape) -> (Vec<f64>, EmbedCache) {
    let rows = sh.b * sh.t;
    let tokens: Vec<f64> = inputs.iter().flat_map(|s| s.tokens.iter().copied()).collect();
    let positions: Vec<f64> = inputs.iter().flat_map(|s| s.positions.iter().copied()).collect();
    let mut x = lin(&tokens, &params.embed, rows);
    let p1 = lin(&positions, &params.pos1, rows);
    let p1s: Vec<f64> = p1.iter().map(|&v| gelu_gate(v)).collect();
    let p1g: Vec<f64> = p1.iter().zip(&p1s).map(|(x, s)| x * s).collect();
    let pe = lin(&p1g, &params.pos2, rows);
    for (a, b) in x.iter_mut().zip(&pe) {
        *a += b;
    }
    (
        x,
        EmbedCache {
            tokens,
            positions,
            p1,
            p1s,
            p1g,
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn block_forward<R: Rng + ?Sized>(
    x: &[f64],
    blk: &Block,
    sh: &Shape,
    query_only: bool,
    p_drop: f64,
    train: bool,
    rng: &mut R,
) -> (Vec<f64>, BlockCache) {
    let Shape { b, t, d, h, hd, f } = *sh;
    let tq = if query_only { 1 } else { t };
    let rows = b * t;
    let qrows = b * tq;
    let dropping = train && p_drop > 0.0;

    let (a1, ln1) = layer_norm_forward(x, &blk.ln1.gamma, &blk.ln1.beta, d);
    let a1q = query_only.then(|| gather_first(&a1, b, t, d));
    let q = lin(a1q.as_deref().unwrap_or(&a1), &blk.q, qrows);
    let k = lin(&a1, &blk.k, rows);
    let v = lin(&a1, &blk.v, rows);

    let scale = 1.0 / (hd as f64).sqrt();
    let mut probs = vec![0.0; b * h * tq * t];
    for s in 0..b {
        for hh in 0..h {
            let qv = View::rows(&q, d).offset(s * tq * d + hh * hd);
            let kt = View::transposed(&k, d).offset(s * t * d + hh * hd);
            let out = &mut probs[(s * h + hh) * tq * t..(s * h + hh + 1) * tq * t];
            gemm(tq, hd, t, scale, qv, kt, 0.0, out, t, 1);
        }
    }
    softmax_rows(&mut probs, t);
    let pmask = dropping.then(|| dropout_mask(probs.len(), p_drop, rng));
    let mut pd = probs.clone();
    apply_mask(&mut pd, &pmask);

    let mut attn = vec![0.0; qrows * d];
    for s in 0..b {
        for hh in 0..h {
            let pv = View::rows(&pd, t).offset((s * h + hh) * tq * t);
            let vv = View::rows(&v, d).offset(s * t * d + hh * hd);
            gemm(tq, t, hd, 1.0, pv, vv, 0.0, &mut attn[s * tq * d + hh * hd..], d, 1);
        }
    }
    let mut y = lin(&attn, &blk.o, qrows);
    let omask = dropping.then(|| dropout_mask(y.len(), p_drop, rng));
    apply_mask(&mut y, &omask);
    let mut x1 = if query_only { gather_first(x, b, t, d) } else { x.to_vec() };
    for (a, b) in x1.iter_mut().zip(&y) {
        *a += b;
    }

    let (a2, ln2) = layer_norm_forward(&x1, &blk.ln2.gamma, &blk.ln2.beta, d);
    let f1 = linear_forward(&a2, &blk.fc1.w, &blk.fc1.b, qrows, d, f);
    let fs: Vec<f64> = f1.iter().map(|&v| gelu_gate(v)).collect();
    let g: Vec<f64> = f1.iter().zip(&fs).map(|(x, s)| x * s).collect();
    let mut z = linear_forward(&g, &blk.fc2.w, &blk.fc2.b, qrows, f, d);
    let fmask = dropping.then(|| dropout_mask(z.len(), p_drop, rng));
    apply_mask(&mut z, &fmask);
    for (a, b) in x1.iter_mut().zip(&z) {
        *a += b;
    }

    let cache = BlockCache {
        tq,
        ln1,
        a1,
        a1q,
        q,
        k,
        v,
        probs,
        pmask,
        attn,
        omask,
        ln2,
        a2,
        f1,
        fs,
        g,
        fmask,
    };
    (x1, cache)
}

fn block_backward(dx2: &[f64], blk: &Block, gblk: &mut Block, c: &BlockCache, sh: &Shape) -> Vec<f64> {
    let Shape { b, t, d, h, hd, f } = *sh;
    let tq = c.tq;
    let rows = b * t;
    let qrows = b * tq;

    // MLP branch
    let mut dz = dx2.to_vec();
    apply_mask(&mut dz, &c.fmask);
    let mut dg = linear_backward(&c.g, &blk.fc2.w, &dz, &mut gblk.fc2.w, &mut gblk.fc2.b, qrows, f, d, true)
        .expect("dx requested");
    for ((g, &pre), &gate) in dg.iter_mut().zip(&c.f1).zip(&c.fs) {
        *g *= gelu_grad_gated(pre, gate);
    }
    let da2 = linear_backward(&c.a2, &blk.fc1.w, &dg, &mut gblk.fc1.w, &mut gblk.fc1.b, qrows, d, f, true)
        .expect("dx requested");
    let mut dx1 = layer_norm_backward(&da2, &c.ln2, &blk.ln2.gamma, &mut gblk.ln2.gamma, &mut gblk.ln2.beta, d);
    for (a, b) in dx1.iter_mut().zip(dx2) {
        *a += b;
    }

    // attention branch
    let mut dy = dx1.clone();
    apply_mask(&mut dy, &c.omask);
    let dattn = linear_backward(&c.attn, &blk.o.w, &dy, &mut gblk.o.w, &mut gblk.o.b, qrows, d, d, true)
        .expect("dx requested");

    let mut pd = c.probs.clone();
    apply_mask(&mut pd, &c.pmask);
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = vec![0.0; qrows * d];
    let mut dk = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut dp = vec![0.0; tq * t];
    for s in 0..b {
        for hh in 0..h {
            let poff = (s * h + hh) * tq * t;
            let qoff = s * tq * d + hh * hd;
            let koff = s * t * d + hh * hd;
            let dout = View::rows(&dattn, d).offset(qoff);
            // dP = dout V^T, dV = P_dropped^T dout
            gemm(tq, hd, t, 1.0, dout, View::transposed(&c.v, d).offset(koff), 0.0, &mut dp, t, 1);
            gemm(
                t,
                tq,
                hd,
                1.0,
                View::transposed(&pd, t).offset(poff),
                dout,
                0.0,
                &mut dv[koff..],
                d,
                1,
            );
            if let Some(m) = &c.pmask {
                for (g, k) in dp.iter_mut().zip(&m[poff..poff + tq * t]) {
                    *g *= k;
                }
            }
            // softmax backward, folded with the score scale
            let p = &c.probs[poff..poff + tq * t];
            for (drow, prow) in dp.chunks_exact_mut(t).zip(p.chunks_exact(t)) {
                let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                for (g, &pv) in drow.iter_mut().zip(prow) {
                    *g = scale * pv * (*g - dot);
                }
            }
            gemm(tq, t, hd, 1.0, View::rows(&dp, t), View::rows(&c.k, d).offset(koff), 0.0, &mut dq[qoff..], d, 1);
            gemm(
                t,
                tq,
                hd,
                1.0,
                View::transposed(&dp, t),
                View::rows(&c.q, d).offset(qoff),
                0.0,
                &mut dk[koff..],
                d,
                1,
            );
        }
    }

    let a1q = c.a1q.as_deref().unwrap_or(&c.a1);
    let da1q = linear_backward(a1q, &blk.q.w, &dq, &mut gblk.q.w, &mut gblk.q.b, qrows, d, d, true)
        .expect("dx requested");
    let mut da1 = linear_backward(&c.a1, &blk.k.w, &dk, &mut gblk.k.w, &mut gblk.k.b, rows, d, d, true)
        .expect("dx requested");
    let da1v = linear_backward(&c.a1, &blk.v.w, &dv, &mut gblk.v.w, &mut gblk.v.b, rows, d, d, true)
        .expect("dx requested");
    for (a, b) in da1.iter_mut().zip(&da1v) {
        *a += b;
    }
    if tq == t {
        for (a, b) in da1.iter_mut().zip(&da1q) {
            *a += b;
        }
    } else {
        scatter_add_first(&mut da1, &da1q, b, t, d);
    }
    let mut dx = layer_norm_backward(&da1, &c.ln1, &blk.ln1.gamma, &mut gblk.ln1.gamma, &mut gblk.ln1.beta, d);
    if tq == t {
        for (a, b) in dx.iter_mut().zip(&dx1) {
            *a += b;
        }
    } else {
        scatter_add_first(&mut dx, &dx1, b, t, d);
    }
    dx
}

/// Runs the network; returns scaled predictions (`b x out_dim`) and, if asked, the cache.
fn run_residual<R: Rng + ?Sized>(
    inputs: &[&SampleInput],
    params: &ModelParams,
    mode: Mode,
    rng: &mut R,
    keep_cache: bool,
    query_only_last: bool,
) -> Result<(Vec<f64>, Option<Cache>)> {
    let sh = check_inputs(inputs, params)?;
    let cfg = &params.cfg;
    let train = mode == Mode::Train;
    let (mut x, embed) = embed_forward(inputs, params, &sh);
    let mut blocks = Vec::new();
    let mut t_last = sh.t;
    let n = params.blocks.len();
    for (i, blk) in params.blocks.iter().enumerate() {
        let query_only = query_only_last && i + 1 == n;
        let (y, c) = block_forward(&x, blk, &sh, query_only, cfg.dropout_p, train, rng);
        t_last = c.tq;
        x = y;
        if keep_cache {
            blocks.push(c);
        }
    }
    let hq = if t_last == 1 { x } else { gather_first(&x, sh.b, t_last, sh.d) };
    let (af, lnf) = layer_norm_forward(&hq, &params.ln_f.gamma, &params.ln_f.beta, sh.d);
    let pred = lin(&af, &params.head, sh.b);
    let cache = keep_cache.then(|| Cache {
        embed,
        blocks,
        t_last,
        lnf,
        af,
    });
    Ok((pred, cache))
}

/// `run_residual` with the scaled baseline added back.
fn run<R: Rng + ?Sized>(
    inputs: &[&SampleInput],
    params: &ModelParams,
    mode: Mode,
    rng: &mut R,
    keep_cache: bool,
    query_only_last: bool,
) -> Result<(Vec<f64>, Option<Cache>)> {
    let (mut pred, cache) = run_residual(inputs, params, mode, rng, keep_cache, query_only_last)?;
    for (p, s) in pred.chunks_exact_mut(params.cfg.out_dim).zip(inputs) {
        for (a, b) in p.iter_mut().zip(&s.baseline) {
            *a += b;
        }
    }
    Ok((pred, cache))
}

/// Scaled prediction `baseline + residual` for one sample.
pub fn forward<R: Rng + ?Sized>(
    sample: &SampleInput,
    params: &ModelParams,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(run(&[sample], params, mode, rng, false, true)?.0)
}

/// Eval-mode scaled predictions, evaluated in fixed-size chunks.
pub fn predict(inputs: &[&SampleInput], params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(PREDICT_CHUNK) {
        let (pred, _) = run(chunk, params, Mode::Eval, &mut rng, false, true)?;
        out.extend(pred.chunks_exact(params.cfg.out_dim).map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Eval-mode scaled residuals (decoder output before the baseline is added).
pub fn predict_residuals(inputs: &[&SampleInput], params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(PREDICT_CHUNK) {
        let (res, _) = run_residual(chunk, params, Mode::Eval, &mut rng, false, true)?;
        out.extend(res.chunks_exact(params.cfg.out_dim).map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Batch loss (mean over samples of the per-sample scaled MSE) and exact gradients.
pub fn loss_and_grads<R: Rng + ?Sized>(
    batch: &[&TrainingSample],
    params: &ModelParams,
    rng: &mut R,
) -> Result<(f64, ModelParams)> {
    loss_and_grads_impl(batch, params, Mode::Train, rng, true)
}

pub(crate) fn loss_and_grads_impl<R: Rng + ?Sized>(
    batch: &[&TrainingSample],
    params: &ModelParams,
    mode: Mode,
    rng: &mut R,
    query_only_last: bool,
) -> Result<(f64, ModelParams)> {
    let inputs: Vec<&SampleInput> = batch.iter().map(|s| &s.input).collect();
    let (pred, cache) = run(&inputs, params, mode, rng, true, query_only_last)?;
    let cache = cache.expect("cache requested");
    let cfg = &params.cfg;
    let sh = check_inputs(&inputs, params)?;
    let od = cfg.out_dim;
    let denom = (sh.b * od) as f64;

    let mut loss = 0.0;
    let mut dpred = vec![0.0; pred.len()];
    for (i, s) in batch.iter().enumerate() {
        if s.target.len() != od {
            return Err(Error::Shape(format!("target length {} != {od}", s.target.len())));
        }
        for j in 0..od {
            let r = pred[i * od + j] - s.target[j];
            loss += r * r;
            dpred[i * od + j] = 2.0 * r / denom;
        }
    }
    loss /= denom;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {loss}")));
    }

    let mut g = ModelParams::zeros_like(*cfg);
    let daf = linear_backward(&cache.af, &params.head.w, &dpred, &mut g.head.w, &mut g.head.b, sh.b, sh.d, od, true)
        .expect("dx requested");
    let dhq = layer_norm_backward(&daf, &cache.lnf, &params.ln_f.gamma, &mut g.ln_f.gamma, &mut g.ln_f.beta, sh.d);
    let mut dx = if cache.t_last == 1 {
        dhq
    } else {
        let mut full = vec![0.0; sh.b * cache.t_last * sh.d];
        scatter_add_first(&mut full, &dhq, sh.b, cache.t_last, sh.d);
        full
    };
    for ((blk, gblk), c) in params.blocks.iter().zip(g.blocks.iter_mut()).zip(&cache.blocks).rev() {
        dx = block_backward(&dx, blk, gblk, c, &sh);
    }

    let rows = sh.b * sh.t;
    let e = &cache.embed;
    linear_backward(&e.tokens, &params.embed.w, &dx, &mut g.embed.w, &mut g.embed.b, rows, cfg.token_dim, sh.d, false);
    let mut dp1 = linear_backward(&e.p1g, &params.pos2.w, &dx, &mut g.pos2.w, &mut g.pos2.b, rows, sh.d, sh.d, true)
        .expect("dx requested");
    for ((a, &pre), &gate) in dp1.iter_mut().zip(&e.p1).zip(&e.p1s) {
        *a *= gelu_grad_gated(pre, gate);
    }
    linear_backward(&e.positions, &params.pos1.w, &dp1, &mut g.pos1.w, &mut g.pos1.b, rows, 3, sh.d, false);
    Ok((loss, g))
}

/// Eval-mode attention probabilities of every block, each `n_heads x n_tokens x n_tokens`.
pub fn attention_maps(sample: &SampleInput, params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    let sh = check_inputs(&[sample], params)?;
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let (mut x, _) = embed_forward(&[sample], params, &sh);
    let mut maps = Vec::new();
    for blk in &params.blocks {
        let (y, c) = block_forward(&x, blk, &sh, false, 0.0, false, &mut rng);
        maps.push(c.probs);
        x = y;
    }
    Ok(maps)
}
