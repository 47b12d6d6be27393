use crate::error::{Error, Result};
use crate::model::{ModelParams, OptimizerState};

/// Warm-up, cosine decay, then constant.
pub fn lr_at(step: usize, lr_peak: f64, lr_final: f64, warmup: usize, decay: usize) -> f64 {
    if step < warmup {
        lr_peak * step as f64 / warmup as f64
    } else if step < warmup + decay {
        let x = (step - warmup) as f64 / decay as f64;
        lr_final + 0.5 * (lr_peak - lr_final) * (1.0 + (std::f64::consts::PI * x).cos())
    } else {
        lr_final
    }
}

pub fn global_norm(grads: &ModelParams) -> f64 {
    grads.sum_squares().sqrt()
}

/// Scales gradients to `clip_norm` when their global L2 norm exceeds it.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut ModelParams, clip_norm: f64) -> Result<f64> {
    let g = global_norm(grads);
    if !g.is_finite() {
        return Err(Error::Divergence(format!("gradient norm {g}")));
    }
    if g > clip_norm {
        grads.scale(clip_norm / g);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One AdamW update. Weight decay is decoupled and applied first, to every tensor.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) {
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    let gs = grads.tensors();
    for (((p, (_, _, g)), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(gs)
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for i in 0..p.len() {
            p[i] *= decay;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Waiting,
    Stop,
}

/// Stops after `patience` consecutive validations without a new minimum.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: f64,
    pub since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Verdict {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            Verdict::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Waiting
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn scalar_cfg() -> ModelConfig {
        ModelConfig {
            n_latent: 1,
            n_blocks: 0,
            head_dim: 1,
            mlp_ratio: 1,
            dropout_p: 0.0,
            token_dim: 1,
            out_dim: 1,
        }
    }

    /// A parameter set whose first tensor entry plays the role of a scalar.
    fn scalar(theta: f64) -> ModelParams {
        let mut p = ModelParams::zeros_like(scalar_cfg());
        p.tensors_mut()[0][0] = theta;
        p
    }

    fn first(p: &ModelParams) -> f64 {
        p.tensors()[0].2[0]
    }

    #[test]
    fn schedule_examples() {
        let (peak, fin, w, c) = (1e-4, 1e-7, 1000, 19_000);
        assert_eq!(lr_at(0, peak, fin, w, c), 0.0);
        assert_eq!(lr_at(w, peak, fin, w, c), 1e-4);
        assert_eq!(lr_at(w + c, peak, fin, w, c), 1e-7);
        assert_eq!(lr_at(w + c + 12_345, peak, fin, w, c), 1e-7);
        let mid = lr_at(w + c / 2, peak, fin, w, c);
        assert!((mid - 5.005e-5).abs() <= 1e-15 * 5.005e-5 + 1e-20, "{mid}");
    }

    #[test]
    fn schedule_is_continuous_at_boundaries() {
        let (peak, fin, w, c) = (1e-4, 1e-7, 400, 1600);
        // evaluate the adjacent phase formulas at the boundary itself
        let warm_end = peak * w as f64 / w as f64;
        assert!((warm_end - lr_at(w, peak, fin, w, c)).abs() <= 1e-15 * peak);
        let cos_end = fin + 0.5 * (peak - fin) * (1.0 + std::f64::consts::PI.cos());
        assert!((cos_end - lr_at(w + c, peak, fin, w, c)).abs() <= 1e-15 * fin);
        // and the schedule is monotone within each phase
        let lrs: Vec<f64> = (0..w + c + 10).map(|s| lr_at(s, peak, fin, w, c)).collect();
        assert!(lrs[..=w].windows(2).all(|x| x[1] >= x[0]));
        assert!(lrs[w..].windows(2).all(|x| x[1] <= x[0]));
    }

    #[test]
    fn clipping() {
        let mut g = scalar(0.5);
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 0.5);
        assert_eq!(first(&g), 0.5);

        let mut g = ModelParams::zeros_like(scalar_cfg());
        g.tensors_mut()[0][0] = 2.0;
        g.tensors_mut()[1][0] = 2.0;
        g.tensors_mut()[2][0] = 2.0;
        g.tensors_mut()[3][0] = 2.0;
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 4.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        assert_eq!(first(&g), 0.5);

        let mut z = ModelParams::zeros_like(scalar_cfg());
        clip_gradients(&mut z, 1.0).unwrap();
        assert_eq!(z, ModelParams::zeros_like(scalar_cfg()));

        let mut bad = scalar(f64::NAN);
        assert!(matches!(clip_gradients(&mut bad, 1.0), Err(Error::Divergence(_))));
    }

    #[test]
    fn adamw_examples() {
        let no_wd = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        // zero gradients and no decay leave parameters alone
        let mut p = scalar(0.3);
        let mut st = OptimizerState::new(scalar_cfg());
        adamw_step(&mut p, &ModelParams::zeros_like(scalar_cfg()), &mut st, 0.1, &no_wd);
        assert_eq!(first(&p), 0.3);

        // one step from 0 with g = 1: m_hat = v_hat = 1, update = lr / (1 + eps)
        let mut p = scalar(0.0);
        let mut st = OptimizerState::new(scalar_cfg());
        adamw_step(&mut p, &scalar(1.0), &mut st, 0.1, &no_wd);
        assert!((first(&p) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((first(&p) + 0.1).abs() < 1e-8);

        // decay only
        let mut p = scalar(1.0);
        let mut st = OptimizerState::new(scalar_cfg());
        adamw_step(&mut p, &ModelParams::zeros_like(scalar_cfg()), &mut st, 0.1, &AdamWConfig::default());
        assert!((first(&p) - 0.999).abs() < 1e-15);
    }

    #[test]
    fn adamw_descends_a_quadratic() {
        // L = 0.5 * sum (theta - 3)^2 over one tensor
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = scalar(0.0);
        p.tensors_mut()[0].iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
        let loss = |p: &ModelParams| p.tensors()[0].2.iter().map(|v| 0.5 * (v - 3.0).powi(2)).sum::<f64>();
        let mut st = OptimizerState::new(scalar_cfg());
        let before = loss(&p);
        let mut g = ModelParams::zeros_like(scalar_cfg());
        for (gv, pv) in g.tensors_mut()[0].iter_mut().zip(p.tensors()[0].2) {
            *gv = pv - 3.0;
        }
        adamw_step(&mut p, &g, &mut st, 1e-3, &cfg);
        assert!(loss(&p) < before);
    }

    #[test]
    fn patience_rule() {
        let mut es = EarlyStopper::new(2);
        let series = [1.0, 0.5, 0.4, 0.4, 0.45, 0.3];
        let verdicts: Vec<Verdict> = series[..5].iter().map(|&v| es.observe(v)).collect();
        assert_eq!(
            &verdicts[..],
            &[Verdict::Improved, Verdict::Improved, Verdict::Improved, Verdict::Waiting, Verdict::Stop]
        );
        assert_eq!(es.best, 0.4);
    }
}
