//! Analytic detonation-like surrogate: a corrugated, moving, smoothed front with
//! a pressure/temperature spike, producing fine (p=3) snapshots.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::mesh::{write_snapshot, Mesh, Snapshot};
use crate::{FEATURE_NAMES, N_FEATURES, P_FINE};

/// Number of intermediate species (O, H, OH, HO2, H2O2).
pub const N_INTERMEDIATES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    /// Domain height; sets the corrugation wavelength `ly / n_c`.
    pub ly: f64,
    pub x0: f64,
    pub d: f64,
    pub a: f64,
    pub n_c: u32,
    pub omega: f64,
    pub delta: f64,
    pub delta_s: f64,
    pub t_u: f64,
    pub t_b: f64,
    pub t_s: f64,
    pub p_u: f64,
    pub p_b: f64,
    pub p_s: f64,
    pub a_c: f64,
    pub u_b: f64,
    pub u_s: f64,
    pub v_a: f64,
    pub y_h2_u: f64,
    pub y_o2_u: f64,
    pub y_h2o_b: f64,
    pub alpha: [f64; N_INTERMEDIATES],
    pub r_s: f64,
    /// Seed for the per-snapshot jitter of `a`, `t_s` and `p_s`.
    pub seed: u64,
    /// Relative jitter amplitude; 0 disables it.
    pub jitter: f64,
}

impl SurrogateParams {
    /// Default surrogate tuned to the element spacing of `mesh`.
    pub fn for_mesh(mesh: &Mesh) -> Self {
        Self {
            ly: mesh.ly,
            x0: 0.2 * mesh.lx,
            d: 2000.0,
            a: 0.01 * mesh.ly,
            n_c: 3,
            omega: 2e5,
            delta: 2.5 * mesh.h,
            delta_s: 1.5 * mesh.h,
            t_u: 300.0,
            t_b: 2900.0,
            t_s: 800.0,
            p_u: 4e4,
            p_b: 6e5,
            p_s: 8e5,
            a_c: 0.3,
            u_b: 800.0,
            u_s: 400.0,
            v_a: 200.0,
            y_h2_u: 0.0283,
            y_o2_u: 0.2265,
            y_h2o_b: 0.24,
            alpha: [0.008; N_INTERMEDIATES],
            r_s: 397.0,
            seed: 0,
            jitter: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("surrogate params: {msg}")));
        if !(self.delta > 0.0 && self.delta_s > 0.0) {
            return bad("delta and delta_s must be positive");
        }
        if !(self.t_u > 0.0 && self.p_u > 0.0 && self.t_b > 0.0 && self.p_b > 0.0) {
            return bad("unburnt/burnt temperature and pressure must be positive");
        }
        if self.t_s < 0.0 || self.p_s < 0.0 || !(0.0..=1.0).contains(&self.a_c) {
            return bad("spike amplitudes must be non-negative and a_c in [0, 1]");
        }
        if !(self.r_s > 0.0 && self.ly > 0.0) {
            return bad("r_s and ly must be positive");
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad("jitter must be in [0, 1)");
        }
        let mass = [self.y_h2_u, self.y_o2_u, self.y_h2o_b];
        if mass.iter().chain(&self.alpha).any(|&v| v < 0.0) {
            return bad("mass fractions must be non-negative");
        }
        let alpha_sum: f64 = self.alpha.iter().sum();
        let worst = (0..=10_000)
            .map(|i| {
                let c = i as f64 * 1e-4;
                self.y_h2_u * (1.0 - c)
                    + self.y_o2_u * (1.0 - c)
                    + self.y_h2o_b * c
                    + alpha_sum * 4.0 * c * (1.0 - c)
            })
            .fold(f64::MIN, f64::max);
        if worst > 1.0 {
            return bad(&format!("species sum reaches {worst} > 1, Y_N2 would be negative"));
        }
        Ok(())
    }

    /// Parameters with the deterministic per-time jitter applied.
    pub fn at_time(&self, t: f64) -> SurrogateParams {
        if self.jitter == 0.0 {
            return self.clone();
        }
        let mut h = splitmix64(self.seed ^ t.to_bits());
        let mut unit = || {
            h = splitmix64(h);
            (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let mut p = self.clone();
        p.a *= 1.0 + self.jitter * unit();
        p.t_s *= 1.0 + self.jitter * unit();
        p.p_s *= 1.0 + self.jitter * unit();
        p
    }

    pub fn to_config(&self) -> KvConfig {
        let mut c = KvConfig::new();
        c.set("ly", self.ly);
        c.set("x0", self.x0);
        c.set("D", self.d);
        c.set("A", self.a);
        c.set("n_c", self.n_c);
        c.set("omega", self.omega);
        c.set("delta", self.delta);
        c.set("delta_s", self.delta_s);
        c.set("T_u", self.t_u);
        c.set("T_b", self.t_b);
        c.set("T_s", self.t_s);
        c.set("P_u", self.p_u);
        c.set("P_b", self.p_b);
        c.set("P_s", self.p_s);
        c.set("a_c", self.a_c);
        c.set("u_b", self.u_b);
        c.set("u_s", self.u_s);
        c.set("v_a", self.v_a);
        c.set("Y_H2_u", self.y_h2_u);
        c.set("Y_O2_u", self.y_o2_u);
        c.set("Y_H2O_b", self.y_h2o_b);
        for (i, a) in self.alpha.iter().enumerate() {
            c.set(&format!("alpha_{i}"), a);
        }
        c.set("R_s", self.r_s);
        c.set("seed", self.seed);
        c.set("jitter", self.jitter);
        c
    }

    /// Overrides fields of `self` with any keys present in `c`.
    pub fn apply_config(&mut self, c: &KvConfig) -> Result<()> {
        c.apply("ly", &mut self.ly)?;
        c.apply("x0", &mut self.x0)?;
        c.apply("D", &mut self.d)?;
        c.apply("A", &mut self.a)?;
        c.apply("n_c", &mut self.n_c)?;
        c.apply("omega", &mut self.omega)?;
        c.apply("delta", &mut self.delta)?;
        c.apply("delta_s", &mut self.delta_s)?;
        c.apply("T_u", &mut self.t_u)?;
        c.apply("T_b", &mut self.t_b)?;
        c.apply("T_s", &mut self.t_s)?;
        c.apply("P_u", &mut self.p_u)?;
        c.apply("P_b", &mut self.p_b)?;
        c.apply("P_s", &mut self.p_s)?;
        c.apply("a_c", &mut self.a_c)?;
        c.apply("u_b", &mut self.u_b)?;
        c.apply("u_s", &mut self.u_s)?;
        c.apply("v_a", &mut self.v_a)?;
        c.apply("Y_H2_u", &mut self.y_h2_u)?;
        c.apply("Y_O2_u", &mut self.y_o2_u)?;
        c.apply("Y_H2O_b", &mut self.y_h2o_b)?;
        for (i, a) in self.alpha.iter_mut().enumerate() {
            c.apply(&format!("alpha_{i}"), a)?;
        }
        c.apply("R_s", &mut self.r_s)?;
        c.apply("seed", &mut self.seed)?;
        c.apply("jitter", &mut self.jitter)?;
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn corrugation_phase(y: f64, t: f64, p: &SurrogateParams) -> f64 {
    2.0 * std::f64::consts::PI * p.n_c as f64 * y / p.ly + p.omega * t
}

pub fn front_position(y: f64, t: f64, p: &SurrogateParams) -> f64 {
    p.x0 + p.d * t + p.a * corrugation_phase(y, t, p).sin()
}

/// All 13 features at one point, plus the density `P / (R_s T)`.
pub fn eval_point(x: f64, y: f64, t: f64, p: &SurrogateParams) -> ([f64; N_FEATURES], f64) {
    let xf = front_position(y, t, p);
    let c = 0.5 * (1.0 + ((xf - x) / p.delta).tanh());
    let s = (-((x - xf) / p.delta_s).powi(2)).exp();
    let phase = corrugation_phase(y, t, p);
    let cell_phase = 4.0 * std::f64::consts::PI * p.n_c as f64 * y / p.ly + p.omega * t;
    let temp = p.t_u + (p.t_b - p.t_u) * c + p.t_s * s;
    let pres = p.p_u + (p.p_b - p.p_u) * c + p.p_s * s * (1.0 + p.a_c * cell_phase.sin());
    let mut f = [0.0; N_FEATURES];
    f[0] = p.u_b * c + p.u_s * s;
    f[1] = p.v_a * s * phase.sin();
    f[2] = pres;
    f[3] = temp;
    f[4] = p.y_h2_u * (1.0 - c);
    f[5] = p.y_o2_u * (1.0 - c);
    let bump = 4.0 * c * (1.0 - c);
    for (k, a) in p.alpha.iter().enumerate() {
        f[6 + k] = a * bump;
    }
    f[11] = p.y_h2o_b * c;
    f[12] = 1.0 - f[4..12].iter().sum::<f64>();
    (f, pres / (p.r_s * temp))
}

pub fn generate_snapshot(mesh: &Mesh, t: f64, params: &SurrogateParams) -> Result<Snapshot> {
    if mesh.p != P_FINE {
        return Err(Error::UnsupportedOrder {
            found: mesh.p,
            expected: P_FINE,
        });
    }
    let eff = params.at_time(t);
    let mut data = Vec::with_capacity(mesh.n_elements() * mesh.points_per_element() * N_FEATURES);
    for e in 0..mesh.n_elements() {
        for [x, y] in mesh.element_gll_coords(e)? {
            data.extend_from_slice(&eval_point(x, y, t, &eff).0);
        }
    }
    let names = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    Snapshot::new(mesh, t, names, data)
}

pub fn snapshot_file_name(i: usize) -> String {
    format!("snap_{i:06}.srgt")
}

pub const PARAMS_FILE: &str = "params.cfg";

/// Writes `n_snap` snapshots at `t = i * dt` plus `params.cfg` into `out_dir`.
pub fn generate_series(
    mesh: &Mesh,
    n_snap: usize,
    dt: f64,
    params: &SurrogateParams,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    if n_snap == 0 {
        return Err(Error::Config("need at least one snapshot".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    params.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(n_snap);
    for i in 0..n_snap {
        let s = generate_snapshot(mesh, i as f64 * dt, params)?;
        let path = out_dir.join(snapshot_file_name(i));
        write_snapshot(&s, &path)?;
        paths.push(path);
    }
    params.to_config().save(out_dir.join(PARAMS_FILE))?;
    Ok(paths)
}
