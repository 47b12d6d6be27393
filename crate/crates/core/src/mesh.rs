//! Square spectral-element meshes, GLL node geometry, p=3 to p=1 masking and
//! the snapshot file format.
//!
//! Within an element, GLL points are stored in lexicographic tensor-product
//! order with the x index fastest: point `j = jy * (p + 1) + jx`. Snapshot data
//! is element-major, then GLL point, then feature (feature index fastest).

use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::{P_COARSE, P_FINE};

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0) * x * p - k * p_prev) / (k + 1.0);
        p_prev = p;
        p = next;
    }
    // P'_n from P_n and P_{n-1}; only used at interior points where x^2 != 1.
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Gauss-Lobatto-Legendre nodes on [-1, 1] for polynomial order `p`.
///
/// Returns the `p + 1` roots of `(1 - x^2) P'_p(x)` in ascending order. Interior
/// roots come from Newton iteration on `P'_p` seeded with Chebyshev-Gauss-Lobatto
/// nodes; the set is mirrored so that `node[i] == -node[p - i]` exactly.
pub fn gll_nodes(p: usize) -> Result<Vec<f64>> {
    if p < 1 {
        return Err(Error::InvalidOrder(p));
    }
    let n = p + 1;
    let mut nodes = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[p] = 1.0;
    let pf = p as f64;
    for i in 1..(n / 2) {
        let mut x = -(std::f64::consts::PI * i as f64 / pf).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (pp, dp) = legendre_with_derivative(p, x);
            // P''_p from the Legendre ODE.
            let ddp = (2.0 * x * dp - pf * (pf + 1.0) * pp) / (1.0 - x * x);
            let step = dp / ddp;
            x -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        nodes[i] = x;
        nodes[p - i] = -x;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(nodes)
}

/// A rectangular array of square spectral elements of order `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nex: usize,
    pub ney: usize,
    pub lx: f64,
    pub ly: f64,
    pub p: usize,
    /// Element edge length.
    pub h: f64,
    /// Row-major element centroids, element `e = iy * nex + ix`.
    pub centroids: Vec<[f64; 2]>,
    pub gll_1d: Vec<f64>,
}

pub fn build_mesh(nex: usize, ney: usize, lx: f64, ly: f64, p: usize) -> Result<Mesh> {
    if nex == 0 || ney == 0 {
        return Err(Error::Geometry(format!(
            "element counts must be positive (nex={nex}, ney={ney})"
        )));
    }
    if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
        return Err(Error::Geometry(format!(
            "domain lengths must be positive and finite (Lx={lx}, Ly={ly})"
        )));
    }
    let hx = lx / nex as f64;
    let hy = ly / ney as f64;
    if (hx - hy).abs() > 1e-12 * hx.max(hy) {
        return Err(Error::Geometry(format!(
            "elements are not square: Lx/nex = {hx}, Ly/ney = {hy}"
        )));
    }
    let gll_1d = gll_nodes(p)?;
    let h = hx;
    let centroids = (0..ney)
        .flat_map(|iy| (0..nex).map(move |ix| [(ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h]))
        .collect();
    Ok(Mesh {
        nex,
        ney,
        lx,
        ly,
        p,
        h,
        centroids,
        gll_1d,
    })
}

impl Mesh {
    pub fn n_elements(&self) -> usize {
        self.nex * self.ney
    }

    pub fn points_per_element(&self) -> usize {
        (self.p + 1) * (self.p + 1)
    }

    /// Physical coordinates of the element's GLL points in lexicographic order.
    pub fn element_gll_coords(&self, e: usize) -> Result<Vec<[f64; 2]>> {
        let [cx, cy] = *self.centroids.get(e).ok_or(Error::Index {
            index: e,
            len: self.n_elements(),
        })?;
        let half = 0.5 * self.h;
        let mut coords = Vec::with_capacity(self.points_per_element());
        for &gy in &self.gll_1d {
            for &gx in &self.gll_1d {
                coords.push([cx + half * gx, cy + half * gy]);
            }
        }
        Ok(coords)
    }

    /// Same mesh at a different polynomial order (centroids are unchanged).
    pub fn with_order(&self, p: usize) -> Result<Mesh> {
        build_mesh(self.nex, self.ney, self.lx, self.ly, p)
    }
}

/// Lexicographic fine indices that coincide with the p=1 GLL points.
pub const CORNER_INDICES: [usize; 4] = [0, 3, 12, 15];

/// Masks a p=3 element field (16 points x `nf` features) down to its four
/// corner points, which are exactly the p=1 GLL points.
pub fn coarsen_element(fine: &[f64], nf: usize) -> Result<Vec<f64>> {
    let n_fine = (P_FINE + 1) * (P_FINE + 1);
    if nf == 0 || fine.len() != n_fine * nf {
        return Err(Error::Shape(format!(
            "expected a p=3 element field of {} values, got {}",
            n_fine * nf,
            fine.len()
        )));
    }
    let mut out = Vec::with_capacity(4 * nf);
    for &j in &CORNER_INDICES {
        out.extend_from_slice(&fine[j * nf..(j + 1) * nf]);
    }
    Ok(out)
}

/// One time instant of an element field on a square mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub nex: usize,
    pub ney: usize,
    pub p: usize,
    pub lx: f64,
    pub ly: f64,
    pub time: f64,
    pub feature_names: Vec<String>,
    pub data: Vec<f64>,
}

impl Snapshot {
    /// Validates the data length and finiteness.
    pub fn new(
        mesh: &Mesh,
        time: f64,
        feature_names: Vec<String>,
        data: Vec<f64>,
    ) -> Result<Snapshot> {
        let s = Snapshot {
            nex: mesh.nex,
            ney: mesh.ney,
            p: mesh.p,
            lx: mesh.lx,
            ly: mesh.ly,
            time,
            feature_names,
            data,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.expected_len() {
            return Err(Error::Shape(format!(
                "snapshot data has {} values, expected {}",
                self.data.len(),
                self.expected_len()
            )));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { index }.into());
        }
        Ok(())
    }

    pub fn nf(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_elements(&self) -> usize {
        self.nex * self.ney
    }

    pub fn points_per_element(&self) -> usize {
        (self.p + 1) * (self.p + 1)
    }

    pub fn element_len(&self) -> usize {
        self.points_per_element() * self.nf()
    }

    fn expected_len(&self) -> usize {
        self.n_elements() * self.element_len()
    }

    pub fn element(&self, e: usize) -> &[f64] {
        let n = self.element_len();
        &self.data[e * n..(e + 1) * n]
    }

    pub fn element_mut(&mut self, e: usize) -> &mut [f64] {
        let n = self.element_len();
        &mut self.data[e * n..(e + 1) * n]
    }

    pub fn value(&self, e: usize, point: usize, feature: usize) -> f64 {
        self.data[(e * self.points_per_element() + point) * self.nf() + feature]
    }

    pub fn mesh(&self) -> Result<Mesh> {
        build_mesh(self.nex, self.ney, self.lx, self.ly, self.p)
    }

    /// True when both snapshots describe the same mesh geometry, feature set and time.
    pub fn same_layout(&self, other: &Snapshot) -> bool {
        self.nex == other.nex
            && self.ney == other.ney
            && self.lx == other.lx
            && self.ly == other.ly
            && self.feature_names == other.feature_names
    }

    /// Iterator over every point's feature vector.
    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.nf())
    }
}

/// HR to LR masking of a whole p=3 snapshot.
pub fn coarsen_snapshot(s: &Snapshot) -> Result<Snapshot> {
    if s.p != P_FINE {
        return Err(Error::UnsupportedOrder {
            found: s.p,
            expected: P_FINE,
        });
    }
    let nf = s.nf();
    let mut data = Vec::with_capacity(s.n_elements() * 4 * nf);
    for e in 0..s.n_elements() {
        data.extend(coarsen_element(s.element(e), nf)?);
    }
    Ok(Snapshot {
        p: P_COARSE,
        data,
        feature_names: s.feature_names.clone(),
        ..*s
    })
}

const SNAPSHOT_MAGIC: &str = "SRGTSNAP";
const SNAPSHOT_VERSION: u32 = 1;

pub fn encode_snapshot(s: &Snapshot) -> Result<Vec<u8>> {
    s.validate()?;
    let mut w = Writer::with_capacity(64 + s.data.len() * 8);
    w.bytes(SNAPSHOT_MAGIC.as_bytes());
    w.u32(SNAPSHOT_VERSION);
    for v in [s.nex, s.ney, s.p, s.nf()] {
        w.u32(u32::try_from(v).map_err(|_| Error::Shape(format!("{v} exceeds u32")))?);
    }
    w.f64(s.lx);
    w.f64(s.ly);
    w.f64(s.time);
    for name in &s.feature_names {
        if !name.is_ascii() {
            return Err(Error::Config(format!("feature name {name:?} is not ASCII")));
        }
        w.short_str(name);
    }
    w.f64s(&s.data);
    Ok(w.into_inner())
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let mut r = Reader::new(bytes);
    r.magic(SNAPSHOT_MAGIC)?;
    r.version(SNAPSHOT_VERSION)?;
    let nex = r.u32()? as usize;
    let ney = r.u32()? as usize;
    let p = r.u32()? as usize;
    let nf = r.u32()? as usize;
    let lx = r.f64()?;
    let ly = r.f64()?;
    let time = r.f64()?;
    let mut feature_names = Vec::with_capacity(nf);
    for _ in 0..nf {
        feature_names.push(r.short_str()?);
    }
    let n = nex
        .checked_mul(ney)
        .and_then(|v| v.checked_mul((p + 1) * (p + 1)))
        .and_then(|v| v.checked_mul(nf))
        .ok_or_else(|| FormatError::CorruptRecord("header sizes overflow".into()))?;
    let data = r.f64s(n)?;
    r.finish()?;
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite { index }.into());
    }
    Ok(Snapshot {
        nex,
        ney,
        p,
        lx,
        ly,
        time,
        feature_names,
        data,
    })
}

pub fn write_snapshot(s: &Snapshot, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_snapshot(s)?;
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Snapshot> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    decode_snapshot(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{FEATURE_NAMES, N_FEATURES};
    use proptest::prelude::*;

    /// Bisection on explicit `(1 - x^2) P'_p` sign changes over a fine scan.
    fn gll_oracle(p: usize) -> Vec<f64> {
        let dp = |x: f64| {
            // Derivative through the polynomial coefficients of P_p.
            let mut c_prev = vec![1.0];
            let mut c = vec![0.0, 1.0];
            for k in 1..p {
                let kf = k as f64;
                let mut next = vec![0.0; k + 2];
                for (i, v) in c.iter().enumerate() {
                    next[i + 1] += (2.0 * kf + 1.0) * v / (kf + 1.0);
                }
                for (i, v) in c_prev.iter().enumerate() {
                    next[i] -= kf * v / (kf + 1.0);
                }
                c_prev = c;
                c = next;
            }
            let coeffs = if p == 0 { c_prev } else { c };
            coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, a)| i as f64 * a * x.powi(i as i32 - 1))
                .sum::<f64>()
        };
        let mut roots = vec![-1.0];
        let n_scan = 20_000;
        for i in 0..n_scan {
            let a = -1.0 + 2.0 * i as f64 / n_scan as f64 + 1e-9;
            let b = -1.0 + 2.0 * (i + 1) as f64 / n_scan as f64 + 1e-9;
            if b >= 1.0 {
                break;
            }
            let (mut lo, mut hi) = (a, b);
            if dp(lo) * dp(hi) > 0.0 {
                continue;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if dp(lo) * dp(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        roots.push(1.0);
        roots
    }

    #[test]
    fn gll_low_orders() {
        assert_eq!(gll_nodes(1).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(gll_nodes(2).unwrap(), vec![-1.0, 0.0, 1.0]);
        let g3 = gll_nodes(3).unwrap();
        let r = 1.0 / 5f64.sqrt();
        let expect = [-1.0, -r, r, 1.0];
        for (a, b) in g3.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        assert!((g3[1] + 0.4472135955).abs() < 1e-10);
    }

    #[test]
    fn gll_matches_bisection_oracle() {
        for p in 1..=9 {
            let got = gll_nodes(p).unwrap();
            let want = gll_oracle(p);
            assert_eq!(got.len(), want.len(), "p={p}");
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "p={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gll_symmetric_and_contains_endpoints() {
        for p in 1..=12 {
            let g = gll_nodes(p).unwrap();
            assert_eq!(g.len(), p + 1);
            assert_eq!(g[0], -1.0);
            assert_eq!(g[p], 1.0);
            for i in 0..=p {
                assert!((g[i] + g[p - i]).abs() <= 1e-14);
            }
            assert!(g.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn gll_rejects_order_zero() {
        assert!(matches!(gll_nodes(0), Err(Error::InvalidOrder(0))));
    }

    #[test]
    fn mesh_lattice() {
        let m = build_mesh(2, 1, 2.0, 1.0, 1).unwrap();
        assert_eq!(m.centroids, vec![[0.5, 0.5], [1.5, 0.5]]);
        let m = build_mesh(1, 1, 1.0, 1.0, 3).unwrap();
        assert_eq!(m.n_elements(), 1);
        assert_eq!(m.points_per_element(), 16);
        let m = build_mesh(4, 3, 2.0, 1.5, 2).unwrap();
        assert_eq!(m.centroids[4 + 2], [1.25, 0.75]);
    }

    #[test]
    fn mesh_rejects_non_square() {
        assert!(matches!(
            build_mesh(3, 2, 3.0, 1.0, 1),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn gll_coords() {
        let m = build_mesh(1, 1, 1.0, 1.0, 1).unwrap();
        assert_eq!(
            m.element_gll_coords(0).unwrap(),
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
        );
        let m = build_mesh(3, 2, 3.0, 2.0, 3).unwrap();
        let c = m.element_gll_coords(4).unwrap();
        assert_eq!(c[0], [1.0, 1.0]);
        let r = 1.0 / 5f64.sqrt();
        let [cx, cy] = m.centroids[4];
        assert!((c[5][0] - (cx - 0.5 * r)).abs() < 1e-15);
        assert!((c[5][1] - (cy - 0.5 * r)).abs() < 1e-15);
        assert!(matches!(
            m.element_gll_coords(6),
            Err(Error::Index { index: 6, len: 6 })
        ));
    }

    #[test]
    fn coarsen_picks_corners() {
        let nf = N_FEATURES;
        let fine: Vec<f64> = (0..16).flat_map(|j| vec![j as f64; nf]).collect();
        let coarse = coarsen_element(&fine, nf).unwrap();
        for (i, want) in [0.0, 3.0, 12.0, 15.0].iter().enumerate() {
            assert!(coarse[i * nf..(i + 1) * nf].iter().all(|v| v == want));
        }
        let c = coarsen_element(&vec![2.5; 16 * nf], nf).unwrap();
        assert!(c.iter().all(|&v| v == 2.5));
        assert!(matches!(coarsen_element(&[0.0; 10], nf), Err(Error::Shape(_))));
    }

    #[test]
    fn coarsen_bilinear_is_pointwise() {
        let m = build_mesh(1, 1, 2.0, 2.0, 3).unwrap();
        let fine: Vec<f64> = m
            .element_gll_coords(0)
            .unwrap()
            .iter()
            .map(|[x, y]| x + y)
            .collect();
        let c = coarsen_element(&fine, 1).unwrap();
        assert_eq!(c, vec![0.0, 2.0, 2.0, 4.0]);
    }

    fn sample_snapshot(nex: usize, ney: usize, p: usize) -> Snapshot {
        let m = build_mesh(nex, ney, nex as f64, ney as f64, p).unwrap();
        let n = m.n_elements() * m.points_per_element() * N_FEATURES;
        let data = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let names = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        Snapshot::new(&m, 1.5e-7, names, data).unwrap()
    }

    #[test]
    fn coarsen_snapshot_layout() {
        let s = sample_snapshot(1, 1, 3);
        let c = coarsen_snapshot(&s).unwrap();
        assert_eq!(c.data.len(), 52);
        assert_eq!(c.time, s.time);
        assert_eq!(c.p, 1);
        let s = sample_snapshot(3, 2, 3);
        let c = coarsen_snapshot(&s).unwrap();
        for e in 0..6 {
            for (k, &j) in CORNER_INDICES.iter().enumerate() {
                for f in 0..N_FEATURES {
                    assert_eq!(c.value(e, k, f).to_bits(), s.value(e, j, f).to_bits());
                }
            }
        }
        let coarse = sample_snapshot(2, 2, 1);
        assert!(matches!(
            coarsen_snapshot(&coarse),
            Err(Error::UnsupportedOrder { found: 1, .. })
        ));
    }

    #[test]
    fn snapshot_format_errors() {
        let s = sample_snapshot(2, 1, 1);
        let bytes = encode_snapshot(&s).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_snapshot(&bad),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));

        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(
            decode_snapshot(&bad),
            Err(Error::Format(FormatError::VersionMismatch { found: 2, .. }))
        ));

        // header claims nex=2 with a payload for one element only
        let one = sample_snapshot(1, 1, 1);
        let mut bad = encode_snapshot(&one).unwrap();
        bad[12] = 2;
        assert!(matches!(
            decode_snapshot(&bad),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            decode_snapshot(&bad),
            Err(Error::Format(FormatError::NonFinite { .. }))
        ));
    }

    #[test]
    fn snapshot_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.srgt");
        let s = sample_snapshot(3, 2, 3);
        write_snapshot(&s, &path).unwrap();
        assert_eq!(read_snapshot(&path).unwrap(), s);
        assert!(matches!(
            read_snapshot(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn snapshot_roundtrip_bit_exact(
            vals in proptest::collection::vec(-1e300f64..1e300, 2 * 4 * 2),
            time in -1.0f64..1.0,
        ) {
            let m = build_mesh(2, 1, 2.0, 1.0, 1).unwrap();
            let s = Snapshot::new(&m, time, vec!["a".into(), "bb".into()], vals).unwrap();
            let back = decode_snapshot(&encode_snapshot(&s).unwrap()).unwrap();
            prop_assert_eq!(
                back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                s.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back, s);
        }
    }
}
