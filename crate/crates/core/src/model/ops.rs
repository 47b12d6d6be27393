//! Dense row-major kernels with hand-written backward passes.

/// Strided matrix view: element `(i, j)` lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    pub fn offset(self, start: usize) -> Self {
        Self {
            data: &self.data[start..],
            ..self
        }
    }
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c = alpha * a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View,
    b: View,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    assert!(span(m, k, a.rs, a.cs) <= a.data.len(), "gemm: a out of bounds");
    assert!(span(k, n, b.rs, b.cs) <= b.data.len(), "gemm: b out of bounds");
    assert!(span(m, n, rsc, csc) <= c.len(), "gemm: c out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `y = x w + b` for `rows` rows; `w` is `n_in x n_out`.
pub(crate) fn linear_forward(x: &[f64], w: &[f64], b: &[f64], rows: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * n_out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(rows, n_in, n_out, 1.0, View::rows(x, n_in), View::rows(w, n_out), 1.0, &mut y, n_out, 1);
    y
}

/// Accumulates `dw += x^T dy`, `db += sum_rows dy`; returns `dx = dy w^T` when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    want_dx: bool,
) -> Option<Vec<f64>> {
    gemm(n_in, rows, n_out, 1.0, View::transposed(x, n_in), View::rows(dy, n_out), 1.0, dw, n_out, 1);
    for row in dy.chunks_exact(n_out) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * n_in];
        gemm(rows, n_out, n_in, 1.0, View::rows(dy, n_out), View::transposed(w, n_out), 0.0, &mut dx, n_in, 1);
        dx
    })
}

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_forward(x: &[f64], gamma: &[f64], beta: &[f64], width: usize) -> (Vec<f64>, LnCache) {
    let rows = x.len() / width;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..width {
            let h = (row[j] - mean) * rs;
            xhat[r * width + j] = h;
            y[r * width + j] = gamma[j] * h + beta[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    width: usize,
) -> Vec<f64> {
    let rows = dy.len() / width;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; width];
    for r in 0..rows {
        let span = r * width..(r + 1) * width;
        let (dyr, xh) = (&dy[span.clone()], &cache.xhat[span.clone()]);
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for j in 0..width {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            dxhat[j] = dyr[j] * gamma[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d /= width as f64;
        mean_dx /= width as f64;
        let rs = cache.rstd[r];
        for (j, out) in dx[span].iter_mut().enumerate() {
            *out = rs * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `sigmoid(2u)` with `u = c (x + a x^3)`, which equals `(1 + tanh u) / 2`.
pub(crate) fn gelu_gate(x: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * GELU_C * (x + GELU_A * x * x * x)).exp())
}

/// tanh approximation of GELU.
#[cfg(test)]
pub(crate) fn gelu(x: f64) -> f64 {
    x * gelu_gate(x)
}

/// Derivative of [`gelu`] given the cached gate `s = gelu_gate(x)`.
pub(crate) fn gelu_grad_gated(x: f64, s: f64) -> f64 {
    s + 2.0 * x * s * (1.0 - s) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    gelu_grad_gated(x, gelu_gate(x))
}

/// In-place numerically stable row softmax.
pub(crate) fn softmax_rows(x: &mut [f64], width: usize) {
    for row in x.chunks_exact_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.7).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, View::rows(&a, k), View::rows(&b, n), 0.0, &mut c, n, 1);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-13);
        }
        // (b^T a^T)^T == a b, via transposed views and a transposed output
        let mut ct = vec![0.0; m * n];
        gemm(n, k, m, 1.0, View::transposed(&b, n), View::transposed(&a, k), 0.0, &mut ct, 1, n);
        for (x, y) in ct.iter().zip(&want) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = vec![1.0, 2.0, 3.0, 1000.0, 1000.0, -1000.0];
        softmax_rows(&mut x, 3);
        for row in x.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!((x[3] - 0.5).abs() < 1e-15);
        let mut single = vec![42.0];
        softmax_rows(&mut single, 1);
        assert_eq!(single, vec![1.0]);
    }

    #[test]
    fn gelu_matches_tanh_form() {
        for i in -400..=400 {
            let x = i as f64 * 0.05;
            let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
            let want = 0.5 * x * (1.0 + t);
            assert!((gelu(x) - want).abs() <= 1e-15 * (1.0 + want.abs()), "x={x}");
        }
        assert_eq!(gelu(-1e3), 0.0);
        assert_eq!(gelu(1e3), 1e3);
    }

    #[test]
    fn gelu_derivative_matches_fd() {
        for i in -40..=40 {
            let x = i as f64 * 0.15;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
        assert_eq!(gelu(0.0), 0.0);
    }
}
