//! Shared scalar and dense-matrix helpers.
//!
//! Everything here operates on flat row-major `f64` slices. The shapes are
//! tiny (desk-scale encoders), so plain loops beat pulling in a linear
//! algebra stack.

use serde::{Deserialize, Serialize};

/// Epsilon used by every layer normalization in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-6;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// GELU activation, exact error-function form: `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Derivative of the exact GELU: `Phi(x) + x * phi(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

fn gelu_tanh(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_tanh_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Which GELU variant to run. `Exact` is the default everywhere; the tanh
/// approximation deviates from it by at most ~1e-3 near |x| = 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeluKind {
    #[default]
    Exact,
    Tanh,
}

impl GeluKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            GeluKind::Exact => gelu(x),
            GeluKind::Tanh => gelu_tanh(x),
        }
    }

    pub fn grad(self, x: f64) -> f64 {
        match self {
            GeluKind::Exact => gelu_grad(x),
            GeluKind::Tanh => gelu_tanh_grad(x),
        }
    }
}

/// Mean and inverse standard deviation (biased variance) of one token.
pub fn norm_stats(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// LayerNorm over one token: `gain * (x - mean) / sqrt(var + eps) + bias`.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) {
    let (mean, inv_std) = norm_stats(x);
    for i in 0..x.len() {
        out[i] = gain[i] * (x[i] - mean) * inv_std + bias[i];
    }
}

/// `y = x W + b` with `x: n x m`, `w: m x q` (row-major, input-major), `b: q`.
pub fn matmul_bias(x: &[f64], n: usize, m: usize, w: &[f64], b: &[f64], q: usize, y: &mut [f64]) {
    debug_assert_eq!(x.len(), n * m);
    debug_assert_eq!(w.len(), m * q);
    debug_assert_eq!(b.len(), q);
    debug_assert_eq!(y.len(), n * q);
    for t in 0..n {
        let row = &x[t * m..(t + 1) * m];
        let out = &mut y[t * q..(t + 1) * q];
        out.copy_from_slice(b);
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * q..(i + 1) * q];
            for j in 0..q {
                out[j] += xi * wrow[j];
            }
        }
    }
}

/// `dw += x^T dy` with `x: n x m`, `dy: n x q`, `dw: m x q`.
pub fn accumulate_weight_grad(x: &[f64], n: usize, m: usize, dy: &[f64], q: usize, dw: &mut [f64]) {
    debug_assert_eq!(dw.len(), m * q);
    for t in 0..n {
        let row = &x[t * m..(t + 1) * m];
        let g = &dy[t * q..(t + 1) * q];
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &mut dw[i * q..(i + 1) * q];
            for j in 0..q {
                wrow[j] += xi * g[j];
            }
        }
    }
}

/// Column sums of `dy: n x q` into `db: q`.
pub fn accumulate_bias_grad(dy: &[f64], n: usize, q: usize, db: &mut [f64]) {
    debug_assert_eq!(db.len(), q);
    for t in 0..n {
        let g = &dy[t * q..(t + 1) * q];
        for j in 0..q {
            db[j] += g[j];
        }
    }
}

/// `dx = dy W^T` with `dy: n x q`, `w: m x q`, `dx: n x m`.
pub fn matmul_weight_transposed(dy: &[f64], n: usize, q: usize, w: &[f64], m: usize, dx: &mut [f64]) {
    debug_assert_eq!(dx.len(), n * m);
    for t in 0..n {
        let g = &dy[t * q..(t + 1) * q];
        let out = &mut dx[t * m..(t + 1) * m];
        for i in 0..m {
            let wrow = &w[i * q..(i + 1) * q];
            let mut acc = 0.0;
            for j in 0..q {
                acc += g[j] * wrow[j];
            }
            out[i] = acc;
        }
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_inplace(row: &mut [f64]) {
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

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gelu_zero_is_zero() {
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(GeluKind::Tanh.apply(0.0), 0.0);
    }

    #[test]
    fn gelu_tanh_stays_close_to_exact() {
        let mut max_dev: f64 = 0.0;
        let mut x = -6.0;
        while x <= 6.0 {
            max_dev = max_dev.max((gelu(x) - gelu_tanh(x)).abs());
            x += 1e-3;
        }
        assert!(max_dev < 2e-3, "max deviation {max_dev}");
        assert!(max_dev > 1e-4, "variants should actually differ");
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for kind in [GeluKind::Exact, GeluKind::Tanh] {
            for &x in &[-3.0, -0.7, 0.0, 0.3, 1.9, 4.2] {
                let h = 1e-6;
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                assert_relative_eq!(kind.grad(x), fd, epsilon = 1e-8, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn layer_norm_centers_and_scales() {
        // mean ~0 and variance ~1 before gain/bias
        let x = [0.3, -1.2, 4.5, 2.2, -0.4, 0.0, 7.1, -3.3];
        let gain = [1.0; 8];
        let bias = [0.0; 8];
        let mut out = [0.0; 8];
        layer_norm(&x, &gain, &bias, &mut out);
        let mean = out.iter().sum::<f64>() / 8.0;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut row = [1.0, 2.0, 3.0, -500.0, 700.0];
        softmax_inplace(&mut row);
        assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn matmul_bias_small_case() {
        // [1 2] [1 0]   [5 4]       [6 14]
        // [3 4] [2 2] = [11 8], +b= [12 18]
        let x = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0, 0.0, 2.0, 2.0];
        let b = [1.0, 10.0];
        let mut y = [0.0; 4];
        matmul_bias(&x, 2, 2, &w, &b, 2, &mut y);
        assert_eq!(y, [6.0, 14.0, 12.0, 18.0]);
    }
}
