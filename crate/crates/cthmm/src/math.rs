//! Small numerical helpers shared across modules: log-space reductions,
//! Gaussian log densities, quadrature, and finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

/// Natural log of `sum(exp(x))` over a slice, computed with the maximum
/// subtracted so finite inputs cannot overflow.
///
/// Returns negative infinity for an empty slice or when every entry is
/// negative infinity.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Log density of an isotropic Gaussian `N(mean, variance * I)` evaluated
/// at `x`. `x` and `mean` must have equal length and `variance` must be
/// positive; both are the caller's responsibility on this hot path.
pub fn log_gaussian_isotropic(x: &[f64], mean: &[f64], variance: f64) -> f64 {
    debug_assert_eq!(x.len(), mean.len());
    debug_assert!(variance > 0.0);
    let d = x.len() as f64;
    let mut sq = 0.0;
    for (a, b) in x.iter().zip(mean) {
        let r = a - b;
        sq += r * r;
    }
    -0.5 * d * (2.0 * std::f64::consts::PI * variance).ln() - 0.5 * sq / variance
}

/// Trapezoid rule over uniformly spaced samples with step `h`.
/// A single sample (or none) integrates to zero.
pub fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * values[0] + interior + 0.5 * values[values.len() - 1])
}

/// Step size for central finite differences at coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

/// Central finite-difference Jacobian of a vector-valued map at `x`.
/// Each column uses a step scaled by the magnitude of that coordinate.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, out_dim: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..out_dim {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Central finite-difference gradient of a scalar function at `x`.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x.len();
    let mut grad = DVector::zeros(n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        grad[j] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Symmetric part of a square matrix, used after every integration step of
/// a covariance or information matrix to suppress drift.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Inverts a square matrix, reporting the numerical rank on failure.
pub fn try_invert(m: &DMatrix<f64>, what: &str) -> crate::Result<DMatrix<f64>> {
    match m.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => Ok(inv),
        _ => Err(crate::Error::SingularMatrix {
            what: what.to_string(),
            rank: m.clone().svd(false, false).rank(1e-12 * m.amax().max(1.0)),
            dim: m.nrows(),
            matrix: m.clone(),
        }),
    }
}
