//! Forward, backward, and posterior passes over an observation record.
//!
//! Between events the scaled forward vector solves a linear ODE whose
//! matrix depends on the symbol in force; at each event it is multiplied by
//! an event matrix and renormalized, with the absorbed factor logged. The
//! backward vector solves the matching adjoint equations on the same grid
//! and reuses the forward event factors, so the pointwise product of the
//! two stored vectors stays well scaled over arbitrarily long windows.
//!
//! In continuous mode the segment matrix is `D + (Q - D) R(y)` and the
//! event matrix `(Q - D) R(y)`, where `D` is the diagonal of `Q` and `R(y)`
//! the diagonal of symbol-`y` emission probabilities: the state can only
//! hold while the symbol holds, and every symbol change certifies a jump.
//! In discrete mode the segment matrix is `Q` itself and an observation at
//! a scheduled time multiplies by `R(y)`.

use crate::jump::grid::{GridSpec, TimeGrid};
use crate::jump::model::{JumpHmmModel, JumpObservationPath, ObsMode};
use crate::{Error, Result};

/// Rescale whenever the running vector's L1 norm leaves this range.
const NORM_MIN: f64 = 1e-150;
const NORM_MAX: f64 = 1e150;

/// Forward pass output: scaled vectors, per-point log scale, and the
/// pseudo-log-likelihood of the record.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub grid: TimeGrid,
    /// Scaled forward vectors, row-major `n_points x n_states`.
    pub alpha: Vec<f64>,
    /// Log of the factor scaled out of `alpha` at each grid point.
    pub log_scale: Vec<f64>,
    /// `ln(sum alpha(t_end)) + log_scale(t_end)`.
    pub loglik: f64,
}

/// Backward pass output on the same grid as a forward pass.
#[derive(Clone, Debug)]
pub struct BackwardPass {
    pub grid: TimeGrid,
    /// Scaled backward vectors, row-major `n_points x n_states`.
    pub beta: Vec<f64>,
    /// Log of the factor scaled out of `beta` at each grid point.
    pub log_scale: Vec<f64>,
    /// Forward event factors this pass consumed, one per segment with an
    /// entry event; checked when combining the passes.
    pub(crate) event_factors: Vec<f64>,
}

/// Combined smoothing result.
#[derive(Clone, Debug)]
pub struct ScaledPosteriorGrid {
    pub grid: TimeGrid,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_scale_fwd: Vec<f64>,
    pub log_scale_bwd: Vec<f64>,
    /// Posterior state probabilities, row-major `n_points x n_states`.
    pub rho: Vec<f64>,
    pub loglik: f64,
}

impl ScaledPosteriorGrid {
    /// Posterior distribution at grid point `k`.
    pub fn rho_at(&self, k: usize) -> &[f64] {
        let n = self.grid.n_states;
        &self.rho[k * n..(k + 1) * n]
    }

    /// Largest relative drift of the scale-corrected product of forward and
    /// backward vectors across the grid. Exact smoothing keeps this product
    /// constant, so the drift measures accumulated integration error.
    pub fn conservation_drift(&self) -> f64 {
        let g0 = self.log_product(0);
        let mut worst: f64 = 0.0;
        for k in 1..self.grid.n_points() {
            worst = worst.max((self.log_product(k) - g0).abs());
        }
        // For small drifts |exp(d) - 1| is within a whisker of |d|.
        worst
    }

    fn log_product(&self, k: usize) -> f64 {
        let n = self.grid.n_states;
        let dot: f64 = (0..n)
            .map(|i| self.alpha[k * n + i] * self.beta[k * n + i])
            .sum();
        dot.ln() + self.log_scale_fwd[k] + self.log_scale_bwd[k]
    }
}

/// Workspace holding the segment and event matrices for one symbol, in both
/// row-major and column-major layout so either orientation multiplies with
/// unit stride.
struct Dynamics {
    n: usize,
    /// Segment matrix by columns: `seg_cols[j*n + i] = M[i][j]`.
    seg_cols: Vec<f64>,
    /// Segment matrix by rows: `seg_rows[i*n + j] = M[i][j]`.
    seg_rows: Vec<f64>,
    /// Event matrix by columns.
    evt_cols: Vec<f64>,
    /// Event matrix by rows.
    evt_rows: Vec<f64>,
}

impl Dynamics {
    fn new(model: &JumpHmmModel, mode: ObsMode, symbol: Option<usize>) -> Self {
        let n = model.n_states();
        let q = model.q();
        let r = model.r();
        let mut seg = vec![0.0; n * n];
        let mut evt = vec![0.0; n * n];
        match mode {
            ObsMode::Continuous => {
                let y = symbol.expect("continuous segments carry a symbol");
                for i in 0..n {
                    for j in 0..n {
                        let jump = if i == j { 0.0 } else { q[(i, j)] * r[(j, y)] };
                        evt[i * n + j] = jump;
                        seg[i * n + j] = jump + if i == j { q[(i, i)] } else { 0.0 };
                    }
                }
            }
            ObsMode::Discrete => {
                for i in 0..n {
                    for j in 0..n {
                        seg[i * n + j] = q[(i, j)];
                    }
                }
                if let Some(y) = symbol {
                    for i in 0..n {
                        evt[i * n + i] = r[(i, y)];
                    }
                }
            }
        }
        let transpose = |m: &[f64]| {
            let mut t = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    t[j * n + i] = m[i * n + j];
                }
            }
            t
        };
        Dynamics {
            n,
            seg_cols: transpose(&seg),
            seg_rows: seg.clone(),
            evt_cols: transpose(&evt),
            evt_rows: evt,
        }
    }

    /// Event matrix for a discrete-mode observation with symbol `y`.
    fn discrete_event(model: &JumpHmmModel, y: usize) -> Self {
        Self::new(model, ObsMode::Discrete, Some(y))
    }

    /// `out = x M` (row vector times segment matrix).
    fn row_times_seg(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.n {
            let col = &self.seg_cols[j * self.n..(j + 1) * self.n];
            out[j] = x.iter().zip(col).map(|(a, b)| a * b).sum();
        }
    }

    /// `out = M x` (segment matrix times column vector).
    fn seg_times_col(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.seg_rows[i * self.n..(i + 1) * self.n];
            out[i] = x.iter().zip(row).map(|(a, b)| a * b).sum();
        }
    }

    /// `out = x E` (row vector times event matrix).
    fn row_times_evt(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.n {
            let col = &self.evt_cols[j * self.n..(j + 1) * self.n];
            out[j] = x.iter().zip(col).map(|(a, b)| a * b).sum();
        }
    }

    /// `out = E x` (event matrix times column vector).
    fn evt_times_col(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.evt_rows[i * self.n..(i + 1) * self.n];
            out[i] = x.iter().zip(row).map(|(a, b)| a * b).sum();
        }
    }
}

/// One classical Runge-Kutta step of `x' = dir * (x M)` or `x' = dir * (M x)`.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn step<F>(&mut self, x: &mut [f64], h: f64, mut deriv: F)
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let n = x.len();
        deriv(x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        deriv(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        deriv(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        deriv(&self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// Renormalizes `x` when its L1 norm has left the safe range, returning the
/// log factor absorbed into the running scale.
fn maybe_rescale(x: &mut [f64]) -> f64 {
    let norm = l1_norm(x);
    if norm > NORM_MIN && norm < NORM_MAX {
        return 0.0;
    }
    let ln = norm.ln();
    let inv = 1.0 / norm;
    for v in x.iter_mut() {
        *v *= inv;
    }
    ln
}

/// Runs the forward pass for `obs` under `model` on the grid induced by
/// `spec`.
///
/// # Errors
///
/// Rejects model/record dimension mismatches and reports
/// [`Error::ImpossibleEvidence`] with the offending event time when the
/// record has zero probability under the model.
pub fn forward_pass(
    model: &JumpHmmModel,
    obs: &JumpObservationPath,
    spec: &GridSpec,
) -> Result<ForwardPass> {
    check_dimensions(model, obs)?;
    let grid = TimeGrid::build(obs, spec, model.n_states())?;
    let n = model.n_states();
    let n_points = grid.n_points();
    let mut alpha = vec![0.0; n_points * n];
    let mut log_scale = vec![0.0; n_points];

    let mut x = vec![0.0; n];
    let mut scale;
    match grid.mode {
        ObsMode::Continuous => {
            let y0 = grid.segments[0].active_symbol.expect("initial symbol");
            for i in 0..n {
                x[i] = model.pi0()[i] * model.r()[(i, y0)];
            }
        }
        ObsMode::Discrete => {
            for i in 0..n {
                x[i] = model.pi0()[i];
            }
        }
    }
    let norm = l1_norm(&x);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ImpossibleEvidence { time: 0.0 });
    }
    for v in x.iter_mut() {
        *v /= norm;
    }
    scale = norm.ln();

    let mut rk4 = Rk4::new(n);
    let mut evt_out = vec![0.0; n];
    for (s, seg) in grid.segments.iter().enumerate() {
        if s > 0 {
            if let Some(y) = seg.entry_symbol {
                let dyn_evt = match grid.mode {
                    ObsMode::Continuous => Dynamics::new(model, grid.mode, Some(y)),
                    ObsMode::Discrete => Dynamics::discrete_event(model, y),
                };
                dyn_evt.row_times_evt(&x, &mut evt_out);
                let norm = l1_norm(&evt_out);
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::ImpossibleEvidence { time: seg.t0 });
                }
                for (xv, ev) in x.iter_mut().zip(&evt_out) {
                    *xv = ev / norm;
                }
                scale += norm.ln();
            }
        }
        store(&mut alpha, &mut log_scale, seg.first, &x, scale, n);
        if seg.n_points > 1 {
            let dynamics = Dynamics::new(model, grid.mode, seg.active_symbol);
            for k in 1..seg.n_points {
                rk4.step(&mut x, seg.step, |v, out| dynamics.row_times_seg(v, out));
                scale += maybe_rescale(&mut x);
                store(&mut alpha, &mut log_scale, seg.first + k, &x, scale, n);
            }
        }
    }

    let last = n_points - 1;
    let tail_sum: f64 = alpha[last * n..(last + 1) * n].iter().sum();
    if !(tail_sum > 0.0) || !tail_sum.is_finite() {
        return Err(Error::NonFinite {
            what: "forward vector".into(),
            time: *grid.times.last().unwrap(),
        });
    }
    let loglik = tail_sum.ln() + log_scale[last];
    Ok(ForwardPass {
        grid,
        alpha,
        log_scale,
        loglik,
    })
}

/// Runs the backward pass on the grid of an existing forward pass, reusing
/// its event rescaling factors.
pub fn backward_pass(
    model: &JumpHmmModel,
    obs: &JumpObservationPath,
    fwd: &ForwardPass,
) -> Result<BackwardPass> {
    check_dimensions(model, obs)?;
    let grid = fwd.grid.clone();
    let n = model.n_states();
    let n_points = grid.n_points();
    let mut beta = vec![0.0; n_points * n];
    let mut log_scale = vec![0.0; n_points];
    let mut event_factors = Vec::new();

    let mut x = vec![1.0; n];
    let mut scale = 0.0;
    let mut rk4 = Rk4::new(n);
    let mut evt_out = vec![0.0; n];
    for (s, seg) in grid.segments.iter().enumerate().rev() {
        store(&mut beta, &mut log_scale, seg.last(), &x, scale, n);
        if seg.n_points > 1 {
            let dynamics = Dynamics::new(model, grid.mode, seg.active_symbol);
            for k in (0..seg.n_points - 1).rev() {
                // beta' = -M beta; integrating in reverse time flips the sign.
                rk4.step(&mut x, seg.step, |v, out| dynamics.seg_times_col(v, out));
                scale += maybe_rescale(&mut x);
                store(&mut beta, &mut log_scale, seg.first + k, &x, scale, n);
            }
        }
        if s > 0 {
            if let Some(y) = seg.entry_symbol {
                let dyn_evt = match grid.mode {
                    ObsMode::Continuous => Dynamics::new(model, grid.mode, Some(y)),
                    ObsMode::Discrete => Dynamics::discrete_event(model, y),
                };
                dyn_evt.evt_times_col(&x, &mut evt_out);
                // Forward absorbed exp(log_kappa) at this event; the paired
                // backward update divides by the same factor.
                let pre = seg.first - 1;
                let log_kappa = fwd.log_scale[seg.first] - fwd.log_scale[pre];
                event_factors.push(log_kappa);
                let gain = log_kappa.exp();
                for (xv, ev) in x.iter_mut().zip(&evt_out) {
                    *xv = ev * gain;
                }
                scale -= log_kappa;
                if !l1_norm(&x).is_finite() {
                    return Err(Error::NonFinite {
                        what: "backward vector".into(),
                        time: seg.t0,
                    });
                }
                scale += maybe_rescale(&mut x);
            }
        }
    }
    event_factors.reverse();
    Ok(BackwardPass {
        grid,
        beta,
        log_scale,
        event_factors,
    })
}

/// Combines matching forward and backward passes into the posterior.
///
/// # Errors
///
/// Rejects passes computed on different grids or with different event
/// rescaling factors.
pub fn posterior(fwd: &ForwardPass, bwd: &BackwardPass) -> Result<ScaledPosteriorGrid> {
    if fwd.grid != bwd.grid {
        return Err(Error::GridMismatch(
            "forward and backward passes use different grids".into(),
        ));
    }
    let expected: Vec<f64> = fwd
        .grid
        .segments
        .iter()
        .enumerate()
        .filter(|(s, seg)| *s > 0 && seg.entry_symbol.is_some())
        .map(|(_, seg)| fwd.log_scale[seg.first] - fwd.log_scale[seg.first - 1])
        .collect();
    if expected != bwd.event_factors {
        return Err(Error::GridMismatch(
            "backward pass used different event rescaling factors".into(),
        ));
    }
    let n = fwd.grid.n_states;
    let n_points = fwd.grid.n_points();
    let mut rho = vec![0.0; n_points * n];
    for k in 0..n_points {
        let a = &fwd.alpha[k * n..(k + 1) * n];
        let b = &bwd.beta[k * n..(k + 1) * n];
        let mut dot = 0.0;
        for i in 0..n {
            dot += a[i] * b[i];
        }
        if !(dot > 0.0) || !dot.is_finite() {
            return Err(Error::NonFinite {
                what: "posterior normalizer".into(),
                time: fwd.grid.times[k],
            });
        }
        for i in 0..n {
            rho[k * n + i] = (a[i] * b[i] / dot).max(0.0);
        }
    }
    Ok(ScaledPosteriorGrid {
        grid: fwd.grid.clone(),
        alpha: fwd.alpha.clone(),
        beta: bwd.beta.clone(),
        log_scale_fwd: fwd.log_scale.clone(),
        log_scale_bwd: bwd.log_scale.clone(),
        rho,
        loglik: fwd.loglik,
    })
}

/// Convenience wrapper running both passes and the combination.
pub fn smooth(
    model: &JumpHmmModel,
    obs: &JumpObservationPath,
    spec: &GridSpec,
) -> Result<ScaledPosteriorGrid> {
    let fwd = forward_pass(model, obs, spec)?;
    let bwd = backward_pass(model, obs, &fwd)?;
    posterior(&fwd, &bwd)
}

fn check_dimensions(model: &JumpHmmModel, obs: &JumpObservationPath) -> Result<()> {
    for &(t, y) in obs.events() {
        if y >= model.n_symbols() {
            return Err(Error::InvalidObservations(format!(
                "symbol {y} at time {t} out of range for {} symbols",
                model.n_symbols()
            )));
        }
    }
    Ok(())
}

fn store(dst: &mut [f64], scales: &mut [f64], point: usize, x: &[f64], scale: f64, n: usize) {
    dst[point * n..(point + 1) * n].copy_from_slice(x);
    scales[point] = scale;
}
