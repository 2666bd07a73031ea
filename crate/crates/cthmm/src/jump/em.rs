//! EM re-estimation of the generator from a smoothing posterior.
//!
//! Each off-diagonal rate is rescaled by the ratio of the expected number
//! of productive transitions to the expected occupation time of the source
//! state, both computed from one smoothing pass. The update is
//! multiplicative, so rates that start at zero stay at zero, and each full
//! iteration never decreases the record's pseudo-log-likelihood.

use nalgebra::DMatrix;

use crate::exec::map_collect;
use crate::jump::grid::GridSpec;
use crate::jump::model::{JumpHmmModel, JumpObservationPath, ObsMode};
use crate::jump::smoothing::{backward_pass, forward_pass, posterior, ScaledPosteriorGrid};
use crate::math::trapezoid_uniform;
use crate::Result;

/// A state whose expected occupation time falls below this floor keeps its
/// current rates and is reported as unvisited.
const VISIT_FLOOR: f64 = 1e-300;

/// One EM step: the new generator plus per-state diagnostics.
#[derive(Clone, Debug)]
pub struct EmUpdate {
    /// Re-estimated generator.
    pub q: DMatrix<f64>,
    /// Expected occupation time of each state under the posterior.
    pub state_visits: Vec<f64>,
    /// States whose rows were frozen because the posterior never visits
    /// them.
    pub frozen_states: Vec<usize>,
}

/// Options for [`fit_generator`].
#[derive(Clone, Copy, Debug)]
pub struct EmOptions {
    pub grid: GridSpec,
    /// Iteration cap.
    pub max_iters: usize,
    /// Stop when the Frobenius distance between consecutive generators
    /// falls below this.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

/// Full fit trace.
#[derive(Clone, Debug)]
pub struct EmFitReport {
    /// Generator after every iteration, starting with the initial one.
    pub q_iterates: Vec<DMatrix<f64>>,
    /// Pseudo-log-likelihood of each iterate, including the final one.
    pub loglik_history: Vec<f64>,
    /// Number of EM iterations performed.
    pub iterations: usize,
    /// Whether the tolerance was reached before the iteration cap.
    pub converged: bool,
    /// Union of states reported unvisited in any iteration.
    pub frozen_states: Vec<usize>,
}

impl EmFitReport {
    /// Final generator estimate.
    pub fn q_hat(&self) -> &DMatrix<f64> {
        self.q_iterates.last().expect("at least the initial iterate")
    }
}

/// Computes one EM update of the generator from a smoothing posterior
/// obtained under the same model.
pub fn em_update_generator(
    model: &JumpHmmModel,
    post: &ScaledPosteriorGrid,
) -> Result<EmUpdate> {
    let n = model.n_states();
    let r = model.r();
    let q = model.q();
    let grid = &post.grid;

    // Per-segment occupation integrals and transition kernels accumulate
    // independently; segments are summed in index order afterwards so the
    // result does not depend on scheduling.
    let per_segment: Vec<(Vec<f64>, Vec<f64>)> = map_collect(grid.segments.len(), |s| {
        let seg = &grid.segments[s];
        let mut den = vec![0.0; n];
        let mut num = vec![0.0; n * n];
        if seg.n_points < 2 {
            return (den, num);
        }
        let mut rho_buf = vec![0.0; seg.n_points];
        for i in 0..n {
            for (k, slot) in rho_buf.iter_mut().enumerate() {
                *slot = post.rho[(seg.first + k) * n + i];
            }
            den[i] = trapezoid_uniform(&rho_buf, seg.step);
        }
        // Trapezoid weights for the pairwise integrand a_i b_j / (a . b).
        for (k, point) in (seg.first..=seg.last()).enumerate() {
            let w = if k == 0 || k == seg.n_points - 1 {
                0.5 * seg.step
            } else {
                seg.step
            };
            let a = &post.alpha[point * n..(point + 1) * n];
            let b = &post.beta[point * n..(point + 1) * n];
            let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let inv_c = 1.0 / c;
            for i in 0..n {
                let wa = w * a[i] * inv_c;
                if wa == 0.0 {
                    continue;
                }
                for j in 0..n {
                    num[i * n + j] += (wa * b[j]).max(0.0);
                }
            }
        }
        (den, num)
    });

    let mut den = vec![0.0; n];
    let mut num = vec![0.0; n * n];
    for (d, m) in &per_segment {
        for i in 0..n {
            den[i] += d[i];
        }
        for k in 0..n * n {
            num[k] += m[k];
        }
    }

    // Attach the emission factor of each segment's symbol to the integral
    // part, and add the event terms (continuous mode only).
    let mut weighted = vec![0.0; n * n];
    match grid.mode {
        ObsMode::Continuous => {
            // Integrals need the per-segment symbol, so redo the reduction
            // with the emission factor applied per segment.
            let per_segment_sym: Vec<(usize, &(Vec<f64>, Vec<f64>))> = grid
                .segments
                .iter()
                .enumerate()
                .map(|(s, seg)| (seg.active_symbol.expect("continuous segment symbol"), &per_segment[s]))
                .collect();
            for (y, (_, m)) in per_segment_sym {
                for i in 0..n {
                    for j in 0..n {
                        weighted[i * n + j] += m[i * n + j] * r[(j, y)];
                    }
                }
            }
            for seg in grid.segments.iter().skip(1) {
                let y = match seg.entry_symbol {
                    Some(y) => y,
                    None => continue,
                };
                let entry = seg.first;
                let pre = entry - 1;
                let u = (post.log_scale_fwd[pre] + post.log_scale_bwd[entry] - post.loglik).exp();
                let a = &post.alpha[pre * n..(pre + 1) * n];
                let b = &post.beta[entry * n..(entry + 1) * n];
                for i in 0..n {
                    let ua = u * a[i];
                    if ua == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        weighted[i * n + j] += (ua * b[j] * r[(j, y)]).max(0.0);
                    }
                }
            }
        }
        ObsMode::Discrete => {
            weighted.copy_from_slice(&num);
        }
    }

    let mut q_new = DMatrix::zeros(n, n);
    let mut frozen = Vec::new();
    for i in 0..n {
        if den[i] < VISIT_FLOOR {
            frozen.push(i);
            for j in 0..n {
                q_new[(i, j)] = q[(i, j)];
            }
            continue;
        }
        let mut row_sum = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let rate = q[(i, j)] * weighted[i * n + j] / den[i];
            q_new[(i, j)] = rate;
            row_sum += rate;
        }
        q_new[(i, i)] = -row_sum;
    }
    Ok(EmUpdate {
        q: q_new,
        state_visits: den,
        frozen_states: frozen,
    })
}

/// Iterates smoothing and generator updates until the generator stops
/// moving or the iteration cap is reached.
///
/// The returned history holds the pseudo-log-likelihood of every iterate
/// including the final one, so it has one more entry than the number of
/// iterations performed.
pub fn fit_generator(
    model: &JumpHmmModel,
    obs: &JumpObservationPath,
    opts: &EmOptions,
) -> Result<EmFitReport> {
    let mut current = model.clone();
    let mut q_iterates = vec![current.q().clone()];
    let mut loglik_history = Vec::new();
    let mut frozen = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        let fwd = forward_pass(&current, obs, &opts.grid)?;
        let bwd = backward_pass(&current, obs, &fwd)?;
        let post = posterior(&fwd, &bwd)?;
        loglik_history.push(fwd.loglik);
        let update = em_update_generator(&current, &post)?;
        for s in update.frozen_states {
            if !frozen.contains(&s) {
                frozen.push(s);
            }
        }
        let delta = (&update.q - current.q()).norm();
        current = current.with_generator(update.q.clone())?;
        q_iterates.push(update.q);
        iterations += 1;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    let final_fwd = forward_pass(&current, obs, &opts.grid)?;
    loglik_history.push(final_fwd.loglik);
    frozen.sort_unstable();
    Ok(EmFitReport {
        q_iterates,
        loglik_history,
        iterations,
        converged,
        frozen_states: frozen,
    })
}
