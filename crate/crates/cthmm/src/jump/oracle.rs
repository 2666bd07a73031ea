//! Reference smoother built by brute-force time discretization.
//!
//! The hidden process is collapsed onto a uniform grid with one-step
//! transition kernels, and the usual discrete-time forward-backward
//! recursions run on that chain. Nothing here shares code with the
//! continuous-time passes; the two agree only in the small-step limit,
//! which is exactly what makes this useful as a cross-check.

use nalgebra::DMatrix;

use crate::jump::model::{JumpHmmModel, JumpObservationPath, ObsMode};
use crate::Result;

/// Output of [`discrete_baum_welch_oracle`].
#[derive(Clone, Debug)]
pub struct DiscreteOracle {
    /// Step size of the uniform grid.
    pub dt: f64,
    /// Grid times, `k * dt` for `k = 0..=n_steps`.
    pub times: Vec<f64>,
    /// Filtering distribution at each grid point, row-major.
    pub alpha: Vec<f64>,
    /// Smoothing distribution at each grid point, row-major.
    pub rho: Vec<f64>,
    /// Log-likelihood of the record under the discretized chain.
    pub loglik: f64,
    /// One EM re-estimation step for the generator.
    pub q_update: DMatrix<f64>,
}

impl DiscreteOracle {
    /// Grid index closest to `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = (t / self.dt).round() as usize;
        k.min(self.times.len() - 1)
    }

    /// Smoothing distribution at the grid point closest to `t`.
    pub fn rho_at(&self, t: f64) -> &[f64] {
        let n = self.q_update.nrows();
        let k = self.index_at(t);
        &self.rho[k * n..(k + 1) * n]
    }
}

/// Per-step description of the discretized chain: whether the step ends in
/// an observed symbol change, and which emission factor applies at its
/// endpoint.
struct StepKind {
    /// Symbol change observed at the step endpoint (continuous records).
    visible_jump: bool,
    /// Symbol whose emission probability weights the endpoint state, if
    /// any.
    emit: Option<usize>,
}

/// Runs discrete-time forward-backward and one EM step on a uniform grid
/// with the given step size.
///
/// Observation times are snapped to the nearest grid index, which must be
/// injective; pick `dt` well below the smallest gap between events.
pub fn discrete_baum_welch_oracle(
    model: &JumpHmmModel,
    obs: &JumpObservationPath,
    dt: f64,
) -> Result<DiscreteOracle> {
    assert!(dt > 0.0 && dt.is_finite(), "step size must be positive");
    let n = model.n_states();
    let q = model.q();
    let r = model.r();
    let n_steps = (obs.t_end() / dt).round().max(1.0) as usize;
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();

    // Map each event to a grid index and lay out the per-step structure.
    let mut steps: Vec<StepKind> = (0..=n_steps)
        .map(|_| StepKind {
            visible_jump: false,
            emit: None,
        })
        .collect();
    let mut initial_emit = None;
    let mut last_index: Option<usize> = None;
    for (s, &(tau, y)) in obs.events().iter().enumerate() {
        let mut snapped = (tau / dt).round() as usize;
        if obs.mode() == ObsMode::Continuous {
            if s == 0 {
                initial_emit = Some(y);
                continue;
            }
            snapped = snapped.max(1);
        }
        if snapped == 0 {
            // A discrete-mode emission at time zero weights the initial
            // distribution instead of a step endpoint.
            assert!(
                last_index.is_none(),
                "events collide on the grid; reduce the step size"
            );
            initial_emit = Some(y);
            last_index = Some(0);
            continue;
        }
        let k = snapped.min(n_steps);
        assert!(
            last_index.is_none_or(|prev| k > prev),
            "events collide on the grid; reduce the step size"
        );
        last_index = Some(k);
        steps[k].emit = Some(y);
        if obs.mode() == ObsMode::Continuous {
            steps[k].visible_jump = true;
        }
    }
    // Between visible jumps of a continuous record, hidden transitions must
    // re-emit the active symbol; thread it through the steps.
    if obs.mode() == ObsMode::Continuous {
        let mut active = initial_emit.expect("continuous records carry an initial symbol");
        for step in steps.iter_mut() {
            match step.emit {
                Some(y) => active = y,
                None => step.emit = Some(active),
            }
        }
    }

    let kernel = |k: usize, i: usize, j: usize| -> f64 {
        let step = &steps[k];
        if step.visible_jump {
            // The symbol changed, which is impossible without a hidden
            // jump; the step carries the jump density without a dt factor.
            if i == j {
                0.0
            } else {
                q[(i, j)] * r[(j, step.emit.unwrap())]
            }
        } else {
            let emit = step.emit.map_or(1.0, |y| r[(j, y)]);
            if i == j {
                // Staying put never resamples the symbol, so a discrete
                // emission factor still applies but a continuous one is
                // vacuous; both cases reduce to the active-symbol weight.
                match obs.mode() {
                    ObsMode::Continuous => 1.0 + q[(i, i)] * dt,
                    ObsMode::Discrete => (1.0 + q[(i, i)] * dt) * emit,
                }
            } else {
                q[(i, j)] * emit * dt
            }
        }
    };

    // Scaled forward recursion.
    let mut alpha = vec![0.0; (n_steps + 1) * n];
    let mut log_c = vec![0.0; n_steps + 1];
    {
        let a0 = &mut alpha[0..n];
        for i in 0..n {
            a0[i] = model.pi0()[i] * initial_emit.map_or(1.0, |y| r[(i, y)]);
        }
        let c: f64 = a0.iter().sum();
        assert!(c > 0.0, "initial distribution has no mass on the record");
        a0.iter_mut().for_each(|v| *v /= c);
        log_c[0] = c.ln();
    }
    for k in 1..=n_steps {
        let (prev, cur) = alpha.split_at_mut(k * n);
        let prev = &prev[(k - 1) * n..];
        let cur = &mut cur[..n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += prev[i] * kernel(k, i, j);
            }
            cur[j] = acc;
        }
        let c: f64 = cur.iter().sum();
        assert!(c > 0.0, "record has zero mass under the discretized chain");
        cur.iter_mut().for_each(|v| *v /= c);
        log_c[k] = c.ln();
    }
    let loglik: f64 = log_c.iter().sum();

    // Scaled backward recursion; with this scaling, alpha . beta = 1 at
    // every grid point and rho is just the product.
    let mut beta = vec![0.0; (n_steps + 1) * n];
    beta[n_steps * n..].iter_mut().for_each(|v| *v = 1.0);
    for k in (1..=n_steps).rev() {
        let c = log_c[k].exp();
        let (head, tail) = beta.split_at_mut(k * n);
        let next = &tail[..n];
        let cur = &mut head[(k - 1) * n..];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += kernel(k, i, j) * next[j];
            }
            cur[i] = acc / c;
        }
    }

    let mut rho = vec![0.0; (n_steps + 1) * n];
    for k in 0..=n_steps {
        for i in 0..n {
            rho[k * n + i] = alpha[k * n + i] * beta[k * n + i];
        }
    }

    // EM step: expected transition counts over expected occupation times.
    let mut counts = vec![0.0; n * n];
    let mut occupation = vec![0.0; n];
    for k in 1..=n_steps {
        let c = log_c[k].exp();
        let a = &alpha[(k - 1) * n..k * n];
        let b = &beta[k * n..(k + 1) * n];
        for i in 0..n {
            occupation[i] += rho[(k - 1) * n + i] * dt;
            for j in 0..n {
                if i != j {
                    counts[i * n + j] += a[i] * kernel(k, i, j) * b[j] / c;
                }
            }
        }
    }
    let mut q_update = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let rate = if occupation[i] > 0.0 {
                counts[i * n + j] / occupation[i]
            } else {
                q[(i, j)]
            };
            q_update[(i, j)] = rate;
            row_sum += rate;
        }
        q_update[(i, i)] = -row_sum;
    }

    Ok(DiscreteOracle {
        dt,
        times,
        alpha,
        rho,
        loglik,
        q_update,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn two_state() -> JumpHmmModel {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let pi0 = DVector::from_vec(vec![0.6, 0.4]);
        JumpHmmModel::new(q, r, pi0).unwrap()
    }

    #[test]
    fn alpha_and_rho_rows_are_distributions() {
        let model = two_state();
        let obs = JumpObservationPath::new(
            vec![(0.0, 0), (0.7, 1), (1.9, 0)],
            3.0,
            ObsMode::Continuous,
            2,
        )
        .unwrap();
        let oracle = discrete_baum_welch_oracle(&model, &obs, 1e-3).unwrap();
        for k in 0..oracle.times.len() {
            let a: f64 = oracle.alpha[2 * k..2 * k + 2].iter().sum();
            let p: f64 = oracle.rho[2 * k..2 * k + 2].iter().sum();
            assert!((a - 1.0).abs() < 1e-12);
            assert!((p - 1.0).abs() < 1e-9, "rho sums to {p} at index {k}");
        }
    }

    #[test]
    fn no_observations_in_discrete_mode_leave_the_prior() {
        // Without any emissions the smoother has nothing to condition on,
        // so rho at time zero must equal the initial distribution.
        let model = two_state();
        let obs = JumpObservationPath::new(vec![], 1.0, ObsMode::Discrete, 2).unwrap();
        let oracle = discrete_baum_welch_oracle(&model, &obs, 1e-3).unwrap();
        assert!(oracle.loglik.abs() < 1e-12);
        assert!((oracle.rho[0] - 0.6).abs() < 1e-12);
        assert!((oracle.rho[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn step_halving_moves_the_smoother_by_order_dt() {
        let model = two_state();
        let obs = JumpObservationPath::new(
            vec![(0.0, 1), (0.83, 0)],
            2.0,
            ObsMode::Continuous,
            2,
        )
        .unwrap();
        let coarse = discrete_baum_welch_oracle(&model, &obs, 2e-3).unwrap();
        let fine = discrete_baum_welch_oracle(&model, &obs, 1e-3).unwrap();
        let probe = 1.3;
        let dc = (coarse.rho_at(probe)[0] - fine.rho_at(probe)[0]).abs();
        assert!(dc < 5e-3, "halving the step moved rho by {dc}");
    }

    #[test]
    fn em_step_preserves_generator_structure() {
        let q = DMatrix::from_row_slice(
            3,
            3,
            &[-1.0, 1.0, 0.0, 0.5, -1.0, 0.5, 0.0, 2.0, -2.0],
        );
        let r = DMatrix::from_row_slice(
            3,
            3,
            &[0.8, 0.1, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1, 0.8],
        );
        let pi0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let model = JumpHmmModel::new(q, r, pi0).unwrap();
        let obs = JumpObservationPath::new(
            vec![(0.0, 0), (0.4, 1), (1.1, 2), (1.6, 1)],
            2.0,
            ObsMode::Continuous,
            3,
        )
        .unwrap();
        let oracle = discrete_baum_welch_oracle(&model, &obs, 1e-3).unwrap();
        assert_eq!(oracle.q_update[(0, 2)], 0.0);
        assert_eq!(oracle.q_update[(2, 0)], 0.0);
        for i in 0..3 {
            let row: f64 = oracle.q_update.row(i).iter().sum();
            assert!(row.abs() < 1e-12);
        }
    }
}
