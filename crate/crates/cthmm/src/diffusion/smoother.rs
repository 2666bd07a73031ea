//! Backward reweighting smoother for a filtered particle ensemble.
//!
//! The smoothing function at step `k` is estimated from the cloud at `k + 1`:
//!
//! ```text
//! beta(x) = sum_j p(xi_j | x) g(x) w_j / z_j,
//! z_j     = sum_i p(xi_j | xi_i) g(xi_i),
//! ```
//!
//! where `p` is the one-step transition Gaussian, `g` the observation factor
//! at step `k`, and `w` the smoothing weights already computed at `k + 1`.
//! Evaluated at the cloud itself this yields the smoothing weights at `k`,
//! which sum to one by construction of the normalizers `z_j`.
//!
//! The per-step normalizers are cached on the ensemble so [`beta_hat_gradient`]
//! later reproduces the stored weights exactly: it walks the same helper
//! functions over the same cached values.

use nalgebra::DVector;

use crate::diffusion::filter::increment_log_weight;
use crate::diffusion::types::{
    DiffusionModel, DiscreteObservations, ObservationIncrements, ParticleEnsemble,
};
use crate::exec::map_collect;
use crate::math::fd_gradient;
use crate::{Error, Result};

/// Log transition densities from `x` to every particle in `next`, together
/// with the predicted mean `x + f(x) dt`.
fn transition_row(
    model: &DiffusionModel,
    next: &[DVector<f64>],
    dt: f64,
    x: &DVector<f64>,
) -> (Vec<f64>, DVector<f64>) {
    let mean = x + model.drift(x) * dt;
    let var = model.sigma() * model.sigma() * dt;
    let log_t = next
        .iter()
        .map(|xi| crate::math::log_gaussian_isotropic(xi.as_slice(), mean.as_slice(), var))
        .collect();
    (log_t, mean)
}

/// Smoothing value and gradient at one point, given its transition row, the
/// observation factor at this step, and the cached column normalizers.
#[allow(clippy::too_many_arguments)]
fn beta_from_row(
    model: &DiffusionModel,
    next: &[DVector<f64>],
    log_t: &[f64],
    mean: &DVector<f64>,
    obs_lw: f64,
    obs_grad: &DVector<f64>,
    lnw_next: &[f64],
    logz: &[f64],
    dt: f64,
    x: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let n = next.len();
    let dim = x.len();
    let mut lt = vec![f64::NEG_INFINITY; n];
    let mut top = f64::NEG_INFINITY;
    for j in 0..n {
        if logz[j] == f64::NEG_INFINITY || lnw_next[j] == f64::NEG_INFINITY {
            continue;
        }
        let v = obs_lw + log_t[j] + lnw_next[j] - logz[j];
        lt[j] = v;
        if v > top {
            top = v;
        }
    }
    if !top.is_finite() {
        return (0.0, DVector::zeros(dim));
    }
    let mut sum = 0.0;
    let mut resid = DVector::zeros(dim);
    for j in 0..n {
        if lt[j] == f64::NEG_INFINITY {
            continue;
        }
        let t = (lt[j] - top).exp();
        sum += t;
        for d in 0..dim {
            resid[d] += t * (next[j][d] - mean[d]);
        }
    }
    let scale = top.exp();
    let value = scale * sum;
    let sigma2dt = model.sigma() * model.sigma() * dt;
    let jac = model.drift_jacobian(x);
    let mut grad = DVector::zeros(dim);
    for a in 0..dim {
        let mut acc: f64 = resid[a];
        for b in 0..dim {
            acc += dt * jac[(b, a)] * resid[b];
        }
        grad[a] = scale * acc / sigma2dt + value * obs_grad[a];
    }
    (value, grad)
}

fn check_compatible(ens: &ParticleEnsemble, model: &DiffusionModel) -> Result<()> {
    if ens.state_dim != model.state_dim() {
        return Err(Error::GridMismatch(format!(
            "ensemble state dimension {} does not match the model's {}",
            ens.state_dim,
            model.state_dim()
        )));
    }
    if model.sigma() == 0.0 {
        return Err(Error::InvalidModel(
            "estimation requires a positive state noise scale".into(),
        ));
    }
    Ok(())
}

/// Backward sweep shared by both observation modes; `obs_lw` and `obs_grad`
/// give the log observation factor at a step and its gradient in the state.
fn smoother_core<LW, GR>(
    ens: &mut ParticleEnsemble,
    model: &DiffusionModel,
    obs_lw: LW,
    obs_grad: GR,
) -> Result<()>
where
    LW: Fn(usize, &DVector<f64>) -> f64 + Sync,
    GR: Fn(usize, &DVector<f64>) -> DVector<f64> + Sync,
{
    check_compatible(ens, model)?;
    let n = ens.n_particles;
    let n_steps = ens.n_steps();
    let dim = ens.state_dim;
    let dt = ens.dt;

    let mut weights = vec![0.0; (n_steps + 1) * n];
    let mut grads = vec![DVector::zeros(dim); (n_steps + 1) * n];
    let mut logzs = vec![f64::NEG_INFINITY; n_steps * n];
    let uniform = 1.0 / n as f64;
    for w in &mut weights[n_steps * n..] {
        *w = uniform;
    }
    let mut lnw_next: Vec<f64> = weights[n_steps * n..].iter().map(|w| w.ln()).collect();

    for k in (0..n_steps).rev() {
        let cur = ens.positions_at(k);
        let next = ens.positions_at(k + 1);
        let rows = map_collect(n, |i| {
            let (log_t, mean) = transition_row(model, next, dt, &cur[i]);
            (log_t, mean, obs_lw(k, &cur[i]))
        });
        let logz = map_collect(n, |j| {
            let mut top = f64::NEG_INFINITY;
            for (log_t, _, lw) in &rows {
                let v = log_t[j] + lw;
                if v > top {
                    top = v;
                }
            }
            if !top.is_finite() {
                return f64::NEG_INFINITY;
            }
            let mut s = 0.0;
            for (log_t, _, lw) in &rows {
                s += (log_t[j] + lw - top).exp();
            }
            top + s.ln()
        });
        let results = map_collect(n, |i| {
            let (log_t, mean, lw) = &rows[i];
            let og = obs_grad(k, &cur[i]);
            beta_from_row(model, next, log_t, mean, *lw, &og, &lnw_next, &logz, dt, &cur[i])
        });
        for (i, (w, g)) in results.into_iter().enumerate() {
            weights[k * n + i] = w;
            grads[k * n + i] = g;
        }
        logzs[k * n..(k + 1) * n].copy_from_slice(&logz);
        lnw_next = weights[k * n..(k + 1) * n].iter().map(|w| w.ln()).collect();
    }

    ens.weights = Some(weights);
    ens.beta_gradients = Some(grads);
    ens.log_normalizers = Some(logzs);
    Ok(())
}

fn continuous_obs_lw(
    model: &DiffusionModel,
    obs: &ObservationIncrements,
    k: usize,
    x: &DVector<f64>,
) -> f64 {
    increment_log_weight(model, obs.increment(k), obs.dt(), x)
}

fn continuous_obs_grad(
    model: &DiffusionModel,
    obs: &ObservationIncrements,
    k: usize,
    x: &DVector<f64>,
) -> DVector<f64> {
    let dt = obs.dt();
    let mut r = obs.increment(k).clone();
    r.axpy(-dt, &model.obs_drift(x), 1.0);
    model.obs_jacobian(x).transpose() * r / (model.eta() * model.eta())
}

fn check_grid(ens: &ParticleEnsemble, dt: f64, n_steps: usize) -> Result<()> {
    if ens.dt != dt || ens.n_steps() != n_steps {
        return Err(Error::GridMismatch(format!(
            "ensemble grid ({} steps of {}) does not match the observations ({n_steps} steps of {dt})",
            ens.n_steps(),
            ens.dt
        )));
    }
    Ok(())
}

/// Fills in smoothing weights, score gradients, and column normalizers for
/// an ensemble produced by the filter on the same observations.
pub fn particle_smoother(
    ens: &mut ParticleEnsemble,
    model: &DiffusionModel,
    obs: &ObservationIncrements,
) -> Result<()> {
    if obs.obs_dim() != model.obs_dim() {
        return Err(Error::InvalidObservations(format!(
            "observation dimension {} does not match the model's {}",
            obs.obs_dim(),
            model.obs_dim()
        )));
    }
    if model.eta() == 0.0 {
        return Err(Error::InvalidModel(
            "continuous observations require a positive observation noise scale".into(),
        ));
    }
    check_grid(ens, obs.dt(), obs.n_steps())?;
    smoother_core(
        ens,
        model,
        |k, x| continuous_obs_lw(model, obs, k, x),
        |k, x| continuous_obs_grad(model, obs, k, x),
    )
}

/// Smoother for instantaneous observations: the observation factor enters
/// only at the steps carrying an event.
pub fn particle_smoother_discrete_obs(
    ens: &mut ParticleEnsemble,
    model: &DiffusionModel,
    obs: &DiscreteObservations,
) -> Result<()> {
    if !model.has_obs_density() {
        return Err(Error::InvalidModel(
            "instantaneous observations need an observation density on the model".into(),
        ));
    }
    check_grid(ens, obs.dt(), obs.n_steps())?;
    let slots = obs.step_events()?;
    smoother_core(
        ens,
        model,
        |k, x| match slots[k] {
            Some(s) => model
                .log_obs_density(&obs.events()[s].1, x)
                .expect("density checked above"),
            None => 0.0,
        },
        |k, x| match slots[k] {
            Some(s) => {
                let y = &obs.events()[s].1;
                fd_gradient(
                    |z| model.log_obs_density(y, z).expect("density checked above"),
                    x,
                )
            }
            None => DVector::zeros(x.len()),
        },
    )
}

/// Evaluates the smoothing function and its gradient at an arbitrary point
/// `x` for grid index `k`, reusing the normalizers cached by the smoother.
/// At the cloud's own particles the value reproduces the stored weight
/// exactly. `k == n_steps` returns the terminal convention `(1, 0)`.
pub fn beta_hat_gradient(
    ens: &ParticleEnsemble,
    model: &DiffusionModel,
    obs: &ObservationIncrements,
    k: usize,
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    check_compatible(ens, model)?;
    check_grid(ens, obs.dt(), obs.n_steps())?;
    if x.len() != ens.state_dim {
        return Err(Error::InvalidArgument(format!(
            "point has dimension {}, ensemble has {}",
            x.len(),
            ens.state_dim
        )));
    }
    let n_steps = ens.n_steps();
    if k > n_steps {
        return Err(Error::InvalidArgument(format!(
            "grid index {k} is beyond the horizon index {n_steps}"
        )));
    }
    if k == n_steps {
        return Ok((1.0, DVector::zeros(ens.state_dim)));
    }
    let n = ens.n_particles;
    let logz_all = ens.log_normalizers.as_ref().ok_or_else(|| {
        Error::InvalidArgument("smoother normalizers not computed yet".into())
    })?;
    let logz = &logz_all[k * n..(k + 1) * n];
    let lnw_next: Vec<f64> = ens.weights_at(k + 1)?.iter().map(|w| w.ln()).collect();
    let next = ens.positions_at(k + 1);
    let (log_t, mean) = transition_row(model, next, ens.dt, x);
    let lw = continuous_obs_lw(model, obs, k, x);
    let og = continuous_obs_grad(model, obs, k, x);
    Ok(beta_from_row(
        model, next, &log_t, &mean, lw, &og, &lnw_next, logz, ens.dt, x,
    ))
}
