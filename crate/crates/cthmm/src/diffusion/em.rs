//! Monte Carlo EM updates for the drift parameter of a hidden diffusion.
//!
//! The minorant evaluated on a smoothed ensemble is
//!
//! ```text
//! q(theta) = sum_k sum_i w ||f(xi; theta)||^2
//!            - 2 f(xi; theta)' (w f(xi; theta_k) + sigma^2 grad_i)
//! ```
//!
//! summed over grid indices `k = 0 .. n_steps - 1`, with `w` the smoothing
//! weights and `grad` the cached smoothing-function gradients. For drifts
//! that are linear in the parameter the minimizer has a closed form; the
//! gradient rule covers everything else.

use nalgebra::{DMatrix, DVector};

use crate::diffusion::filter::{particle_filter, ParticleOptions, Resampling};
use crate::diffusion::smoother::particle_smoother;
use crate::diffusion::types::{DiffusionModel, ObservationIncrements, ParticleEnsemble};
use crate::exec::map_collect;
use crate::math::{fd_gradient, try_invert};
use crate::{Error, Result};

fn check_ready(
    ens: &ParticleEnsemble,
    model: &DiffusionModel,
    obs: &ObservationIncrements,
) -> Result<()> {
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
    if ens.dt != obs.dt() || ens.n_steps() != obs.n_steps() {
        return Err(Error::GridMismatch(format!(
            "ensemble grid ({} steps of {}) does not match the observations ({} steps of {})",
            ens.n_steps(),
            ens.dt,
            obs.n_steps(),
            obs.dt()
        )));
    }
    if ens.weights.is_none() || ens.beta_gradients.is_none() {
        return Err(Error::InvalidArgument(
            "run the smoother before the M-step".into(),
        ));
    }
    Ok(())
}

fn objective_unchecked(
    theta: &DVector<f64>,
    theta_k: &DVector<f64>,
    ens: &ParticleEnsemble,
    model: &DiffusionModel,
) -> f64 {
    let n = ens.n_particles;
    let sigma2 = model.sigma() * model.sigma();
    let weights = ens.weights.as_ref().expect("checked");
    let grads = ens.beta_gradients.as_ref().expect("checked");
    let partials = map_collect(ens.n_steps(), |k| {
        let mut acc = 0.0;
        for i in 0..n {
            let x = ens.position(k, i);
            let w = weights[k * n + i];
            let f = model.drift_at(x, theta);
            let fk = model.drift_at(x, theta_k);
            let g = &grads[k * n + i];
            acc += w * f.norm_squared() - 2.0 * (w * f.dot(&fk) + sigma2 * f.dot(g));
        }
        acc
    });
    partials.iter().sum()
}

/// Monte Carlo EM objective at `theta`, expanded around `theta_k`. A particle
/// with zero smoothing weight still contributes its gradient term, the
/// well-defined limit of the weighted form.
pub fn em_objective_mc(
    theta: &DVector<f64>,
    theta_k: &DVector<f64>,
    ens: &ParticleEnsemble,
    model: &DiffusionModel,
    obs: &ObservationIncrements,
) -> Result<f64> {
    check_ready(ens, model, obs)?;
    if theta.len() != model.param_dim() || theta_k.len() != model.param_dim() {
        return Err(Error::InvalidArgument(format!(
            "parameter dimension {} expected, got {} and {}",
            model.param_dim(),
            theta.len(),
            theta_k.len()
        )));
    }
    Ok(objective_unchecked(theta, theta_k, ens, model))
}

/// Result of a closed-form M-step: the new parameter and the condition
/// number of the matrix that was inverted to obtain it.
#[derive(Clone, Debug)]
pub struct LinearUpdate {
    pub theta: DVector<f64>,
    pub gram_condition: f64,
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let top = sv.max();
    let bottom = sv.min();
    if bottom > 0.0 {
        top / bottom
    } else {
        f64::INFINITY
    }
}

/// Closed-form M-step for drifts linear in the parameter:
/// `theta' = theta_k + sigma^2 [sum w A'A]^{-1} [sum A' grad]`. The gradient
/// sum is not weighted.
pub fn em_update_linear(
    ens: &ParticleEnsemble,
    model: &DiffusionModel,
    obs: &ObservationIncrements,
) -> Result<LinearUpdate> {
    check_ready(ens, model, obs)?;
    let decomp = model.linear_decomp().ok_or_else(|| {
        Error::InvalidModel("the closed-form update needs a linear drift decomposition".into())
    })?;
    let n = ens.n_particles;
    let p = model.param_dim();
    let dim = model.state_dim();
    let weights = ens.weights.as_ref().expect("checked");
    let grads = ens.beta_gradients.as_ref().expect("checked");

    let partials = map_collect(ens.n_steps(), |k| {
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for i in 0..n {
            let x = ens.position(k, i);
            let a = (decomp.coeff)(x);
            assert!(
                a.nrows() == dim && a.ncols() == p,
                "decomposition coefficient must be {dim} x {p}, got {} x {}",
                a.nrows(),
                a.ncols()
            );
            let at = a.transpose();
            gram += &at * &a * weights[k * n + i];
            rhs += &at * &grads[k * n + i];
        }
        (gram, rhs)
    });
    let mut gram: DMatrix<f64> = DMatrix::zeros(p, p);
    let mut rhs: DVector<f64> = DVector::zeros(p);
    for (g, r) in &partials {
        gram += g;
        rhs += r;
    }
    let condition = condition_number(&gram);
    let inv = try_invert(&gram, "gram")?;
    let sigma2 = model.sigma() * model.sigma();
    Ok(LinearUpdate {
        theta: model.theta() + inv * rhs * sigma2,
        gram_condition: condition,
    })
}

/// Closed-form M-step for the fully parametrized linear drift `f(x) = F x`,
/// with `theta = vec(F)` stored column by column:
/// `F' = F_k + sigma^2 [sum grad xi'][sum w xi xi']^{-1}`.
pub fn em_update_matrix(
    ens: &ParticleEnsemble,
    model: &DiffusionModel,
    obs: &ObservationIncrements,
) -> Result<LinearUpdate> {
    check_ready(ens, model, obs)?;
    let dim = model.state_dim();
    if model.param_dim() != dim * dim {
        return Err(Error::InvalidModel(format!(
            "the matrix update needs theta = vec(F) with {} entries, got {}",
            dim * dim,
            model.param_dim()
        )));
    }
    let n = ens.n_particles;
    let weights = ens.weights.as_ref().expect("checked");
    let grads = ens.beta_gradients.as_ref().expect("checked");

    let partials = map_collect(ens.n_steps(), |k| {
        let mut cross = DMatrix::zeros(dim, dim);
        let mut moment = DMatrix::zeros(dim, dim);
        for i in 0..n {
            let x = ens.position(k, i);
            let w = weights[k * n + i];
            let g = &grads[k * n + i];
            for a in 0..dim {
                for b in 0..dim {
                    cross[(a, b)] += g[a] * x[b];
                    moment[(a, b)] += w * x[a] * x[b];
                }
            }
        }
        (cross, moment)
    });
    let mut cross: DMatrix<f64> = DMatrix::zeros(dim, dim);
    let mut moment: DMatrix<f64> = DMatrix::zeros(dim, dim);
    for (c, m) in &partials {
        cross += c;
        moment += m;
    }
    let condition = condition_number(&moment);
    let inv = try_invert(&moment, "second moment")?;
    let sigma2 = model.sigma() * model.sigma();
    let f_k = DMatrix::from_column_slice(dim, dim, model.theta().as_slice());
    let f_next: DMatrix<f64> = f_k + cross * inv * sigma2;
    Ok(LinearUpdate {
        theta: DVector::from_column_slice(f_next.as_slice()),
        gram_condition: condition,
    })
}

/// Minimizes the EM objective by gradient descent with backtracking, for
/// models without a linear decomposition.
fn gradient_descent_update(
    ens: &ParticleEnsemble,
    model: &DiffusionModel,
) -> Result<DVector<f64>> {
    let theta_k = model.theta().clone();
    let mut z = theta_k.clone();
    let mut value = objective_unchecked(&z, &theta_k, ens, model);
    for _ in 0..200 {
        let grad = fd_gradient(|t| objective_unchecked(t, &theta_k, ens, model), &z);
        let gnorm2 = grad.norm_squared();
        if gnorm2.sqrt() <= 1e-9 * (1.0 + z.amax()) {
            break;
        }
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-14 {
            let cand = &z - &grad * step;
            let cand_value = objective_unchecked(&cand, &theta_k, ens, model);
            if cand_value <= value - 1e-4 * step * gnorm2 {
                z = cand;
                value = cand_value;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(z)
}

/// Which M-step the fit loop applies each iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRule {
    Linear,
    Matrix,
    Gradient,
}

/// Options for the full EM fit.
#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub n_particles: usize,
    pub iterations: usize,
    pub seed: u64,
    pub update: UpdateRule,
    pub resampling: Resampling,
    /// Internal Euler steps per grid step for particle moves; see
    /// [`ParticleOptions::propagation_substeps`].
    pub propagation_substeps: usize,
}

impl FitOptions {
    pub fn new(n_particles: usize, iterations: usize, seed: u64, update: UpdateRule) -> Self {
        Self {
            n_particles,
            iterations,
            seed,
            update,
            resampling: Resampling::default(),
            propagation_substeps: 1,
        }
    }

    pub fn with_substeps(mut self, propagation_substeps: usize) -> Self {
        self.propagation_substeps = propagation_substeps;
        self
    }
}

/// Parameter trajectory of an EM fit. `gram_conditions` has one entry per
/// closed-form update and stays empty under the gradient rule.
#[derive(Clone, Debug)]
pub struct DiffusionFitReport {
    pub theta_history: Vec<DVector<f64>>,
    pub gram_conditions: Vec<f64>,
}

impl DiffusionFitReport {
    /// Final parameter estimate.
    pub fn theta_hat(&self) -> &DVector<f64> {
        self.theta_history.last().expect("history holds theta0")
    }
}

/// Runs EM: per iteration a fresh particle filter and smoother under the
/// current parameter (each iteration draws from its own random substreams),
/// then the selected M-step.
pub fn fit_parameters(
    model0: &DiffusionModel,
    obs: &ObservationIncrements,
    opts: &FitOptions,
) -> Result<DiffusionFitReport> {
    if opts.iterations >= (1 << 24) {
        return Err(Error::InvalidArgument(
            "iteration count does not fit the substream address".into(),
        ));
    }
    let mut model = model0.clone();
    let mut report = DiffusionFitReport {
        theta_history: vec![model.theta().clone()],
        gram_conditions: Vec::new(),
    };
    for it in 0..opts.iterations {
        let popts = ParticleOptions {
            n_particles: opts.n_particles,
            seed: opts.seed,
            resampling: opts.resampling,
            iteration: it as u32,
            propagation_substeps: opts.propagation_substeps,
        };
        let mut ens = particle_filter(&model, obs, &popts)?;
        particle_smoother(&mut ens, &model, obs)?;
        let theta_next = match opts.update {
            UpdateRule::Linear => {
                let upd = em_update_linear(&ens, &model, obs)?;
                report.gram_conditions.push(upd.gram_condition);
                upd.theta
            }
            UpdateRule::Matrix => {
                let upd = em_update_matrix(&ens, &model, obs)?;
                report.gram_conditions.push(upd.gram_condition);
                upd.theta
            }
            UpdateRule::Gradient => gradient_descent_update(&ens, &model)?,
        };
        model = model.with_theta(theta_next)?;
        report.theta_history.push(model.theta().clone());
    }
    Ok(report)
}

/// Filtering and smoothing state estimates per grid time: the plain cloud
/// mean and the weight-averaged mean.
pub fn state_estimates(ens: &ParticleEnsemble) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let mut filter = Vec::with_capacity(ens.n_steps() + 1);
    let mut smooth = Vec::with_capacity(ens.n_steps() + 1);
    for k in 0..=ens.n_steps() {
        filter.push(ens.filter_mean(k));
        smooth.push(ens.smoother_mean(k)?);
    }
    Ok((filter, smooth))
}
