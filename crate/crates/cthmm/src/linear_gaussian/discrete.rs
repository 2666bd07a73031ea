//! Discrete-time Kalman filter, smoother, and drift update on the
//! observation grid. These are first-order accurate counterparts of the
//! continuous passes and exist to cross-check them.

use nalgebra::{DMatrix, DVector};

use super::model::{GaussianTrajectory, LinearModel};
use crate::diffusion::ObservationIncrements;
use crate::math::{symmetrize, try_invert};
use crate::{Error, Result};

/// Discrete filtering pass. Priors condition on increments strictly before
/// each grid time, so they align with the continuous filter values;
/// posteriors additionally absorb the increment on the step.
#[derive(Clone, Debug)]
pub struct DiscreteKalman {
    pub times: Vec<f64>,
    pub mu_prior: Vec<DVector<f64>>,
    pub p_prior: Vec<DMatrix<f64>>,
    pub mu_post: Vec<DVector<f64>>,
    pub p_post: Vec<DMatrix<f64>>,
}

pub fn discrete_kalman_filter(
    model: &LinearModel,
    obs: &ObservationIncrements,
) -> Result<DiscreteKalman> {
    if obs.obs_dim() != model.obs_dim() {
        return Err(Error::InvalidObservations(format!(
            "observation dimension {} does not match the model's {}",
            obs.obs_dim(),
            model.obs_dim()
        )));
    }
    let n = model.state_dim();
    let m = model.obs_dim();
    let dt = obs.dt();
    let n_steps = obs.n_steps();
    let sigma2 = model.sigma() * model.sigma();
    let eta2 = model.eta() * model.eta();
    let trans: DMatrix<f64> = DMatrix::identity(n, n) + model.f() * dt;

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut mu_prior = Vec::with_capacity(n_steps + 1);
    let mut p_prior = Vec::with_capacity(n_steps + 1);
    let mut mu_post = Vec::with_capacity(n_steps);
    let mut p_post = Vec::with_capacity(n_steps);
    times.push(0.0);
    mu_prior.push(model.mu0().clone());
    p_prior.push(symmetrize(model.p0()));

    for k in 0..n_steps {
        let t_next = (k + 1) as f64 * dt;
        let mu_k = &mu_prior[k];
        let p_k = &p_prior[k];

        let mut innov_cov: DMatrix<f64> = model.h() * p_k * model.h().transpose() * (dt * dt);
        for i in 0..m {
            innov_cov[(i, i)] += eta2 * dt;
        }
        let gain: DMatrix<f64> =
            p_k * model.h().transpose() * dt * try_invert(&innov_cov, "innovation covariance")?;
        let innovation: DVector<f64> = obs.increment(k) - model.h() * mu_k * dt;
        let mu_up: DVector<f64> = mu_k + &gain * innovation;
        let p_up = symmetrize(&(p_k - &gain * model.h() * p_k * dt));

        let mu_next: DVector<f64> = &trans * &mu_up;
        let mut p_next: DMatrix<f64> = &trans * &p_up * trans.transpose();
        for i in 0..n {
            p_next[(i, i)] += sigma2 * dt;
        }
        let p_next = symmetrize(&p_next);

        if mu_next.iter().any(|x| !x.is_finite()) || p_next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "discrete filter state".into(),
                time: t_next,
            });
        }
        mu_post.push(mu_up);
        p_post.push(p_up);
        times.push(t_next);
        mu_prior.push(mu_next);
        p_prior.push(p_next);
    }

    Ok(DiscreteKalman {
        times,
        mu_prior,
        p_prior,
        mu_post,
        p_post,
    })
}

/// Discrete smoothing pass over a completed filter run. At the horizon the
/// smoothed law equals the prior there, since no increment follows it.
pub fn discrete_rts_smoother(
    model: &LinearModel,
    filt: &DiscreteKalman,
) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let len = filt.times.len();
    if len < 2 {
        return Err(Error::InvalidArgument(
            "smoother needs at least one grid step".into(),
        ));
    }
    let n = model.state_dim();
    let dt = filt.times[1] - filt.times[0];
    let trans: DMatrix<f64> = DMatrix::identity(n, n) + model.f() * dt;

    let mut mu_s = vec![DVector::<f64>::zeros(n); len];
    let mut p_s = vec![DMatrix::<f64>::zeros(n, n); len];
    mu_s[len - 1] = filt.mu_prior[len - 1].clone();
    p_s[len - 1] = filt.p_prior[len - 1].clone();

    for k in (0..len - 1).rev() {
        let pred_inv = try_invert(&filt.p_prior[k + 1], "predicted covariance")?;
        let smoother_gain: DMatrix<f64> = &filt.p_post[k] * trans.transpose() * pred_inv;
        let mu: DVector<f64> =
            &filt.mu_post[k] + &smoother_gain * (&mu_s[k + 1] - &filt.mu_prior[k + 1]);
        let dp: DMatrix<f64> = &p_s[k + 1] - &filt.p_prior[k + 1];
        let p = symmetrize(&(&filt.p_post[k] + &smoother_gain * dp * smoother_gain.transpose()));
        mu_s[k] = mu;
        p_s[k] = p;
    }

    Ok((mu_s, p_s))
}

/// Discrete-time drift update computed from the continuous smoothing
/// trajectory: lag-one cross moments over the grid steps against same-time
/// second moments, solved for the one-step transition and converted back
/// to a drift matrix.
pub fn shumway_em_update(model: &LinearModel, traj: &GaussianTrajectory) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    let len = traj.times.len();
    if len < 2 {
        return Err(Error::InvalidArgument(
            "drift update needs at least one grid step".into(),
        ));
    }
    if traj.mu_rho.len() != len || traj.mu_rho[0].len() != n {
        return Err(Error::GridMismatch(
            "trajectory dimensions do not match the model".into(),
        ));
    }
    let dt = traj.times[1] - traj.times[0];
    let sigma2 = model.sigma() * model.sigma();

    let mut lag_sum: DMatrix<f64> = DMatrix::zeros(n, n);
    let mut moment_sum: DMatrix<f64> = DMatrix::zeros(n, n);
    for k in 0..len - 1 {
        let drift_eff: DMatrix<f64> = model.f() - &traj.j_beta[k] * sigma2;
        let lag: DMatrix<f64> = &traj.p_rho[k] + &drift_eff * &traj.p_rho[k] * dt;
        lag_sum += &traj.mu_rho[k + 1] * traj.mu_rho[k].transpose() + lag;
        moment_sum += &traj.mu_rho[k] * traj.mu_rho[k].transpose() + &traj.p_rho[k];
    }

    let inv = try_invert(&moment_sum, "smoothed second moment")?;
    let trans: DMatrix<f64> = lag_sum * inv;
    let f_next: DMatrix<f64> = (trans - DMatrix::identity(n, n)) / dt;
    Ok(f_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_gaussian::kalman::{
        kalman_em_update, kalman_forward, kalman_smoother,
    };

    fn smooth_increments(m: usize, dt: f64, n_steps: usize) -> ObservationIncrements {
        let y = |a: usize, t: f64| -> f64 {
            0.3 * (1.7 * t + 0.4 * a as f64).sin() + 0.2 * t * (a + 1) as f64
        };
        let mut increments = Vec::with_capacity(n_steps);
        for k in 0..n_steps {
            let t0 = k as f64 * dt;
            let t1 = (k + 1) as f64 * dt;
            increments.push(DVector::from_fn(m, |a, _| y(a, t1) - y(a, t0)));
        }
        ObservationIncrements::new(dt, increments).unwrap()
    }

    fn test_model() -> LinearModel {
        LinearModel::new(
            DMatrix::from_row_slice(2, 2, &[-0.4, 0.7, -0.3, -0.9]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 0.8]),
            0.6,
            0.5,
            DVector::from_row_slice(&[0.4, -0.2]),
            DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 0.5]),
        )
        .unwrap()
    }

    fn filter_gap(dt: f64, n_steps: usize) -> (f64, f64) {
        let model = test_model();
        let obs = smooth_increments(2, dt, n_steps);
        let cont = kalman_forward(&model, &obs).unwrap();
        let disc = discrete_kalman_filter(&model, &obs).unwrap();
        let mut mu_gap = 0.0f64;
        let mut p_gap = 0.0f64;
        for k in 0..cont.times.len() {
            mu_gap = mu_gap.max((&cont.mu_pi[k] - &disc.mu_prior[k]).amax());
            p_gap = p_gap.max((&cont.p_pi[k] - &disc.p_prior[k]).amax());
        }
        (mu_gap, p_gap)
    }

    #[test]
    fn discrete_filter_agrees_with_continuous_at_first_order() {
        let (mu1, p1) = filter_gap(2e-3, 500);
        let (mu2, p2) = filter_gap(1e-3, 1000);
        for (d1, d2, what) in [(mu1, mu2, "mean"), (p1, p2, "covariance")] {
            let ratio = d1 / d2;
            assert!(
                (1.5..=2.5).contains(&ratio),
                "filter {what}: halving ratio {ratio} (gaps {d1}, {d2})"
            );
            assert!(d1 < 0.05, "filter {what}: gap {d1} too large");
        }
    }

    fn smoother_gap(dt: f64, n_steps: usize) -> (f64, f64) {
        let model = test_model();
        let obs = smooth_increments(2, dt, n_steps);
        let traj = kalman_smoother(&model, &obs).unwrap();
        let disc = discrete_kalman_filter(&model, &obs).unwrap();
        let (mu_s, p_s) = discrete_rts_smoother(&model, &disc).unwrap();
        let mut mu_gap = 0.0f64;
        let mut p_gap = 0.0f64;
        for k in 0..traj.times.len() {
            mu_gap = mu_gap.max((&traj.mu_rho[k] - &mu_s[k]).amax());
            p_gap = p_gap.max((&traj.p_rho[k] - &p_s[k]).amax());
        }
        (mu_gap, p_gap)
    }

    #[test]
    fn discrete_smoother_agrees_with_product_form_at_first_order() {
        let (mu1, p1) = smoother_gap(2e-3, 500);
        let (mu2, p2) = smoother_gap(1e-3, 1000);
        for (d1, d2, what) in [(mu1, mu2, "mean"), (p1, p2, "covariance")] {
            let ratio = d1 / d2;
            assert!(
                (1.5..=2.5).contains(&ratio),
                "smoother {what}: halving ratio {ratio} (gaps {d1}, {d2})"
            );
            assert!(d1 < 0.05, "smoother {what}: gap {d1} too large");
        }
    }

    fn em_gap(dt: f64, n_steps: usize) -> f64 {
        let model = test_model();
        let obs = smooth_increments(2, dt, n_steps);
        let traj = kalman_smoother(&model, &obs).unwrap();
        let f_cont = kalman_em_update(&model, &traj).unwrap();
        let f_disc = shumway_em_update(&model, &traj).unwrap();
        (f_cont - f_disc).amax()
    }

    #[test]
    fn drift_updates_agree_at_first_order() {
        let d1 = em_gap(2e-3, 500);
        let d2 = em_gap(1e-3, 1000);
        let ratio = d1 / d2;
        assert!(
            (1.5..=2.5).contains(&ratio),
            "drift update halving ratio {ratio} (gaps {d1}, {d2})"
        );
    }

    #[test]
    fn smoothed_law_at_the_horizon_equals_the_prior_there() {
        let model = test_model();
        let obs = smooth_increments(2, 0.01, 100);
        let disc = discrete_kalman_filter(&model, &obs).unwrap();
        let (mu_s, p_s) = discrete_rts_smoother(&model, &disc).unwrap();
        let last = disc.times.len() - 1;
        assert_eq!(mu_s[last], disc.mu_prior[last]);
        assert_eq!(p_s[last], disc.p_prior[last]);
    }

    #[test]
    fn posterior_shrinks_the_prior_covariance() {
        let model = test_model();
        let obs = smooth_increments(2, 0.01, 100);
        let disc = discrete_kalman_filter(&model, &obs).unwrap();
        for k in 0..obs.n_steps() {
            let shrink = &disc.p_prior[k] - &disc.p_post[k];
            assert!(shrink.symmetric_eigenvalues().min() >= -1e-12);
        }
    }
}
