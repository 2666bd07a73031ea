//! Continuous-time Kalman filtering, backward information pass, smoothing,
//! and the closed-form drift update for linear Gaussian models.

use nalgebra::{DMatrix, DVector};

use super::model::{GaussianTrajectory, KalmanBackward, KalmanForward, LinearModel};
use crate::diffusion::ObservationIncrements;
use crate::math::{symmetrize, try_invert};
use crate::{Error, Result};

fn check_obs(model: &LinearModel, obs: &ObservationIncrements) -> Result<()> {
    if obs.obs_dim() != model.obs_dim() {
        return Err(Error::InvalidObservations(format!(
            "observation dimension {} does not match the model's {}",
            obs.obs_dim(),
            model.obs_dim()
        )));
    }
    Ok(())
}

fn ensure_finite_vec(v: &DVector<f64>, what: &str, time: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.into(),
            time,
        })
    }
}

fn ensure_finite_mat(m: &DMatrix<f64>, what: &str, time: f64) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.into(),
            time,
        })
    }
}

/// Filtering pass: the conditional mean follows an Euler step in the
/// observation increments while the covariance Riccati equation is
/// integrated with a fourth-order step and symmetrized.
pub fn kalman_forward(model: &LinearModel, obs: &ObservationIncrements) -> Result<KalmanForward> {
    check_obs(model, obs)?;
    let n = model.state_dim();
    let dt = obs.dt();
    let n_steps = obs.n_steps();
    let sigma2 = model.sigma() * model.sigma();
    let eta2_inv = 1.0 / (model.eta() * model.eta());
    let hth: DMatrix<f64> = model.h().transpose() * model.h() * eta2_inv;

    let riccati = |p: &DMatrix<f64>| -> DMatrix<f64> {
        let mut rhs: DMatrix<f64> = model.f() * p;
        rhs += p * model.f().transpose();
        rhs -= p * &hth * p;
        for i in 0..n {
            rhs[(i, i)] += sigma2;
        }
        rhs
    };

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut mu_pi = Vec::with_capacity(n_steps + 1);
    let mut p_pi = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    mu_pi.push(model.mu0().clone());
    p_pi.push(symmetrize(model.p0()));

    for k in 0..n_steps {
        let t_next = (k + 1) as f64 * dt;
        let mu_k = &mu_pi[k];
        let p_k = &p_pi[k];

        let innovation: DVector<f64> = obs.increment(k) - model.h() * mu_k * dt;
        let gain_dir: DVector<f64> = model.h().transpose() * (&innovation * eta2_inv);
        let mu_next: DVector<f64> = mu_k + model.f() * mu_k * dt + p_k * gain_dir;

        let k1 = riccati(p_k);
        let k2 = riccati(&(p_k + &k1 * (dt / 2.0)));
        let k3 = riccati(&(p_k + &k2 * (dt / 2.0)));
        let k4 = riccati(&(p_k + &k3 * dt));
        let p_next = symmetrize(&(p_k + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)));

        ensure_finite_vec(&mu_next, "filter mean", t_next)?;
        ensure_finite_mat(&p_next, "filter covariance", t_next)?;
        times.push(t_next);
        mu_pi.push(mu_next);
        p_pi.push(p_next);
    }

    Ok(KalmanForward { times, mu_pi, p_pi })
}

/// Backward pass in information form, integrated from zero precision and
/// zero information vector at the horizon. The observation increment on
/// each step enters as a constant forcing over that step.
pub fn kalman_backward(
    model: &LinearModel,
    obs: &ObservationIncrements,
) -> Result<KalmanBackward> {
    check_obs(model, obs)?;
    let n = model.state_dim();
    let dt = obs.dt();
    let n_steps = obs.n_steps();
    let sigma2 = model.sigma() * model.sigma();
    let eta2_inv = 1.0 / (model.eta() * model.eta());
    let f_t: DMatrix<f64> = model.f().transpose();
    let hth: DMatrix<f64> = model.h().transpose() * model.h() * eta2_inv;
    let h = -dt;

    let mut times = vec![0.0; n_steps + 1];
    for (k, t) in times.iter_mut().enumerate() {
        *t = k as f64 * dt;
    }
    let mut j_beta = vec![DMatrix::<f64>::zeros(n, n); n_steps + 1];
    let mut jmu = vec![DVector::<f64>::zeros(n); n_steps + 1];

    for k in (1..=n_steps).rev() {
        let forcing: DVector<f64> =
            model.h().transpose() * (obs.increment(k - 1) * (eta2_inv / dt));
        let dj = |j: &DMatrix<f64>| -> DMatrix<f64> {
            let mut rhs: DMatrix<f64> = -(&f_t * j);
            rhs -= j * model.f();
            rhs += j * j * sigma2;
            rhs -= &hth;
            rhs
        };
        let db = |j: &DMatrix<f64>, b: &DVector<f64>| -> DVector<f64> {
            let mut rhs: DVector<f64> = -(&f_t * b);
            rhs += j * b * sigma2;
            rhs -= &forcing;
            rhs
        };

        let j0 = &j_beta[k];
        let b0 = &jmu[k];
        let k1j = dj(j0);
        let k1b = db(j0, b0);
        let j_half1: DMatrix<f64> = j0 + &k1j * (h / 2.0);
        let b_half1: DVector<f64> = b0 + &k1b * (h / 2.0);
        let k2j = dj(&j_half1);
        let k2b = db(&j_half1, &b_half1);
        let j_half2: DMatrix<f64> = j0 + &k2j * (h / 2.0);
        let b_half2: DVector<f64> = b0 + &k2b * (h / 2.0);
        let k3j = dj(&j_half2);
        let k3b = db(&j_half2, &b_half2);
        let j_full: DMatrix<f64> = j0 + &k3j * h;
        let b_full: DVector<f64> = b0 + &k3b * h;
        let k4j = dj(&j_full);
        let k4b = db(&j_full, &b_full);

        let j_prev = symmetrize(&(j0 + (k1j + k2j * 2.0 + k3j * 2.0 + k4j) * (h / 6.0)));
        let b_prev: DVector<f64> = b0 + (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * (h / 6.0);

        let t_prev = times[k - 1];
        ensure_finite_mat(&j_prev, "backward precision", t_prev)?;
        ensure_finite_vec(&b_prev, "backward information vector", t_prev)?;
        j_beta[k - 1] = j_prev;
        jmu[k - 1] = b_prev;
    }

    Ok(KalmanBackward {
        times,
        j_beta,
        jmu,
    })
}

/// Merges the two passes into the smoothing law per grid time. Where the
/// backward precision is exactly zero the smoother equals the filter and
/// the filter values are taken verbatim.
pub fn kalman_smoother_combine(
    fwd: KalmanForward,
    bwd: KalmanBackward,
) -> Result<GaussianTrajectory> {
    if fwd.times.len() != bwd.times.len()
        || fwd
            .times
            .iter()
            .zip(bwd.times.iter())
            .any(|(a, b)| a != b)
    {
        return Err(Error::GridMismatch(
            "forward and backward passes are on different time grids".into(),
        ));
    }

    let len = fwd.times.len();
    let mut mu_rho = Vec::with_capacity(len);
    let mut p_rho = Vec::with_capacity(len);
    for k in 0..len {
        if bwd.j_beta[k].amax() == 0.0 {
            mu_rho.push(fwd.mu_pi[k].clone());
            p_rho.push(fwd.p_pi[k].clone());
        } else {
            let p_pi_inv = try_invert(&fwd.p_pi[k], "filter covariance")?;
            let combined: DMatrix<f64> = &p_pi_inv + &bwd.j_beta[k];
            let p = symmetrize(&try_invert(&combined, "combined precision")?);
            let mu: DVector<f64> = &p * (&p_pi_inv * &fwd.mu_pi[k] + &bwd.jmu[k]);
            mu_rho.push(mu);
            p_rho.push(p);
        }
    }

    Ok(GaussianTrajectory {
        times: fwd.times,
        mu_pi: fwd.mu_pi,
        p_pi: fwd.p_pi,
        j_beta: bwd.j_beta,
        jmu: bwd.jmu,
        mu_rho,
        p_rho,
    })
}

/// Filter, backward pass, and combination in one call.
pub fn kalman_smoother(
    model: &LinearModel,
    obs: &ObservationIncrements,
) -> Result<GaussianTrajectory> {
    let fwd = kalman_forward(model, obs)?;
    let bwd = kalman_backward(model, obs)?;
    kalman_smoother_combine(fwd, bwd)
}

/// Independent smoother recursion driven directly by the filter output,
/// integrated backward from the filter law at the horizon. Exists to
/// cross-check the product-form smoother; not used by the estimators.
pub fn rts_smoother_check(
    model: &LinearModel,
    fwd: &KalmanForward,
) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let len = fwd.times.len();
    if len < 2 {
        return Err(Error::InvalidArgument(
            "smoother check needs at least one grid step".into(),
        ));
    }
    let n = model.state_dim();
    let sigma2 = model.sigma() * model.sigma();
    let dt = fwd.times[1] - fwd.times[0];
    let h = -dt;

    let mut mu_s = vec![DVector::<f64>::zeros(n); len];
    let mut p_s = vec![DMatrix::<f64>::zeros(n, n); len];
    mu_s[len - 1] = fwd.mu_pi[len - 1].clone();
    p_s[len - 1] = fwd.p_pi[len - 1].clone();

    for k in (1..len).rev() {
        let gain_at = |p_f: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            let inv = try_invert(p_f, "filter covariance")?;
            Ok(model.f() + inv * sigma2)
        };
        let g_right = gain_at(&fwd.p_pi[k])?;
        let g_left = gain_at(&fwd.p_pi[k - 1])?;
        let p_mid = (&fwd.p_pi[k] + &fwd.p_pi[k - 1]) * 0.5;
        let g_mid = gain_at(&p_mid)?;
        let mu_mid: DVector<f64> = (&fwd.mu_pi[k] + &fwd.mu_pi[k - 1]) * 0.5;

        let force_right: DVector<f64> = (model.f() - &g_right) * &fwd.mu_pi[k];
        let force_left: DVector<f64> = (model.f() - &g_left) * &fwd.mu_pi[k - 1];
        let force_mid: DVector<f64> = (model.f() - &g_mid) * &mu_mid;

        let dmu = |g: &DMatrix<f64>, force: &DVector<f64>, mu: &DVector<f64>| -> DVector<f64> {
            g * mu + force
        };
        let dp = |g: &DMatrix<f64>, p: &DMatrix<f64>| -> DMatrix<f64> {
            let mut rhs: DMatrix<f64> = g * p;
            rhs += p * g.transpose();
            for i in 0..n {
                rhs[(i, i)] -= sigma2;
            }
            rhs
        };

        let mu0 = &mu_s[k];
        let p0 = &p_s[k];
        let k1m = dmu(&g_right, &force_right, mu0);
        let k1p = dp(&g_right, p0);
        let mu_h1: DVector<f64> = mu0 + &k1m * (h / 2.0);
        let p_h1: DMatrix<f64> = p0 + &k1p * (h / 2.0);
        let k2m = dmu(&g_mid, &force_mid, &mu_h1);
        let k2p = dp(&g_mid, &p_h1);
        let mu_h2: DVector<f64> = mu0 + &k2m * (h / 2.0);
        let p_h2: DMatrix<f64> = p0 + &k2p * (h / 2.0);
        let k3m = dmu(&g_mid, &force_mid, &mu_h2);
        let k3p = dp(&g_mid, &p_h2);
        let mu_full: DVector<f64> = mu0 + &k3m * h;
        let p_full: DMatrix<f64> = p0 + &k3p * h;
        let k4m = dmu(&g_left, &force_left, &mu_full);
        let k4p = dp(&g_left, &p_full);

        let mu_prev: DVector<f64> = mu0 + (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (h / 6.0);
        let p_prev = symmetrize(&(p0 + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0)));

        let t_prev = fwd.times[k - 1];
        ensure_finite_vec(&mu_prev, "smoother mean", t_prev)?;
        ensure_finite_mat(&p_prev, "smoother covariance", t_prev)?;
        mu_s[k - 1] = mu_prev;
        p_s[k - 1] = p_prev;
    }

    Ok((mu_s, p_s))
}

/// Closed-form drift update: the smoothed cross and second moments are
/// integrated with the trapezoid rule and the new drift matrix is returned.
pub fn kalman_em_update(model: &LinearModel, traj: &GaussianTrajectory) -> Result<DMatrix<f64>> {
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

    let mut cross: DMatrix<f64> = DMatrix::zeros(n, n);
    let mut moment: DMatrix<f64> = DMatrix::zeros(n, n);
    for k in 0..len {
        let w = if k == 0 || k == len - 1 { dt / 2.0 } else { dt };
        let mu = &traj.mu_rho[k];
        let resid: DVector<f64> = &traj.j_beta[k] * mu - &traj.jmu[k];
        let mut c: DMatrix<f64> = &resid * mu.transpose();
        c += &traj.j_beta[k] * &traj.p_rho[k];
        cross += c * w;
        let mut m2: DMatrix<f64> = mu * mu.transpose();
        m2 += &traj.p_rho[k];
        moment += m2 * w;
    }

    let inv = try_invert(&moment, "smoothed second moment")?;
    let f_next: DMatrix<f64> = model.f() - cross * inv * sigma2;
    Ok(f_next)
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn pseudo_random_model(n: usize, m: usize, salt: u64) -> LinearModel {
        let noise = |i: u64| -> f64 {
            let mut z = salt
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(i.wrapping_mul(0xbf58476d1ce4e5b9));
            z ^= z >> 31;
            z = z.wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 29;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let f = DMatrix::from_fn(n, n, |i, j| 0.8 * noise((i * n + j) as u64));
        let h = DMatrix::from_fn(m, n, |i, j| 0.9 * noise((100 + i * n + j) as u64));
        let mu0 = DVector::from_fn(n, |i, _| 0.5 * noise((200 + i) as u64));
        let mut p0 = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = 0.3 * noise((300 + i * n + j) as u64);
                p0[(i, j)] += v * v;
                p0[(i, i)] += v * v;
            }
        }
        for i in 0..n {
            p0[(i, i)] += 0.4;
        }
        let p0 = crate::math::symmetrize(&p0);
        LinearModel::new(f, h, 0.6, 0.5, mu0, p0).unwrap()
    }

    #[test]
    fn pure_prediction_matches_the_closed_form() {
        let n = 3;
        let sigma = 0.7;
        let model = LinearModel::new(
            DMatrix::zeros(n, n),
            DMatrix::zeros(1, n),
            sigma,
            0.4,
            DVector::from_row_slice(&[0.3, -1.0, 2.0]),
            DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 0.5, 2.0])),
        )
        .unwrap();
        let obs = smooth_increments(1, 0.01, 200);
        let fwd = kalman_forward(&model, &obs).unwrap();
        for (k, t) in fwd.times.iter().enumerate() {
            assert!((&fwd.mu_pi[k] - model.mu0()).amax() <= 1e-12);
            let expected = model.p0() + DMatrix::identity(n, n) * (sigma * sigma * t);
            assert!((&fwd.p_pi[k] - expected).amax() <= 1e-12);
        }
    }

    #[test]
    fn riccati_fixed_point_is_preserved_exactly() {
        let model = LinearModel::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            0.5,
            2.0,
            DVector::from_element(1, 0.2),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let obs = smooth_increments(1, 0.05, 100);
        let fwd = kalman_forward(&model, &obs).unwrap();
        for p in &fwd.p_pi {
            assert_eq!(p[(0, 0)], 1.0);
        }
    }

    #[test]
    fn backward_pass_vanishes_without_observation_coupling() {
        let model = LinearModel::new(
            DMatrix::from_row_slice(2, 2, &[0.1, -0.4, 0.3, -0.2]),
            DMatrix::zeros(1, 2),
            0.5,
            0.7,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let obs = smooth_increments(1, 0.02, 50);
        let bwd = kalman_backward(&model, &obs).unwrap();
        for k in 0..bwd.times.len() {
            assert_eq!(bwd.j_beta[k].amax(), 0.0);
            assert_eq!(bwd.jmu[k].amax(), 0.0);
        }
    }

    #[test]
    fn smoother_equals_filter_at_the_horizon() {
        let model = pseudo_random_model(3, 2, 7);
        let obs = smooth_increments(2, 0.01, 80);
        let fwd = kalman_forward(&model, &obs).unwrap();
        let bwd = kalman_backward(&model, &obs).unwrap();
        let last = fwd.times.len() - 1;
        assert_eq!(bwd.j_beta[last].amax(), 0.0);
        assert_eq!(bwd.jmu[last].amax(), 0.0);
        let traj = kalman_smoother_combine(fwd.clone(), bwd).unwrap();
        assert_eq!(traj.mu_rho[last], fwd.mu_pi[last]);
        assert_eq!(traj.p_rho[last], fwd.p_pi[last]);
    }

    #[test]
    fn covariances_stay_symmetric_positive_semidefinite() {
        let model = pseudo_random_model(3, 2, 11);
        let obs = smooth_increments(2, 0.01, 150);
        let traj = kalman_smoother(&model, &obs).unwrap();
        for k in 0..traj.times.len() {
            for m in [&traj.p_pi[k], &traj.p_rho[k], &traj.j_beta[k]] {
                assert_eq!(m, &symmetrize(m));
                assert!(m.symmetric_eigenvalues().min() >= -1e-10);
            }
        }
    }

    #[test]
    fn product_smoother_matches_the_direct_backward_integration() {
        for n in 1..=4usize {
            let m = (n + 1) / 2;
            let model = pseudo_random_model(n, m, 20 + n as u64);
            let obs = smooth_increments(m, 2e-6, 50_000);
            let fwd = kalman_forward(&model, &obs).unwrap();
            let (mu_rts, p_rts) = rts_smoother_check(&model, &fwd).unwrap();
            let bwd = kalman_backward(&model, &obs).unwrap();
            let traj = kalman_smoother_combine(fwd, bwd).unwrap();
            let mut worst = 0.0f64;
            for k in 0..traj.times.len() {
                let dmu = (&traj.mu_rho[k] - &mu_rts[k]).amax() / (1.0 + mu_rts[k].amax());
                let dp = (&traj.p_rho[k] - &p_rts[k]).amax() / (1.0 + p_rts[k].amax());
                worst = worst.max(dmu).max(dp);
            }
            assert!(worst <= 1e-6, "n = {n}: smoother forms differ by {worst}");
        }
    }

    #[test]
    fn data_driven_quantities_converge_at_first_order() {
        let model = pseudo_random_model(2, 2, 31);
        let run = |dt: f64, n_steps: usize| {
            let obs = smooth_increments(2, dt, n_steps);
            let traj = kalman_smoother(&model, &obs).unwrap();
            let f_next = kalman_em_update(&model, &traj).unwrap();
            (
                traj.mu_pi.last().unwrap().clone(),
                traj.mu_rho[n_steps / 2].clone(),
                f_next,
            )
        };
        let coarse = run(4e-3, 250);
        let mid = run(2e-3, 500);
        let fine = run(1e-3, 1000);
        let checks = [
            (
                (&coarse.0 - &mid.0).amax(),
                (&mid.0 - &fine.0).amax(),
                "filter mean",
            ),
            (
                (&coarse.1 - &mid.1).amax(),
                (&mid.1 - &fine.1).amax(),
                "smoothed mean",
            ),
            (
                (&coarse.2 - &mid.2).amax(),
                (&mid.2 - &fine.2).amax(),
                "drift update",
            ),
        ];
        for (d1, d2, what) in checks {
            let ratio = d1 / d2;
            assert!(
                (1.5..=2.5).contains(&ratio),
                "{what}: halving ratio {ratio} (gaps {d1}, {d2})"
            );
        }
    }

    #[test]
    fn drift_update_is_a_fixed_point_without_observation_coupling() {
        let f = DMatrix::from_row_slice(2, 2, &[-0.3, 0.5, -0.1, -0.8]);
        let model = LinearModel::new(
            f.clone(),
            DMatrix::zeros(1, 2),
            0.4,
            0.6,
            DVector::from_row_slice(&[1.0, -1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let obs = smooth_increments(1, 0.01, 100);
        let traj = kalman_smoother(&model, &obs).unwrap();
        let f_next = kalman_em_update(&model, &traj).unwrap();
        assert_eq!(f_next, f);
    }

    #[test]
    fn singular_filter_covariance_is_reported() {
        let model = LinearModel::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            1.0,
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let obs = smooth_increments(1, 0.1, 10);
        let fwd = kalman_forward(&model, &obs).unwrap();
        let bwd = kalman_backward(&model, &obs).unwrap();
        let err = kalman_smoother_combine(fwd, bwd).unwrap_err();
        match err {
            Error::SingularMatrix { what, .. } => assert_eq!(what, "filter covariance"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let model = pseudo_random_model(2, 1, 3);
        let fwd = kalman_forward(&model, &smooth_increments(1, 0.01, 50)).unwrap();
        let bwd = kalman_backward(&model, &smooth_increments(1, 0.01, 40)).unwrap();
        assert!(matches!(
            kalman_smoother_combine(fwd, bwd),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn mismatched_observation_dimension_is_rejected() {
        let model = pseudo_random_model(2, 2, 5);
        let obs = smooth_increments(1, 0.01, 10);
        assert!(matches!(
            kalman_forward(&model, &obs),
            Err(Error::InvalidObservations(_))
        ));
        assert!(matches!(
            kalman_backward(&model, &obs),
            Err(Error::InvalidObservations(_))
        ));
    }

}
