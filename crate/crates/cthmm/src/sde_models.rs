//! Ready-made diffusion models (bearings-only tracking, cubic sensors,
//! Lorenz 96, generic linear dynamics) and a joint hidden-path and
//! observation simulator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{
    DecompCoeffFn, DecompOffsetFn, DiffusionModel, DriftFn, DriftJacobianFn, InitialState,
    ObsFn, ObsJacobianFn, ObservationIncrements,
};
use crate::rng::{substream, Purpose};
use crate::{Error, Result};

/// One simulated hidden path together with its observation increments.
/// There is one increment per step, so `increments.len() + 1 == states.len()`.
#[derive(Clone, Debug)]
pub struct SimulatedPath {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub increments: Vec<DVector<f64>>,
    pub seed: u64,
}

impl SimulatedPath {
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn t_end(&self) -> f64 {
        self.dt * self.increments.len() as f64
    }

    /// The observation side of the path, ready for the estimators.
    pub fn observations(&self) -> Result<ObservationIncrements> {
        ObservationIncrements::new(self.dt, self.increments.clone())
    }
}

/// Simulates the hidden diffusion with an explicit Euler step and the
/// observation increments alongside it. The initial state, state noise, and
/// observation noise come from three separate streams of the seed, so
/// estimation runs on other purposes never replay them.
pub fn euler_maruyama_simulate(
    model: &DiffusionModel,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<SimulatedPath> {
    euler_maruyama_simulate_substeps(model, t_end, dt, 1, seed)
}

/// Same simulation, but each recording step of length `dt` is integrated
/// with `substeps` internal Euler steps of length `dt / substeps`. States
/// are recorded on the coarse grid and observation increments are summed
/// over the fine steps, so the returned path is sampled from a better
/// approximation of the continuous dynamics while the estimators still see
/// step `dt`. With `substeps = 1` this is exactly
/// [`euler_maruyama_simulate`], noise draws included.
pub fn euler_maruyama_simulate_substeps(
    model: &DiffusionModel,
    t_end: f64,
    dt: f64,
    substeps: usize,
    seed: u64,
) -> Result<SimulatedPath> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "simulation horizon and step must be positive and finite, got T = {t_end}, dt = {dt}"
        )));
    }
    if substeps == 0 || substeps >= 1 << 24 {
        return Err(Error::InvalidArgument(format!(
            "substeps must lie in 1..2^24, got {substeps}"
        )));
    }
    let n_steps = (t_end / dt).round().max(1.0) as usize;
    if n_steps >= u32::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "step count {n_steps} exceeds the stream address space"
        )));
    }
    let n = model.state_dim();
    let m = model.obs_dim();
    let h = dt / substeps as f64;
    let state_scale = model.sigma() * h.sqrt();
    let obs_scale = model.eta() * h.sqrt();

    let mut init_rng = substream(seed, Purpose::Init, 0, 0);
    let x0 = match model.init() {
        InitialState::Point(p) => p.clone(),
        InitialState::Sampler(s) => s(&mut init_rng),
    };
    if x0.len() != n {
        return Err(Error::InvalidModel(format!(
            "initial sampler produced dimension {}, expected {n}",
            x0.len()
        )));
    }

    let mut states = Vec::with_capacity(n_steps + 1);
    let mut increments = Vec::with_capacity(n_steps);
    states.push(x0);
    for k in 0..n_steps {
        let mut x = states[k].clone();
        let mut dy = DVector::zeros(m);
        for s in 0..substeps {
            let t = k as f64 * dt + s as f64 * h;
            let f = model.drift(&x);
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "drift".into(),
                    time: t,
                });
            }

            let mut obs_rng = substream(seed, Purpose::ObsNoise, s as u32, k as u32);
            dy += model.obs_drift(&x) * h;
            for d in 0..m {
                let z: f64 = StandardNormal.sample(&mut obs_rng);
                dy[d] += obs_scale * z;
            }

            let mut state_rng = substream(seed, Purpose::StateNoise, s as u32, k as u32);
            x += f * h;
            for d in 0..n {
                let z: f64 = StandardNormal.sample(&mut state_rng);
                x[d] += state_scale * z;
            }
            if x.iter().any(|v| !v.is_finite()) || dy.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "simulated state".into(),
                    time: t + h,
                });
            }
        }
        increments.push(dy);
        states.push(x);
    }

    Ok(SimulatedPath {
        dt,
        states,
        increments,
        seed,
    })
}

/// Drift, Jacobian, and decomposition closures for `f(x) = F x` with the
/// whole matrix as the parameter, stored column by column.
fn matrix_drift_pieces(
    n: usize,
) -> (
    Arc<DriftFn>,
    Arc<DriftJacobianFn>,
    Arc<DecompCoeffFn>,
    Arc<DecompOffsetFn>,
) {
    let drift: Arc<DriftFn> = Arc::new(move |x, th| {
        let f = DMatrix::from_column_slice(x.len(), x.len(), th.as_slice());
        f * x
    });
    let jac: Arc<DriftJacobianFn> =
        Arc::new(move |x, th| DMatrix::from_column_slice(x.len(), x.len(), th.as_slice()));
    let coeff: Arc<DecompCoeffFn> = Arc::new(move |x| {
        let mut a = DMatrix::zeros(n, n * n);
        for j in 0..n {
            for i in 0..n {
                a[(i, j * n + i)] = x[j];
            }
        }
        a
    });
    let offset: Arc<DecompOffsetFn> = Arc::new(move |_x| DVector::zeros(n));
    (drift, jac, coeff, offset)
}

/// Elementwise cubic observation map and its diagonal Jacobian.
fn cubic_sensor_pieces(d: usize) -> (Arc<ObsFn>, Arc<ObsJacobianFn>) {
    let obs: Arc<ObsFn> = Arc::new(|x| x.map(|v| v * v * v));
    let jac: Arc<ObsJacobianFn> = Arc::new(move |x| {
        DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| 3.0 * x[i] * x[i]))
    });
    (obs, jac)
}

/// Linear dynamics `dX = F X dt`, observed through `dY = H X dt`, with the
/// whole drift matrix as the parameter. Noise scales default to one and the
/// initial state to the origin.
pub fn linear(f: DMatrix<f64>, h: DMatrix<f64>) -> Result<DiffusionModel> {
    let n = f.nrows();
    if f.ncols() != n || n == 0 {
        return Err(Error::InvalidModel(format!(
            "drift matrix must be square and nonempty, got {} x {}",
            f.nrows(),
            f.ncols()
        )));
    }
    if h.ncols() != n || h.nrows() == 0 {
        return Err(Error::InvalidModel(format!(
            "observation matrix must have {n} columns and at least one row, got {} x {}",
            h.nrows(),
            h.ncols()
        )));
    }
    let m = h.nrows();
    let theta = DVector::from_column_slice(f.as_slice());
    let (drift, jac, coeff, offset) = matrix_drift_pieces(n);
    let h_obs = h.clone();
    let obs: Arc<ObsFn> = Arc::new(move |x| &h_obs * x);
    let obs_jac: Arc<ObsJacobianFn> = Arc::new(move |_x| h.clone());
    Ok(DiffusionModel::new(
        n,
        m,
        theta,
        drift,
        obs,
        1.0,
        1.0,
        InitialState::Point(DVector::zeros(n)),
    )?
    .with_drift_jacobian(jac)
    .with_obs_jacobian(obs_jac)
    .with_linear_decomp(coeff, offset))
}

/// Planar tracking with constant unknown acceleration: the state is
/// (x, vx, y, vy), the parameter the acceleration pair, and the observation
/// the bearing angle arctan(y/x) seen from the origin. The observation
/// Jacobian degenerates at the origin, where the bearing is undefined.
pub fn bearings() -> DiffusionModel {
    let drift: Arc<DriftFn> =
        Arc::new(|x, th| DVector::from_column_slice(&[x[1], th[0], x[3], th[1]]));
    let jac: Arc<DriftJacobianFn> = Arc::new(|_x, _th| {
        let mut j = DMatrix::zeros(4, 4);
        j[(0, 1)] = 1.0;
        j[(2, 3)] = 1.0;
        j
    });
    let coeff: Arc<DecompCoeffFn> = Arc::new(|_x| {
        let mut a = DMatrix::zeros(4, 2);
        a[(1, 0)] = 1.0;
        a[(3, 1)] = 1.0;
        a
    });
    let offset: Arc<DecompOffsetFn> =
        Arc::new(|x| DVector::from_column_slice(&[x[1], 0.0, x[3], 0.0]));
    let obs: Arc<ObsFn> = Arc::new(|x| DVector::from_element(1, (x[2] / x[0]).atan()));
    let obs_jac: Arc<ObsJacobianFn> = Arc::new(|x| {
        let r2 = x[0] * x[0] + x[2] * x[2];
        DMatrix::from_row_slice(1, 4, &[-x[2] / r2, 0.0, x[0] / r2, 0.0])
    });
    DiffusionModel::new(
        4,
        1,
        DVector::from_column_slice(&[-0.5, -1.0]),
        drift,
        obs,
        0.1,
        0.02,
        InitialState::Point(DVector::from_column_slice(&[0.0, 1.0, 1.0, 0.0])),
    )
    .expect("fixed construction is valid")
    .with_drift_jacobian(jac)
    .with_obs_jacobian(obs_jac)
    .with_linear_decomp(coeff, offset)
}

/// Cubic sensor observations over linear dynamics with the whole drift
/// matrix unknown. Defaults to the planar rotation matrix, extended to a
/// skew band for higher dimensions.
pub fn cubic_matrix(d: usize) -> Result<DiffusionModel> {
    if d == 0 {
        return Err(Error::InvalidModel("dimension must be positive".into()));
    }
    let mut f = DMatrix::<f64>::zeros(d, d);
    for i in 0..d.saturating_sub(1) {
        f[(i, i + 1)] = 1.0;
        f[(i + 1, i)] = -1.0;
    }
    let theta = DVector::from_column_slice(f.as_slice());
    let (drift, jac, coeff, offset) = matrix_drift_pieces(d);
    let (obs, obs_jac) = cubic_sensor_pieces(d);
    let mut x0 = DVector::zeros(d);
    x0[0] = 1.0;
    Ok(DiffusionModel::new(
        d,
        d,
        theta,
        drift,
        obs,
        0.2,
        0.2,
        InitialState::Point(x0),
    )?
    .with_drift_jacobian(jac)
    .with_obs_jacobian(obs_jac)
    .with_linear_decomp(coeff, offset))
}

/// Cubic sensor observations over `dX = lambda L X dt` with a fixed
/// tridiagonal coupling pattern and the scalar gain unknown.
pub fn cubic_tridiagonal(d: usize) -> Result<DiffusionModel> {
    if d < 2 {
        return Err(Error::InvalidModel(
            "tridiagonal coupling needs dimension at least two".into(),
        ));
    }
    let mut l = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        l[(i, i)] = if i == 0 || i == d - 1 { -1.0 } else { -2.0 };
        if i + 1 < d {
            l[(i, i + 1)] = 1.0;
            l[(i + 1, i)] = 1.0;
        }
    }
    let l_drift = l.clone();
    let drift: Arc<DriftFn> = Arc::new(move |x, th| &l_drift * x * th[0]);
    let l_jac = l.clone();
    let jac: Arc<DriftJacobianFn> = Arc::new(move |_x, th| &l_jac * th[0]);
    let coeff: Arc<DecompCoeffFn> = Arc::new(move |x| {
        let col = &l * x;
        DMatrix::from_column_slice(x.len(), 1, col.as_slice())
    });
    let offset: Arc<DecompOffsetFn> = Arc::new(|x| DVector::zeros(x.len()));
    let (obs, obs_jac) = cubic_sensor_pieces(d);
    let x0 = DVector::from_fn(d, |i, _| -1.0 + 2.0 * i as f64 / (d - 1) as f64);
    Ok(DiffusionModel::new(
        d,
        d,
        DVector::from_element(1, 5.0),
        drift,
        obs,
        0.2,
        0.01,
        InitialState::Point(x0),
    )?
    .with_drift_jacobian(jac)
    .with_obs_jacobian(obs_jac)
    .with_linear_decomp(coeff, offset))
}

/// Cyclic advection with an unknown forcing constant, observed through the
/// cubic sensor. Starts at the equilibrium of the default forcing.
pub fn lorenz96(d: usize) -> Result<DiffusionModel> {
    if d < 4 {
        return Err(Error::InvalidModel(
            "cyclic advection needs dimension at least four".into(),
        ));
    }
    let advection: Arc<ObsFn> = Arc::new(move |x| {
        DVector::from_fn(d, |i, _| {
            let ip1 = (i + 1) % d;
            let im1 = (i + d - 1) % d;
            let im2 = (i + d - 2) % d;
            (x[ip1] - x[im2]) * x[im1] - x[i]
        })
    });
    let adv_drift = Arc::clone(&advection);
    let drift: Arc<DriftFn> = Arc::new(move |x, th| adv_drift(x).add_scalar(th[0]));
    let jac: Arc<DriftJacobianFn> = Arc::new(move |x, _th| {
        let mut j = DMatrix::zeros(d, d);
        for i in 0..d {
            let ip1 = (i + 1) % d;
            let im1 = (i + d - 1) % d;
            let im2 = (i + d - 2) % d;
            j[(i, ip1)] += x[im1];
            j[(i, im2)] -= x[im1];
            j[(i, im1)] += x[ip1] - x[im2];
            j[(i, i)] -= 1.0;
        }
        j
    });
    let coeff: Arc<DecompCoeffFn> = Arc::new(move |_x| DMatrix::from_element(d, 1, 1.0));
    let offset: Arc<DecompOffsetFn> = Arc::new(move |x| advection(x));
    let (obs, obs_jac) = cubic_sensor_pieces(d);
    Ok(DiffusionModel::new(
        d,
        d,
        DVector::from_element(1, 8.0),
        drift,
        obs,
        1.0,
        5.0,
        InitialState::Point(DVector::from_element(d, 8.0)),
    )?
    .with_drift_jacobian(jac)
    .with_obs_jacobian(obs_jac)
    .with_linear_decomp(coeff, offset))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_models_pass_the_consistency_check() {
        let models: Vec<(&str, DiffusionModel)> = vec![
            ("bearings", bearings()),
            ("cubic matrix d=2", cubic_matrix(2).unwrap()),
            ("cubic matrix d=3", cubic_matrix(3).unwrap()),
            ("tridiagonal d=2", cubic_tridiagonal(2).unwrap()),
            ("tridiagonal d=5", cubic_tridiagonal(5).unwrap()),
            ("lorenz d=4", lorenz96(4).unwrap()),
            ("lorenz d=10", lorenz96(10).unwrap()),
            (
                "linear",
                linear(
                    DMatrix::from_row_slice(2, 2, &[-0.5, 0.3, 0.1, -0.9]),
                    DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
                )
                .unwrap(),
            ),
        ];
        for (name, model) in models {
            model
                .check_consistency(42, 100)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn equilibrium_start_has_exactly_zero_drift() {
        let model = lorenz96(10).unwrap();
        let x0 = DVector::from_element(10, 8.0);
        assert_eq!(model.drift(&x0).amax(), 0.0);
    }

    #[test]
    fn cyclic_drift_commutes_with_rotation() {
        let d = 6;
        let model = lorenz96(d).unwrap();
        let x = DVector::from_fn(d, |i, _| (i as f64 * 0.7 + 0.3).sin() * 2.0);
        let fx = model.drift(&x);
        for shift in 1..d {
            let rotated = DVector::from_fn(d, |i, _| x[(i + shift) % d]);
            let f_rotated = model.drift(&rotated);
            for i in 0..d {
                assert_eq!(f_rotated[i], fx[(i + shift) % d]);
            }
        }
    }

    #[test]
    fn bearing_drift_matches_hand_computation() {
        let model = bearings();
        let x = DVector::from_column_slice(&[0.0, 1.0, 1.0, 0.0]);
        let f = model.drift(&x);
        assert_eq!(f.as_slice(), &[1.0, -0.5, 0.0, -1.0]);
        let d = model.linear_decomp().unwrap();
        let rebuilt = (d.coeff)(&x) * model.theta() + (d.offset)(&x);
        assert_eq!(rebuilt, f);
    }

    #[test]
    fn bearing_jacobian_degenerates_at_the_origin() {
        let model = bearings();
        let origin = DVector::from_column_slice(&[0.0, 1.0, 0.0, -1.0]);
        let j = model.obs_jacobian(&origin);
        assert!(j[(0, 0)].is_nan() && j[(0, 2)].is_nan());
        let off_origin = DVector::from_column_slice(&[0.0, 1.0, 1.0, 0.0]);
        let j = model.obs_jacobian(&off_origin);
        assert_eq!(j[(0, 0)], -1.0);
        assert_eq!(j[(0, 2)], 0.0);
    }

    #[test]
    fn tridiagonal_coupling_has_the_minimal_pattern() {
        let model = cubic_tridiagonal(2).unwrap();
        let x = DVector::from_column_slice(&[2.0, 5.0]);
        let f = model.drift_at(&x, &DVector::from_element(1, 3.0));
        assert_eq!(f.as_slice(), &[9.0, -9.0]);

        let model = cubic_tridiagonal(4).unwrap();
        let decomp = model.linear_decomp().unwrap();
        let mut l = DMatrix::<f64>::zeros(4, 4);
        for j in 0..4 {
            let e = DVector::from_fn(4, |i, _| if i == j { 1.0 } else { 0.0 });
            l.set_column(j, &(decomp.coeff)(&e).column(0).into_owned());
        }
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                -1.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0, 1.0,
                -1.0,
            ],
        );
        assert_eq!(l, expected);
    }

    #[test]
    fn default_rotation_matches_the_planar_case() {
        let model = cubic_matrix(2).unwrap();
        let f = DMatrix::from_column_slice(2, 2, model.theta().as_slice());
        assert_eq!(f, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    }

    #[test]
    fn zero_noise_paths_are_deterministic() {
        let model = linear(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0))
            .unwrap()
            .with_sigma(0.0)
            .unwrap()
            .with_eta(0.0)
            .unwrap()
            .with_init(InitialState::Point(DVector::from_element(1, 1.5)))
            .unwrap();
        let a = euler_maruyama_simulate(&model, 1.0, 0.1, 7).unwrap();
        let b = euler_maruyama_simulate(&model, 1.0, 0.1, 8).unwrap();
        for k in 0..a.states.len() {
            assert_eq!(a.states[k][0], 1.5);
            assert_eq!(b.states[k][0], 1.5);
        }
        for k in 0..a.n_steps() {
            assert_eq!(a.increments[k][0], 1.5 * 0.1);
        }
    }

    #[test]
    fn paths_replay_exactly_per_seed() {
        let model = cubic_tridiagonal(3).unwrap();
        let a = euler_maruyama_simulate(&model, 1.0, 0.01, 99).unwrap();
        let b = euler_maruyama_simulate(&model, 1.0, 0.01, 99).unwrap();
        let c = euler_maruyama_simulate(&model, 1.0, 0.01, 100).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.increments, b.increments);
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn path_shape_is_consistent() {
        let model = bearings();
        let path = euler_maruyama_simulate(&model, 3.0, 0.01, 5).unwrap();
        assert_eq!(path.states.len(), 301);
        assert_eq!(path.increments.len(), 300);
        assert_eq!(path.t_end(), 3.0);
        let obs = path.observations().unwrap();
        assert_eq!(obs.n_steps(), 300);
        assert_eq!(obs.obs_dim(), 1);
    }

    #[test]
    fn explosive_dynamics_report_the_blowup_time() {
        let model = lorenz96(4).unwrap();
        let err = euler_maruyama_simulate(&model, 60.0, 1.0, 1).unwrap_err();
        match err {
            Error::NonFinite { time, .. } => assert!(time > 0.0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn one_substep_is_the_plain_simulation() {
        let model = cubic_tridiagonal(3).unwrap();
        let plain = euler_maruyama_simulate(&model, 1.0, 0.01, 42).unwrap();
        let sub = euler_maruyama_simulate_substeps(&model, 1.0, 0.01, 1, 42).unwrap();
        assert_eq!(plain.states, sub.states);
        assert_eq!(plain.increments, sub.increments);
    }

    #[test]
    fn substeps_keep_a_coarse_recording_grid() {
        let model = lorenz96(10).unwrap();
        let path = euler_maruyama_simulate_substeps(&model, 1.0, 0.05, 10, 0).unwrap();
        assert_eq!(path.states.len(), 21);
        assert_eq!(path.increments.len(), 20);
        assert_eq!(path.observations().unwrap().dt(), 0.05);
        let largest = path
            .states
            .iter()
            .flat_map(|x| x.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(largest < 50.0, "chaotic path left the attractor: {largest}");
    }

    #[test]
    fn substep_refinement_converges_on_the_noiseless_flow() {
        let model = cubic_tridiagonal(2)
            .unwrap()
            .with_sigma(0.0)
            .unwrap()
            .with_eta(0.0)
            .unwrap();
        let dist = |a: &SimulatedPath, b: &SimulatedPath| {
            a.states
                .iter()
                .zip(&b.states)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0f64, f64::max)
        };
        let reference = euler_maruyama_simulate_substeps(&model, 1.0, 0.5, 4096, 7).unwrap();
        let coarse = euler_maruyama_simulate_substeps(&model, 1.0, 0.5, 16, 7).unwrap();
        let fine = euler_maruyama_simulate_substeps(&model, 1.0, 0.5, 64, 7).unwrap();
        let coarse_err = dist(&coarse, &reference);
        let fine_err = dist(&fine, &reference);
        assert!(fine_err < coarse_err / 2.0, "{fine_err} vs {coarse_err}");
        assert!(fine_err < 1e-2);
    }

    #[test]
    fn zero_substeps_are_rejected() {
        let model = bearings();
        assert!(euler_maruyama_simulate_substeps(&model, 1.0, 0.01, 0, 1).is_err());
    }

    #[test]
    fn driftless_increments_follow_the_exact_law() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let dt = 0.01;
        let model = linear(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let path = euler_maruyama_simulate(&model, 100.0, dt, 314).unwrap();
        let mut samples: Vec<f64> = (0..path.n_steps())
            .map(|k| path.states[k + 1][0] - path.states[k][0])
            .collect();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len();
        assert_eq!(n, 10_000);
        let law = Normal::new(0.0, dt.sqrt()).unwrap();
        let mut dist = 0.0f64;
        for (i, s) in samples.iter().enumerate() {
            let cdf = law.cdf(*s);
            dist = dist
                .max((cdf - i as f64 / n as f64).abs())
                .max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        let critical = 1.6276 / (n as f64).sqrt();
        assert!(dist < critical, "KS statistic {dist} >= {critical}");
    }

    #[test]
    fn scalar_linear_mean_matches_the_exponential() {
        let f = -0.8;
        let t_end = 1.0;
        let model = linear(
            DMatrix::from_element(1, 1, f),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
        .with_sigma(0.5)
        .unwrap()
        .with_init(InitialState::Point(DVector::from_element(1, 1.0)))
        .unwrap();
        let n_paths = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for seed in 0..n_paths {
            let path = euler_maruyama_simulate(&model, t_end, 0.005, seed).unwrap();
            let x_t = path.states.last().unwrap()[0];
            sum += x_t;
            sum_sq += x_t * x_t;
        }
        let mean = sum / n_paths as f64;
        let var = (sum_sq - sum * sum / n_paths as f64) / (n_paths - 1) as f64;
        let se = (var / n_paths as f64).sqrt();
        let target = (f * t_end).exp();
        assert!(
            (mean - target).abs() <= 3.0 * se,
            "mean {mean} vs {target} with SE {se}"
        );
    }
}
