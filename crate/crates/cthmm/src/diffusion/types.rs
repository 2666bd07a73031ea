//! Model and data types for diffusion-state estimation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;

use crate::math::fd_jacobian;
use crate::rng::{substream, Purpose};
use crate::{Error, Result};

/// Drift `f(x; theta)`.
pub type DriftFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
/// State Jacobian `df/dx (x; theta)`.
pub type DriftJacobianFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
/// Observation drift `h(x)`.
pub type ObsFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
/// Observation Jacobian `dh/dx (x)`.
pub type ObsJacobianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
/// Parameter coefficient `A(x)` of a drift linear in theta.
pub type DecompCoeffFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
/// Parameter-free part `b(x)` of a drift linear in theta.
pub type DecompOffsetFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
/// Sampler for the initial state.
pub type InitSamplerFn = dyn Fn(&mut ChaCha12Rng) -> DVector<f64> + Send + Sync;
/// Log observation density `log r(y | x)` for instantaneous observations.
pub type LogObsDensityFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;

/// Decomposition `f(x; theta) = A(x) theta + b(x)` of a drift that is
/// linear in its parameters; enables the closed-form parameter update.
#[derive(Clone)]
pub struct LinearDecomp {
    pub coeff: Arc<DecompCoeffFn>,
    pub offset: Arc<DecompOffsetFn>,
}

/// Initial state distribution.
#[derive(Clone)]
pub enum InitialState {
    /// Deterministic start.
    Point(DVector<f64>),
    /// Arbitrary sampler driven by a dedicated stream.
    Sampler(Arc<InitSamplerFn>),
}

/// A diffusion hidden process `dX = f(X; theta) dt + sigma dW` observed
/// through `dY = h(X) dt + eta dB`, or through instantaneous draws
/// `y_s ~ r(. | X_{tau_s})` when an observation density is attached.
///
/// Jacobians fall back to central finite differences of the supplied maps
/// when not given analytically.
#[derive(Clone)]
pub struct DiffusionModel {
    n: usize,
    m: usize,
    theta: DVector<f64>,
    drift: Arc<DriftFn>,
    drift_jacobian: Arc<DriftJacobianFn>,
    obs_drift: Arc<ObsFn>,
    obs_jacobian: Arc<ObsJacobianFn>,
    linear_decomp: Option<LinearDecomp>,
    sigma: f64,
    eta: f64,
    init: InitialState,
    log_obs_density: Option<Arc<LogObsDensityFn>>,
}

impl DiffusionModel {
    /// Builds a model from its required pieces; Jacobians default to
    /// central finite differences of the given maps.
    pub fn new(
        n: usize,
        m: usize,
        theta: DVector<f64>,
        drift: Arc<DriftFn>,
        obs_drift: Arc<ObsFn>,
        sigma: f64,
        eta: f64,
        init: InitialState,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidModel(
                "state and observation dimensions must be positive".into(),
            ));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) || !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "noise scales must be nonnegative and finite, got sigma = {sigma}, eta = {eta}"
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter entry".into()));
        }
        if let InitialState::Point(x0) = &init {
            if x0.len() != n {
                return Err(Error::InvalidModel(format!(
                    "initial state has dimension {}, expected {n}",
                    x0.len()
                )));
            }
        }
        let drift_for_jac = Arc::clone(&drift);
        let drift_jacobian: Arc<DriftJacobianFn> = Arc::new(move |x, th| {
            let th = th.clone();
            fd_jacobian(|z| drift_for_jac(z, &th), x, x.len())
        });
        let obs_for_jac = Arc::clone(&obs_drift);
        let obs_jacobian: Arc<ObsJacobianFn> =
            Arc::new(move |x| fd_jacobian(|z| obs_for_jac(z), x, m));
        Ok(Self {
            n,
            m,
            theta,
            drift,
            drift_jacobian,
            obs_drift,
            obs_jacobian,
            linear_decomp: None,
            sigma,
            eta,
            init,
            log_obs_density: None,
        })
    }

    pub fn with_drift_jacobian(mut self, jac: Arc<DriftJacobianFn>) -> Self {
        self.drift_jacobian = jac;
        self
    }

    pub fn with_obs_jacobian(mut self, jac: Arc<ObsJacobianFn>) -> Self {
        self.obs_jacobian = jac;
        self
    }

    pub fn with_linear_decomp(mut self, coeff: Arc<DecompCoeffFn>, offset: Arc<DecompOffsetFn>) -> Self {
        self.linear_decomp = Some(LinearDecomp { coeff, offset });
        self
    }

    pub fn with_log_obs_density(mut self, density: Arc<LogObsDensityFn>) -> Self {
        self.log_obs_density = Some(density);
        self
    }

    /// Same model with a different state noise scale.
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "state noise scale must be nonnegative and finite, got {sigma}"
            )));
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// Same model with a different observation noise scale.
    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "observation noise scale must be nonnegative and finite, got {eta}"
            )));
        }
        self.eta = eta;
        Ok(self)
    }

    /// Same model with a different initial state distribution.
    pub fn with_init(mut self, init: InitialState) -> Result<Self> {
        if let InitialState::Point(x0) = &init {
            if x0.len() != self.n {
                return Err(Error::InvalidModel(format!(
                    "initial state has dimension {}, expected {}",
                    x0.len(),
                    self.n
                )));
            }
        }
        self.init = init;
        Ok(self)
    }

    /// Same model with a different parameter vector.
    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter vector has length {}, expected {}",
                theta.len(),
                self.theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter entry".into()));
        }
        let mut m = self.clone();
        m.theta = theta;
        Ok(m)
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn obs_dim(&self) -> usize {
        self.m
    }

    pub fn param_dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Drift at the model's current parameters.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x, &self.theta)
    }

    /// Drift at explicit parameters.
    pub fn drift_at(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x, theta)
    }

    /// State Jacobian of the drift at the current parameters.
    pub fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.drift_jacobian)(x, &self.theta)
    }

    pub fn obs_drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.obs_drift)(x)
    }

    pub fn obs_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.obs_jacobian)(x)
    }

    pub fn linear_decomp(&self) -> Option<&LinearDecomp> {
        self.linear_decomp.as_ref()
    }

    pub fn init(&self) -> &InitialState {
        &self.init
    }

    /// Draws an initial state from the model's init distribution using the
    /// stream addressed by (seed, iteration, slot).
    pub fn sample_init(&self, seed: u64, iteration: u32, slot: u32) -> DVector<f64> {
        let mut rng = substream(seed, Purpose::ParticleInit, iteration, slot);
        match &self.init {
            InitialState::Point(x0) => x0.clone(),
            InitialState::Sampler(s) => s(&mut rng),
        }
    }

    /// Log density of an instantaneous observation, if the model has one.
    pub fn log_obs_density(&self, y: &DVector<f64>, x: &DVector<f64>) -> Option<f64> {
        self.log_obs_density.as_ref().map(|d| d(y, x))
    }

    pub fn has_obs_density(&self) -> bool {
        self.log_obs_density.is_some()
    }

    /// Verifies the model's internal consistency on random probe points:
    /// the linear decomposition must reproduce the drift, and both
    /// Jacobians must match central finite differences.
    pub fn check_consistency(&self, seed: u64, probes: usize) -> Result<()> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = substream(seed, Purpose::Model, 0, 0);
        for k in 0..probes {
            let x = DVector::from_fn(self.n, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                2.0 * z
            });
            let f = self.drift(&x);
            if let Some(d) = &self.linear_decomp {
                let rebuilt = (d.coeff)(&x) * &self.theta + (d.offset)(&x);
                let err = (&rebuilt - &f).norm();
                if err > 1e-10 * (1.0 + f.norm()) {
                    return Err(Error::InvalidModel(format!(
                        "linear decomposition misses the drift by {err:.3e} at probe {k}"
                    )));
                }
            }
            let jac = self.drift_jacobian(&x);
            let th = self.theta.clone();
            let drift = Arc::clone(&self.drift);
            let fd = fd_jacobian(|z| drift(z, &th), &x, self.n);
            let scale = jac.amax().max(fd.amax()).max(1.0);
            if (&jac - &fd).amax() > 1e-4 * scale {
                return Err(Error::InvalidModel(format!(
                    "drift Jacobian differs from finite differences at probe {k}"
                )));
            }
            let ojac = self.obs_jacobian(&x);
            let obs = Arc::clone(&self.obs_drift);
            let ofd = fd_jacobian(|z| obs(z), &x, self.m);
            let oscale = ojac.amax().max(ofd.amax()).max(1.0);
            if (&ojac - &ofd).amax() > 1e-4 * oscale {
                return Err(Error::InvalidModel(format!(
                    "observation Jacobian differs from finite differences at probe {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Uniformly spaced observation increments `dY_t` over `[0, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationIncrements {
    dt: f64,
    increments: Vec<DVector<f64>>,
}

impl ObservationIncrements {
    pub fn new(dt: f64, increments: Vec<DVector<f64>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidObservations(format!(
                "step size must be positive and finite, got {dt}"
            )));
        }
        if increments.is_empty() {
            return Err(Error::InvalidObservations(
                "need at least one observation increment".into(),
            ));
        }
        let m = increments[0].len();
        if m == 0 {
            return Err(Error::InvalidObservations(
                "observation increments must have positive dimension".into(),
            ));
        }
        for (k, dy) in increments.iter().enumerate() {
            if dy.len() != m {
                return Err(Error::InvalidObservations(format!(
                    "increment {k} has dimension {}, expected {m}",
                    dy.len()
                )));
            }
            if dy.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidObservations(format!(
                    "non-finite entry in increment {k}"
                )));
            }
        }
        Ok(Self { dt, increments })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of increments, i.e. propagation steps.
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.increments[0].len()
    }

    pub fn t_end(&self) -> f64 {
        self.dt * self.increments.len() as f64
    }

    /// Increment over `[k dt, (k+1) dt)`.
    pub fn increment(&self, k: usize) -> &DVector<f64> {
        &self.increments[k]
    }

    pub fn increments(&self) -> &[DVector<f64>] {
        &self.increments
    }
}

/// Instantaneous vector observations at scattered times, for models with an
/// attached observation density.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteObservations {
    dt: f64,
    t_end: f64,
    events: Vec<(f64, DVector<f64>)>,
}

impl DiscreteObservations {
    /// `dt` is the particle propagation step; events must have strictly
    /// increasing times inside `[0, t_end]`.
    pub fn new(dt: f64, t_end: f64, events: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidObservations(format!(
                "need positive finite dt and horizon, got dt = {dt}, t_end = {t_end}"
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for (s, (tau, y)) in events.iter().enumerate() {
            if !(*tau >= 0.0 && *tau <= t_end) || *tau <= prev {
                return Err(Error::InvalidObservations(format!(
                    "event {s} at t = {tau} is out of order or outside [0, {t_end}]"
                )));
            }
            if y.is_empty() || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidObservations(format!(
                    "event {s} has an empty or non-finite value"
                )));
            }
            prev = *tau;
        }
        Ok(Self { dt, t_end, events })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }

    pub fn events(&self) -> &[(f64, DVector<f64>)] {
        &self.events
    }

    /// Maps each propagation step index to the event observed there, if
    /// any. Events snap to the nearest step start (index at most
    /// `n_steps - 1`); two events snapping to the same step are rejected.
    pub fn step_events(&self) -> Result<Vec<Option<usize>>> {
        let n_steps = self.n_steps();
        let mut slots = vec![None; n_steps];
        for (s, (tau, _)) in self.events.iter().enumerate() {
            let k = ((tau / self.dt).round() as usize).min(n_steps - 1);
            if slots[k].is_some() {
                return Err(Error::InvalidObservations(format!(
                    "events collide at step {k}; reduce dt below the smallest gap"
                )));
            }
            slots[k] = Some(s);
        }
        Ok(slots)
    }
}

/// A particle cloud over the observation grid, carrying filter positions,
/// resampling ancestry, and once the smoother has run, smoothing weights,
/// per-particle likelihood gradients, and the per-step normalizers needed
/// to re-evaluate the backward likelihood anywhere.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub dt: f64,
    pub n_particles: usize,
    pub state_dim: usize,
    /// Positions, `(n_steps + 1) * n_particles` entries, time-major.
    pub positions: Vec<DVector<f64>>,
    /// Ancestor index of each propagated particle, `n_steps * n_particles`.
    pub ancestry: Vec<usize>,
    /// Smoothing weights per (time, particle); populated by the smoother.
    pub weights: Option<Vec<f64>>,
    /// Gradient of the backward likelihood at each particle; populated by
    /// the smoother (zero vectors at the final time).
    pub beta_gradients: Option<Vec<DVector<f64>>>,
    /// Per-step, per-target log normalizers of the backward kernel;
    /// `n_steps * n_particles` entries, populated by the smoother.
    pub log_normalizers: Option<Vec<f64>>,
}

impl ParticleEnsemble {
    pub fn n_steps(&self) -> usize {
        self.positions.len() / self.n_particles - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Particle `i` at grid index `k`.
    pub fn position(&self, k: usize, i: usize) -> &DVector<f64> {
        &self.positions[k * self.n_particles + i]
    }

    /// Positions at grid index `k`.
    pub fn positions_at(&self, k: usize) -> &[DVector<f64>] {
        &self.positions[k * self.n_particles..(k + 1) * self.n_particles]
    }

    /// Smoothing weights at grid index `k`.
    pub fn weights_at(&self, k: usize) -> Result<&[f64]> {
        let w = self.weights.as_ref().ok_or_else(|| {
            Error::InvalidArgument("smoother weights not computed yet".into())
        })?;
        Ok(&w[k * self.n_particles..(k + 1) * self.n_particles])
    }

    /// Mean of the raw cloud at index `k` (filtering estimate).
    pub fn filter_mean(&self, k: usize) -> DVector<f64> {
        let mut mean = DVector::zeros(self.state_dim);
        for x in self.positions_at(k) {
            mean += x;
        }
        mean / self.n_particles as f64
    }

    /// Weighted mean of the cloud at index `k` (smoothing estimate).
    pub fn smoother_mean(&self, k: usize) -> Result<DVector<f64>> {
        let w = self.weights_at(k)?;
        let mut mean = DVector::zeros(self.state_dim);
        for (x, &wi) in self.positions_at(k).iter().zip(w) {
            mean += x * wi;
        }
        Ok(mean)
    }
}
