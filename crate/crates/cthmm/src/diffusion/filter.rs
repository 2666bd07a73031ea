//! Particle filter over the observation grid.
//!
//! Per step the cloud is weighted by the likelihood of the current
//! observation, resampled, and propagated by an Euler-Maruyama step. All
//! randomness is drawn from streams addressed by (seed, EM iteration, step,
//! particle), so the sampled values do not depend on thread count or
//! scheduling.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::types::{
    DiffusionModel, DiscreteObservations, ObservationIncrements, ParticleEnsemble,
};
use crate::exec::map_collect;
use crate::math::log_gaussian_isotropic;
use crate::rng::{sample_categorical, substream, Purpose};
use crate::{Error, Result};

/// How resampling indices are drawn each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Resampling {
    /// Independent draws from the weight distribution.
    #[default]
    Multinomial,
    /// One uniform offset and evenly spaced thresholds; under equal weights
    /// this is the identity permutation.
    Systematic,
}

/// Options shared by the particle filter variants.
#[derive(Clone, Copy, Debug)]
pub struct ParticleOptions {
    pub n_particles: usize,
    pub seed: u64,
    pub resampling: Resampling,
    /// EM iteration index, part of every stream address so each iteration
    /// sees fresh randomness.
    pub iteration: u32,
    /// Internal Euler steps per grid step when moving particles. The
    /// smoothing recursion keeps its one-step transition density; raising
    /// this only refines the sampled dynamics, which matters for stiff or
    /// chaotic drifts where a full-step Euler move diverges.
    pub propagation_substeps: usize,
}

impl ParticleOptions {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            seed,
            resampling: Resampling::default(),
            iteration: 0,
            propagation_substeps: 1,
        }
    }

    pub fn with_substeps(mut self, propagation_substeps: usize) -> Self {
        self.propagation_substeps = propagation_substeps;
        self
    }
}

/// Stream slot for the propagation noise of particle `i` at step `k`.
/// Step and particle share the 32-bit slot, 16 bits each.
fn noise_slot(k: usize, i: usize) -> u32 {
    debug_assert!(k < (1 << 16) && i < (1 << 16));
    ((k as u32) << 16) | i as u32
}

/// Log weight of one particle under a continuous observation increment.
pub(crate) fn increment_log_weight(
    model: &DiffusionModel,
    dy: &DVector<f64>,
    dt: f64,
    x: &DVector<f64>,
) -> f64 {
    let mean = model.obs_drift(x) * dt;
    log_gaussian_isotropic(dy.as_slice(), mean.as_slice(), model.eta() * model.eta() * dt)
}

/// Draws resampling indices for the given unnormalized weights.
fn resample_indices<R: Rng>(rng: &mut R, weights: &[f64], kind: Resampling) -> Vec<usize> {
    let n = weights.len();
    match kind {
        Resampling::Multinomial => (0..n).map(|_| sample_categorical(rng, weights)).collect(),
        Resampling::Systematic => {
            let total: f64 = weights.iter().sum();
            assert!(
                total > 0.0 && total.is_finite(),
                "resampling weights must have a positive finite sum"
            );
            let offset: f64 = rng.random::<f64>();
            let mut indices = Vec::with_capacity(n);
            let mut cum = weights[0];
            let mut i = 0;
            for j in 0..n {
                let target = (offset + j as f64) / n as f64 * total;
                while cum < target && i + 1 < n {
                    i += 1;
                    cum += weights[i];
                }
                indices.push(i);
            }
            indices
        }
    }
}

/// Propagates the resampled cloud one Euler-Maruyama step.
fn propagate(
    model: &DiffusionModel,
    parents: &[DVector<f64>],
    indices: &[usize],
    dt: f64,
    step: usize,
    opts: &ParticleOptions,
) -> Result<Vec<DVector<f64>>> {
    let n = model.state_dim();
    let substeps = opts.propagation_substeps.max(1);
    let h = dt / substeps as f64;
    let scale = model.sigma() * h.sqrt();
    let moved = map_collect(indices.len(), |i| {
        let mut rng = substream(opts.seed, Purpose::Propagate, opts.iteration, noise_slot(step, i));
        let mut next = parents[indices[i]].clone();
        for _ in 0..substeps {
            let f = model.drift(&next);
            next += f * h;
            for d in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                next[d] += scale * z;
            }
        }
        next
    });
    for x in &moved {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "particle state".into(),
                time: (step + 1) as f64 * dt,
            });
        }
    }
    Ok(moved)
}

fn draw_initial(model: &DiffusionModel, opts: &ParticleOptions) -> Result<Vec<DVector<f64>>> {
    let cloud = map_collect(opts.n_particles, |i| {
        model.sample_init(opts.seed, opts.iteration, i as u32)
    });
    for x in &cloud {
        if x.len() != model.state_dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(
                "init sampler produced a state of wrong dimension or with non-finite entries"
                    .into(),
            ));
        }
    }
    Ok(cloud)
}

fn check_sizes(model: &DiffusionModel, n_steps: usize, opts: &ParticleOptions) -> Result<()> {
    if opts.n_particles == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    if opts.n_particles >= (1 << 16) || n_steps >= (1 << 16) {
        return Err(Error::InvalidArgument(format!(
            "particle count ({}) and step count ({n_steps}) must fit 16 bits each",
            opts.n_particles
        )));
    }
    if model.sigma() == 0.0 {
        return Err(Error::InvalidModel(
            "estimation requires a positive state noise scale".into(),
        ));
    }
    Ok(())
}

/// Runs the particle filter on continuous observation increments. The
/// returned ensemble stores the pre-resampling cloud per grid index;
/// smoothing weights are filled in by the smoother pass.
pub fn particle_filter(
    model: &DiffusionModel,
    obs: &ObservationIncrements,
    opts: &ParticleOptions,
) -> Result<ParticleEnsemble> {
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
    let n_steps = obs.n_steps();
    check_sizes(model, n_steps, opts)?;
    let n = opts.n_particles;
    let dt = obs.dt();

    let mut positions = draw_initial(model, opts)?;
    positions.reserve(n_steps * n);
    let mut ancestry = Vec::with_capacity(n_steps * n);
    for k in 0..n_steps {
        let cur = &positions[k * n..(k + 1) * n];
        let logw = map_collect(n, |i| increment_log_weight(model, obs.increment(k), dt, &cur[i]));
        let wmax = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !wmax.is_finite() {
            return Err(Error::NonFinite {
                what: "observation weight".into(),
                time: k as f64 * dt,
            });
        }
        let weights: Vec<f64> = logw.iter().map(|l| (l - wmax).exp()).collect();
        let mut rng = substream(opts.seed, Purpose::Resample, opts.iteration, k as u32);
        let indices = resample_indices(&mut rng, &weights, opts.resampling);
        let moved = propagate(model, cur, &indices, dt, k, opts)?;
        ancestry.extend_from_slice(&indices);
        positions.extend(moved);
    }

    Ok(ParticleEnsemble {
        dt,
        n_particles: n,
        state_dim: model.state_dim(),
        positions,
        ancestry,
        weights: None,
        beta_gradients: None,
        log_normalizers: None,
    })
}

/// Particle filter for instantaneous observations: the cloud propagates
/// freely and is resampled only at steps carrying an observation, with
/// weights from the model's attached observation density.
pub fn particle_filter_discrete_obs(
    model: &DiffusionModel,
    obs: &DiscreteObservations,
    opts: &ParticleOptions,
) -> Result<ParticleEnsemble> {
    if !model.has_obs_density() {
        return Err(Error::InvalidModel(
            "instantaneous observations need an observation density on the model".into(),
        ));
    }
    let n_steps = obs.n_steps();
    check_sizes(model, n_steps, opts)?;
    let n = opts.n_particles;
    let dt = obs.dt();
    let slots = obs.step_events()?;

    let mut positions = draw_initial(model, opts)?;
    positions.reserve(n_steps * n);
    let mut ancestry = Vec::with_capacity(n_steps * n);
    for k in 0..n_steps {
        let cur = &positions[k * n..(k + 1) * n];
        let indices = match slots[k] {
            Some(s) => {
                let (tau, y) = &obs.events()[s];
                let logw = map_collect(n, |i| {
                    model.log_obs_density(y, &cur[i]).expect("density checked above")
                });
                let wmax = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if wmax == f64::NEG_INFINITY {
                    return Err(Error::ImpossibleEvidence { time: *tau });
                }
                if !wmax.is_finite() {
                    return Err(Error::NonFinite {
                        what: "observation weight".into(),
                        time: *tau,
                    });
                }
                let weights: Vec<f64> = logw.iter().map(|l| (l - wmax).exp()).collect();
                let mut rng = substream(opts.seed, Purpose::Resample, opts.iteration, k as u32);
                resample_indices(&mut rng, &weights, opts.resampling)
            }
            None => (0..n).collect(),
        };
        let moved = propagate(model, cur, &indices, dt, k, opts)?;
        ancestry.extend_from_slice(&indices);
        positions.extend(moved);
    }

    Ok(ParticleEnsemble {
        dt,
        n_particles: n,
        state_dim: model.state_dim(),
        positions,
        ancestry,
        weights: None,
        beta_gradients: None,
        log_normalizers: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::types::InitialState;
    use std::sync::Arc;

    fn free_motion(sigma: f64) -> DiffusionModel {
        DiffusionModel::new(
            1,
            1,
            DVector::zeros(1),
            Arc::new(|_x: &DVector<f64>, _th: &DVector<f64>| DVector::zeros(1)),
            Arc::new(|_x: &DVector<f64>| DVector::zeros(1)),
            sigma,
            0.5,
            InitialState::Point(DVector::zeros(1)),
        )
        .unwrap()
    }

    fn flat_increments(n_steps: usize, dt: f64) -> ObservationIncrements {
        ObservationIncrements::new(dt, vec![DVector::zeros(1); n_steps]).unwrap()
    }

    #[test]
    fn systematic_resampling_with_equal_weights_is_identity() {
        let mut rng = substream(1, Purpose::Resample, 0, 0);
        let w = vec![0.25; 8];
        let idx = resample_indices(&mut rng, &w, Resampling::Systematic);
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn uninformative_observations_leave_independent_paths() {
        // With h = 0 every weight is equal, so under systematic resampling
        // the particles never mix and must match independently simulated
        // paths driven by the same streams.
        let model = free_motion(0.7);
        let obs = flat_increments(20, 0.05);
        let mut opts = ParticleOptions::new(16, 9);
        opts.resampling = Resampling::Systematic;
        let ens = particle_filter(&model, &obs, &opts).unwrap();
        for i in 0..16 {
            assert_eq!(ens.ancestry[i], i);
        }
        for i in 0..16 {
            let mut x = 0.0f64;
            for k in 0..20 {
                let mut rng = substream(9, Purpose::Propagate, 0, noise_slot(k, i));
                let z: f64 = StandardNormal.sample(&mut rng);
                x += 0.7 * 0.05f64.sqrt() * z;
                assert_eq!(ens.position(k + 1, i)[0], x);
            }
        }
    }

    #[test]
    fn single_particle_ignores_observations() {
        let model = free_motion(1.0);
        let dt = 0.1;
        let flat = flat_increments(10, dt);
        let informative = ObservationIncrements::new(
            dt,
            (0..10).map(|k| DVector::from_vec(vec![k as f64])).collect(),
        )
        .unwrap();
        let opts = ParticleOptions::new(1, 4);
        let a = particle_filter(&model, &flat, &opts).unwrap();
        let b = particle_filter(&model, &informative, &opts).unwrap();
        for k in 0..=10 {
            assert_eq!(a.position(k, 0), b.position(k, 0));
        }
    }

    #[test]
    fn same_seed_reproduces_the_ensemble() {
        let model = free_motion(0.5);
        let obs = flat_increments(12, 0.1);
        let opts = ParticleOptions::new(32, 77);
        let a = particle_filter(&model, &obs, &opts).unwrap();
        let b = particle_filter(&model, &obs, &opts).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.ancestry, b.ancestry);
    }

    #[test]
    fn blowing_up_drift_reports_the_time() {
        let model = DiffusionModel::new(
            1,
            1,
            DVector::zeros(1),
            Arc::new(|x: &DVector<f64>, _th: &DVector<f64>| {
                DVector::from_vec(vec![x[0] * x[0] * 1e8])
            }),
            Arc::new(|_x: &DVector<f64>| DVector::zeros(1)),
            1.0,
            1.0,
            InitialState::Point(DVector::from_vec(vec![10.0])),
        )
        .unwrap();
        let obs = flat_increments(40, 0.5);
        let err = particle_filter(&model, &obs, &ParticleOptions::new(4, 1)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "got {err}");
    }

    #[test]
    fn impossible_discrete_evidence_names_the_event_time() {
        let model = free_motion(0.3).with_log_obs_density(Arc::new(
            |_y: &DVector<f64>, _x: &DVector<f64>| f64::NEG_INFINITY,
        ));
        let obs = DiscreteObservations::new(
            0.1,
            1.0,
            vec![(0.42, DVector::from_vec(vec![1.0]))],
        )
        .unwrap();
        let err =
            particle_filter_discrete_obs(&model, &obs, &ParticleOptions::new(8, 3)).unwrap_err();
        match err {
            Error::ImpossibleEvidence { time } => assert_eq!(time, 0.42),
            other => panic!("expected impossible evidence, got {other}"),
        }
    }

    #[test]
    fn discrete_mode_keeps_identity_ancestry_between_observations() {
        let model = free_motion(0.3).with_log_obs_density(Arc::new(
            |y: &DVector<f64>, x: &DVector<f64>| {
                log_gaussian_isotropic(y.as_slice(), x.as_slice(), 0.09)
            },
        ));
        let obs = DiscreteObservations::new(
            0.1,
            1.0,
            vec![(0.55, DVector::from_vec(vec![0.2]))],
        )
        .unwrap();
        let ens =
            particle_filter_discrete_obs(&model, &obs, &ParticleOptions::new(8, 3)).unwrap();
        for k in 0..10 {
            let row = &ens.ancestry[k * 8..(k + 1) * 8];
            if k == 5 || k == 6 {
                continue;
            }
            assert_eq!(row, (0..8).collect::<Vec<_>>().as_slice(), "step {k}");
        }
    }
}
