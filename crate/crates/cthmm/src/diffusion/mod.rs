//! Monte Carlo state and parameter estimation for diffusion hidden states.
//!
//! A particle filter approximates the filtering distribution on the
//! observation grid, a backward-reweighting pass turns the same cloud into
//! a smoother, and the smoothing weights plus analytic gradients of the
//! backward likelihood feed closed-form or gradient-based parameter
//! updates.

pub mod em;
pub mod filter;
pub mod smoother;
pub mod types;

pub use em::{
    em_objective_mc, em_update_linear, em_update_matrix, fit_parameters, state_estimates,
    DiffusionFitReport, FitOptions, LinearUpdate, UpdateRule,
};
pub use filter::{particle_filter, particle_filter_discrete_obs, ParticleOptions, Resampling};
pub use smoother::{beta_hat_gradient, particle_smoother, particle_smoother_discrete_obs};
pub use types::{
    DecompCoeffFn, DecompOffsetFn, DiffusionModel, DiscreteObservations, DriftFn,
    DriftJacobianFn, InitSamplerFn, InitialState, LinearDecomp, LogObsDensityFn, ObsFn,
    ObsJacobianFn, ObservationIncrements, ParticleEnsemble,
};
