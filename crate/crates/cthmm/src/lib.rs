//! State and parameter estimation for continuous-time hidden Markov models.
//!
//! The crate covers three model families that share one estimation idea:
//! propagate a forward (filtering) quantity and a backward (likelihood)
//! quantity over the observation record, combine them into a smoothing
//! posterior, and turn the posterior into a closed-form parameter update.
//!
//! * [`jump`]: finite-state Markov jump processes whose observation symbol is
//!   resampled at every hidden transition. Forward/backward passes integrate
//!   piecewise-linear ODEs between observation events, and an EM iteration
//!   re-estimates the generator matrix.
//! * [`diffusion`]: diffusion state processes observed through a noisy
//!   integrated sensor. A particle filter plus a backward-reweighting
//!   smoother produce Monte Carlo posteriors, and closed-form updates fit
//!   drift parameters.
//! * [`linear_gaussian`]: the linear model where every distribution stays
//!   Gaussian, solved with moment ODEs. Serves both as a usable estimator
//!   and as the reference the particle machinery is validated against.
//! * [`sde_models`]: ready-made diffusion models (bearings-only tracking,
//!   cubic sensor families, a cyclic atmospheric toy model) and a shared
//!   Euler-Maruyama simulator.
//!
//! Numerical conventions used throughout: probability vectors are
//! renormalized with the scale tracked in log space, densities are combined
//! in log space with max subtraction, and every random draw comes from a
//! counter-addressed stream so results are reproducible for a given seed
//! regardless of thread count.

pub mod diffusion;
pub mod io;
pub mod error;
pub mod exec;
pub mod jump;
pub mod linear_gaussian;
pub mod math;
pub mod rng;
pub mod sde_models;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
