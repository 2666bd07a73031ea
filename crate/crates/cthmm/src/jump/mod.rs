//! Hidden jump-process models: simulation, smoothing, and EM fitting.

pub mod em;
pub mod grid;
pub mod model;
pub mod oracle;
pub mod smoothing;

pub use em::{em_update_generator, fit_generator, EmFitReport, EmOptions, EmUpdate};
pub use grid::{GridSpec, TimeGrid};
pub use model::{
    simulate_jump_hmm, simulate_jump_hmm_discrete_obs, JumpHiddenPath, JumpHmmModel,
    JumpObservationPath, ObsMode,
};
pub use oracle::{discrete_baum_welch_oracle, DiscreteOracle};
pub use smoothing::{
    backward_pass, forward_pass, posterior, smooth, BackwardPass, ForwardPass,
    ScaledPosteriorGrid,
};
