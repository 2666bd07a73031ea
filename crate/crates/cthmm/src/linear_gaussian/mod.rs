//! Closed-form estimation for linear Gaussian state-space models: the
//! continuous-time Kalman filter, a backward information pass, their
//! product-form smoother, and the exact drift update, together with
//! discrete-time counterparts used as cross-checks.

pub mod discrete;
pub mod kalman;
pub mod model;

pub use discrete::{discrete_kalman_filter, discrete_rts_smoother, shumway_em_update, DiscreteKalman};
pub use kalman::{
    kalman_backward, kalman_em_update, kalman_forward, kalman_smoother, kalman_smoother_combine,
    rts_smoother_check,
};
pub use model::{GaussianTrajectory, KalmanBackward, KalmanForward, LinearModel};
