//! Linear Gaussian model and the trajectory container filled by the
//! estimation passes.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Linear dynamics `dX = F X dt + sigma dW` observed through
/// `dY = H X dt + eta dB`, with Gaussian initial law `N(mu0, P0)`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    f: DMatrix<f64>,
    h: DMatrix<f64>,
    sigma: f64,
    eta: f64,
    mu0: DVector<f64>,
    p0: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(
        f: DMatrix<f64>,
        h: DMatrix<f64>,
        sigma: f64,
        eta: f64,
        mu0: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Result<Self> {
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
        if !(sigma > 0.0 && sigma.is_finite()) || !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "noise scales must be positive and finite, got sigma = {sigma}, eta = {eta}"
            )));
        }
        if mu0.len() != n || p0.nrows() != n || p0.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "initial law must have dimension {n}, got mean {} and covariance {} x {}",
                mu0.len(),
                p0.nrows(),
                p0.ncols()
            )));
        }
        for v in f.iter().chain(h.iter()).chain(mu0.iter()).chain(p0.iter()) {
            if !v.is_finite() {
                return Err(Error::InvalidModel("model entries must be finite".into()));
            }
        }
        let asym = (&p0 - p0.transpose()).amax();
        if asym > 1e-12 * (1.0 + p0.amax()) {
            return Err(Error::InvalidModel(format!(
                "initial covariance is asymmetric by {asym}"
            )));
        }
        let min_eig = p0.symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            return Err(Error::InvalidModel(format!(
                "initial covariance has a negative eigenvalue {min_eig}"
            )));
        }
        Ok(Self {
            f,
            h,
            sigma,
            eta,
            mu0,
            p0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mu0(&self) -> &DVector<f64> {
        &self.mu0
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    /// Copy of the model with a different drift matrix, revalidated.
    pub fn with_f(&self, f: DMatrix<f64>) -> Result<Self> {
        Self::new(
            f,
            self.h.clone(),
            self.sigma,
            self.eta,
            self.mu0.clone(),
            self.p0.clone(),
        )
    }
}

/// Filtering pass output: mean and covariance of the state given the
/// observation increments strictly before each grid time.
#[derive(Clone, Debug)]
pub struct KalmanForward {
    pub times: Vec<f64>,
    pub mu_pi: Vec<DVector<f64>>,
    pub p_pi: Vec<DMatrix<f64>>,
}

/// Backward pass output in information form: `j_beta` is the precision of
/// the backward likelihood and `jmu` its precision-weighted mean. Both are
/// zero at the horizon, where the likelihood is flat.
#[derive(Clone, Debug)]
pub struct KalmanBackward {
    pub times: Vec<f64>,
    pub j_beta: Vec<DMatrix<f64>>,
    pub jmu: Vec<DVector<f64>>,
}

/// Complete two-sided trajectory: filter, backward information pass, and
/// their combination, the smoothing law per grid time.
#[derive(Clone, Debug)]
pub struct GaussianTrajectory {
    pub times: Vec<f64>,
    pub mu_pi: Vec<DVector<f64>>,
    pub p_pi: Vec<DMatrix<f64>>,
    pub j_beta: Vec<DMatrix<f64>>,
    pub jmu: Vec<DVector<f64>>,
    pub mu_rho: Vec<DVector<f64>>,
    pub p_rho: Vec<DMatrix<f64>>,
}
