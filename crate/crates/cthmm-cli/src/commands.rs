//! The single-operation subcommands: simulate, fit, and smooth for both
//! model classes, plus the Kalman reference for linear models.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use cthmm::diffusion::{DiffusionModel, FitOptions, UpdateRule};
use cthmm::io;
use cthmm::jump::{
    fit_generator, simulate_jump_hmm, simulate_jump_hmm_discrete_obs, smooth, EmOptions,
    GridSpec, JumpHmmModel,
};
use cthmm::linear_gaussian::{kalman_smoother, LinearModel};
use cthmm::sde_models;
use cthmm::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{FamilyArg, ObsModeArg};

pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let file = File::open(p)
                .map_err(|e| Error::Io(format!("cannot open config {}: {e}", p.display())))?;
            Ok(serde_json::from_reader(file)?)
        }
        None => Ok(T::default()),
    }
}

pub fn prepare_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", out.display())))
}

pub fn create_file(dir: &Path, name: &str) -> Result<File> {
    let path = dir.join(name);
    File::create(&path).map_err(|e| Error::Io(format!("cannot create {}: {e}", path.display())))
}

fn print_dry_run<T: Serialize>(resolved: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(resolved)?);
    Ok(())
}

fn read_model_file(path: &Path) -> Result<JumpHmmModel> {
    let file = File::open(path)
        .map_err(|e| Error::Io(format!("cannot open model {}: {e}", path.display())))?;
    io::read_jump_model(file)
}

fn read_jump_obs_file(
    path: &Path,
    t_end: f64,
    mode: ObsModeArg,
    n_symbols: usize,
) -> Result<cthmm::jump::JumpObservationPath> {
    let file = File::open(path)
        .map_err(|e| Error::Io(format!("cannot open observations {}: {e}", path.display())))?;
    io::read_jump_observations(file, t_end, mode.into(), n_symbols)
}

/// Writes a piecewise-constant hidden jump path as CSV `t,x` with 1-based
/// states, one row per state entry.
fn write_jump_hidden_csv(w: impl std::io::Write, path: &cthmm::jump::JumpHiddenPath) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "x"])?;
    for &(t, x) in &path.events {
        out.write_record([io::csv_float(t), (x + 1).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct SimulateJumpArgs {
    /// Model JSON file with keys n, m, Q, r, pi0.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Length of the simulated window.
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    obs_mode: Option<ObsModeArg>,
    /// Spacing of the scheduled draws in discrete mode.
    #[arg(long)]
    obs_dt: Option<f64>,
    /// Output directory for observations.csv and hidden.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with defaults for any of the options above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Default, Deserialize)]
struct SimulateJumpConfig {
    model: Option<PathBuf>,
    t_end: Option<f64>,
    seed: Option<u64>,
    obs_mode: Option<ObsModeArg>,
    obs_dt: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SimulateJumpResolved {
    model: PathBuf,
    t_end: f64,
    seed: u64,
    obs_mode: ObsModeArg,
    obs_dt: Option<f64>,
    out: PathBuf,
}

pub fn simulate_jump(args: SimulateJumpArgs) -> Result<()> {
    let file: SimulateJumpConfig = load_config(args.config.as_deref())?;
    let resolved = SimulateJumpResolved {
        model: args
            .model
            .or(file.model)
            .ok_or_else(|| Error::InvalidArgument("--model is required".into()))?,
        t_end: args
            .t_end
            .or(file.t_end)
            .ok_or_else(|| Error::InvalidArgument("--t-end is required".into()))?,
        seed: args.seed.or(file.seed).unwrap_or(0),
        obs_mode: args
            .obs_mode
            .or(file.obs_mode)
            .unwrap_or(ObsModeArg::Continuous),
        obs_dt: args.obs_dt.or(file.obs_dt),
        out: args.out.or(file.out).unwrap_or_else(|| "cthmm-out".into()),
    };
    if args.dry_run {
        return print_dry_run(&resolved);
    }
    let model = read_model_file(&resolved.model)?;
    let (hidden, obs) = match resolved.obs_mode {
        ObsModeArg::Continuous => simulate_jump_hmm(&model, resolved.t_end, resolved.seed)?,
        ObsModeArg::Discrete => {
            let obs_dt = resolved.obs_dt.ok_or_else(|| {
                Error::InvalidArgument("--obs-dt is required in discrete mode".into())
            })?;
            if !(obs_dt > 0.0) || !obs_dt.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "--obs-dt must be positive and finite, got {obs_dt}"
                )));
            }
            let count = (resolved.t_end / obs_dt + 1e-9).floor() as usize;
            let times: Vec<f64> = (1..=count).map(|k| k as f64 * obs_dt).collect();
            simulate_jump_hmm_discrete_obs(&model, &times, resolved.t_end, resolved.seed)?
        }
    };
    prepare_out_dir(&resolved.out)?;
    io::write_jump_observations(create_file(&resolved.out, "observations.csv")?, &obs)?;
    write_jump_hidden_csv(create_file(&resolved.out, "hidden.csv")?, &hidden)?;
    println!(
        "wrote {}/observations.csv ({} events) and hidden.csv ({} jumps)",
        resolved.out.display(),
        obs.events().len(),
        hidden.events.len().saturating_sub(1)
    );
    Ok(())
}

#[derive(Args)]
pub struct FitJumpArgs {
    /// Model JSON file; its generator is the EM starting point and its
    /// observation matrix and initial law are held fixed.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Observation CSV with header t,y.
    #[arg(long)]
    obs: Option<PathBuf>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, value_enum)]
    obs_mode: Option<ObsModeArg>,
    /// Upper bound on the integration sub-grid step.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Default, Deserialize)]
struct FitJumpConfig {
    model: Option<PathBuf>,
    obs: Option<PathBuf>,
    t_end: Option<f64>,
    obs_mode: Option<ObsModeArg>,
    dt: Option<f64>,
    iters: Option<usize>,
    tol: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FitJumpResolved {
    model: PathBuf,
    obs: PathBuf,
    t_end: f64,
    obs_mode: ObsModeArg,
    dt: f64,
    iters: usize,
    tol: f64,
    out: PathBuf,
}

pub fn fit_jump(args: FitJumpArgs) -> Result<()> {
    let file: FitJumpConfig = load_config(args.config.as_deref())?;
    let defaults = EmOptions::default();
    let resolved = FitJumpResolved {
        model: args
            .model
            .or(file.model)
            .ok_or_else(|| Error::InvalidArgument("--model is required".into()))?,
        obs: args
            .obs
            .or(file.obs)
            .ok_or_else(|| Error::InvalidArgument("--obs is required".into()))?,
        t_end: args
            .t_end
            .or(file.t_end)
            .ok_or_else(|| Error::InvalidArgument("--t-end is required".into()))?,
        obs_mode: args
            .obs_mode
            .or(file.obs_mode)
            .unwrap_or(ObsModeArg::Continuous),
        dt: args.dt.or(file.dt).unwrap_or(defaults.grid.dt_max),
        iters: args.iters.or(file.iters).unwrap_or(defaults.max_iters),
        tol: args.tol.or(file.tol).unwrap_or(defaults.tol),
        out: args.out.or(file.out).unwrap_or_else(|| "cthmm-out".into()),
    };
    if args.dry_run {
        return print_dry_run(&resolved);
    }
    let model = read_model_file(&resolved.model)?;
    let obs = read_jump_obs_file(
        &resolved.obs,
        resolved.t_end,
        resolved.obs_mode,
        model.n_symbols(),
    )?;
    let options = EmOptions {
        grid: GridSpec {
            dt_max: resolved.dt,
        },
        max_iters: resolved.iters,
        tol: resolved.tol,
    };
    let report = fit_generator(&model, &obs, &options)?;
    prepare_out_dir(&resolved.out)?;
    io::write_jump_fit(create_file(&resolved.out, "fit.json")?, &report)?;
    println!(
        "wrote {}/fit.json ({} iterations, converged: {}, loglik {:.6})",
        resolved.out.display(),
        report.iterations,
        report.converged,
        report.loglik_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Args)]
pub struct PosteriorJumpArgs {
    /// Model JSON file with keys n, m, Q, r, pi0.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Observation CSV with header t,y.
    #[arg(long)]
    obs: Option<PathBuf>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, value_enum)]
    obs_mode: Option<ObsModeArg>,
    /// Upper bound on the integration sub-grid step.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Default, Deserialize)]
struct PosteriorJumpConfig {
    model: Option<PathBuf>,
    obs: Option<PathBuf>,
    t_end: Option<f64>,
    obs_mode: Option<ObsModeArg>,
    dt: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PosteriorJumpResolved {
    model: PathBuf,
    obs: PathBuf,
    t_end: f64,
    obs_mode: ObsModeArg,
    dt: f64,
    out: PathBuf,
}

pub fn posterior_jump(args: PosteriorJumpArgs) -> Result<()> {
    let file: PosteriorJumpConfig = load_config(args.config.as_deref())?;
    let resolved = PosteriorJumpResolved {
        model: args
            .model
            .or(file.model)
            .ok_or_else(|| Error::InvalidArgument("--model is required".into()))?,
        obs: args
            .obs
            .or(file.obs)
            .ok_or_else(|| Error::InvalidArgument("--obs is required".into()))?,
        t_end: args
            .t_end
            .or(file.t_end)
            .ok_or_else(|| Error::InvalidArgument("--t-end is required".into()))?,
        obs_mode: args
            .obs_mode
            .or(file.obs_mode)
            .unwrap_or(ObsModeArg::Continuous),
        dt: args.dt.or(file.dt).unwrap_or(GridSpec::default().dt_max),
        out: args.out.or(file.out).unwrap_or_else(|| "cthmm-out".into()),
    };
    if args.dry_run {
        return print_dry_run(&resolved);
    }
    let model = read_model_file(&resolved.model)?;
    let obs = read_jump_obs_file(
        &resolved.obs,
        resolved.t_end,
        resolved.obs_mode,
        model.n_symbols(),
    )?;
    let post = smooth(&model, &obs, &GridSpec { dt_max: resolved.dt })?;
    prepare_out_dir(&resolved.out)?;
    io::write_posterior_csv(create_file(&resolved.out, "posterior.csv")?, &post)?;
    println!(
        "wrote {}/posterior.csv ({} grid points, loglik {:.6})",
        resolved.out.display(),
        post.grid.n_points(),
        post.loglik
    );
    Ok(())
}

/// Matrices for the linear family and the Kalman subcommand, read from the
/// config file.
#[derive(Default, Deserialize)]
pub struct LinearMatrices {
    #[serde(rename = "F")]
    pub f: Option<Vec<Vec<f64>>>,
    #[serde(rename = "H")]
    pub h: Option<Vec<Vec<f64>>>,
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument(format!(
            "{what} must be a nonempty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

/// Builds a model of the requested family, applying any overrides.
pub fn build_model(
    family: FamilyArg,
    dim: Option<usize>,
    sigma: Option<f64>,
    eta: Option<f64>,
    theta: Option<&[f64]>,
    linear: &LinearMatrices,
) -> Result<DiffusionModel> {
    let mut model = match family {
        FamilyArg::Bearings => sde_models::bearings(),
        FamilyArg::CubicMatrix => sde_models::cubic_matrix(dim.unwrap_or(2))?,
        FamilyArg::CubicTridiagonal => sde_models::cubic_tridiagonal(dim.unwrap_or(5))?,
        FamilyArg::Lorenz96 => sde_models::lorenz96(dim.unwrap_or(10))?,
        FamilyArg::Linear => {
            let f = linear
                .f
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("the linear family needs F in the config file".into()))?;
            let h = linear
                .h
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("the linear family needs H in the config file".into()))?;
            sde_models::linear(matrix_from_rows(f, "F")?, matrix_from_rows(h, "H")?)?
        }
    };
    if let Some(s) = sigma {
        model = model.with_sigma(s)?;
    }
    if let Some(e) = eta {
        model = model.with_eta(e)?;
    }
    if let Some(th) = theta {
        model = model.with_theta(DVector::from_column_slice(th))?;
    }
    Ok(model)
}

/// Simulation window defaults per family, matching the canned experiments.
pub fn family_window(family: FamilyArg) -> (f64, f64) {
    match family {
        FamilyArg::Bearings => (3.0, 0.01),
        FamilyArg::CubicMatrix => (10.0, 0.02),
        FamilyArg::CubicTridiagonal => (1.0, 0.005),
        FamilyArg::Lorenz96 => (1.0, 0.05),
        FamilyArg::Linear => (1.0, 0.01),
    }
}

#[derive(Args)]
pub struct SimulateSdeArgs {
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// State dimension, for the families that take one.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Drift parameters overriding the family default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Internal Euler steps per recorded step, for stiff dynamics.
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for observations.csv and hidden.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Default, Deserialize)]
struct SdeConfig {
    family: Option<FamilyArg>,
    dim: Option<usize>,
    sigma: Option<f64>,
    eta: Option<f64>,
    theta: Option<Vec<f64>>,
    theta0: Option<Vec<f64>>,
    t_end: Option<f64>,
    dt: Option<f64>,
    substeps: Option<usize>,
    seed: Option<u64>,
    particles: Option<usize>,
    iters: Option<usize>,
    update: Option<UpdateArg>,
    obs: Option<PathBuf>,
    out: Option<PathBuf>,
    #[serde(flatten)]
    linear: LinearMatrices,
}

#[derive(Serialize)]
struct SimulateSdeResolved {
    family: FamilyArg,
    dim: Option<usize>,
    sigma: f64,
    eta: f64,
    theta: Vec<f64>,
    t_end: f64,
    dt: f64,
    substeps: usize,
    seed: u64,
    out: PathBuf,
}

pub fn simulate_sde(args: SimulateSdeArgs) -> Result<()> {
    let file: SdeConfig = load_config(args.config.as_deref())?;
    let family = args
        .family
        .or(file.family)
        .ok_or_else(|| Error::InvalidArgument("--family is required".into()))?;
    let dim = args.dim.or(file.dim);
    let theta = args.theta.or(file.theta);
    let model = build_model(
        family,
        dim,
        args.sigma.or(file.sigma),
        args.eta.or(file.eta),
        theta.as_deref(),
        &file.linear,
    )?;
    let (default_t, default_dt) = family_window(family);
    let resolved = SimulateSdeResolved {
        family,
        dim,
        sigma: model.sigma(),
        eta: model.eta(),
        theta: model.theta().iter().copied().collect(),
        t_end: args.t_end.or(file.t_end).unwrap_or(default_t),
        dt: args.dt.or(file.dt).unwrap_or(default_dt),
        substeps: args.substeps.or(file.substeps).unwrap_or(1),
        seed: args.seed.or(file.seed).unwrap_or(0),
        out: args.out.or(file.out).unwrap_or_else(|| "cthmm-out".into()),
    };
    if args.dry_run {
        return print_dry_run(&resolved);
    }
    let path = sde_models::euler_maruyama_simulate_substeps(
        &model,
        resolved.t_end,
        resolved.dt,
        resolved.substeps,
        resolved.seed,
    )?;
    prepare_out_dir(&resolved.out)?;
    io::write_sde_observations(
        create_file(&resolved.out, "observations.csv")?,
        &path.observations()?,
    )?;
    io::write_state_path_csv(create_file(&resolved.out, "hidden.csv")?, path.dt, &path.states)?;
    println!(
        "wrote {}/observations.csv and hidden.csv ({} steps of {})",
        resolved.out.display(),
        path.n_steps(),
        resolved.dt
    );
    Ok(())
}

/// M-step selector exposed on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateArg {
    /// Closed form for drifts linear in the parameter.
    Linear,
    /// Closed form for a fully parameterized drift matrix.
    Matrix,
    /// One ascent step on the Monte Carlo objective.
    Gradient,
}

impl From<UpdateArg> for UpdateRule {
    fn from(u: UpdateArg) -> Self {
        match u {
            UpdateArg::Linear => UpdateRule::Linear,
            UpdateArg::Matrix => UpdateRule::Matrix,
            UpdateArg::Gradient => UpdateRule::Gradient,
        }
    }
}

#[derive(Args)]
pub struct FitSdeArgs {
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Observation CSV with header t,dy_1,…,dy_m.
    #[arg(long)]
    obs: Option<PathBuf>,
    /// EM starting point; defaults to all zeros.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// M-step rule; defaults to matrix for cubic-matrix and linear elsewhere.
    #[arg(long, value_enum)]
    update: Option<UpdateArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Serialize)]
struct FitSdeResolved {
    family: FamilyArg,
    dim: Option<usize>,
    sigma: f64,
    eta: f64,
    obs: PathBuf,
    theta0: Vec<f64>,
    particles: usize,
    iters: usize,
    seed: u64,
    update: UpdateArg,
    out: PathBuf,
}

pub fn fit_sde(args: FitSdeArgs) -> Result<()> {
    let file: SdeConfig = load_config(args.config.as_deref())?;
    let family = args
        .family
        .or(file.family)
        .ok_or_else(|| Error::InvalidArgument("--family is required".into()))?;
    let dim = args.dim.or(file.dim);
    let base = build_model(
        family,
        dim,
        args.sigma.or(file.sigma),
        args.eta.or(file.eta),
        None,
        &file.linear,
    )?;
    let theta0 = args
        .theta0
        .or(file.theta0)
        .unwrap_or_else(|| vec![0.0; base.param_dim()]);
    let default_update = if family == FamilyArg::CubicMatrix {
        UpdateArg::Matrix
    } else {
        UpdateArg::Linear
    };
    let resolved = FitSdeResolved {
        family,
        dim,
        sigma: base.sigma(),
        eta: base.eta(),
        obs: args
            .obs
            .or(file.obs.clone())
            .ok_or_else(|| Error::InvalidArgument("--obs is required".into()))?,
        theta0,
        particles: args.particles.or(file.particles).unwrap_or(128),
        iters: args.iters.or(file.iters).unwrap_or(200),
        seed: args.seed.or(file.seed).unwrap_or(0),
        update: args.update.or(file.update).unwrap_or(default_update),
        out: args.out.or(file.out).unwrap_or_else(|| "cthmm-out".into()),
    };
    if args.dry_run {
        return print_dry_run(&resolved);
    }
    let model0 = base.with_theta(DVector::from_column_slice(&resolved.theta0))?;
    let obs_file = File::open(&resolved.obs)
        .map_err(|e| Error::Io(format!("cannot open observations {}: {e}", resolved.obs.display())))?;
    let obs = io::read_sde_observations(obs_file)?;
    let options = FitOptions::new(
        resolved.particles,
        resolved.iters,
        resolved.seed,
        resolved.update.into(),
    );
    let report = cthmm::diffusion::fit_parameters(&model0, &obs, &options)?;
    prepare_out_dir(&resolved.out)?;
    io::write_diffusion_fit(create_file(&resolved.out, "fit.json")?, &report.theta_history)?;
    let final_theta: Vec<String> = report
        .theta_hat()
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect();
    println!(
        "wrote {}/fit.json (final theta [{}])",
        resolved.out.display(),
        final_theta.join(", ")
    );
    Ok(())
}

#[derive(Default, Deserialize)]
struct KalmanConfig {
    #[serde(rename = "F")]
    f: Option<Vec<Vec<f64>>>,
    #[serde(rename = "H")]
    h: Option<Vec<Vec<f64>>>,
    sigma: Option<f64>,
    eta: Option<f64>,
    mu0: Option<Vec<f64>>,
    #[serde(rename = "P0")]
    p0: Option<Vec<Vec<f64>>>,
    obs: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct KalmanArgs {
    /// JSON file with keys F, H, sigma, eta, mu0, P0.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observation CSV with header t,dy_1,…,dy_m.
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Output directory for filter.csv and smoother.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Serialize)]
struct KalmanResolved {
    state_dim: usize,
    obs_dim: usize,
    sigma: f64,
    eta: f64,
    obs: PathBuf,
    out: PathBuf,
}

pub fn kalman(args: KalmanArgs) -> Result<()> {
    let file: KalmanConfig = load_config(args.config.as_deref())?;
    let missing = |what: &str| Error::InvalidArgument(format!("{what} is required in the config file"));
    let f = matrix_from_rows(&file.f.ok_or_else(|| missing("F"))?, "F")?;
    let h = matrix_from_rows(&file.h.ok_or_else(|| missing("H"))?, "H")?;
    let sigma = file.sigma.ok_or_else(|| missing("sigma"))?;
    let eta = file.eta.ok_or_else(|| missing("eta"))?;
    let mu0 = DVector::from_vec(file.mu0.ok_or_else(|| missing("mu0"))?);
    let p0 = matrix_from_rows(&file.p0.ok_or_else(|| missing("P0"))?, "P0")?;
    let model = LinearModel::new(f, h, sigma, eta, mu0, p0)?;
    let resolved = KalmanResolved {
        state_dim: model.state_dim(),
        obs_dim: model.obs_dim(),
        sigma,
        eta,
        obs: args
            .obs
            .or(file.obs)
            .ok_or_else(|| Error::InvalidArgument("--obs is required".into()))?,
        out: args.out.or(file.out).unwrap_or_else(|| "cthmm-out".into()),
    };
    if args.dry_run {
        return print_dry_run(&resolved);
    }
    let obs_file = File::open(&resolved.obs)
        .map_err(|e| Error::Io(format!("cannot open observations {}: {e}", resolved.obs.display())))?;
    let obs = io::read_sde_observations(obs_file)?;
    let traj = kalman_smoother(&model, &obs)?;
    prepare_out_dir(&resolved.out)?;
    io::write_gaussian_trajectory_csv(
        create_file(&resolved.out, "filter.csv")?,
        &traj.times,
        &traj.mu_pi,
        &traj.p_pi,
    )?;
    io::write_gaussian_trajectory_csv(
        create_file(&resolved.out, "smoother.csv")?,
        &traj.times,
        &traj.mu_rho,
        &traj.p_rho,
    )?;
    println!(
        "wrote {}/filter.csv and smoother.csv ({} grid points)",
        resolved.out.display(),
        traj.times.len()
    );
    Ok(())
}

/// Writes a summary JSON value with a trailing newline.
pub fn write_summary(dir: &Path, value: &serde_json::Value) -> Result<()> {
    let mut file = create_file(dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}
