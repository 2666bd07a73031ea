//! File formats: model and fit-report JSON, observation and trajectory CSV.
//!
//! CSV floats are printed in scientific notation with 17 significant
//! digits, which round-trips every finite f64 exactly. External indices
//! are 1-based: symbols in the jump observation file, the `rho_k`,
//! `dy_k`, `xi_k`, and `P_jk` header columns, and the particle index in
//! the ensemble dump.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffusion::{DiscreteObservations, ObservationIncrements, ParticleEnsemble};
use crate::jump::{EmFitReport, JumpHmmModel, JumpObservationPath, ObsMode, ScaledPosteriorGrid};
use crate::{Error, Result};

/// Formats one float for a CSV field: 17 significant digits, exact
/// round-trip.
pub fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|row| row.iter().copied().collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Io(format!("{what} has no rows")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Io(format!("{what} rows have unequal lengths")));
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

#[derive(Serialize, Deserialize)]
struct JumpModelFile {
    n: usize,
    m: usize,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    pi0: Vec<f64>,
}

/// Writes a jump model as JSON with keys `n`, `m`, `Q`, `r`, `pi0`.
pub fn write_jump_model(w: impl Write, model: &JumpHmmModel) -> Result<()> {
    let file = JumpModelFile {
        n: model.n_states(),
        m: model.n_symbols(),
        q: matrix_rows(model.q()),
        r: matrix_rows(model.r()),
        pi0: model.pi0().iter().copied().collect(),
    };
    serde_json::to_writer_pretty(w, &file)?;
    Ok(())
}

/// Reads a jump model written by [`write_jump_model`], revalidating it.
pub fn read_jump_model(r: impl Read) -> Result<JumpHmmModel> {
    let file: JumpModelFile = serde_json::from_reader(r)?;
    let q = rows_to_matrix(&file.q, "Q")?;
    let r_mat = rows_to_matrix(&file.r, "r")?;
    if q.nrows() != file.n || r_mat.nrows() != file.n || r_mat.ncols() != file.m {
        return Err(Error::Io(format!(
            "declared sizes n = {}, m = {} disagree with Q ({}x{}) or r ({}x{})",
            file.n,
            file.m,
            q.nrows(),
            q.ncols(),
            r_mat.nrows(),
            r_mat.ncols()
        )));
    }
    JumpHmmModel::new(q, r_mat, DVector::from_vec(file.pi0))
}

/// Writes jump observation events as CSV `t,y` with 1-based symbols.
pub fn write_jump_observations(w: impl Write, obs: &JumpObservationPath) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "y"])?;
    for &(t, y) in obs.events() {
        out.write_record([csv_float(t), (y + 1).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV `t,y` event record. The window end, observation mode, and
/// symbol count are not part of the file and must be supplied.
pub fn read_jump_observations(
    r: impl Read,
    t_end: f64,
    mode: ObsMode,
    n_symbols: usize,
) -> Result<JumpObservationPath> {
    let mut input = csv::Reader::from_reader(r);
    check_header(&mut input, &["t".into(), "y".into()])?;
    let mut events = Vec::new();
    for record in input.records() {
        let record = record?;
        let t = parse_float(record.get(0), "t")?;
        let y: usize = record
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::Io(format!("symbol {:?} is not an integer", record.get(1))))?;
        if y == 0 {
            return Err(Error::Io("symbols are 1-based; got 0".into()));
        }
        events.push((t, y - 1));
    }
    JumpObservationPath::new(events, t_end, mode, n_symbols)
}

/// Writes a smoothing posterior as CSV `t,rho_1,…,rho_n`. Event times
/// appear twice, left limit first, matching the integration grid.
pub fn write_posterior_csv(w: impl Write, post: &ScaledPosteriorGrid) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n = post.grid.n_states;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("rho_{j}")));
    out.write_record(&header)?;
    for (k, &t) in post.grid.times.iter().enumerate() {
        let mut row = vec![csv_float(t)];
        row.extend(post.rho_at(k).iter().map(|&p| csv_float(p)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a generator fit as JSON with keys `Q_hat`, `iterations`,
/// `loglik_history`, `converged`.
pub fn write_jump_fit(w: impl Write, report: &EmFitReport) -> Result<()> {
    #[derive(Serialize)]
    struct FitFile {
        #[serde(rename = "Q_hat")]
        q_hat: Vec<Vec<f64>>,
        iterations: usize,
        loglik_history: Vec<f64>,
        converged: bool,
    }
    serde_json::to_writer_pretty(
        w,
        &FitFile {
            q_hat: matrix_rows(report.q_hat()),
            iterations: report.iterations,
            loglik_history: report.loglik_history.clone(),
            converged: report.converged,
        },
    )?;
    Ok(())
}

/// Writes observation increments as CSV `t,dy_1,…,dy_m`. Row `k` is
/// stamped with the end of its window, `t = (k+1)·dt`, so the file pins
/// down both the step and the horizon.
pub fn write_sde_observations(w: impl Write, obs: &ObservationIncrements) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let m = obs.obs_dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|j| format!("dy_{j}")));
    out.write_record(&header)?;
    for (k, dy) in obs.increments().iter().enumerate() {
        let mut row = vec![csv_float((k + 1) as f64 * obs.dt())];
        row.extend(dy.iter().map(|&v| csv_float(v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_sde_observations`]. The step is taken
/// from the first row's time stamp and the remaining stamps are checked
/// against it.
pub fn read_sde_observations(r: impl Read) -> Result<ObservationIncrements> {
    let mut input = csv::Reader::from_reader(r);
    let header = input.headers()?.clone();
    let m = header.len().saturating_sub(1);
    let mut expected = vec!["t".to_string()];
    expected.extend((1..=m).map(|j| format!("dy_{j}")));
    check_header_record(&header, &expected)?;
    if m == 0 {
        return Err(Error::Io("no increment columns".into()));
    }
    let mut increments = Vec::new();
    let mut dt = 0.0;
    for (k, record) in input.records().enumerate() {
        let record = record?;
        if record.len() != m + 1 {
            return Err(Error::Io(format!(
                "row {} has {} fields, expected {}",
                k + 2,
                record.len(),
                m + 1
            )));
        }
        let t = parse_float(record.get(0), "t")?;
        if k == 0 {
            dt = t;
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::Io(format!("first time stamp {dt} is not a positive step")));
            }
        } else if (t - (k + 1) as f64 * dt).abs() > 1e-9 * dt.max(t.abs()) {
            return Err(Error::Io(format!(
                "time stamp {t} at row {} is off the uniform grid with step {dt}",
                k + 2
            )));
        }
        let mut dy = DVector::zeros(m);
        for j in 0..m {
            dy[j] = parse_float(record.get(j + 1), &format!("dy_{}", j + 1))?;
        }
        increments.push(dy);
    }
    ObservationIncrements::new(dt, increments)
}

/// Writes discrete observation events as CSV `t,y_1,…,y_m`.
pub fn write_discrete_observations(w: impl Write, obs: &DiscreteObservations) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let m = obs
        .events()
        .first()
        .map(|(_, y)| y.len())
        .unwrap_or(1);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|j| format!("y_{j}")));
    out.write_record(&header)?;
    for (t, y) in obs.events() {
        let mut row = vec![csv_float(*t)];
        row.extend(y.iter().map(|&v| csv_float(v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_discrete_observations`]. The filter
/// step and horizon are not part of the file and must be supplied.
pub fn read_discrete_observations(
    r: impl Read,
    dt: f64,
    t_end: f64,
) -> Result<DiscreteObservations> {
    let mut input = csv::Reader::from_reader(r);
    let header = input.headers()?.clone();
    let m = header.len().saturating_sub(1);
    let mut expected = vec!["t".to_string()];
    expected.extend((1..=m).map(|j| format!("y_{j}")));
    check_header_record(&header, &expected)?;
    if m == 0 {
        return Err(Error::Io("no observation columns".into()));
    }
    let mut events = Vec::new();
    for record in input.records() {
        let record = record?;
        let t = parse_float(record.get(0), "t")?;
        let mut y = DVector::zeros(m);
        for j in 0..m {
            y[j] = parse_float(record.get(j + 1), &format!("y_{}", j + 1))?;
        }
        events.push((t, y));
    }
    DiscreteObservations::new(dt, t_end, events)
}

/// Writes a particle ensemble as CSV `t,i,xi_1,…,xi_n,w` with 1-based
/// particle indices. A filtered ensemble carries no smoothing weights and
/// dumps the uniform weight `1/N` instead.
pub fn write_ensemble_csv(w: impl Write, ens: &ParticleEnsemble) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n = ens.state_dim;
    let mut header = vec!["t".to_string(), "i".to_string()];
    header.extend((1..=n).map(|j| format!("xi_{j}")));
    header.push("w".to_string());
    out.write_record(&header)?;
    let uniform = 1.0 / ens.n_particles as f64;
    for k in 0..=ens.n_steps() {
        let weights = ens.weights_at(k).ok();
        for i in 0..ens.n_particles {
            let mut row = vec![csv_float(ens.time(k)), (i + 1).to_string()];
            row.extend(ens.position(k, i).iter().map(|&v| csv_float(v)));
            row.push(csv_float(weights.map_or(uniform, |ws| ws[i])));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes a parameter fit as JSON with keys `theta_history` and `final`.
pub fn write_diffusion_fit(
    w: impl Write,
    theta_history: &[DVector<f64>],
) -> Result<()> {
    #[derive(Serialize)]
    struct FitFile {
        theta_history: Vec<Vec<f64>>,
        #[serde(rename = "final")]
        final_theta: Vec<f64>,
    }
    let last = theta_history
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty parameter history".into()))?;
    serde_json::to_writer_pretty(
        w,
        &FitFile {
            theta_history: theta_history
                .iter()
                .map(|th| th.iter().copied().collect())
                .collect(),
            final_theta: last.iter().copied().collect(),
        },
    )?;
    Ok(())
}

/// Writes a Gaussian trajectory as CSV `t,mu_1,…,mu_n,P_11,…,P_nn` with
/// the covariance flattened row-major.
pub fn write_gaussian_trajectory_csv(
    w: impl Write,
    times: &[f64],
    means: &[DVector<f64>],
    covs: &[DMatrix<f64>],
) -> Result<()> {
    if times.len() != means.len() || times.len() != covs.len() {
        return Err(Error::InvalidArgument(
            "times, means, and covariances have different lengths".into(),
        ));
    }
    let n = means.first().map(|mu| mu.len()).unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("mu_{j}")));
    for j in 1..=n {
        for l in 1..=n {
            header.push(format!("P_{j}{l}"));
        }
    }
    out.write_record(&header)?;
    for (k, &t) in times.iter().enumerate() {
        let mut row = vec![csv_float(t)];
        row.extend(means[k].iter().map(|&v| csv_float(v)));
        for j in 0..n {
            for l in 0..n {
                row.push(csv_float(covs[k][(j, l)]));
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a state path as CSV `t,x_1,…,x_n` on a uniform grid starting
/// at time 0.
pub fn write_state_path_csv(w: impl Write, dt: f64, states: &[DVector<f64>]) -> Result<()> {
    let n = states.first().map(|x| x.len()).unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("x_{j}")));
    out.write_record(&header)?;
    for (k, x) in states.iter().enumerate() {
        let mut row = vec![csv_float(k as f64 * dt)];
        row.extend(x.iter().map(|&v| csv_float(v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn parse_float(field: Option<&str>, name: &str) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::Io(format!("missing field {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Io(format!("field {name} = {raw:?} is not a number")))
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[String]) -> Result<()> {
    let header = reader.headers()?.clone();
    check_header_record(&header, expected)
}

fn check_header_record(header: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let got: Vec<&str> = header.iter().collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Io(format!(
            "unexpected header {:?}, expected {:?}",
            got.join(","),
            expected.join(",")
        )));
    }
    Ok(())
}
