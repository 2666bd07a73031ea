//! Finite-state Markov jump process with symbol observations.
//!
//! The hidden state follows a continuous-time Markov chain with generator
//! `Q`. Whenever the state jumps to `i`, a fresh observation symbol is drawn
//! from the categorical law `r[i]`. Two observation regimes are supported:
//!
//! * continuous: the symbol stream is watched at all times, so an
//!   observation event is every instant the symbol changes value;
//! * discrete: symbols are drawn from `r[state]` only at scheduled times.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::rng::{sample_categorical, substream, Purpose};
use crate::{Error, Result};

/// Tolerance for structural checks on stochastic vectors and generator rows.
const ROW_TOL: f64 = 1e-9;

/// Hidden-state generator, observation law, and initial distribution.
#[derive(Clone, Debug)]
pub struct JumpHmmModel {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    pi0: DVector<f64>,
}

impl JumpHmmModel {
    /// Validates and builds a model.
    ///
    /// `q` must be square with nonnegative off-diagonal entries and rows
    /// summing to zero within `1e-9` (the diagonal is then adjusted so rows
    /// sum to zero exactly). `r` must have one row per state, each a
    /// probability vector; `pi0` must be a probability vector over states.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, pi0: DVector<f64>) -> Result<Self> {
        let n = q.nrows();
        if n == 0 || q.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "generator must be square and nonempty, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if r.nrows() != n || r.ncols() == 0 {
            return Err(Error::InvalidModel(format!(
                "observation matrix must have {} rows and at least one column, got {}x{}",
                n,
                r.nrows(),
                r.ncols()
            )));
        }
        if pi0.len() != n {
            return Err(Error::InvalidModel(format!(
                "initial distribution has length {}, expected {}",
                pi0.len(),
                n
            )));
        }
        let mut q = q;
        for i in 0..n {
            let mut off_sum = 0.0;
            for j in 0..n {
                let v = q[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidModel(format!("generator entry ({i},{j}) is not finite")));
                }
                if i != j {
                    if v < -ROW_TOL {
                        return Err(Error::InvalidModel(format!(
                            "generator off-diagonal ({i},{j}) is negative: {v}"
                        )));
                    }
                    // Tiny negatives from upstream arithmetic are clamped.
                    if v < 0.0 {
                        q[(i, j)] = 0.0;
                    }
                    off_sum += q[(i, j)];
                }
            }
            let scale = off_sum.max(q[(i, i)].abs()).max(1.0);
            if (q[(i, i)] + off_sum).abs() > ROW_TOL * scale {
                return Err(Error::InvalidModel(format!(
                    "generator row {i} sums to {} instead of zero",
                    q[(i, i)] + off_sum
                )));
            }
            q[(i, i)] = -off_sum;
        }
        check_stochastic_rows(&r, "observation matrix")?;
        check_probability_vector(pi0.as_slice(), "initial distribution")?;
        Ok(Self { q, r, pi0 })
    }

    /// Number of hidden states.
    pub fn n_states(&self) -> usize {
        self.q.nrows()
    }

    /// Number of observation symbols.
    pub fn n_symbols(&self) -> usize {
        self.r.ncols()
    }

    /// Generator matrix.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Observation law, one row per state.
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Initial state distribution.
    pub fn pi0(&self) -> &DVector<f64> {
        &self.pi0
    }

    /// Same observation law and initial distribution with a new generator.
    pub fn with_generator(&self, q: DMatrix<f64>) -> Result<Self> {
        Self::new(q, self.r.clone(), self.pi0.clone())
    }
}

fn check_stochastic_rows(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        check_probability_vector(&row, &format!("{what} row {i}"))?;
    }
    Ok(())
}

fn check_probability_vector(v: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for (k, &p) in v.iter().enumerate() {
        if !p.is_finite() || p < -ROW_TOL {
            return Err(Error::InvalidModel(format!("{what}: entry {k} is {p}")));
        }
        sum += p.max(0.0);
    }
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::InvalidModel(format!("{what}: sums to {sum} instead of one")));
    }
    Ok(())
}

/// How the observation record relates to the symbol stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObsMode {
    /// The symbol stream is observed continuously; events are the times it
    /// changes value, and the first event is the initial symbol at time 0.
    Continuous,
    /// Symbols are drawn at scheduled times only; consecutive symbols may
    /// repeat and the first observation may come strictly after time 0.
    Discrete,
}

/// Observation record: `(time, symbol)` events over a window `[0, t_end]`.
#[derive(Clone, Debug)]
pub struct JumpObservationPath {
    events: Vec<(f64, usize)>,
    t_end: f64,
    mode: ObsMode,
}

impl JumpObservationPath {
    /// Validates an observation record against a symbol count.
    ///
    /// Times must be strictly increasing and inside `[0, t_end]`. In
    /// continuous mode the record must start with the symbol at time 0 and
    /// consecutive symbols must differ; in discrete mode it may be empty.
    pub fn new(events: Vec<(f64, usize)>, t_end: f64, mode: ObsMode, n_symbols: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidObservations(format!(
                "time horizon must be positive and finite, got {t_end}"
            )));
        }
        if mode == ObsMode::Continuous {
            match events.first() {
                Some(&(t0, _)) if t0 == 0.0 => {}
                Some(&(t0, _)) => {
                    return Err(Error::InvalidObservations(format!(
                        "continuous record must start at time 0, got {t0}"
                    )))
                }
                None => {
                    return Err(Error::InvalidObservations(
                        "continuous record needs at least the initial symbol".into(),
                    ))
                }
            }
        }
        let mut prev_t = f64::NEG_INFINITY;
        let mut prev_y = usize::MAX;
        for &(t, y) in &events {
            if !t.is_finite() || t < 0.0 || t > t_end {
                return Err(Error::InvalidObservations(format!(
                    "event time {t} outside [0, {t_end}]"
                )));
            }
            if t <= prev_t {
                return Err(Error::InvalidObservations(format!(
                    "event times must be strictly increasing, got {prev_t} then {t}"
                )));
            }
            if y >= n_symbols {
                return Err(Error::InvalidObservations(format!(
                    "symbol {y} out of range for {n_symbols} symbols"
                )));
            }
            if mode == ObsMode::Continuous && y == prev_y {
                return Err(Error::InvalidObservations(format!(
                    "continuous record repeats symbol {y} at time {t}"
                )));
            }
            prev_t = t;
            prev_y = y;
        }
        Ok(Self { events, t_end, mode })
    }

    /// Observation events as `(time, symbol)` pairs.
    pub fn events(&self) -> &[(f64, usize)] {
        &self.events
    }

    /// End of the observation window.
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Observation regime of this record.
    pub fn mode(&self) -> ObsMode {
        self.mode
    }
}

/// Piecewise-constant hidden trajectory: `(jump time, new state)` with the
/// initial state recorded at time 0.
#[derive(Clone, Debug)]
pub struct JumpHiddenPath {
    pub events: Vec<(f64, usize)>,
    pub t_end: f64,
}

impl JumpHiddenPath {
    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        match self.events.iter().rposition(|&(s, _)| s <= t) {
            Some(k) => self.events[k].1,
            None => self.events[0].1,
        }
    }
}

/// Simulates the hidden chain and its continuously-watched symbol stream
/// over `[0, t_end]`.
///
/// Returns the hidden trajectory and the observation record (initial symbol
/// at time 0 plus every visible symbol change). A state with zero exit rate
/// is absorbing: the path simply stays there until `t_end`.
pub fn simulate_jump_hmm(
    model: &JumpHmmModel,
    t_end: f64,
    seed: u64,
) -> Result<(JumpHiddenPath, JumpObservationPath)> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "time horizon must be positive and finite, got {t_end}"
        )));
    }
    let mut rng_path = substream(seed, Purpose::JumpPath, 0, 0);
    let mut rng_sym = substream(seed, Purpose::JumpSymbol, 0, 0);

    let mut state = sample_categorical(&mut rng_path, model.pi0.as_slice());
    let mut symbol = sample_row(&mut rng_sym, &model.r, state);
    let mut hidden = vec![(0.0, state)];
    let mut obs = vec![(0.0, symbol)];

    let mut t = 0.0;
    loop {
        let rate = -model.q[(state, state)];
        if rate <= 0.0 {
            break;
        }
        t += Exp::new(rate).expect("positive rate").sample(&mut rng_path);
        if t >= t_end {
            break;
        }
        let weights: Vec<f64> = (0..model.n_states())
            .map(|j| if j == state { 0.0 } else { model.q[(state, j)] / rate })
            .collect();
        state = sample_categorical(&mut rng_path, &weights);
        hidden.push((t, state));
        let y = sample_row(&mut rng_sym, &model.r, state);
        if y != symbol {
            symbol = y;
            obs.push((t, y));
        }
    }

    let hidden = JumpHiddenPath { events: hidden, t_end };
    let obs = JumpObservationPath::new(obs, t_end, ObsMode::Continuous, model.n_symbols())?;
    Ok((hidden, obs))
}

/// Simulates the hidden chain and samples one symbol from `r[state]` at
/// each scheduled time in `obs_times` (strictly increasing, within
/// `(0, t_end]`).
pub fn simulate_jump_hmm_discrete_obs(
    model: &JumpHmmModel,
    obs_times: &[f64],
    t_end: f64,
    seed: u64,
) -> Result<(JumpHiddenPath, JumpObservationPath)> {
    let (hidden, _) = simulate_jump_hmm(model, t_end, seed)?;
    let mut rng_sym = substream(seed, Purpose::JumpSymbol, 1, 0);
    let events: Vec<(f64, usize)> = obs_times
        .iter()
        .map(|&t| (t, sample_row(&mut rng_sym, &model.r, hidden.state_at(t))))
        .collect();
    let obs = JumpObservationPath::new(events, t_end, ObsMode::Discrete, model.n_symbols())?;
    Ok((hidden, obs))
}

fn sample_row<R: Rng>(rng: &mut R, m: &DMatrix<f64>, row: usize) -> usize {
    let weights: Vec<f64> = m.row(row).iter().copied().collect();
    sample_categorical(rng, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_model() -> JumpHmmModel {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let pi0 = DVector::from_vec(vec![0.5, 0.5]);
        JumpHmmModel::new(q, r, pi0).unwrap()
    }

    #[test]
    fn rejects_negative_off_diagonal() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -0.5, 0.5]);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let pi0 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            JumpHmmModel::new(q, r, pi0),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn rejects_row_sum_violation() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.5, 2.0, -2.0]);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let pi0 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(JumpHmmModel::new(q, r, pi0).is_err());
    }

    #[test]
    fn continuous_record_must_start_at_zero_and_alternate() {
        assert!(JumpObservationPath::new(vec![(0.5, 0)], 1.0, ObsMode::Continuous, 2).is_err());
        assert!(
            JumpObservationPath::new(vec![(0.0, 0), (0.5, 0)], 1.0, ObsMode::Continuous, 2).is_err()
        );
        assert!(
            JumpObservationPath::new(vec![(0.0, 0), (0.5, 1)], 1.0, ObsMode::Continuous, 2).is_ok()
        );
    }

    #[test]
    fn discrete_record_may_repeat_and_start_late() {
        let path =
            JumpObservationPath::new(vec![(0.3, 1), (0.6, 1)], 1.0, ObsMode::Discrete, 2).unwrap();
        assert_eq!(path.events().len(), 2);
        assert!(JumpObservationPath::new(vec![], 1.0, ObsMode::Discrete, 2).is_ok());
    }

    #[test]
    fn holding_times_match_exit_rate() {
        // State 1 of the two-state model has exit rate 2; the sample mean of
        // many holding times must sit within three standard errors of 1/2.
        let q = DMatrix::from_row_slice(2, 2, &[-0.0, 0.0, 2.0, -2.0]);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let pi0 = DVector::from_vec(vec![0.0, 1.0]);
        let model = JumpHmmModel::new(q, r, pi0).unwrap();
        let n = 10_000;
        let mut sum = 0.0;
        for s in 0..n {
            let (hidden, _) = simulate_jump_hmm(&model, 1e9, s as u64).unwrap();
            assert_eq!(hidden.events.len(), 2);
            sum += hidden.events[1].0;
        }
        let mean = sum / n as f64;
        let se = 0.5 / (n as f64).sqrt();
        assert!(
            (mean - 0.5).abs() < 3.0 * se,
            "holding-time mean {mean} outside 0.5 +- {}",
            3.0 * se
        );
    }

    #[test]
    fn absorbing_single_state_produces_only_initial_event() {
        let q = DMatrix::from_row_slice(1, 1, &[0.0]);
        let r = DMatrix::from_row_slice(1, 1, &[1.0]);
        let pi0 = DVector::from_vec(vec![1.0]);
        let model = JumpHmmModel::new(q, r, pi0).unwrap();
        let (hidden, obs) = simulate_jump_hmm(&model, 5.0, 3).unwrap();
        assert_eq!(hidden.events, vec![(0.0, 0)]);
        assert_eq!(obs.events(), &[(0.0, 0)]);
    }

    #[test]
    fn identity_observation_makes_every_jump_visible() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let r = DMatrix::identity(2, 2);
        let pi0 = DVector::from_vec(vec![0.5, 0.5]);
        let model = JumpHmmModel::new(q, r, pi0).unwrap();
        for seed in 0..20 {
            let (hidden, obs) = simulate_jump_hmm(&model, 10.0, seed).unwrap();
            let hidden_times: Vec<f64> = hidden.events.iter().map(|&(t, _)| t).collect();
            let obs_times: Vec<f64> = obs.events().iter().map(|&(t, _)| t).collect();
            assert_eq!(hidden_times, obs_times);
        }
    }

    #[test]
    fn rejects_nonpositive_horizon() {
        let model = two_state_model();
        assert!(simulate_jump_hmm(&model, 0.0, 0).is_err());
        assert!(simulate_jump_hmm(&model, -1.0, 0).is_err());
    }

    #[test]
    fn same_seed_reproduces_the_path() {
        let model = two_state_model();
        let (h1, o1) = simulate_jump_hmm(&model, 20.0, 42).unwrap();
        let (h2, o2) = simulate_jump_hmm(&model, 20.0, 42).unwrap();
        assert_eq!(h1.events, h2.events);
        assert_eq!(o1.events(), o2.events());
    }

    #[test]
    fn discrete_obs_samples_at_scheduled_times() {
        let model = two_state_model();
        let times = [0.5, 1.0, 1.5];
        let (_, obs) = simulate_jump_hmm_discrete_obs(&model, &times, 2.0, 9).unwrap();
        assert_eq!(obs.mode(), ObsMode::Discrete);
        let obs_times: Vec<f64> = obs.events().iter().map(|&(t, _)| t).collect();
        assert_eq!(obs_times, times);
    }
}
