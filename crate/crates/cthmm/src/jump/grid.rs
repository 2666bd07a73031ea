//! Time grid shared by the forward, backward, and posterior passes.
//!
//! The observation window is split into segments at the event times. Each
//! segment carries a uniform sub-grid whose step never exceeds the
//! requested maximum, so an event time appears twice in the flattened grid:
//! once as the last point of the preceding segment (the left limit) and
//! once as the first point of the segment it opens (the post-event value).

use crate::jump::model::{JumpObservationPath, ObsMode};
use crate::{Error, Result};

/// Step-size control for the integration grid.
#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    /// Upper bound on the sub-grid step inside each inter-event interval.
    pub dt_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { dt_max: 1e-2 }
    }
}

/// One inter-event interval and its slice of the flattened grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Interval `[t0, t1]`.
    pub t0: f64,
    pub t1: f64,
    /// Index of the first grid point of this segment in the flattened grid.
    pub first: usize,
    /// Number of grid points (1 for a zero-length segment, else at least 2).
    pub n_points: usize,
    /// Uniform step between consecutive points (0 for a single point).
    pub step: f64,
    /// Symbol in force during the segment (continuous mode only).
    pub active_symbol: Option<usize>,
    /// Symbol of the event at `t0`, if the segment starts with one. The
    /// first segment has no entry event; in continuous mode its initial
    /// symbol enters through the initial condition instead.
    pub entry_symbol: Option<usize>,
}

impl Segment {
    /// Index of the last grid point of this segment.
    pub fn last(&self) -> usize {
        self.first + self.n_points - 1
    }
}

/// Flattened integration grid over `[0, t_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    pub times: Vec<f64>,
    pub segments: Vec<Segment>,
    pub n_states: usize,
    pub mode: ObsMode,
}

impl TimeGrid {
    /// Builds the grid for an observation record.
    pub fn build(obs: &JumpObservationPath, spec: &GridSpec, n_states: usize) -> Result<Self> {
        if !(spec.dt_max > 0.0) || !spec.dt_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid step bound must be positive and finite, got {}",
                spec.dt_max
            )));
        }
        // Segment boundaries: 0, each event time, t_end. In continuous mode
        // the first event sits at 0 already; in discrete mode the first
        // segment may cover a prefix with no entry event.
        let mut boundaries = vec![0.0];
        let mut entry_symbols: Vec<Option<usize>> = vec![None];
        for &(t, y) in obs.events() {
            if t > 0.0 {
                boundaries.push(t);
                entry_symbols.push(Some(y));
            } else if obs.mode() == ObsMode::Discrete {
                // A scheduled observation exactly at 0 opens a zero-length
                // first segment so the pre- and post-observation values both
                // appear on the grid.
                boundaries.push(0.0);
                entry_symbols.push(Some(y));
            }
        }
        // Close the window. When the final event falls exactly on t_end this
        // appends a duplicate boundary, giving a zero-length last segment
        // that still records the event's post-jump value.
        boundaries.push(obs.t_end());
        entry_symbols.push(None);

        let active: Vec<Option<usize>> = if obs.mode() == ObsMode::Continuous {
            // Segment s runs under the symbol announced at its start; the
            // first segment runs under the initial symbol.
            let mut current = obs.events()[0].1;
            let mut out = Vec::with_capacity(boundaries.len() - 1);
            for s in 0..boundaries.len() - 1 {
                if s > 0 {
                    if let Some(y) = entry_symbols[s] {
                        current = y;
                    }
                }
                out.push(Some(current));
            }
            out
        } else {
            vec![None; boundaries.len() - 1]
        };

        let mut segments = Vec::with_capacity(boundaries.len() - 1);
        let mut times = Vec::new();
        for s in 0..boundaries.len() - 1 {
            let (t0, t1) = (boundaries[s], boundaries[s + 1]);
            let first = times.len();
            let (n_points, step) = if t1 > t0 {
                let steps = ((t1 - t0) / spec.dt_max).ceil().max(1.0) as usize;
                (steps + 1, (t1 - t0) / steps as f64)
            } else {
                (1, 0.0)
            };
            for k in 0..n_points {
                let t = if k + 1 == n_points { t1 } else { t0 + step * k as f64 };
                times.push(t);
            }
            segments.push(Segment {
                t0,
                t1,
                first,
                n_points,
                step,
                active_symbol: active[s],
                entry_symbol: entry_symbols[s],
            });
        }
        Ok(Self {
            times,
            segments,
            n_states,
            mode: obs.mode(),
        })
    }

    /// Total number of grid points.
    pub fn n_points(&self) -> usize {
        self.times.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn continuous_obs(events: Vec<(f64, usize)>, t_end: f64) -> JumpObservationPath {
        JumpObservationPath::new(events, t_end, ObsMode::Continuous, 3).unwrap()
    }

    #[test]
    fn event_times_appear_twice() {
        let obs = continuous_obs(vec![(0.0, 0), (0.4, 1)], 1.0);
        let grid = TimeGrid::build(&obs, &GridSpec { dt_max: 0.1 }, 2).unwrap();
        let dup: Vec<f64> = grid
            .times
            .iter()
            .copied()
            .filter(|&t| (t - 0.4).abs() < 1e-15)
            .collect();
        assert_eq!(dup.len(), 2);
        assert_eq!(grid.segments.len(), 2);
        assert_eq!(grid.segments[1].entry_symbol, Some(1));
        assert_eq!(grid.segments[0].active_symbol, Some(0));
        assert_eq!(grid.segments[1].active_symbol, Some(1));
    }

    #[test]
    fn step_never_exceeds_bound_and_endpoints_are_exact() {
        let obs = continuous_obs(vec![(0.0, 0), (0.35, 1)], 1.0);
        let grid = TimeGrid::build(&obs, &GridSpec { dt_max: 0.1 }, 2).unwrap();
        for seg in &grid.segments {
            assert!(seg.step <= 0.1 + 1e-15);
            assert_eq!(grid.times[seg.first], seg.t0);
            assert_eq!(grid.times[seg.last()], seg.t1);
            assert!(seg.n_points >= 2);
        }
        assert_eq!(grid.times[0], 0.0);
        assert_eq!(*grid.times.last().unwrap(), 1.0);
    }

    #[test]
    fn event_at_horizon_creates_zero_length_segment() {
        let obs = continuous_obs(vec![(0.0, 0), (1.0, 2)], 1.0);
        let grid = TimeGrid::build(&obs, &GridSpec::default(), 2).unwrap();
        let last = grid.segments.last().unwrap();
        assert_eq!(last.n_points, 1);
        assert_eq!(last.t0, 1.0);
        assert_eq!(last.entry_symbol, Some(2));
    }

    #[test]
    fn discrete_mode_allows_late_first_event() {
        let obs = JumpObservationPath::new(vec![(0.5, 1)], 1.0, ObsMode::Discrete, 2).unwrap();
        let grid = TimeGrid::build(&obs, &GridSpec::default(), 2).unwrap();
        assert_eq!(grid.segments.len(), 2);
        assert_eq!(grid.segments[0].entry_symbol, None);
        assert_eq!(grid.segments[1].entry_symbol, Some(1));
        assert!(grid.segments.iter().all(|s| s.active_symbol.is_none()));
    }

    #[test]
    fn discrete_mode_with_no_events_is_one_segment() {
        let obs = JumpObservationPath::new(vec![], 2.0, ObsMode::Discrete, 2).unwrap();
        let grid = TimeGrid::build(&obs, &GridSpec::default(), 2).unwrap();
        assert_eq!(grid.segments.len(), 1);
        assert_eq!(grid.segments[0].t1, 2.0);
    }
}
