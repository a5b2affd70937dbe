//! Signal phases as time-dependent position constraints.
//!
//! A traffic light is a schedule of red/green intervals anchored at a stop
//! line. While red, the stop line (minus a stop margin) is an upper bound on
//! the ego position; while green the bound disappears. Crossing pedestrians
//! become "virtual signals" with a single red interval, so the optimizer
//! treats both identically. Confidence in a source shrinks its green windows
//! symmetrically, which can only tighten the constraint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintError {
    #[error("no constraint sources to merge")]
    Empty,
    #[error("constraint source has length {actual}, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("phase schedule invalid: {0}")]
    BadSchedule(&'static str),
    #[error("pedestrian event invalid: {0}")]
    BadPedestrian(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Red,
    Green,
}

impl Phase {
    fn flipped(self) -> Phase {
        match self {
            Phase::Red => Phase::Green,
            Phase::Green => Phase::Red,
        }
    }
}

/// Phase plan of one signal (or virtual signal). The schedule starts in
/// `initial_phase` at t = 0 and flips at each entry of `switch_times`; a
/// switch instant already belongs to the phase it switches into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSchedule {
    /// Stop-line position along the route, m.
    pub signal_position: f64,
    pub initial_phase: Phase,
    /// Strictly increasing, all positive.
    #[serde(default)]
    pub switch_times: Vec<f64>,
    /// Source confidence in [0, 1]; 1 means fully trusted.
    pub confidence: f64,
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<(), ConstraintError> {
        if !self.signal_position.is_finite() {
            return Err(ConstraintError::BadSchedule("signal_position must be finite"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(ConstraintError::BadSchedule("confidence must be in [0, 1]"));
        }
        if self.switch_times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(ConstraintError::BadSchedule("switch times must be positive and finite"));
        }
        if self.switch_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConstraintError::BadSchedule("switch times must be strictly increasing"));
        }
        Ok(())
    }

    pub fn phase_at(&self, t: f64) -> Phase {
        let flips = self.switch_times.partition_point(|s| *s <= t);
        if flips % 2 == 0 {
            self.initial_phase
        } else {
            self.initial_phase.flipped()
        }
    }

    /// Earliest time >= t at which the signal is green; `t` itself when the
    /// signal is already green, +inf when it never turns green again.
    pub fn next_green_start(&self, t: f64) -> f64 {
        if self.phase_at(t) == Phase::Green {
            return t;
        }
        // Phases alternate, so the next switch after t necessarily turns green.
        let idx = self.switch_times.partition_point(|s| *s <= t);
        self.switch_times.get(idx).copied().unwrap_or(f64::INFINITY)
    }

    /// Green intervals as `(start, end)` pairs; the last may be open-ended
    /// (`end = +inf`). Interval ends are exclusive.
    pub fn green_intervals(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut phase = self.initial_phase;
        let mut since = 0.0;
        for &s in &self.switch_times {
            if phase == Phase::Green {
                out.push((since, s));
            }
            phase = phase.flipped();
            since = s;
        }
        if phase == Phase::Green {
            out.push((since, f64::INFINITY));
        }
        out
    }
}

/// Upper position bound imposed by one signal at time `t`: the stop line
/// minus `stop_margin` while red, unbounded while green.
pub fn tl_position_bound(schedule: &PhaseSchedule, t: f64, stop_margin: f64) -> f64 {
    match schedule.phase_at(t) {
        Phase::Red => schedule.signal_position - stop_margin,
        Phase::Green => f64::INFINITY,
    }
}

/// A pedestrian starting to cross `crossing_position` at `start_time`,
/// walking `road_width` meters at `walking_speed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianEvent {
    pub crossing_position: f64,
    pub start_time: f64,
    pub walking_speed: f64,
    pub road_width: f64,
    pub confidence: f64,
}

impl PedestrianEvent {
    pub fn validate(&self) -> Result<(), ConstraintError> {
        if !self.crossing_position.is_finite() {
            return Err(ConstraintError::BadPedestrian("crossing_position must be finite"));
        }
        if !(self.start_time >= 0.0) || !self.start_time.is_finite() {
            return Err(ConstraintError::BadPedestrian("start_time must be non-negative"));
        }
        if !(self.walking_speed > 0.0) || !self.walking_speed.is_finite() {
            return Err(ConstraintError::BadPedestrian("walking_speed must be positive"));
        }
        if !(self.road_width > 0.0) || !self.road_width.is_finite() {
            return Err(ConstraintError::BadPedestrian("road_width must be positive"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(ConstraintError::BadPedestrian("confidence must be in [0, 1]"));
        }
        Ok(())
    }

    /// Time at which the pedestrian has fully left the road.
    pub fn clear_time(&self) -> f64 {
        self.start_time + self.road_width / self.walking_speed
    }
}

/// Model a crossing pedestrian as a signal that shows red for
/// `road_width / walking_speed + safety_margin` seconds from `start_time`.
pub fn pedestrian_to_virtual_phase(event: &PedestrianEvent, safety_margin: f64) -> PhaseSchedule {
    let t_clear = event.clear_time() + safety_margin;
    let (initial_phase, switch_times) = if event.start_time > 0.0 {
        (Phase::Green, vec![event.start_time, t_clear])
    } else {
        (Phase::Red, vec![t_clear])
    };
    PhaseSchedule {
        signal_position: event.crossing_position,
        initial_phase,
        switch_times,
        confidence: event.confidence,
    }
}

/// How phase timing uncertainty maps to schedule tightening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidencePolicy {
    /// Margin applied at confidence 0, s. Scales linearly down to 0 at
    /// confidence 1: `margin = margin_max * (1 - confidence)`.
    pub margin_max: f64,
}

impl Default for ConfidencePolicy {
    fn default() -> Self {
        Self { margin_max: 4.0 }
    }
}

impl ConfidencePolicy {
    pub fn margin_for(&self, confidence: f64) -> f64 {
        (self.margin_max * (1.0 - confidence)).max(0.0)
    }
}

/// Shrink every green window of `schedule` by the confidence margin: green
/// starts are delayed, green ends advanced, and windows that invert vanish.
/// The red set of the result is always a superset of the original's, and
/// confidence 1 returns the schedule unchanged.
pub fn apply_confidence(schedule: &PhaseSchedule, policy: &ConfidencePolicy) -> PhaseSchedule {
    let margin = policy.margin_for(schedule.confidence);
    if margin == 0.0 {
        return schedule.clone();
    }
    let mut greens = Vec::new();
    for (start, end) in schedule.green_intervals() {
        // The schedule begins at t = 0; an initial green has no switch to
        // delay. Open-ended greens keep their open end.
        let start = if start == 0.0 { 0.0 } else { start + margin };
        let end = if end.is_finite() { end - margin } else { end };
        if start < end {
            greens.push((start, end));
        }
    }
    let initial_phase = match greens.first() {
        Some((s, _)) if *s == 0.0 => Phase::Green,
        _ => Phase::Red,
    };
    let mut switch_times = Vec::new();
    for (start, end) in greens {
        if start > 0.0 {
            switch_times.push(start);
        }
        if end.is_finite() {
            switch_times.push(end);
        }
    }
    PhaseSchedule {
        signal_position: schedule.signal_position,
        initial_phase,
        switch_times,
        confidence: schedule.confidence,
    }
}

/// Following constraint: stay `safety_gap` behind each predicted position of
/// the vehicle ahead.
pub fn preceding_vehicle_bound(predicted_positions: &[f64], safety_gap: f64) -> Vec<f64> {
    predicted_positions.iter().map(|p| p - safety_gap).collect()
}

/// Per-step upper bounds handed to the optimizer. Entry `k` constrains the
/// state after `k + 1` steps of `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintProfile {
    pub dt: f64,
    pub position_upper: Vec<f64>,
    pub velocity_upper: Vec<f64>,
}

impl ConstraintProfile {
    pub fn horizon(&self) -> usize {
        self.position_upper.len()
    }

    pub fn unconstrained(dt: f64, horizon: usize) -> Self {
        Self {
            dt,
            position_upper: vec![f64::INFINITY; horizon],
            velocity_upper: vec![f64::INFINITY; horizon],
        }
    }
}

/// Elementwise minimum over any number of position-bound and velocity-bound
/// sources. At least one source must be given (the horizon is taken from it)
/// and all sources must share that length.
pub fn merge_constraints(
    dt: f64,
    position_sources: &[Vec<f64>],
    velocity_sources: &[Vec<f64>],
) -> Result<ConstraintProfile, ConstraintError> {
    let horizon = position_sources
        .first()
        .or_else(|| velocity_sources.first())
        .ok_or(ConstraintError::Empty)?
        .len();
    let fold = |sources: &[Vec<f64>]| -> Result<Vec<f64>, ConstraintError> {
        let mut merged = vec![f64::INFINITY; horizon];
        for src in sources {
            if src.len() != horizon {
                return Err(ConstraintError::LengthMismatch { expected: horizon, actual: src.len() });
            }
            for (m, v) in merged.iter_mut().zip(src) {
                *m = m.min(*v);
            }
        }
        Ok(merged)
    };
    Ok(ConstraintProfile {
        dt,
        position_upper: fold(position_sources)?,
        velocity_upper: fold(velocity_sources)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(initial: Phase, switches: &[f64]) -> PhaseSchedule {
        PhaseSchedule {
            signal_position: 250.0,
            initial_phase: initial,
            switch_times: switches.to_vec(),
            confidence: 1.0,
        }
    }

    #[test]
    fn switch_instant_belongs_to_new_phase() {
        let s = sched(Phase::Green, &[10.0, 21.0]);
        assert_eq!(s.phase_at(0.0), Phase::Green);
        assert_eq!(s.phase_at(9.999), Phase::Green);
        assert_eq!(s.phase_at(10.0), Phase::Red);
        assert_eq!(s.phase_at(20.999), Phase::Red);
        assert_eq!(s.phase_at(21.0), Phase::Green);
        assert_eq!(s.phase_at(1e6), Phase::Green);
    }

    #[test]
    fn phase_regions_match_interval_arithmetic() {
        // Red [0,10) ∪ [25,40) ∪ [55,inf); green elsewhere.
        let s = sched(Phase::Red, &[10.0, 25.0, 40.0, 55.0]);
        let oracle = |t: f64| {
            if t < 10.0 || (25.0..40.0).contains(&t) || t >= 55.0 {
                Phase::Red
            } else {
                Phase::Green
            }
        };
        let mut t = 0.0;
        while t < 80.0 {
            assert_eq!(s.phase_at(t), oracle(t), "t = {t}");
            t += 0.37;
        }
    }

    #[test]
    fn next_green_start_cases() {
        let s = sched(Phase::Green, &[10.0, 21.0]);
        assert_eq!(s.next_green_start(5.0), 5.0);
        assert_eq!(s.next_green_start(10.0), 21.0);
        assert_eq!(s.next_green_start(15.0), 21.0);
        assert_eq!(s.next_green_start(21.0), 21.0);
        assert_eq!(s.next_green_start(22.0), 22.0);
        let forever_red = sched(Phase::Red, &[]);
        assert_eq!(forever_red.next_green_start(0.0), f64::INFINITY);
    }

    #[test]
    fn position_bound_only_while_red() {
        let s = sched(Phase::Green, &[10.0, 21.0]);
        assert_eq!(tl_position_bound(&s, 5.0, 2.0), f64::INFINITY);
        assert_eq!(tl_position_bound(&s, 10.0, 2.0), 248.0);
        assert_eq!(tl_position_bound(&s, 21.0, 2.0), f64::INFINITY);
    }

    #[test]
    fn pedestrian_red_window_is_exact() {
        let ev = PedestrianEvent {
            crossing_position: 250.0,
            start_time: 12.0,
            walking_speed: 0.5,
            road_width: 7.0,
            confidence: 0.9,
        };
        let s = pedestrian_to_virtual_phase(&ev, 1.0);
        assert_eq!(s.signal_position, 250.0);
        assert_eq!(s.confidence, 0.9);
        assert_eq!(s.switch_times, vec![12.0, 27.0]);
        assert_eq!(s.phase_at(11.999), Phase::Green);
        assert_eq!(s.phase_at(12.0), Phase::Red);
        assert_eq!(s.phase_at(26.999), Phase::Red);
        assert_eq!(s.phase_at(27.0), Phase::Green);
    }

    #[test]
    fn pedestrian_already_crossing_starts_red() {
        let ev = PedestrianEvent {
            crossing_position: 100.0,
            start_time: 0.0,
            walking_speed: 1.0,
            road_width: 14.0,
            confidence: 1.0,
        };
        let s = pedestrian_to_virtual_phase(&ev, 1.0);
        assert_eq!(s.initial_phase, Phase::Red);
        assert_eq!(s.switch_times, vec![15.0]);
    }

    #[test]
    fn confidence_tightening_shrinks_greens() {
        // Greens [0,10) and [21,40); margin 3 at confidence 0.5, margin_max 6.
        let mut s = sched(Phase::Green, &[10.0, 21.0, 40.0]);
        s.confidence = 0.5;
        let policy = ConfidencePolicy { margin_max: 6.0 };
        let tight = apply_confidence(&s, &policy);
        assert_eq!(tight.initial_phase, Phase::Green);
        assert_eq!(tight.switch_times, vec![7.0, 24.0, 37.0]);
    }

    #[test]
    fn confidence_one_is_identity() {
        let s = sched(Phase::Red, &[10.0, 25.0, 40.0]);
        let tight = apply_confidence(&s, &ConfidencePolicy { margin_max: 6.0 });
        assert_eq!(tight, s);
    }

    #[test]
    fn inverted_green_windows_disappear() {
        // Green [21, 25) is narrower than twice the margin.
        let mut s = sched(Phase::Red, &[21.0, 25.0]);
        s.confidence = 0.0;
        let tight = apply_confidence(&s, &ConfidencePolicy { margin_max: 4.0 });
        assert_eq!(tight.initial_phase, Phase::Red);
        assert_eq!(tight.switch_times, Vec::<f64>::new());
        assert_eq!(tight.next_green_start(0.0), f64::INFINITY);
    }

    #[test]
    fn merge_takes_elementwise_min() {
        let p1 = vec![100.0, f64::INFINITY, 90.0];
        let p2 = vec![120.0, 80.0, f64::INFINITY];
        let v = vec![13.89, 13.89, 8.33];
        let profile = merge_constraints(0.5, &[p1, p2], &[v]).unwrap();
        assert_eq!(profile.position_upper, vec![100.0, 80.0, 90.0]);
        assert_eq!(profile.velocity_upper, vec![13.89, 13.89, 8.33]);
        assert_eq!(profile.horizon(), 3);
    }

    #[test]
    fn merge_rejects_empty_and_ragged() {
        assert_eq!(merge_constraints(0.5, &[], &[]).unwrap_err(), ConstraintError::Empty);
        let err = merge_constraints(0.5, &[vec![1.0, 2.0]], &[vec![1.0]]).unwrap_err();
        assert_eq!(err, ConstraintError::LengthMismatch { expected: 2, actual: 1 });
    }

    #[test]
    fn preceding_bound_subtracts_gap() {
        assert_eq!(preceding_vehicle_bound(&[100.0, 110.0, 120.0], 10.0), vec![90.0, 100.0, 110.0]);
    }

    #[test]
    fn schedule_validation() {
        assert!(sched(Phase::Red, &[1.0, 2.0]).validate().is_ok());
        assert!(sched(Phase::Red, &[2.0, 1.0]).validate().is_err());
        assert!(sched(Phase::Red, &[0.0]).validate().is_err());
        let mut s = sched(Phase::Red, &[]);
        s.confidence = 1.5;
        assert!(s.validate().is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_schedule() -> impl Strategy<Value = PhaseSchedule> {
        (
            prop::bool::ANY,
            prop::collection::vec(0.1..30.0f64, 0..6),
            0.0..=1.0f64,
        )
            .prop_map(|(green_first, gaps, confidence)| {
                let mut t = 0.0;
                let switch_times: Vec<f64> = gaps
                    .into_iter()
                    .map(|g| {
                        t += g;
                        t
                    })
                    .collect();
                PhaseSchedule {
                    signal_position: 250.0,
                    initial_phase: if green_first { Phase::Green } else { Phase::Red },
                    switch_times,
                    confidence,
                }
            })
    }

    proptest! {
        #[test]
        fn tightened_red_set_is_superset(
            schedule in arb_schedule(),
            margin_max in 0.0..10.0f64,
        ) {
            let tight = apply_confidence(&schedule, &ConfidencePolicy { margin_max });
            prop_assert!(tight.validate().is_ok());
            let mut t = 0.0;
            while t < 200.0 {
                if tight.phase_at(t) == Phase::Green {
                    prop_assert_eq!(schedule.phase_at(t), Phase::Green, "t = {}", t);
                }
                t += 0.173;
            }
        }

        #[test]
        fn full_confidence_never_changes_schedule(
            mut schedule in arb_schedule(),
            margin_max in 0.0..10.0f64,
        ) {
            schedule.confidence = 1.0;
            let tight = apply_confidence(&schedule, &ConfidencePolicy { margin_max });
            prop_assert_eq!(tight, schedule);
        }

        #[test]
        fn green_intervals_agree_with_phase_at(schedule in arb_schedule()) {
            let greens = schedule.green_intervals();
            let mut t = 0.0;
            while t < 200.0 {
                let in_green = greens.iter().any(|(s, e)| *s <= t && t < *e);
                prop_assert_eq!(in_green, schedule.phase_at(t) == Phase::Green, "t = {}", t);
                t += 0.219;
            }
        }

        #[test]
        fn next_green_is_green_and_minimal(schedule in arb_schedule(), t in 0.0..120.0f64) {
            let g = schedule.next_green_start(t);
            if g.is_finite() {
                prop_assert!(g >= t);
                prop_assert_eq!(schedule.phase_at(g), Phase::Green);
                // Nothing strictly between t and g is green (sampled).
                let mut s = t;
                while s < g {
                    prop_assert_eq!(schedule.phase_at(s), Phase::Red);
                    s += (g - t) / 7.0 + 1e-9;
                }
            } else {
                prop_assert_eq!(schedule.phase_at(t + 1000.0), Phase::Red);
            }
        }
    }
}
