//! Reference position trajectory.
//!
//! The optimizer is pulled forward by a position reference built from the
//! signal timetable: aim to arrive at the next stop line exactly when it
//! turns green, riding the legal limit when that is slower than required.
//! Downstream signals are handled recursively from the arrival time at each
//! stop line. Falling behind the reference is penalized; being early is not
//! (the position constraints take care of that side).

use crate::signal::PhaseSchedule;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReferenceError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("timestep must be positive")]
    BadTimestep,
    #[error("legal limit must be positive and finite, got {0}")]
    BadLegalLimit(f64),
    #[error("schedules must be sorted by signal position")]
    UnsortedSchedules,
    #[error("preceding bound has length {actual}, expected {expected}")]
    PrecedingLength { expected: usize, actual: usize },
    #[error("trajectory length {actual} does not match reference length {expected}")]
    TrajectoryLength { expected: usize, actual: usize },
}

/// Reference positions for the next `positions.len()` steps; entry `k` is the
/// desired position after `k + 1` steps of `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub positions: Vec<f64>,
    /// Saturated required speed of the first segment; what the planner would
    /// hold right now if nothing else interfered.
    pub construction_speed: f64,
    /// Final reference position, usable as a terminal-cost target.
    pub terminal_position: f64,
}

impl ReferenceTrajectory {
    /// Speed the reference still demands over its last step. Kinetic energy
    /// beyond this pace has no tracking value at the horizon end, so it is
    /// the natural cap for any terminal credit on retained speed.
    pub fn terminal_needed_speed(&self, ego_position: f64) -> f64 {
        let n = self.positions.len();
        let prev = if n >= 2 { self.positions[n - 2] } else { ego_position };
        ((self.positions[n - 1] - prev) / self.dt).max(0.0)
    }
}

struct Segment {
    t0: f64,
    p0: f64,
    speed: f64,
}

/// Build the reference from the (already confidence-tightened) schedules.
///
/// `schedules` must be sorted by `signal_position`; entries at or behind
/// `ego_position` are ignored. Each upcoming stop line is targeted at the
/// first green instant reachable at the legal limit: with
/// `earliest = now + distance / legal_limit`, the aimed crossing time is
/// `next_green_start(earliest)` and the segment speed is
/// `distance / (crossing - now)` (the legal limit itself when `earliest`
/// already falls on green). The walk therefore crosses every stop line on
/// green, gliding early rather than arriving on red. A signal that never
/// turns green again caps the reference at its stop line minus `stop_margin`
/// (never below the current position, so a margin that reaches behind the
/// ego degrades to "hold here"). An optional preceding-vehicle bound lowers
/// the reference elementwise, after which increments are re-capped at
/// `legal_limit * dt` per step.
#[allow(clippy::too_many_arguments)]
pub fn build_reference(
    ego_position: f64,
    legal_limit: f64,
    schedules: &[PhaseSchedule],
    t_now: f64,
    horizon: usize,
    dt: f64,
    stop_margin: f64,
    preceding_bound: Option<&[f64]>,
) -> Result<ReferenceTrajectory, ReferenceError> {
    if horizon == 0 {
        return Err(ReferenceError::ZeroHorizon);
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(ReferenceError::BadTimestep);
    }
    if !(legal_limit > 0.0) || !legal_limit.is_finite() {
        return Err(ReferenceError::BadLegalLimit(legal_limit));
    }
    if schedules.windows(2).any(|w| w[1].signal_position < w[0].signal_position) {
        return Err(ReferenceError::UnsortedSchedules);
    }
    if let Some(prec) = preceding_bound {
        if prec.len() != horizon {
            return Err(ReferenceError::PrecedingLength { expected: horizon, actual: prec.len() });
        }
    }

    let mut segments: Vec<Segment> = Vec::new();
    let mut pin = f64::INFINITY;
    let mut seg_pos = ego_position;
    let mut seg_t = t_now;
    for sched in schedules {
        let target = sched.signal_position;
        if target <= seg_pos {
            continue;
        }
        let earliest = seg_t + (target - seg_pos) / legal_limit;
        let green = sched.next_green_start(earliest);
        if green.is_infinite() {
            // Never green again: approach at the legal limit and hold just
            // before the stop line. If the holding point is already behind
            // us (stop line ahead, margin not), hold right here instead of
            // asking for backward motion.
            pin = (target - stop_margin).max(seg_pos);
            segments.push(Segment { t0: seg_t, p0: seg_pos, speed: legal_limit });
            break;
        }
        let speed = if green <= earliest {
            legal_limit
        } else {
            (target - seg_pos) / (green - seg_t)
        };
        segments.push(Segment { t0: seg_t, p0: seg_pos, speed });
        seg_t += (target - seg_pos) / speed;
        seg_pos = target;
    }
    if pin.is_infinite() {
        segments.push(Segment { t0: seg_t, p0: seg_pos, speed: legal_limit });
    }
    let construction_speed = segments[0].speed;

    let sample = |t: f64| -> f64 {
        let i = segments.partition_point(|s| s.t0 <= t).saturating_sub(1);
        let s = &segments[i];
        (s.p0 + s.speed * (t - s.t0)).min(pin)
    };
    let mut positions: Vec<f64> =
        (0..horizon).map(|k| sample(t_now + (k + 1) as f64 * dt)).collect();

    if let Some(prec) = preceding_bound {
        for (p, b) in positions.iter_mut().zip(prec) {
            *p = p.min(*b);
        }
    }
    // Re-cap increments: the preceding bound may advance faster than the
    // legal limit allows the ego to follow.
    let mut prev = ego_position;
    for p in positions.iter_mut() {
        *p = p.min(prev + legal_limit * dt);
        prev = *p;
    }

    let terminal_position = positions[horizon - 1];
    Ok(ReferenceTrajectory { dt, positions, construction_speed, terminal_position })
}

/// One-sided tracking penalty: `weight * Σ max(0, reference_k - actual_k)`.
pub fn lateness_penalty(
    actual_positions: &[f64],
    reference_positions: &[f64],
    weight: f64,
) -> Result<f64, ReferenceError> {
    if actual_positions.len() != reference_positions.len() {
        return Err(ReferenceError::TrajectoryLength {
            expected: reference_positions.len(),
            actual: actual_positions.len(),
        });
    }
    Ok(actual_positions
        .iter()
        .zip(reference_positions)
        .map(|(a, r)| weight * (r - a).max(0.0))
        .sum())
}

/// One-sided terminal shortfall penalty against the reference endpoint.
pub fn terminal_cost(final_position: f64, reference_terminal: f64, weight: f64) -> f64 {
    weight * (reference_terminal - final_position).max(0.0)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::signal::{Phase, PhaseSchedule};
    use proptest::prelude::*;

    fn arb_schedules(ego: f64) -> impl Strategy<Value = Vec<PhaseSchedule>> {
        prop::collection::vec(
            (10.0..400.0f64, prop::bool::ANY, prop::collection::vec(1.0..40.0f64, 0..4)),
            0..4,
        )
        .prop_map(move |raw| {
            let mut scheds: Vec<PhaseSchedule> = raw
                .into_iter()
                .map(|(offset, green_first, gaps)| {
                    let mut t = 0.0;
                    let switch_times: Vec<f64> = gaps
                        .into_iter()
                        .map(|g| {
                            t += g;
                            t
                        })
                        .collect();
                    PhaseSchedule {
                        signal_position: ego + offset,
                        initial_phase: if green_first { Phase::Green } else { Phase::Red },
                        switch_times,
                        confidence: 1.0,
                    }
                })
                .collect();
            scheds.sort_by(|a, b| a.signal_position.total_cmp(&b.signal_position));
            scheds
        })
    }

    proptest! {
        #[test]
        fn reference_is_monotone_and_rate_limited(
            ego in -50.0..300.0f64,
            legal in 3.0..25.0f64,
            t_now in 0.0..60.0f64,
            dt in prop::sample::select(vec![0.25, 0.5, 1.0]),
            horizon in 1usize..45,
            schedules in arb_schedules(0.0),
        ) {
            let r = build_reference(ego, legal, &schedules, t_now, horizon, dt, 2.0, None).unwrap();
            let mut prev = ego;
            for &p in &r.positions {
                prop_assert!(p >= prev - 1e-9);
                prop_assert!(p - prev <= legal * dt + 1e-9);
                prev = p;
            }
            prop_assert!(r.construction_speed <= legal + 1e-12);
            prop_assert_eq!(r.terminal_position, *r.positions.last().unwrap());
        }

        #[test]
        fn reference_never_exceeds_preceding_bound(
            ego in 0.0..100.0f64,
            legal in 3.0..25.0f64,
            horizon in 1usize..30,
            start_gap in -20.0..80.0f64,
            steps in prop::collection::vec(0.0..30.0f64, 30),
        ) {
            let mut prec = Vec::with_capacity(horizon);
            let mut p = ego + start_gap;
            for k in 0..horizon {
                p += steps[k];
                prec.push(p);
            }
            let r = build_reference(ego, legal, &[], 0.0, horizon, 0.5, 2.0, Some(&prec)).unwrap();
            for k in 0..horizon {
                prop_assert!(r.positions[k] <= prec[k] + 1e-12);
            }
        }
    }
}
