//! Closed-loop simulation: perceive, gate, fuse, plan, execute one step,
//! repeat. Every tick replans over the full horizon and applies only the
//! first control, so late information (a pedestrian stepping out, a revised
//! clear time) is absorbed at the next tick.

use crate::mpc::{solve, CostMode, CostWeights, MpcConfig, MpcSolution, SolveError};
use crate::reference::{build_reference, ReferenceError, ReferenceTrajectory};
use crate::route::Route;
use crate::scenario::LoadedScenario;
use crate::signal::{
    apply_confidence, merge_constraints, preceding_vehicle_bound, tl_position_bound,
    ConfidencePolicy, ConstraintError, ConstraintProfile, PhaseSchedule,
};
use crate::vehicle::{step_vehicle, VehicleParams, VehicleState};
use crate::world::{deliver, FusionState, TrafficView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("solver: {0}")]
    Solve(#[from] SolveError),
    #[error("reference: {0}")]
    Reference(#[from] ReferenceError),
    #[error("constraints: {0}")]
    Constraint(#[from] ConstraintError),
    /// The executed state crossed a bound the solver had declared satisfied.
    /// This is a solver defect, never a scenario property, so it aborts the
    /// run with full diagnostics.
    #[error("t = {time} s, position {position} m: executed {kind} {value} exceeds bound {bound}")]
    BoundViolation { time: f64, position: f64, kind: &'static str, value: f64, bound: f64 },
    #[error("cannot compare runs over different routes ({baseline} m vs {candidate} m)")]
    RouteMismatch { baseline: f64, candidate: f64 },
}

/// One replanning step: tighten schedules by confidence, drop passed stop
/// lines, assemble position/velocity bounds, build the reference, solve.
pub struct Controller {
    pub config: MpcConfig,
    pub params: VehicleParams,
    pub weights: CostWeights,
    pub cost_mode: CostMode,
    pub policy: ConfidencePolicy,
    warm: Option<Vec<f64>>,
}

pub struct Plan {
    pub solution: MpcSolution,
    pub profile: ConstraintProfile,
    pub reference: ReferenceTrajectory,
}

impl Controller {
    pub fn new(
        config: MpcConfig,
        params: VehicleParams,
        weights: CostWeights,
        cost_mode: CostMode,
        policy: ConfidencePolicy,
    ) -> Self {
        Self { config, params, weights, cost_mode, policy, warm: None }
    }

    pub fn plan(
        &mut self,
        route: &Route,
        view: &TrafficView,
        state: &VehicleState,
    ) -> Result<Plan, RunError> {
        let np = self.config.horizon;
        let dt = self.config.dt;
        let t = state.time;

        // Stop lines still ahead of the ego, tightened by confidence. A line
        // whose holding point is already behind us cannot be honored and is
        // no longer our business.
        let schedules: Vec<PhaseSchedule> = view
            .schedules
            .iter()
            .map(|s| apply_confidence(s, &self.policy))
            .filter(|s| state.position <= s.signal_position - self.config.stop_margin)
            .collect();

        // The leader is extrapolated at its observed speed; each replan
        // refreshes the extrapolation.
        let leader_bound: Option<Vec<f64>> = view.leader.map(|(p, v)| {
            let predicted: Vec<f64> = (1..=np).map(|k| p + v * k as f64 * dt).collect();
            preceding_vehicle_bound(&predicted, self.config.safety_gap)
        });

        let reach = route.max_legal();

        // Advice shapes the reference (how fast we'd like to go), never the
        // hard velocity bound (how fast we may go).
        let lookahead = state.position + reach * np as f64 * dt;
        let mut legal = route.min_legal_between(state.position, lookahead);
        if let Some(advised) = view.advised_speed {
            legal = legal.min(advised);
        }
        let reference = build_reference(
            state.position,
            legal,
            &schedules,
            t,
            np,
            dt,
            self.config.stop_margin,
            leader_bound.as_deref(),
        )?;

        // Red phases cap the position at the stop line only while the
        // reference is still on our side of it. The reference crosses every
        // line on green, so once it is past, later red windows belong to
        // traffic behind us; capping them too would force a plan that
        // legitimately clears the line mid-horizon to stop for a phase it
        // never sees. The executed first step is still checked against the
        // uncrossed-line cap whenever it lands on red, so replanning keeps
        // the optimism honest.
        let mut position_sources: Vec<Vec<f64>> = schedules
            .iter()
            .map(|s| {
                (1..=np)
                    .map(|k| {
                        if reference.positions[k - 1] > s.signal_position {
                            f64::INFINITY
                        } else {
                            tl_position_bound(s, t + k as f64 * dt, self.config.stop_margin)
                        }
                    })
                    .collect()
            })
            .collect();
        if let Some(bound) = &leader_bound {
            position_sources.push(bound.clone());
        }

        let velocity_bounds: Vec<f64> = (1..=np)
            .map(|k| route.min_legal_between(state.position, state.position + reach * k as f64 * dt))
            .collect();

        let profile = merge_constraints(dt, &position_sources, &[velocity_bounds])?;

        let solution = solve(
            &self.config,
            &self.params,
            &self.weights,
            state,
            &profile,
            &reference,
            route,
            self.cost_mode,
            self.warm.as_deref(),
        )?;
        self.warm = Some(solution.warm_start_tail.clone());
        Ok(Plan { solution, profile, reference })
    }
}

/// One executed step. The bound and reference columns describe what the
/// plan promised for this state when it was made, one tick earlier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub time: f64,
    pub position: f64,
    pub velocity: f64,
    /// Realized acceleration (after force saturation and standstill), m/s².
    pub acceleration: f64,
    pub battery_power: f64,
    pub energy_used: f64,
    pub position_bound: f64,
    pub reference_position: f64,
    pub feasible: bool,
    pub accepted_messages: u32,
    pub dropped_messages: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Net battery energy drawn over the run, J.
    pub total_energy: f64,
    pub min_velocity: f64,
    /// Times the ego came to rest after having moved.
    pub stop_count: u32,
    pub travel_time: f64,
    /// Executed-state bound violations; [`simulate`] aborts on the first,
    /// so a returned summary always reads 0.
    pub constraint_violations: u32,
    /// Replans that fell back to emergency braking.
    pub infeasible_replans: u32,
    /// Camera-vs-radio contradictions accumulated by the fusion layer.
    pub sensor_conflicts: u32,
    /// True when the ego reached the end of the route within `max_time`.
    pub completed: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub rows: Vec<LogRow>,
    pub summary: RunSummary,
}

/// Summary plus the context needed to compare runs later; this is what a run
/// writes to disk next to the CSV log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub scenario: String,
    pub route_length: f64,
    pub seed: u64,
    pub summary: RunSummary,
}

/// Baseline-vs-candidate report; deltas are positive when the candidate
/// improves on the baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub candidate: String,
    /// `(E_baseline − E_candidate) / E_baseline · 100`.
    pub energy_delta_percent: f64,
    pub stops_removed: i64,
    pub time_saved: f64,
}

/// Compare two runs over the same route.
pub fn compare(baseline: &SummaryDocument, candidate: &SummaryDocument) -> Result<Comparison, RunError> {
    if baseline.route_length != candidate.route_length {
        return Err(RunError::RouteMismatch {
            baseline: baseline.route_length,
            candidate: candidate.route_length,
        });
    }
    Ok(Comparison {
        baseline: baseline.scenario.clone(),
        candidate: candidate.scenario.clone(),
        energy_delta_percent: energy_saving_percent(&baseline.summary, &candidate.summary),
        stops_removed: i64::from(baseline.summary.stop_count) - i64::from(candidate.summary.stop_count),
        time_saved: baseline.summary.travel_time - candidate.summary.travel_time,
    })
}

pub const CSV_HEADER: &str = "time,position,velocity,acceleration,battery_power,energy_used,\
                              position_bound,reference_position,feasible,accepted_messages,dropped_messages";

/// Render the log. Floats use Rust's shortest round-trip formatting, so the
/// output is byte-stable for identical runs; unbounded entries read `inf`.
pub fn to_csv(rows: &[LogRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 100 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.time,
            r.position,
            r.velocity,
            r.acceleration,
            r.battery_power,
            r.energy_used,
            r.position_bound,
            r.reference_position,
            r.feasible as u8,
            r.accepted_messages,
            r.dropped_messages
        );
    }
    out
}

/// Run a scenario to the end of the route or `max_time`. Deterministic for
/// a fixed seed: repeated calls produce byte-identical CSV logs.
///
/// Each tick: broadcast (silent when cooperation is off) → range filter,
/// loss hook, dependability gate → camera snapshot → fusion → plan → apply
/// the first control → verify the executed state against the plan's own
/// first-step bounds. The verification is exact (no tolerance); it is
/// skipped for emergency fallbacks, which satisfy no bounds by construction.
pub fn simulate(loaded: &LoadedScenario, seed_override: Option<u64>) -> Result<RunResult, RunError> {
    let s = &loaded.scenario;
    let world = loaded.world();
    let mut controller = Controller::new(
        s.mpc.clone(),
        s.ego.params.clone(),
        s.weights.clone(),
        s.cost_mode,
        s.confidence,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed_override.unwrap_or(s.seed));
    let mut fusion = FusionState::new();
    let mut state = loaded.initial_state();

    let mut rows = vec![LogRow {
        time: state.time,
        position: state.position,
        velocity: state.velocity,
        acceleration: 0.0,
        battery_power: 0.0,
        energy_used: 0.0,
        position_bound: f64::INFINITY,
        reference_position: state.position,
        feasible: true,
        accepted_messages: 0,
        dropped_messages: 0,
    }];
    let mut min_velocity = state.velocity;
    let mut stop_count = 0u32;
    let mut infeasible_replans = 0u32;
    let mut sensor_conflicts = 0u32;

    let max_steps = (s.max_time / s.mpc.dt).ceil() as usize;
    for _ in 0..max_steps {
        if state.position >= world.route.length {
            break;
        }
        let t = state.time;
        let broadcast = if s.cooperation { world.broadcast_messages(t) } else { Vec::new() };
        let delivery = deliver(broadcast, state.position, &world.sensors, &s.capabilities, s.gate_mode, &mut rng);
        let camera = world.camera_observations(state.position, t);
        let view = fusion.update(t, &delivery.accepted, &camera);
        sensor_conflicts += view.conflicts;

        let plan = controller.plan(&world.route, &view, &state)?;
        if !plan.solution.feasible {
            infeasible_replans += 1;
        }

        let grade = world.route.grade_at(state.position);
        let step = step_vehicle(&s.ego.params, &state, plan.solution.controls[0], grade, s.mpc.dt);
        let position_bound = plan.profile.position_upper[0];
        let velocity_bound = plan.profile.velocity_upper[0];
        if plan.solution.feasible {
            if step.state.position > position_bound {
                return Err(RunError::BoundViolation {
                    time: step.state.time,
                    position: step.state.position,
                    kind: "position",
                    value: step.state.position,
                    bound: position_bound,
                });
            }
            if step.state.velocity > velocity_bound {
                return Err(RunError::BoundViolation {
                    time: step.state.time,
                    position: step.state.position,
                    kind: "velocity",
                    value: step.state.velocity,
                    bound: velocity_bound,
                });
            }
        }

        let was_moving = state.velocity > 0.0;
        state = step.state;
        if was_moving && state.velocity == 0.0 {
            stop_count += 1;
        }
        min_velocity = min_velocity.min(state.velocity);
        rows.push(LogRow {
            time: state.time,
            position: state.position,
            velocity: state.velocity,
            acceleration: step.applied_acceleration,
            battery_power: step.battery_power,
            energy_used: state.battery_energy_used,
            position_bound,
            reference_position: plan.reference.positions[0],
            feasible: plan.solution.feasible,
            accepted_messages: delivery.accepted.len() as u32,
            dropped_messages: delivery.dropped_channel + delivery.dropped_gate,
        });
    }

    let completed = state.position >= world.route.length;
    let summary = RunSummary {
        total_energy: state.battery_energy_used,
        min_velocity,
        stop_count,
        travel_time: state.time,
        constraint_violations: 0,
        infeasible_replans,
        sensor_conflicts,
        completed,
    };
    Ok(RunResult { rows, summary })
}

/// Relative energy saving of `b` against baseline `a`, percent.
pub fn energy_saving_percent(baseline: &RunSummary, improved: &RunSummary) -> f64 {
    (baseline.total_energy - improved.total_energy) / baseline.total_energy * 100.0
}
