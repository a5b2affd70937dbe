//! Receding-horizon velocity optimizer.
//!
//! The constrained problem — time-dependent upper bounds on position from
//! red phases, crossing pedestrians and a vehicle ahead — is nonconvex, so
//! instead of a QP the solver runs dynamic programming over a finite
//! acceleration grid. States are deduplicated on a (velocity, position) grid
//! but every node carries its *exact* continuous state and every transition
//! is an exact call into [`crate::vehicle::step_vehicle`]. A returned
//! feasible plan therefore satisfies the bounds with zero tolerance when
//! replayed; the grid resolutions only affect which merges happen, i.e.
//! completeness, never soundness. Setting a resolution to 0 switches that
//! axis to exact keying (no merging at all).

use crate::reference::{terminal_cost, ReferenceTrajectory};
use crate::route::Route;
use crate::signal::ConstraintProfile;
use crate::vehicle::{battery_power, step_vehicle, traction_force, StepResult, VehicleParams, VehicleState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("{what}: expected length {expected}, got {actual}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("timestep mismatch: config has {config}, input has {input}")]
    TimestepMismatch { config: f64, input: f64 },
    #[error("invalid solver configuration: {0}")]
    BadConfig(&'static str),
    #[error("state grid too large to allocate")]
    GridTooLarge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Discretization step, s.
    pub dt: f64,
    /// Number of prediction steps.
    pub horizon: usize,
    /// Candidate accelerations, m/s²; strictly increasing and containing 0.
    pub control_grid: Vec<f64>,
    /// Velocity dedup resolution, m/s; 0 keys velocities exactly.
    pub velocity_grid_resolution: f64,
    /// Position dedup resolution, m; 0 keys positions exactly.
    pub position_grid_resolution: f64,
    /// Distance to hold before a red stop line, m.
    pub stop_margin: f64,
    /// Distance to hold behind a preceding vehicle, m.
    pub safety_gap: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            horizon: 40,
            control_grid: vec![-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5],
            velocity_grid_resolution: 0.25,
            position_grid_resolution: 1.0,
            stop_margin: 2.0,
            safety_gap: 10.0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SolveError::BadConfig("dt must be positive and finite"));
        }
        if self.horizon == 0 {
            return Err(SolveError::BadConfig("horizon must be at least 1"));
        }
        if self.control_grid.is_empty() {
            return Err(SolveError::BadConfig("control grid must not be empty"));
        }
        if self.control_grid.iter().any(|a| !a.is_finite()) {
            return Err(SolveError::BadConfig("control grid entries must be finite"));
        }
        if self.control_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SolveError::BadConfig("control grid must be strictly increasing"));
        }
        if !self.control_grid.contains(&0.0) {
            return Err(SolveError::BadConfig("control grid must contain 0 (hold)"));
        }
        if self.control_grid.len() > 256 {
            return Err(SolveError::BadConfig("control grid larger than 256 entries"));
        }
        if !(self.velocity_grid_resolution >= 0.0) || !self.velocity_grid_resolution.is_finite() {
            return Err(SolveError::BadConfig("velocity grid resolution must be >= 0"));
        }
        if !(self.position_grid_resolution >= 0.0) || !self.position_grid_resolution.is_finite() {
            return Err(SolveError::BadConfig("position grid resolution must be >= 0"));
        }
        if !(self.stop_margin >= 0.0) || !self.stop_margin.is_finite() {
            return Err(SolveError::BadConfig("stop margin must be >= 0"));
        }
        if !(self.safety_gap >= 0.0) || !self.safety_gap.is_finite() {
            return Err(SolveError::BadConfig("safety gap must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Cost per joule drawn from the battery.
    pub energy: f64,
    /// Cost per (m/s²)²·s of realized acceleration.
    pub comfort: f64,
    /// Cost per meter of shortfall behind the reference.
    pub time: f64,
    /// Cost per (m/s)²·s of deviation from the reference pace (the per-step
    /// slope of the reference). Two-sided: it stops the plan from sprinting
    /// above the pace to bank earliness it can later spend crawling at
    /// near-zero drag — a fixed-horizon exploit the one-sided lateness term
    /// cannot see — and equally from dawdling below it.
    pub speed: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { energy: 1.0e-3, comfort: 0.02, time: 1.0, speed: 0.3 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), SolveError> {
        let vals = [self.energy, self.comfort, self.time, self.speed];
        if vals.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(SolveError::BadConfig("cost weights must be finite and >= 0"));
        }
        if vals.iter().sum::<f64>() == 0.0 {
            return Err(SolveError::BadConfig("at least one cost weight must be positive"));
        }
        Ok(())
    }
}

/// How timeliness enters the cost: per-step lateness against the reference,
/// or only a terminal shortfall at the end of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    Lateness,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub energy: f64,
    pub comfort: f64,
    pub time: f64,
    /// Two-sided deviation from the reference pace.
    pub pace: f64,
    /// Terminal salvage credit (negative or zero): see [`terminal_salvage`].
    pub salvage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// Requested accelerations per step (grid values).
    pub controls: Vec<f64>,
    /// Exact simulated positions after each step.
    pub predicted_positions: Vec<f64>,
    /// Exact simulated velocities after each step.
    pub predicted_velocities: Vec<f64>,
    pub total_cost: f64,
    pub cost_breakdown: CostBreakdown,
    /// False when no control sequence satisfies the bounds; the controls then
    /// hold the emergency braking fallback.
    pub feasible: bool,
    /// `controls[1..]` padded with a trailing coast step: a full-length seed
    /// for the next replan.
    pub warm_start_tail: Vec<f64>,
}

/// Running cost of one step on flat ground: weighted battery energy plus
/// weighted squared acceleration. Timeliness is handled separately because it
/// depends on the reference, not the state transition.
pub fn stage_cost(
    params: &VehicleParams,
    weights: &CostWeights,
    velocity: f64,
    accel: f64,
    dt: f64,
) -> f64 {
    let power = battery_power(params, velocity, traction_force(params, velocity, accel, 0.0));
    weights.energy * power * dt + weights.comfort * accel * accel * dt
}

/// Recoverable value of the kinetic energy still on board at the end of the
/// horizon, in cost units. Without this credit a finite-horizon plan can
/// "cash in" its kinetic energy by regen-braking right before the horizon
/// ends — a phantom gain that recedes forever under receding-horizon
/// execution and biases the cruise speed upward. Crediting the terminal
/// state with `energy_weight * regen_efficiency * ½ m v²` makes in-plan tail
/// braking cost-neutral, so plans end at whatever speed the stage costs and
/// the reference actually justify.
///
/// The credited speed is capped at `needed_speed` (the pace the reference
/// still demands at the horizon end): speed beyond that pace would itself be
/// a phantom asset — the continuation never spends it, so crediting it would
/// bias the cruise speed above the reference instead of below.
pub fn terminal_salvage(
    params: &VehicleParams,
    weights: &CostWeights,
    velocity: f64,
    needed_speed: f64,
) -> f64 {
    let v = velocity.min(needed_speed).max(0.0);
    weights.energy * params.regen_efficiency * 0.5 * params.mass * v * v
}

#[inline]
fn stage_term(
    weights: &CostWeights,
    mode: CostMode,
    ref_k: f64,
    pace_k: f64,
    step: &StepResult,
    dt: f64,
) -> f64 {
    let mut s = weights.energy * step.battery_power * dt
        + weights.comfort * step.applied_acceleration * step.applied_acceleration * dt;
    if mode == CostMode::Lateness {
        s += weights.time * (ref_k - step.state.position).max(0.0);
        let dv = step.state.velocity - pace_k;
        s += weights.speed * dv * dv * dt;
    }
    s
}

/// Per-step slope of the reference, anchored at the ego position: the speed
/// the reference asks for over each step. Entry `np - 1` equals
/// [`ReferenceTrajectory::terminal_needed_speed`].
fn reference_pace(reference: &ReferenceTrajectory, ego_position: f64) -> Vec<f64> {
    let mut prev = ego_position;
    reference
        .positions
        .iter()
        .map(|&p| {
            let s = ((p - prev) / reference.dt).max(0.0);
            prev = p;
            s
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Node {
    v: f64,
    p: f64,
    cost: f64,
    parent: u32,
    ctrl: u8,
}

enum Dedup {
    Grid { v_res: f64, p_res: f64, p0: f64, n_p: usize, slots: Vec<u32> },
    Exact(BTreeMap<(u64, u64), u32>),
}

impl Dedup {
    fn clear(&mut self) {
        match self {
            Dedup::Grid { slots, .. } => slots.fill(u32::MAX),
            Dedup::Exact(map) => map.clear(),
        }
    }

    /// Returns the occupying node index for (v, p), or inserts `fresh`.
    fn slot_for(&mut self, v: f64, p: f64, fresh: u32) -> Result<u32, u32> {
        match self {
            Dedup::Grid { v_res, p_res, p0, n_p, slots } => {
                let vk = (v / *v_res).round() as usize;
                let pk = ((p - *p0) / *p_res).round() as usize;
                let slot = &mut slots[vk * *n_p + pk];
                if *slot == u32::MAX {
                    *slot = fresh;
                    Err(fresh)
                } else {
                    Ok(*slot)
                }
            }
            Dedup::Exact(map) => match map.entry((v.to_bits(), p.to_bits())) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(fresh);
                    Err(fresh)
                }
                std::collections::btree_map::Entry::Occupied(e) => Ok(*e.get()),
            },
        }
    }
}

/// Solve one receding-horizon problem.
///
/// The objective sums weighted battery energy, squared acceleration and the
/// timeliness term of the chosen mode (lateness mode also tracks the
/// reference pace two-sidedly), minus the [`terminal_salvage`] credit for
/// kinetic energy still on board at the horizon end.
///
/// Constraint entry `k` bounds the state after `k + 1` steps. If the initial
/// position already lies beyond some position bound, or no control sequence
/// survives the bounds, the solution is the emergency-braking fallback with
/// `feasible = false`. Any warm start is accepted but does not influence the
/// result: the search is exhaustive, so the solution only depends on the
/// problem. Deterministic: identical inputs give bit-identical solutions.
#[allow(clippy::too_many_arguments)]
pub fn solve(
    config: &MpcConfig,
    params: &VehicleParams,
    weights: &CostWeights,
    x0: &VehicleState,
    constraints: &ConstraintProfile,
    reference: &ReferenceTrajectory,
    route: &Route,
    cost_mode: CostMode,
    warm_start: Option<&[f64]>,
) -> Result<MpcSolution, SolveError> {
    config.validate()?;
    weights.validate()?;
    let np = config.horizon;
    if constraints.horizon() != np {
        return Err(SolveError::DimensionMismatch {
            what: "constraint profile",
            expected: np,
            actual: constraints.horizon(),
        });
    }
    if constraints.velocity_upper.len() != np {
        return Err(SolveError::DimensionMismatch {
            what: "velocity bounds",
            expected: np,
            actual: constraints.velocity_upper.len(),
        });
    }
    if reference.positions.len() != np {
        return Err(SolveError::DimensionMismatch {
            what: "reference trajectory",
            expected: np,
            actual: reference.positions.len(),
        });
    }
    if constraints.dt != config.dt {
        return Err(SolveError::TimestepMismatch { config: config.dt, input: constraints.dt });
    }
    if reference.dt != config.dt {
        return Err(SolveError::TimestepMismatch { config: config.dt, input: reference.dt });
    }
    if let Some(w) = warm_start {
        if w.len() != np {
            return Err(SolveError::DimensionMismatch {
                what: "warm start",
                expected: np,
                actual: w.len(),
            });
        }
    }

    // Position never decreases, so each bound effectively also caps every
    // earlier step. Tightening to the suffix minimum is exact and makes
    // branches that have passed a point of no return die immediately; left
    // to die at the later bound itself, such a branch can first win a
    // (velocity, position) cell on cost and evict the conservative state
    // that would have survived, turning a feasible problem infeasible.
    let mut position_upper = constraints.position_upper.clone();
    for k in (0..np - 1).rev() {
        position_upper[k] = position_upper[k].min(position_upper[k + 1]);
    }

    // A bound behind the start dooms every plan.
    if position_upper[0] < x0.position {
        return Ok(emergency_solution(config, params, weights, x0, reference, route, cost_mode));
    }

    let dt = config.dt;
    let grid = &config.control_grid;
    // Visit gentler accelerations first so equal-cost merges keep the
    // smallest |a| (ties across parents keep the earlier parent).
    let mut order: Vec<u8> = (0..grid.len() as u8).collect();
    order.sort_by(|&i, &j| grid[i as usize].abs().total_cmp(&grid[j as usize].abs()));

    let mut dedup = build_dedup(config, x0, constraints)?;
    let pace = reference_pace(reference, x0.position);

    let mut levels: Vec<Vec<Node>> = Vec::with_capacity(np + 1);
    levels.push(vec![Node { v: x0.velocity, p: x0.position, cost: 0.0, parent: u32::MAX, ctrl: 0 }]);

    for k in 0..np {
        let bound_p = position_upper[k];
        let bound_v = constraints.velocity_upper[k];
        let ref_k = reference.positions[k];
        let pace_k = pace[k];
        let mut next: Vec<Node> = Vec::new();
        dedup.clear();
        let current = &levels[k];
        for (ni, node) in current.iter().enumerate() {
            let grade = route.grade_at(node.p);
            let base = VehicleState { position: node.p, velocity: node.v, battery_energy_used: 0.0, time: 0.0 };
            for &ci in &order {
                let a = grid[ci as usize];
                let step = step_vehicle(params, &base, a, grade, dt);
                let (p1, v1) = (step.state.position, step.state.velocity);
                if p1 > bound_p || v1 > bound_v {
                    continue;
                }
                let cost = node.cost + stage_term(weights, cost_mode, ref_k, pace_k, &step, dt);
                let candidate = Node { v: v1, p: p1, cost, parent: ni as u32, ctrl: ci };
                match dedup.slot_for(v1, p1, next.len() as u32) {
                    Err(_) => next.push(candidate),
                    Ok(slot) => {
                        let held = &mut next[slot as usize];
                        if cost < held.cost {
                            *held = candidate;
                        }
                    }
                }
            }
        }
        if next.is_empty() {
            return Ok(emergency_solution(config, params, weights, x0, reference, route, cost_mode));
        }
        levels.push(next);
    }

    // Pick the cheapest terminal node; scan order breaks ties toward the
    // earliest-inserted node, which mirrors the merge tie-breaking.
    let needed = pace[np - 1];
    let last = &levels[np];
    let mut best_idx = 0usize;
    let mut best_cost = f64::INFINITY;
    for (i, node) in last.iter().enumerate() {
        let c = node.cost - terminal_salvage(params, weights, node.v, needed)
            + match cost_mode {
                CostMode::Terminal => terminal_cost(node.p, reference.terminal_position, weights.time),
                CostMode::Lateness => 0.0,
            };
        if c < best_cost {
            best_cost = c;
            best_idx = i;
        }
    }

    let mut controls = vec![0.0; np];
    let mut idx = best_idx as u32;
    for k in (0..np).rev() {
        let node = &levels[k + 1][idx as usize];
        controls[k] = grid[node.ctrl as usize];
        idx = node.parent;
    }

    let (positions, velocities, breakdown, total) =
        rollout(config, params, weights, x0, reference, route, cost_mode, &controls);
    debug_assert!(
        (total - best_cost).abs() <= 1e-9 * best_cost.abs().max(1.0),
        "rollout cost {total} vs dp cost {best_cost}"
    );
    let mut warm_start_tail = controls[1..].to_vec();
    warm_start_tail.push(0.0);
    Ok(MpcSolution {
        controls,
        predicted_positions: positions,
        predicted_velocities: velocities,
        total_cost: best_cost,
        cost_breakdown: breakdown,
        feasible: true,
        warm_start_tail,
    })
}

fn build_dedup(
    config: &MpcConfig,
    x0: &VehicleState,
    constraints: &ConstraintProfile,
) -> Result<Dedup, SolveError> {
    let v_res = config.velocity_grid_resolution;
    let p_res = config.position_grid_resolution;
    if v_res == 0.0 || p_res == 0.0 {
        return Ok(Dedup::Exact(BTreeMap::new()));
    }
    let np = config.horizon;
    let dt = config.dt;
    let a_max = *config.control_grid.last().expect("validated non-empty");
    let v_reach = x0.velocity + np as f64 * a_max * dt;
    let v_cap = if constraints.velocity_upper.iter().all(|b| b.is_finite()) {
        let vb_max = constraints.velocity_upper.iter().fold(0.0f64, |m, b| m.max(*b));
        v_reach.min(vb_max.max(x0.velocity))
    } else {
        v_reach
    };
    let mut span = 0.0;
    let mut vk = x0.velocity;
    for _ in 0..np {
        vk = (vk + a_max * dt).min(v_cap);
        span += vk * dt;
    }
    let n_v = (v_cap / v_res).floor() as usize + 2;
    let n_p = (span / p_res).floor() as usize + 2;
    if n_v.saturating_mul(n_p) > 50_000_000 {
        return Err(SolveError::GridTooLarge);
    }
    Ok(Dedup::Grid { v_res, p_res, p0: x0.position, n_p, slots: vec![u32::MAX; n_v * n_p] })
}

fn emergency_solution(
    config: &MpcConfig,
    params: &VehicleParams,
    weights: &CostWeights,
    x0: &VehicleState,
    reference: &ReferenceTrajectory,
    route: &Route,
    cost_mode: CostMode,
) -> MpcSolution {
    let decel = -params.max_brake_force / params.mass;
    let controls = vec![decel; config.horizon];
    let (positions, velocities, breakdown, total) =
        rollout(config, params, weights, x0, reference, route, cost_mode, &controls);
    let mut warm_start_tail = controls[1..].to_vec();
    warm_start_tail.push(0.0);
    MpcSolution {
        controls,
        predicted_positions: positions,
        predicted_velocities: velocities,
        total_cost: total,
        cost_breakdown: breakdown,
        feasible: false,
        warm_start_tail,
    }
}

#[allow(clippy::too_many_arguments)]
fn rollout(
    config: &MpcConfig,
    params: &VehicleParams,
    weights: &CostWeights,
    x0: &VehicleState,
    reference: &ReferenceTrajectory,
    route: &Route,
    cost_mode: CostMode,
    controls: &[f64],
) -> (Vec<f64>, Vec<f64>, CostBreakdown, f64) {
    let dt = config.dt;
    let pace = reference_pace(reference, x0.position);
    let mut positions = Vec::with_capacity(controls.len());
    let mut velocities = Vec::with_capacity(controls.len());
    let mut breakdown = CostBreakdown::default();
    let mut total = 0.0;
    let mut state = *x0;
    for (k, &a) in controls.iter().enumerate() {
        let grade = route.grade_at(state.position);
        let step = step_vehicle(params, &state, a, grade, dt);
        total += stage_term(weights, cost_mode, reference.positions[k], pace[k], &step, dt);
        breakdown.energy += weights.energy * step.battery_power * dt;
        breakdown.comfort +=
            weights.comfort * step.applied_acceleration * step.applied_acceleration * dt;
        if cost_mode == CostMode::Lateness {
            breakdown.time += weights.time * (reference.positions[k] - step.state.position).max(0.0);
            let dv = step.state.velocity - pace[k];
            breakdown.pace += weights.speed * dv * dv * dt;
        }
        state = step.state;
        positions.push(state.position);
        velocities.push(state.velocity);
    }
    if cost_mode == CostMode::Terminal {
        let t = terminal_cost(state.position, reference.terminal_position, weights.time);
        breakdown.time += t;
        total += t;
    }
    let needed = pace[controls.len() - 1];
    let salvage = terminal_salvage(params, weights, state.velocity, needed);
    breakdown.salvage = -salvage;
    total -= salvage;
    (positions, velocities, breakdown, total)
}
