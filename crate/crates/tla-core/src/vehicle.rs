//! Longitudinal vehicle model.
//!
//! The plant seen by the optimizer is a discrete-time double integrator over
//! `[position, velocity]` with acceleration as the input. On top of that sits
//! a point-mass electric powertrain: a traction-force balance (rolling,
//! linear and aerodynamic drag, grade) and a battery-power map with separate
//! drive/regen efficiencies and a regeneration power clamp.
//!
//! Units are SI throughout: m, m/s, m/s², N, W, J, s; grades are road angles
//! in radians. Positive traction force drives the vehicle forward; negative
//! battery power is recuperation.

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("prediction horizon must be at least 1")]
    InvalidHorizon,
    #[error("expected {expected} control inputs, got {actual}")]
    ControlLengthMismatch { expected: usize, actual: usize },
    #[error("vehicle parameter `{field}` is invalid (value {value})")]
    InvalidParam { field: &'static str, value: f64 },
}

/// Point-mass EV parameters. Defaults describe a mid-size electric car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Vehicle mass in kg.
    pub mass: f64,
    /// Constant rolling resistance in N.
    pub rolling_coeff_c0: f64,
    /// Speed-proportional drag in N/(m/s).
    pub linear_drag_c1: f64,
    /// Aerodynamic drag in N/(m/s)².
    pub aero_drag_c2: f64,
    /// Largest forward force the powertrain can deliver, N.
    pub max_traction_force: f64,
    /// Largest braking force (friction + regen combined), N.
    pub max_brake_force: f64,
    /// Cap on recuperated electrical power, W.
    pub max_regen_power: f64,
    /// Electrical-to-mechanical efficiency when driving, in (0, 1].
    pub drive_efficiency: f64,
    /// Mechanical-to-electrical efficiency when regenerating, in (0, 1].
    pub regen_efficiency: f64,
    /// Constant auxiliary load (HVAC, electronics), W.
    pub aux_power: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            rolling_coeff_c0: 120.0,
            linear_drag_c1: 2.0,
            aero_drag_c2: 0.4,
            max_traction_force: 4000.0,
            max_brake_force: 8000.0,
            max_regen_power: 40_000.0,
            drive_efficiency: 0.85,
            regen_efficiency: 0.85,
            aux_power: 300.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks: [(&'static str, f64, bool); 10] = [
            ("mass", self.mass, self.mass > 0.0 && self.mass.is_finite()),
            ("rolling_coeff_c0", self.rolling_coeff_c0, self.rolling_coeff_c0 >= 0.0),
            ("linear_drag_c1", self.linear_drag_c1, self.linear_drag_c1 >= 0.0),
            ("aero_drag_c2", self.aero_drag_c2, self.aero_drag_c2 >= 0.0),
            (
                "max_traction_force",
                self.max_traction_force,
                self.max_traction_force > 0.0 && self.max_traction_force.is_finite(),
            ),
            (
                "max_brake_force",
                self.max_brake_force,
                self.max_brake_force > 0.0 && self.max_brake_force.is_finite(),
            ),
            ("max_regen_power", self.max_regen_power, self.max_regen_power >= 0.0),
            (
                "drive_efficiency",
                self.drive_efficiency,
                self.drive_efficiency > 0.0 && self.drive_efficiency <= 1.0,
            ),
            (
                "regen_efficiency",
                self.regen_efficiency,
                self.regen_efficiency > 0.0 && self.regen_efficiency <= 1.0,
            ),
            ("aux_power", self.aux_power, self.aux_power >= 0.0 && self.aux_power.is_finite()),
        ];
        for (field, value, ok) in checks {
            if !ok || value.is_nan() {
                return Err(ModelError::InvalidParam { field, value });
            }
        }
        Ok(())
    }

    /// Speed-dependent resistance `c0 + c1·v + c2·v²` in N.
    pub fn resistive_force(&self, velocity: f64) -> f64 {
        self.rolling_coeff_c0 + self.linear_drag_c1 * velocity + self.aero_drag_c2 * velocity * velocity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub velocity: f64,
    /// Cumulative electrical energy drawn from the battery, J. Regeneration
    /// subtracts, the auxiliary load always adds.
    pub battery_energy_used: f64,
    pub time: f64,
}

impl VehicleState {
    pub fn at_rest(position: f64) -> Self {
        Self { position, velocity: 0.0, battery_energy_used: 0.0, time: 0.0 }
    }

    pub fn moving(position: f64, velocity: f64) -> Self {
        Self { position, velocity, battery_energy_used: 0.0, time: 0.0 }
    }
}

/// Discrete LTI model `x(k+1) = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub c: RowVector2<f64>,
    pub d: f64,
    pub dt: f64,
}

impl StateSpaceModel {
    /// Double integrator over `[position, velocity]` with acceleration input;
    /// the output is velocity.
    pub fn double_integrator(dt: f64) -> Self {
        assert!(dt > 0.0, "timestep must be positive");
        Self {
            a: Matrix2::new(1.0, dt, 0.0, 1.0),
            b: Vector2::new(0.5 * dt * dt, dt),
            c: RowVector2::new(0.0, 1.0),
            d: 0.0,
            dt,
        }
    }
}

/// Stacked prediction matrices for a horizon of `horizon` steps:
/// `x_pred = M x(k) + N u` and `y_pred = E x(k) + F u`, where `x_pred`
/// stacks `x(k+1) … x(k+horizon)` and `u` stacks the control moves.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub horizon: usize,
}

/// Expand a state-space model into stacked prediction form. Block row `i`
/// (zero-based) of `M` is `A^(i+1)`; `N[i][j] = A^(i-j)·B` for `j <= i` and
/// exactly zero above the block diagonal.
pub fn expand_prediction(model: &StateSpaceModel, horizon: usize) -> Result<PredictionMatrices, ModelError> {
    if horizon == 0 {
        return Err(ModelError::InvalidHorizon);
    }
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(Matrix2::identity());
    for i in 0..horizon {
        let next = powers[i] * model.a;
        powers.push(next);
    }

    let mut m = DMatrix::zeros(2 * horizon, 2);
    let mut n = DMatrix::zeros(2 * horizon, horizon);
    let mut e = DMatrix::zeros(horizon, 2);
    let mut f = DMatrix::zeros(horizon, horizon);
    for i in 0..horizon {
        m.view_mut((2 * i, 0), (2, 2)).copy_from(&powers[i + 1]);
        let row = model.c * powers[i + 1];
        e.view_mut((i, 0), (1, 2)).copy_from(&row);
        for j in 0..=i {
            let block = powers[i - j] * model.b;
            n.view_mut((2 * i, j), (2, 1)).copy_from(&block);
            f[(i, j)] = (model.c * block)[0] + if i == j { model.d } else { 0.0 };
        }
    }
    Ok(PredictionMatrices { m, n, e, f, horizon })
}

/// Apply the stacked prediction to an initial state, returning the predicted
/// `(position, velocity)` at each of the `horizon` future steps.
pub fn predict(
    matrices: &PredictionMatrices,
    position: f64,
    velocity: f64,
    controls: &[f64],
) -> Result<Vec<(f64, f64)>, ModelError> {
    if controls.len() != matrices.horizon {
        return Err(ModelError::ControlLengthMismatch {
            expected: matrices.horizon,
            actual: controls.len(),
        });
    }
    let x0 = Vector2::new(position, velocity);
    let u = DVector::from_column_slice(controls);
    let stacked = &matrices.m * x0 + &matrices.n * u;
    Ok((0..matrices.horizon).map(|i| (stacked[2 * i], stacked[2 * i + 1])).collect())
}

/// Force the powertrain must deliver (positive) or absorb (negative) to hold
/// acceleration `accel` at speed `velocity` on a road angled `grade` radians.
pub fn traction_force(params: &VehicleParams, velocity: f64, accel: f64, grade: f64) -> f64 {
    params.mass * accel
        + params.resistive_force(velocity)
        + params.mass * GRAVITY * grade.sin()
}

/// Electrical power drawn from the battery while the wheels see
/// `traction_force` at `velocity`. Driving divides by the drive efficiency;
/// regeneration multiplies by the regen efficiency and is clamped to
/// `-max_regen_power` (excess goes to friction brakes). The auxiliary load is
/// always added.
pub fn battery_power(params: &VehicleParams, velocity: f64, traction_force: f64) -> f64 {
    let wheel = traction_force * velocity;
    if wheel >= 0.0 {
        wheel / params.drive_efficiency + params.aux_power
    } else {
        (wheel * params.regen_efficiency).max(-params.max_regen_power) + params.aux_power
    }
}

/// Outcome of one simulation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: VehicleState,
    /// Acceleration actually realized after force saturation and the
    /// standstill clamp; cost terms must use this, not the request.
    pub applied_acceleration: f64,
    /// Battery power over the step, evaluated at the step's initial velocity.
    pub battery_power: f64,
    /// True when force limits reduced the requested acceleration.
    pub saturated: bool,
}

/// Advance the vehicle one step of `dt` seconds under a requested
/// acceleration. The request is first clamped so the vehicle never reverses
/// (velocity floors at exactly 0), then saturated to the traction/brake force
/// limits at the current speed. Position integrates the trapezoid of the
/// realized velocities, which matches the double-integrator algebra.
pub fn step_vehicle(
    params: &VehicleParams,
    state: &VehicleState,
    accel: f64,
    grade: f64,
    dt: f64,
) -> StepResult {
    assert!(dt > 0.0, "timestep must be positive");
    let v0 = state.velocity;

    // Standstill clamp: never integrate through negative velocity.
    let engaged = v0 + accel * dt < 0.0;
    let a_stand = if engaged { (0.0 - v0) / dt } else { accel };

    let f_req = traction_force(params, v0, a_stand, grade);
    let f_lim = f_req.clamp(-params.max_brake_force, params.max_traction_force);
    let saturated = f_lim != f_req;
    let a_sat = if saturated { a_stand + (f_lim - f_req) / params.mass } else { a_stand };

    // Saturation can itself bring the vehicle to a halt (e.g. a steep climb
    // exceeding available traction); land exactly on zero in that case too.
    let stops = (engaged && !saturated) || v0 + a_sat * dt <= 0.0;
    let (applied, v_next) = if stops { ((0.0 - v0) / dt, 0.0) } else { (a_sat, v0 + a_sat * dt) };

    let f_actual = traction_force(params, v0, applied, grade);
    let power = battery_power(params, v0, f_actual);

    let state = VehicleState {
        position: state.position + 0.5 * (v0 + v_next) * dt,
        velocity: v_next,
        battery_energy_used: state.battery_energy_used + power * dt,
        time: state.time + dt,
    };
    StepResult { state, applied_acceleration: applied, battery_power: power, saturated }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(a.abs()).max(1.0)
    }

    #[test]
    fn double_integrator_entries() {
        let m = StateSpaceModel::double_integrator(0.5);
        assert_eq!(m.a, Matrix2::new(1.0, 0.5, 0.0, 1.0));
        assert_eq!(m.b, Vector2::new(0.125, 0.5));
        assert_eq!(m.c, RowVector2::new(0.0, 1.0));
        assert_eq!(m.d, 0.0);
    }

    #[test]
    fn expansion_horizon_one_reproduces_model() {
        let model = StateSpaceModel::double_integrator(0.5);
        let pm = expand_prediction(&model, 1).unwrap();
        assert_eq!(pm.m[(0, 0)], 1.0);
        assert_eq!(pm.m[(0, 1)], 0.5);
        assert_eq!(pm.n[(0, 0)], 0.125);
        assert_eq!(pm.n[(1, 0)], 0.5);
        assert_eq!(pm.e[(0, 0)], 0.0);
        assert_eq!(pm.e[(0, 1)], 1.0);
        assert_eq!(pm.f[(0, 0)], 0.5);
    }

    #[test]
    fn expansion_rejects_zero_horizon() {
        let model = StateSpaceModel::double_integrator(0.5);
        assert_eq!(expand_prediction(&model, 0).unwrap_err(), ModelError::InvalidHorizon);
    }

    #[test]
    fn expansion_blocks_are_matrix_powers() {
        let model = StateSpaceModel::double_integrator(0.5);
        let pm = expand_prediction(&model, 5).unwrap();
        let a3 = model.a * model.a * model.a;
        assert_eq!(pm.m.view((4, 0), (2, 2)), a3.view((0, 0), (2, 2)));
        let a2b = model.a * model.a * model.b;
        assert_eq!(pm.n.view((6, 1), (2, 1)), a2b.view((0, 0), (2, 1)));
        // Above the block diagonal everything is exactly zero.
        for i in 0..5 {
            for j in (i + 1)..5 {
                assert_eq!(pm.f[(i, j)], 0.0);
                assert_eq!(pm.n[(2 * i, j)], 0.0);
                assert_eq!(pm.n[(2 * i + 1, j)], 0.0);
            }
        }
        // E rows are C·A^(i+1): velocity row of the power.
        for i in 0..5 {
            assert_eq!(pm.e[(i, 0)], 0.0);
            assert_eq!(pm.e[(i, 1)], 1.0);
        }
    }

    #[test]
    fn coasting_prediction_walks_forward() {
        let model = StateSpaceModel::double_integrator(0.5);
        let pm = expand_prediction(&model, 4).unwrap();
        let steps = predict(&pm, 0.0, 10.0, &[0.0; 4]).unwrap();
        assert_eq!(steps, vec![(5.0, 10.0), (10.0, 10.0), (15.0, 10.0), (20.0, 10.0)]);
    }

    #[test]
    fn predict_rejects_wrong_control_length() {
        let model = StateSpaceModel::double_integrator(0.5);
        let pm = expand_prediction(&model, 4).unwrap();
        assert_eq!(
            predict(&pm, 0.0, 10.0, &[0.0; 3]).unwrap_err(),
            ModelError::ControlLengthMismatch { expected: 4, actual: 3 }
        );
    }

    #[test]
    fn prediction_matches_recursive_stepping() {
        let model = StateSpaceModel::double_integrator(0.5);
        let pm = expand_prediction(&model, 6).unwrap();
        let controls = [1.0, -0.5, 0.25, 0.0, -1.5, 2.0];
        let predicted = predict(&pm, 3.0, 7.0, &controls).unwrap();
        let mut x = Vector2::new(3.0, 7.0);
        for (k, &u) in controls.iter().enumerate() {
            x = model.a * x + model.b * u;
            assert!(close(predicted[k].0, x[0], 1e-12), "position step {k}");
            assert!(close(predicted[k].1, x[1], 1e-12), "velocity step {k}");
        }
    }

    #[test]
    fn rolling_resistance_at_standstill() {
        let params = VehicleParams {
            rolling_coeff_c0: 100.0,
            linear_drag_c1: 0.0,
            aero_drag_c2: 0.0,
            ..VehicleParams::default()
        };
        assert_eq!(traction_force(&params, 0.0, 0.0, 0.0), 100.0);
    }

    #[test]
    fn grade_adds_weight_component() {
        let params = VehicleParams::default();
        let grade: f64 = 0.05;
        let expected = params.mass * 1.2
            + params.resistive_force(8.0)
            + params.mass * GRAVITY * grade.sin();
        assert_eq!(traction_force(&params, 8.0, 1.2, grade), expected);
    }

    #[test]
    fn cruise_power_at_fifty_kph() {
        let params = VehicleParams::default();
        let v = 13.89;
        let f = traction_force(&params, v, 0.0, 0.0);
        assert!(close(f, 224.95284, 1e-9));
        let p = battery_power(&params, v, f);
        assert!(close(p, f * v / 0.85 + 300.0, 1e-12));
        assert!((p - 3976.0).abs() < 4.0);
    }

    #[test]
    fn regen_power_clamps() {
        let params = VehicleParams::default();
        // Hard braking: wheel power -55.56 kW, recoverable 47.2 kW > clamp.
        let p = battery_power(&params, 13.89, -4000.0);
        assert_eq!(p, -params.max_regen_power + params.aux_power);
        // Gentle braking stays below the clamp and scales by efficiency.
        let p2 = battery_power(&params, 5.0, -1000.0);
        assert_eq!(p2, -5000.0 * 0.85 + 300.0);
    }

    #[test]
    fn step_constant_velocity_moves_v_dt() {
        let params = VehicleParams::default();
        let s0 = VehicleState::moving(100.0, 10.0);
        let r = step_vehicle(&params, &s0, 0.0, 0.0, 1.0);
        assert_eq!(r.state.position, 110.0);
        assert_eq!(r.state.velocity, 10.0);
        assert_eq!(r.state.time, 1.0);
        assert!(!r.saturated);
    }

    #[test]
    fn step_standstill_holds_and_draws_aux() {
        let params = VehicleParams::default();
        let mut state = VehicleState::at_rest(50.0);
        for _ in 0..10 {
            let r = step_vehicle(&params, &state, -3.0, 0.0, 0.5);
            assert_eq!(r.state.velocity, 0.0);
            assert_eq!(r.state.position, 50.0);
            assert_eq!(r.applied_acceleration, 0.0);
            assert!(r.applied_acceleration.is_sign_positive(), "no -0.0 in logs");
            assert_eq!(r.battery_power, params.aux_power);
            state = r.state;
        }
        assert_eq!(state.battery_energy_used, 10.0 * params.aux_power * 0.5);
    }

    #[test]
    fn step_lands_exactly_on_zero_velocity() {
        let params = VehicleParams::default();
        let s0 = VehicleState::moving(0.0, 1.0);
        let r = step_vehicle(&params, &s0, -3.0, 0.0, 0.5);
        assert_eq!(r.state.velocity, 0.0);
        assert_eq!(r.applied_acceleration, -2.0);
        assert_eq!(r.state.position, 0.25);
        // Same through a timestep where -v/dt*dt would not round-trip.
        let r2 = step_vehicle(&params, &VehicleState::moving(0.0, 1.0), -9.0, 0.0, 0.3);
        assert_eq!(r2.state.velocity, 0.0);
    }

    #[test]
    fn step_saturates_to_traction_limit() {
        let params = VehicleParams::default();
        let s0 = VehicleState::moving(0.0, 2.0);
        let r = step_vehicle(&params, &s0, 10.0, 0.0, 0.5);
        assert!(r.saturated);
        assert!(r.applied_acceleration < 10.0);
        let realized = traction_force(&params, 2.0, r.applied_acceleration, 0.0);
        assert!(close(realized, params.max_traction_force, 1e-9));
    }

    #[test]
    fn step_saturates_to_brake_limit() {
        let params = VehicleParams::default();
        let s0 = VehicleState::moving(0.0, 30.0);
        let r = step_vehicle(&params, &s0, -20.0, 0.0, 0.5);
        assert!(r.saturated);
        let realized = traction_force(&params, 30.0, r.applied_acceleration, 0.0);
        assert!(close(realized, -params.max_brake_force, 1e-9));
    }

    #[test]
    fn energy_accumulates_exactly_from_logged_power() {
        let params = VehicleParams::default();
        let mut state = VehicleState::moving(0.0, 12.0);
        let mut total = 0.0;
        let accels = [0.5, -1.0, 0.0, 1.5, -2.5, 0.25, -0.75, 0.0, 1.0, -3.0];
        for k in 0..100 {
            let r = step_vehicle(&params, &state, accels[k % accels.len()], 0.0, 0.5);
            total += r.battery_power * 0.5;
            state = r.state;
        }
        assert_eq!(state.battery_energy_used, total);
    }

    #[test]
    fn params_validation_flags_bad_fields() {
        let mut p = VehicleParams::default();
        p.mass = 0.0;
        assert_eq!(p.validate().unwrap_err(), ModelError::InvalidParam { field: "mass", value: 0.0 });
        let mut p = VehicleParams::default();
        p.drive_efficiency = 1.2;
        assert!(matches!(p.validate().unwrap_err(), ModelError::InvalidParam { field: "drive_efficiency", .. }));
        assert!(VehicleParams::default().validate().is_ok());
    }
}
