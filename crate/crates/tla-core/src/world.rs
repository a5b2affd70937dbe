//! Simulated environment: signals, crossings, a scripted leader, V2X
//! broadcast sources and the ego's two information channels (camera and
//! radio). The radio path runs range filtering, a seeded packet-drop hook
//! and the dependability gate; what survives is fused with camera truth
//! into the [`TrafficView`] the controller plans against.

use crate::ddi::{gate, CapabilitySet, DdiContract, GateDecision, GateMode};
use crate::route::Route;
use crate::signal::{PedestrianEvent, Phase, PhaseSchedule};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Clone)]
pub enum WorldError {
    #[error("sensor config: {0}")]
    BadSensor(&'static str),
    #[error("leader script: {0}")]
    BadLeader(&'static str),
}

/// What the ego can perceive and over which distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Camera detection range ahead of the ego, m.
    pub camera_range: f64,
    /// Radio reception range (both directions), m.
    pub v2x_range: f64,
    /// Per-message probability that the channel loses it.
    pub drop_probability: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { camera_range: 80.0, v2x_range: 300.0, drop_probability: 0.0 }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.camera_range >= 0.0 && self.camera_range.is_finite()) {
            return Err(WorldError::BadSensor("camera_range must be finite and >= 0"));
        }
        if !(self.v2x_range >= 0.0 && self.v2x_range.is_finite()) {
            return Err(WorldError::BadSensor("v2x_range must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(WorldError::BadSensor("drop_probability must be in [0, 1]"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scripted preceding vehicle

/// Closed-form motion script for the preceding vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeaderScript {
    /// Constant speed from `initial_position`.
    Cruise { initial_position: f64, speed: f64 },
    /// Cruise, brake at `accel` to stop exactly at `stop_position`, wait
    /// until `depart_time`, accelerate back to `cruise_speed`.
    StopAndGo {
        initial_position: f64,
        cruise_speed: f64,
        stop_position: f64,
        depart_time: f64,
        accel: f64,
    },
    /// Piecewise-linear position over time; holds the end positions outside
    /// the listed range.
    Waypoints { times: Vec<f64>, positions: Vec<f64> },
}

impl LeaderScript {
    pub fn validate(&self) -> Result<(), WorldError> {
        match self {
            LeaderScript::Cruise { initial_position, speed } => {
                if !initial_position.is_finite() || !speed.is_finite() || *speed < 0.0 {
                    return Err(WorldError::BadLeader("cruise needs finite position and speed >= 0"));
                }
            }
            LeaderScript::StopAndGo { initial_position, cruise_speed, stop_position, depart_time, accel } => {
                let finite = initial_position.is_finite()
                    && cruise_speed.is_finite()
                    && stop_position.is_finite()
                    && depart_time.is_finite();
                if !finite || *cruise_speed <= 0.0 || *accel <= 0.0 || *depart_time < 0.0 {
                    return Err(WorldError::BadLeader(
                        "stop-and-go needs finite fields, cruise_speed > 0, accel > 0, depart_time >= 0",
                    ));
                }
                let brake_distance = cruise_speed * cruise_speed / (2.0 * accel);
                if *stop_position < *initial_position + brake_distance {
                    return Err(WorldError::BadLeader("stop_position leaves no room to brake from cruise_speed"));
                }
            }
            LeaderScript::Waypoints { times, positions } => {
                if times.is_empty() || times.len() != positions.len() {
                    return Err(WorldError::BadLeader("waypoints need equal, non-empty time and position lists"));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite() || *t < 0.0) {
                    return Err(WorldError::BadLeader("waypoint times must be >= 0 and strictly increasing"));
                }
                if positions.windows(2).any(|w| w[1] < w[0]) || positions.iter().any(|p| !p.is_finite()) {
                    return Err(WorldError::BadLeader("waypoint positions must be finite and non-decreasing"));
                }
            }
        }
        Ok(())
    }

    pub fn position_at(&self, t: f64) -> f64 {
        match self {
            LeaderScript::Cruise { initial_position, speed } => initial_position + speed * t,
            LeaderScript::StopAndGo { initial_position, cruise_speed, stop_position, depart_time, accel } => {
                let brake_distance = cruise_speed * cruise_speed / (2.0 * accel);
                let brake_start = stop_position - brake_distance;
                let t_brake = (brake_start - initial_position) / cruise_speed;
                let t_stop = t_brake + cruise_speed / accel;
                let t_depart = depart_time.max(t_stop);
                let t_cruise = t_depart + cruise_speed / accel;
                if t < t_brake {
                    initial_position + cruise_speed * t
                } else if t < t_stop {
                    let tau = t - t_brake;
                    brake_start + cruise_speed * tau - 0.5 * accel * tau * tau
                } else if t < t_depart {
                    *stop_position
                } else if t < t_cruise {
                    let tau = t - t_depart;
                    stop_position + 0.5 * accel * tau * tau
                } else {
                    stop_position + brake_distance + cruise_speed * (t - t_cruise)
                }
            }
            LeaderScript::Waypoints { times, positions } => {
                if t <= times[0] {
                    return positions[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return positions[last];
                }
                let i = times.partition_point(|s| *s <= t);
                let f = (t - times[i - 1]) / (times[i] - times[i - 1]);
                positions[i - 1] + f * (positions[i] - positions[i - 1])
            }
        }
    }

    pub fn velocity_at(&self, t: f64) -> f64 {
        match self {
            LeaderScript::Cruise { speed, .. } => *speed,
            LeaderScript::StopAndGo { initial_position, cruise_speed, stop_position, depart_time, accel } => {
                let brake_distance = cruise_speed * cruise_speed / (2.0 * accel);
                let brake_start = stop_position - brake_distance;
                let t_brake = (brake_start - initial_position) / cruise_speed;
                let t_stop = t_brake + cruise_speed / accel;
                let t_depart = depart_time.max(t_stop);
                let t_cruise = t_depart + cruise_speed / accel;
                if t < t_brake {
                    *cruise_speed
                } else if t < t_stop {
                    cruise_speed - accel * (t - t_brake)
                } else if t < t_depart {
                    0.0
                } else if t < t_cruise {
                    accel * (t - t_depart)
                } else {
                    *cruise_speed
                }
            }
            LeaderScript::Waypoints { times, positions } => {
                let last = times.len() - 1;
                if t < times[0] || t >= times[last] {
                    return 0.0;
                }
                let i = times.partition_point(|s| *s <= t);
                (positions[i] - positions[i - 1]) / (times[i] - times[i - 1])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecedingVehicle {
    pub script: LeaderScript,
    /// A vehicle off the ego's lane (parked, oncoming) is visible but does
    /// not constrain the plan.
    #[serde(default = "default_true")]
    pub blocks_lane: bool,
}

fn default_true() -> bool {
    true
}

// ---------------------------------------------------------------------------
// V2X sources and messages

/// Broadcast attachment for a signal: the schedule itself is taken from the
/// signal site.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpatSource {
    pub contract: Option<DdiContract>,
}

/// Roadside unit watching one crossing. It sees a waiting pedestrian
/// immediately and broadcasts an occupancy estimate until the crossing is
/// physically clear.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySource {
    pub sender_position: f64,
    /// Safety margin added on top of the predicted clear time, s.
    pub clear_margin: f64,
    pub contract: Option<DdiContract>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdviceSource {
    pub advised_speed: f64,
    pub sender_position: f64,
    pub active_from: f64,
    pub active_until: f64,
    pub contract: Option<DdiContract>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum V2xPayload {
    /// Signal phase and timing: the full switch schedule of one signal.
    Spat { schedule: PhaseSchedule },
    /// A crossing is (or is about to be) occupied; clear by the given time.
    PedestrianOccupancy { crossing_position: f64, estimated_clear_time: f64, confidence: f64 },
    /// Advisory speed from infrastructure; shapes the reference, never a
    /// hard bound.
    SpeedAdvice { advised_speed: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct V2xMessage {
    pub payload: V2xPayload,
    pub sender_position: f64,
    pub timestamp: f64,
    #[serde(default)]
    pub contract: Option<DdiContract>,
}

/// What the ego camera reports this tick. All fields are ground truth; the
/// camera has no latency and no schedule knowledge.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraObservation {
    SignalPhase { signal_position: f64, phase: Phase },
    PedestrianOnCrossing { crossing_position: f64 },
    Vehicle { position: f64, velocity: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSite {
    pub schedule: PhaseSchedule,
    pub spat: Option<SpatSource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingSite {
    pub event: PedestrianEvent,
    pub occupancy: Option<OccupancySource>,
}

/// Physical ground truth plus every broadcast source.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub route: Route,
    pub signals: Vec<SignalSite>,
    pub crossings: Vec<CrossingSite>,
    pub leader: Option<PrecedingVehicle>,
    pub advice: Option<AdviceSource>,
    pub sensors: SensorConfig,
}

impl World {
    /// True leader kinematics, if a lane-blocking leader exists.
    pub fn leader_state(&self, t: f64) -> Option<(f64, f64)> {
        self.leader
            .as_ref()
            .filter(|l| l.blocks_lane)
            .map(|l| (l.script.position_at(t), l.script.velocity_at(t)))
    }

    /// Everything on the air at time `t`, regardless of receiver range.
    pub fn broadcast_messages(&self, t: f64) -> Vec<V2xMessage> {
        let mut out = Vec::new();
        for site in &self.signals {
            if let Some(source) = &site.spat {
                out.push(V2xMessage {
                    payload: V2xPayload::Spat { schedule: site.schedule.clone() },
                    sender_position: site.schedule.signal_position,
                    timestamp: t,
                    contract: source.contract.clone(),
                });
            }
        }
        for site in &self.crossings {
            if let Some(source) = &site.occupancy {
                // The unit broadcasts from the moment the pedestrian is
                // spotted waiting until the crossing is physically clear.
                if t < site.event.clear_time() {
                    out.push(V2xMessage {
                        payload: V2xPayload::PedestrianOccupancy {
                            crossing_position: site.event.crossing_position,
                            estimated_clear_time: site.event.clear_time() + source.clear_margin,
                            confidence: site.event.confidence,
                        },
                        sender_position: source.sender_position,
                        timestamp: t,
                        contract: source.contract.clone(),
                    });
                }
            }
        }
        if let Some(source) = &self.advice {
            if t >= source.active_from && t < source.active_until {
                out.push(V2xMessage {
                    payload: V2xPayload::SpeedAdvice { advised_speed: source.advised_speed },
                    sender_position: source.sender_position,
                    timestamp: t,
                    contract: source.contract.clone(),
                });
            }
        }
        out
    }

    /// Ground-truth camera snapshot: signal heads, occupied crossings and
    /// the leader, each within `camera_range` ahead of the ego.
    pub fn camera_observations(&self, ego_position: f64, t: f64) -> Vec<CameraObservation> {
        let sees = |p: f64| p >= ego_position && p - ego_position <= self.sensors.camera_range;
        let mut out = Vec::new();
        for site in &self.signals {
            if sees(site.schedule.signal_position) {
                out.push(CameraObservation::SignalPhase {
                    signal_position: site.schedule.signal_position,
                    phase: site.schedule.phase_at(t),
                });
            }
        }
        for site in &self.crossings {
            let on_crossing = t >= site.event.start_time && t < site.event.clear_time();
            if on_crossing && sees(site.event.crossing_position) {
                out.push(CameraObservation::PedestrianOnCrossing {
                    crossing_position: site.event.crossing_position,
                });
            }
        }
        if let Some((p, v)) = self.leader_state(t) {
            if sees(p) {
                out.push(CameraObservation::Vehicle { position: p, velocity: v });
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Delivery: range, channel loss, dependability gate

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Delivery {
    pub accepted: Vec<V2xMessage>,
    /// Lost in the channel (after range filtering).
    pub dropped_channel: u32,
    /// Rejected by the dependability gate.
    pub dropped_gate: u32,
}

/// Run the receive pipeline over one tick's broadcasts. Out-of-range
/// messages never arrive and are not counted; in-range messages face the
/// loss hook, then the gate. Message order is preserved.
pub fn deliver<R: Rng>(
    messages: Vec<V2xMessage>,
    ego_position: f64,
    sensors: &SensorConfig,
    capabilities: &CapabilitySet,
    mode: GateMode,
    rng: &mut R,
) -> Delivery {
    let mut delivery = Delivery::default();
    for message in messages {
        if (message.sender_position - ego_position).abs() > sensors.v2x_range {
            continue;
        }
        if sensors.drop_probability > 0.0 && rng.gen::<f64>() < sensors.drop_probability {
            delivery.dropped_channel += 1;
            continue;
        }
        match gate(message.contract.as_ref(), capabilities, mode) {
            GateDecision::Pass => delivery.accepted.push(message),
            GateDecision::Drop(_) => delivery.dropped_gate += 1,
        }
    }
    delivery
}

// ---------------------------------------------------------------------------
// Fusion

/// Two observations of the same stop line are matched within this distance.
pub const SITE_MATCH_TOLERANCE: f64 = 0.5;
/// A speed advice expires this long after the last accepted message, s.
pub const ADVICE_TTL: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct CrossingEstimate {
    clear_time: f64,
    confidence: f64,
}

/// Everything the controller plans against, one tick's worth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrafficView {
    /// Real and virtual stop lines, sorted by position: signal schedules
    /// (camera-corrected) and red windows derived from crossing occupancy.
    pub schedules: Vec<PhaseSchedule>,
    /// Leader position and velocity from the camera.
    pub leader: Option<(f64, f64)>,
    pub advised_speed: Option<f64>,
    /// Camera-vs-radio contradictions found this tick.
    pub conflicts: u32,
}

/// Persistent fusion memory. Radio messages arrive intermittently (range,
/// loss, gating); the fused picture keeps the last accepted schedule per
/// signal and the most conservative clear estimate per crossing, and lets
/// current camera truth override both.
#[derive(Debug, Clone, Default)]
pub struct FusionState {
    spat: Vec<PhaseSchedule>,
    crossings: Vec<(f64, CrossingEstimate)>,
    advice: Option<(f64, f64)>, // (advised speed, received at)
}

fn same_site(a: f64, b: f64) -> bool {
    (a - b).abs() <= SITE_MATCH_TOLERANCE
}

fn constant_schedule(position: f64, phase: Phase) -> PhaseSchedule {
    PhaseSchedule {
        signal_position: position,
        initial_phase: phase,
        switch_times: Vec::new(),
        confidence: 1.0,
    }
}

/// Red from now until `clear_time` (which must lie in the future).
fn red_until(position: f64, clear_time: f64, confidence: f64) -> PhaseSchedule {
    PhaseSchedule {
        signal_position: position,
        initial_phase: Phase::Red,
        switch_times: vec![clear_time],
        confidence,
    }
}

impl FusionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ingest one tick's accepted messages and camera snapshot; return the
    /// fused view at time `t`.
    pub fn update(
        &mut self,
        t: f64,
        accepted: &[V2xMessage],
        camera: &[CameraObservation],
    ) -> TrafficView {
        let mut advice_this_tick: Option<f64> = None;
        for message in accepted {
            match &message.payload {
                V2xPayload::Spat { schedule } => {
                    match self.spat.iter_mut().find(|s| same_site(s.signal_position, schedule.signal_position)) {
                        Some(stored) => {
                            // Same timing twice: keep the more confident
                            // copy. New timing: the newer message wins.
                            if stored.initial_phase == schedule.initial_phase
                                && stored.switch_times == schedule.switch_times
                            {
                                stored.confidence = stored.confidence.max(schedule.confidence);
                            } else {
                                *stored = schedule.clone();
                            }
                        }
                        None => self.spat.push(schedule.clone()),
                    }
                }
                V2xPayload::PedestrianOccupancy { crossing_position, estimated_clear_time, confidence } => {
                    let estimate = CrossingEstimate {
                        clear_time: *estimated_clear_time,
                        confidence: *confidence,
                    };
                    match self.crossings.iter_mut().find(|(p, _)| same_site(*p, *crossing_position)) {
                        Some((_, stored)) => {
                            // Conservative merge: the latest clear time and
                            // the weakest confidence.
                            stored.clear_time = stored.clear_time.max(estimate.clear_time);
                            stored.confidence = stored.confidence.min(estimate.confidence);
                        }
                        None => self.crossings.push((*crossing_position, estimate)),
                    }
                }
                V2xPayload::SpeedAdvice { advised_speed } => {
                    advice_this_tick = Some(match advice_this_tick {
                        Some(v) => v.min(*advised_speed),
                        None => *advised_speed,
                    });
                }
            }
        }
        if let Some(v) = advice_this_tick {
            self.advice = Some((v, t));
        }

        let mut view = TrafficView::default();

        // Signals: stored schedules, overridden by a disagreeing camera.
        for stored in &self.spat {
            let seen = camera.iter().find_map(|o| match o {
                CameraObservation::SignalPhase { signal_position, phase }
                    if same_site(*signal_position, stored.signal_position) =>
                {
                    Some(*phase)
                }
                _ => None,
            });
            match seen {
                Some(phase) if phase != stored.phase_at(t) => {
                    view.conflicts += 1;
                    view.schedules.push(constant_schedule(stored.signal_position, phase));
                }
                _ => view.schedules.push(stored.clone()),
            }
        }
        // Camera-only signals: no schedule known, assume the phase holds.
        for obs in camera {
            if let CameraObservation::SignalPhase { signal_position, phase } = obs {
                if !self.spat.iter().any(|s| same_site(s.signal_position, *signal_position)) {
                    view.schedules.push(constant_schedule(*signal_position, *phase));
                }
            }
        }

        // Crossings: radio estimate and camera presence cross-checked.
        let mut sites: Vec<f64> = self.crossings.iter().map(|(p, _)| *p).collect();
        for obs in camera {
            if let CameraObservation::PedestrianOnCrossing { crossing_position } = obs {
                if !sites.iter().any(|p| same_site(*p, *crossing_position)) {
                    sites.push(*crossing_position);
                }
            }
        }
        for position in sites {
            let estimate = self
                .crossings
                .iter()
                .find(|(p, _)| same_site(*p, position))
                .map(|(_, e)| *e);
            let present = camera.iter().any(|o| {
                matches!(o, CameraObservation::PedestrianOnCrossing { crossing_position }
                         if same_site(*crossing_position, position))
            });
            match (present, estimate) {
                (true, Some(e)) if e.clear_time > t => {
                    view.schedules.push(red_until(position, e.clear_time, e.confidence));
                }
                (true, stale) => {
                    // Pedestrian visible with no usable clear estimate:
                    // block until the camera stops seeing them.
                    if stale.is_some() {
                        view.conflicts += 1; // estimate said clear, camera disagrees
                    }
                    view.schedules.push(constant_schedule(position, Phase::Red));
                }
                (false, Some(e)) if e.clear_time > t => {
                    view.schedules.push(red_until(position, e.clear_time, e.confidence));
                }
                (false, _) => {}
            }
        }

        view.schedules
            .sort_by(|a, b| a.signal_position.total_cmp(&b.signal_position));

        // Leader: nearest camera vehicle.
        view.leader = camera
            .iter()
            .filter_map(|o| match o {
                CameraObservation::Vehicle { position, velocity } => Some((*position, *velocity)),
                _ => None,
            })
            .min_by(|a, b| a.0.total_cmp(&b.0));

        view.advised_speed = match self.advice {
            Some((v, received_at)) if t - received_at <= ADVICE_TTL => Some(v),
            _ => None,
        };
        view
    }
}
