//! Scenario files: one JSON document describing route, ego, stop lines,
//! broadcast sources and platform capabilities. Contracts are separate XML
//! files referenced by path relative to the scenario file, so the JSON side
//! stays pure data and the dependability artifacts stay in their native
//! exchange format.

use crate::ddi::{parse_ddi, CapabilitySet, DdiContract, DdiError, GateMode};
use crate::mpc::{CostMode, CostWeights, MpcConfig};
use crate::route::Route;
use crate::signal::{ConfidencePolicy, PedestrianEvent, PhaseSchedule};
use crate::vehicle::{VehicleParams, VehicleState};
use crate::world::{
    AdviceSource, CrossingSite, OccupancySource, PrecedingVehicle, SensorConfig, SignalSite,
    SpatSource, World,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Json { path: String, line: usize, column: usize, message: String },
    #[error("contract {path}: {source}")]
    Contract {
        path: String,
        #[source]
        source: DdiError,
    },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoSpec {
    pub initial_position: f64,
    pub initial_velocity: f64,
    pub params: VehicleParams,
}

impl Default for EgoSpec {
    fn default() -> Self {
        Self { initial_position: 0.0, initial_velocity: 0.0, params: VehicleParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatSpec {
    /// Contract XML, relative to the scenario file. Absent means the signal
    /// broadcasts without a contract (the strict gate will drop it).
    pub contract: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub schedule: PhaseSchedule,
    /// Present when the signal broadcasts its timing.
    #[serde(default)]
    pub spat: Option<SpatSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancySpec {
    pub sender_position: f64,
    #[serde(default = "default_clear_margin")]
    pub clear_margin: f64,
    #[serde(default)]
    pub contract: Option<String>,
}

fn default_clear_margin() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingSpec {
    pub event: PedestrianEvent,
    /// Present when a roadside unit announces the crossing over V2X.
    #[serde(default)]
    pub occupancy: Option<OccupancySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdviceSpec {
    pub advised_speed: f64,
    pub sender_position: f64,
    #[serde(default)]
    pub active_from: f64,
    /// Absent means the advice stays on air for the whole run.
    #[serde(default)]
    pub active_until: Option<f64>,
    #[serde(default)]
    pub contract: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Must equal [`SCHEMA_VERSION`].
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub route: Route,
    #[serde(default)]
    pub ego: EgoSpec,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub cost_mode: CostMode,
    #[serde(default)]
    pub confidence: ConfidencePolicy,
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
    #[serde(default)]
    pub crossings: Vec<CrossingSpec>,
    #[serde(default)]
    pub leader: Option<PrecedingVehicle>,
    #[serde(default)]
    pub advice: Option<AdviceSpec>,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub gate_mode: GateMode,
    #[serde(default)]
    pub capabilities: CapabilitySet,
    /// With cooperation off the radio is dead: the ego plans on camera
    /// truth alone. The baseline runs use this.
    #[serde(default = "default_true")]
    pub cooperation: bool,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    /// Seed for the packet-loss hook; the CLI can override it.
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_max_time() -> f64 {
    120.0
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {} (this build reads {})", self.schema_version, SCHEMA_VERSION),
            ));
        }
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        self.route.validate().map_err(|e| invalid("route", e.to_string()))?;
        self.ego.params.validate().map_err(|e| invalid("ego.params", e.to_string()))?;
        if !self.ego.initial_velocity.is_finite() || self.ego.initial_velocity < 0.0 {
            return Err(invalid("ego.initial_velocity", "must be finite and >= 0"));
        }
        if !self.ego.initial_position.is_finite()
            || self.ego.initial_position < 0.0
            || self.ego.initial_position >= self.route.length
        {
            return Err(invalid("ego.initial_position", "must lie on the route"));
        }
        self.mpc.validate().map_err(|e| invalid("mpc", e.to_string()))?;
        self.weights.validate().map_err(|e| invalid("weights", e.to_string()))?;
        if !self.confidence.margin_max.is_finite() || self.confidence.margin_max < 0.0 {
            return Err(invalid("confidence.margin_max", "must be finite and >= 0"));
        }
        for (i, s) in self.signals.iter().enumerate() {
            s.schedule
                .validate()
                .map_err(|e| invalid(&format!("signals[{i}].schedule"), e.to_string()))?;
        }
        for (i, c) in self.crossings.iter().enumerate() {
            c.event
                .validate()
                .map_err(|e| invalid(&format!("crossings[{i}].event"), e.to_string()))?;
            if let Some(o) = &c.occupancy {
                if !o.sender_position.is_finite() {
                    return Err(invalid(&format!("crossings[{i}].occupancy.sender_position"), "must be finite"));
                }
                if !o.clear_margin.is_finite() || o.clear_margin < 0.0 {
                    return Err(invalid(&format!("crossings[{i}].occupancy.clear_margin"), "must be finite and >= 0"));
                }
            }
        }
        if let Some(l) = &self.leader {
            l.script.validate().map_err(|e| invalid("leader.script", e.to_string()))?;
        }
        if let Some(a) = &self.advice {
            if !a.advised_speed.is_finite() || a.advised_speed <= 0.0 {
                return Err(invalid("advice.advised_speed", "must be finite and > 0"));
            }
            if !a.sender_position.is_finite() {
                return Err(invalid("advice.sender_position", "must be finite"));
            }
            if !a.active_from.is_finite() || a.active_from < 0.0 {
                return Err(invalid("advice.active_from", "must be finite and >= 0"));
            }
            if let Some(until) = a.active_until {
                if !until.is_finite() || until < a.active_from {
                    return Err(invalid("advice.active_until", "must be finite and >= active_from"));
                }
            }
        }
        self.sensors.validate().map_err(|e| invalid("sensors", e.to_string()))?;
        self.capabilities.validate().map_err(|e| invalid("capabilities", e))?;
        if !self.max_time.is_finite() || self.max_time <= 0.0 {
            return Err(invalid("max_time", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Parse and validate a scenario from JSON text. No filesystem access;
/// contract references stay unresolved.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Json {
        path: "<string>".into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// A scenario with every referenced contract loaded and parsed.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    spat_contracts: Vec<Option<DdiContract>>,
    occupancy_contracts: Vec<Option<DdiContract>>,
    advice_contract: Option<DdiContract>,
}

impl LoadedScenario {
    /// Wrap a scenario treating all contract references as absent. Useful
    /// for programmatic scenarios that never touch the filesystem.
    pub fn without_contracts(scenario: Scenario) -> Self {
        let spat = vec![None; scenario.signals.len()];
        let occ = vec![None; scenario.crossings.len()];
        Self { scenario, spat_contracts: spat, occupancy_contracts: occ, advice_contract: None }
    }

    pub fn world(&self) -> World {
        let s = &self.scenario;
        World {
            route: s.route.clone(),
            signals: s
                .signals
                .iter()
                .zip(&self.spat_contracts)
                .map(|(spec, contract)| SignalSite {
                    schedule: spec.schedule.clone(),
                    spat: spec.spat.as_ref().map(|_| SpatSource { contract: contract.clone() }),
                })
                .collect(),
            crossings: s
                .crossings
                .iter()
                .zip(&self.occupancy_contracts)
                .map(|(spec, contract)| CrossingSite {
                    event: spec.event.clone(),
                    occupancy: spec.occupancy.as_ref().map(|o| OccupancySource {
                        sender_position: o.sender_position,
                        clear_margin: o.clear_margin,
                        contract: contract.clone(),
                    }),
                })
                .collect(),
            leader: s.leader.clone(),
            advice: s.advice.as_ref().map(|a| AdviceSource {
                advised_speed: a.advised_speed,
                sender_position: a.sender_position,
                active_from: a.active_from,
                active_until: a.active_until.unwrap_or(f64::INFINITY),
                contract: self.advice_contract.clone(),
            }),
            sensors: s.sensors,
        }
    }

    pub fn initial_state(&self) -> VehicleState {
        VehicleState::moving(self.scenario.ego.initial_position, self.scenario.ego.initial_velocity)
    }
}

fn load_contract(base: &Path, relative: &str) -> Result<DdiContract, ScenarioError> {
    let path = base.join(relative);
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(&path)
        .map_err(|source| ScenarioError::Io { path: shown.clone(), source })?;
    parse_ddi(&text).map_err(|source| ScenarioError::Contract { path: shown, source })
}

/// Load a scenario file and every contract it references. All errors name
/// the offending file; JSON errors carry line and column.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: shown.clone(), source })?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| ScenarioError::Json {
        path: shown,
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let spat_contracts = scenario
        .signals
        .iter()
        .map(|s| {
            s.spat
                .as_ref()
                .and_then(|sp| sp.contract.as_deref())
                .map(|rel| load_contract(base, rel))
                .transpose()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let occupancy_contracts = scenario
        .crossings
        .iter()
        .map(|c| {
            c.occupancy
                .as_ref()
                .and_then(|o| o.contract.as_deref())
                .map(|rel| load_contract(base, rel))
                .transpose()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let advice_contract = scenario
        .advice
        .as_ref()
        .and_then(|a| a.contract.as_deref())
        .map(|rel| load_contract(base, rel))
        .transpose()?;
    Ok(LoadedScenario { scenario, spat_contracts, occupancy_contracts, advice_contract })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddi::serialize_ddi;
    use crate::signal::Phase;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "name": "minimal",
        "route": { "length": 300.0, "pieces": [ { "start": 0.0, "legal_limit": 13.89 } ] }
    }"#;

    #[test]
    fn minimal_scenario_fills_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.name, "minimal");
        assert_eq!(s.ego.initial_velocity, 0.0);
        assert_eq!(s.mpc, MpcConfig::default());
        assert_eq!(s.sensors, SensorConfig::default());
        assert!(s.cooperation);
        assert_eq!(s.max_time, 120.0);
        assert_eq!(s.gate_mode, GateMode::Strict);
        assert!(s.signals.is_empty() && s.crossings.is_empty());
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let doc = MINIMAL.replace("\"name\"", "\"nam\"");
        match parse_scenario(&doc) {
            Err(ScenarioError::Json { line, .. }) => assert!(line >= 1),
            other => panic!("expected json error, got {other:?}"),
        }
    }

    #[test]
    fn version_and_field_validation() {
        let doc = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        let err = parse_scenario(&doc).unwrap_err();
        assert!(err.to_string().contains("unsupported version 2"), "{err}");

        let doc = MINIMAL.replace("\"minimal\"", "\"  \"");
        assert!(parse_scenario(&doc).unwrap_err().to_string().contains("`name`"));

        let mut s = parse_scenario(MINIMAL).unwrap();
        s.ego.initial_position = 300.0; // at route end
        assert!(s.validate().unwrap_err().to_string().contains("initial_position"));

        let mut s = parse_scenario(MINIMAL).unwrap();
        s.max_time = 0.0;
        assert!(s.validate().unwrap_err().to_string().contains("max_time"));

        let mut s = parse_scenario(MINIMAL).unwrap();
        s.advice = Some(AdviceSpec {
            advised_speed: -1.0,
            sender_position: 0.0,
            active_from: 0.0,
            active_until: None,
            contract: None,
        });
        assert!(s.validate().unwrap_err().to_string().contains("advised_speed"));
    }

    #[test]
    fn nested_component_errors_name_their_field() {
        let doc = MINIMAL.replace("\"length\": 300.0", "\"length\": -5.0");
        let err = parse_scenario(&doc).unwrap_err();
        assert!(err.to_string().contains("`route`"), "{err}");
    }

    fn full_scenario() -> Scenario {
        let mut s = parse_scenario(MINIMAL).unwrap();
        s.signals.push(SignalSpec {
            schedule: PhaseSchedule {
                signal_position: 150.0,
                initial_phase: Phase::Red,
                switch_times: vec![12.0],
                confidence: 0.9,
            },
            spat: Some(SpatSpec { contract: Some("contracts/spat.xml".into()) }),
        });
        s.crossings.push(CrossingSpec {
            event: PedestrianEvent {
                crossing_position: 250.0,
                start_time: 10.0,
                walking_speed: 0.5,
                road_width: 7.0,
                confidence: 0.9,
            },
            occupancy: Some(OccupancySpec {
                sender_position: 250.0,
                clear_margin: 1.0,
                contract: None,
            }),
        });
        s
    }

    #[test]
    fn loading_resolves_contracts_relative_to_the_file() {
        let dir = std::env::temp_dir().join(format!("tla-scn-{}", std::process::id()));
        std::fs::create_dir_all(dir.join("contracts")).unwrap();
        let contract = crate::ddi::parse_ddi(include_str!("../fixtures/corner_steering_ddi.xml")).unwrap();
        std::fs::write(dir.join("contracts/spat.xml"), serialize_ddi(&contract)).unwrap();
        let scenario_path = dir.join("s.json");
        std::fs::write(&scenario_path, serde_json::to_string_pretty(&full_scenario()).unwrap()).unwrap();

        let loaded = load_scenario(&scenario_path).unwrap();
        let world = loaded.world();
        assert_eq!(world.signals[0].spat.as_ref().unwrap().contract.as_ref().unwrap(), &contract);
        assert!(world.crossings[0].occupancy.as_ref().unwrap().contract.is_none());
        assert_eq!(world.crossings[0].occupancy.as_ref().unwrap().clear_margin, 1.0);

        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_contract_file_names_the_path() {
        let dir = std::env::temp_dir().join(format!("tla-scn-miss-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let scenario_path = dir.join("s.json");
        std::fs::write(&scenario_path, serde_json::to_string_pretty(&full_scenario()).unwrap()).unwrap();
        let err = load_scenario(&scenario_path).unwrap_err();
        assert!(err.to_string().contains("spat.xml"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn scenario_json_round_trips() {
        let s = full_scenario();
        let json = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn without_contracts_builds_a_world() {
        let loaded = LoadedScenario::without_contracts(full_scenario());
        let world = loaded.world();
        assert_eq!(world.signals.len(), 1);
        assert!(world.signals[0].spat.as_ref().unwrap().contract.is_none());
        assert_eq!(loaded.initial_state().position, 0.0);
    }
}
