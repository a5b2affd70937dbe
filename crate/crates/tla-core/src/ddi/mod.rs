//! Digital Dependability Identity contracts.
//!
//! Every off-board information source ships a contract: one guarantee about
//! the service plus a set of demands on the consuming platform. Before a V2X
//! message is allowed to influence planning, its contract is evaluated
//! against the platform's declared capabilities — a binary accept/reject.
//! The exchange format is a closed XML dialect; [`parse_ddi`] maps it
//! strictly (unknown tags are errors) and [`serialize_ddi`] round-trips it.

pub mod xml;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;
use xml::{escape_text, parse_document, XmlError, XmlNode};

#[derive(Debug, Error, PartialEq, Clone)]
pub enum DdiError {
    #[error("XML: {0}")]
    Xml(#[from] XmlError),
    #[error("schema (line {line}): {message}")]
    Schema { line: u32, message: String },
}

fn schema(line: u32, message: impl Into<String>) -> DdiError {
    DdiError::Schema { line, message: message.into() }
}

/// Automotive integrity grades, ordered QM < A < B < C < D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IntegrityLevel {
    #[serde(rename = "QM")]
    Qm,
    A,
    B,
    C,
    D,
}

impl fmt::Display for IntegrityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntegrityLevel::Qm => "QM",
            IntegrityLevel::A => "A",
            IntegrityLevel::B => "B",
            IntegrityLevel::C => "C",
            IntegrityLevel::D => "D",
        })
    }
}

impl FromStr for IntegrityLevel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "QM" => Ok(IntegrityLevel::Qm),
            "A" => Ok(IntegrityLevel::A),
            "B" => Ok(IntegrityLevel::B),
            "C" => Ok(IntegrityLevel::C),
            "D" => Ok(IntegrityLevel::D),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Demand {
    /// A named configuration/service the platform must offer.
    Configuration { name: String, integrity_level: IntegrityLevel },
    /// A platform-level failure reaction: the named failure must trigger the
    /// named reaction, with at most `error_percent` residual error.
    PlatformService {
        failure: String,
        reaction: String,
        integrity_level: IntegrityLevel,
        error_percent: f64,
        /// Verbatim `<Error>` text, e.g. "3 %".
        error_text: String,
    },
    /// A health monitor watching an application resource; the monitored
    /// failure is a latency above the stated threshold.
    HealthMonitoring {
        application: String,
        resource: String,
        integrity_level: IntegrityLevel,
        latency_threshold_ms: f64,
        /// Verbatim `<Latency>` text, e.g. "more than 10 ms".
        latency_text: String,
    },
}

impl Demand {
    pub fn integrity_level(&self) -> IntegrityLevel {
        match self {
            Demand::Configuration { integrity_level, .. }
            | Demand::PlatformService { integrity_level, .. }
            | Demand::HealthMonitoring { integrity_level, .. } => *integrity_level,
        }
    }

    /// Primary name for logs: configuration name, failure, or resource.
    pub fn name(&self) -> &str {
        match self {
            Demand::Configuration { name, .. } => name,
            Demand::PlatformService { failure, .. } => failure,
            Demand::HealthMonitoring { resource, .. } => resource,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guarantee {
    pub configuration_name: String,
    pub integrity_level: IntegrityLevel,
    pub security_property: u32,
    pub demands: Vec<Demand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdiContract {
    pub component_name: String,
    pub guarantee: Guarantee,
}

// ---------------------------------------------------------------------------
// Parsing

fn only_known_children(node: &XmlNode, allowed: &[&str]) -> Result<(), DdiError> {
    for child in &node.children {
        if !allowed.contains(&child.name.as_str()) {
            return Err(schema(child.line, format!("unknown tag <{}> inside <{}>", child.name, node.name)));
        }
    }
    Ok(())
}

fn container(node: &XmlNode) -> Result<(), DdiError> {
    if !node.text.is_empty() {
        return Err(schema(node.line, format!("unexpected text inside <{}>", node.name)));
    }
    Ok(())
}

fn one_child<'a>(node: &'a XmlNode, name: &str) -> Result<&'a XmlNode, DdiError> {
    let mut found = None;
    for child in &node.children {
        if child.name == name {
            if found.is_some() {
                return Err(schema(child.line, format!("duplicate tag <{name}> inside <{}>", node.name)));
            }
            found = Some(child);
        }
    }
    found.ok_or_else(|| schema(node.line, format!("missing tag <{name}> inside <{}>", node.name)))
}

fn text_of(node: &XmlNode) -> Result<&str, DdiError> {
    if !node.children.is_empty() {
        return Err(schema(node.line, format!("<{}> must contain only text", node.name)));
    }
    Ok(&node.text)
}

fn level_of(node: &XmlNode) -> Result<IntegrityLevel, DdiError> {
    let raw = text_of(node)?;
    raw.parse()
        .map_err(|_| schema(node.line, format!("unknown IntegrityLevel token \"{raw}\"")))
}

fn parse_percent(node: &XmlNode) -> Result<(f64, String), DdiError> {
    let raw = text_of(node)?;
    let number = raw.strip_suffix('%').unwrap_or(raw).trim();
    let value: f64 = number
        .parse()
        .map_err(|_| schema(node.line, format!("cannot read error percentage from \"{raw}\"")))?;
    if !value.is_finite() || value < 0.0 {
        return Err(schema(node.line, format!("error percentage out of range: \"{raw}\"")));
    }
    Ok((value, raw.to_string()))
}

fn parse_latency(node: &XmlNode) -> Result<(f64, String), DdiError> {
    let raw = text_of(node)?;
    let rest = raw.strip_prefix("more than").unwrap_or(raw).trim();
    let (number, unit_ms) = if let Some(n) = rest.strip_suffix("ms") {
        (n.trim(), 1.0)
    } else if let Some(n) = rest.strip_suffix('s') {
        (n.trim(), 1000.0)
    } else {
        (rest, 1.0)
    };
    let value: f64 = number
        .parse()
        .map_err(|_| schema(node.line, format!("cannot read latency bound from \"{raw}\"")))?;
    if !value.is_finite() || value < 0.0 {
        return Err(schema(node.line, format!("latency bound out of range: \"{raw}\"")));
    }
    Ok((value * unit_ms, raw.to_string()))
}

fn parse_demand(node: &XmlNode) -> Result<Demand, DdiError> {
    container(node)?;
    only_known_children(
        node,
        &["ConfigurationName", "IntegrityLevel", "Platform_Service", "HealthMonitoring"],
    )?;
    let has = |name: &str| node.children.iter().any(|c| c.name == name);
    if has("Platform_Service") {
        if node.children.len() != 1 {
            return Err(schema(node.line, "<Platform_Service> must be the only child of <Demand>"));
        }
        let ps = one_child(node, "Platform_Service")?;
        container(ps)?;
        only_known_children(ps, &["Failure", "Reaction", "IntegrityLevel", "Error"])?;
        let (error_percent, error_text) = parse_percent(one_child(ps, "Error")?)?;
        Ok(Demand::PlatformService {
            failure: text_of(one_child(ps, "Failure")?)?.to_string(),
            reaction: text_of(one_child(ps, "Reaction")?)?.to_string(),
            integrity_level: level_of(one_child(ps, "IntegrityLevel")?)?,
            error_percent,
            error_text,
        })
    } else if has("HealthMonitoring") {
        if node.children.len() != 1 {
            return Err(schema(node.line, "<HealthMonitoring> must be the only child of <Demand>"));
        }
        let hm = one_child(node, "HealthMonitoring")?;
        container(hm)?;
        only_known_children(hm, &["Failure", "IntegrityLevel"])?;
        let failure = one_child(hm, "Failure")?;
        container(failure)?;
        only_known_children(failure, &["Application", "ApplicationResourceName", "Latency"])?;
        let (latency_threshold_ms, latency_text) = parse_latency(one_child(failure, "Latency")?)?;
        Ok(Demand::HealthMonitoring {
            application: text_of(one_child(failure, "Application")?)?.to_string(),
            resource: text_of(one_child(failure, "ApplicationResourceName")?)?.to_string(),
            integrity_level: level_of(one_child(hm, "IntegrityLevel")?)?,
            latency_threshold_ms,
            latency_text,
        })
    } else {
        Ok(Demand::Configuration {
            name: text_of(one_child(node, "ConfigurationName")?)?.to_string(),
            integrity_level: level_of(one_child(node, "IntegrityLevel")?)?,
        })
    }
}

/// Parse a contract document. Structure and tag set must match the dialect
/// exactly: unknown tags, duplicates, missing fields and stray text are all
/// schema errors with line information.
pub fn parse_ddi(input: &str) -> Result<DdiContract, DdiError> {
    let root = parse_document(input)?;
    if root.name != "DDI" {
        return Err(schema(root.line, format!("expected root <DDI>, found <{}>", root.name)));
    }
    container(&root)?;
    only_known_children(&root, &["ComponentName", "Guarantee"])?;
    let component_name = text_of(one_child(&root, "ComponentName")?)?.to_string();
    if component_name.is_empty() {
        return Err(schema(root.line, "<ComponentName> must not be empty"));
    }
    let g = one_child(&root, "Guarantee")?;
    container(g)?;
    only_known_children(g, &["ConfigurationName", "IntegrityLevel", "SecurityProperty", "DemandSet"])?;
    let sec_node = one_child(g, "SecurityProperty")?;
    let sec_raw = text_of(sec_node)?;
    let security_property: u32 = sec_raw
        .parse()
        .map_err(|_| schema(sec_node.line, format!("SecurityProperty must be a non-negative integer, got \"{sec_raw}\"")))?;
    let demand_set = one_child(g, "DemandSet")?;
    container(demand_set)?;
    only_known_children(demand_set, &["Demand"])?;
    let demands = demand_set.children.iter().map(parse_demand).collect::<Result<Vec<_>, _>>()?;
    Ok(DdiContract {
        component_name,
        guarantee: Guarantee {
            configuration_name: text_of(one_child(g, "ConfigurationName")?)?.to_string(),
            integrity_level: level_of(one_child(g, "IntegrityLevel")?)?,
            security_property,
            demands,
        },
    })
}

/// Serialize a contract; `parse_ddi(serialize_ddi(c))` is structurally equal
/// to `c` for any contract whose text fields are whitespace-trimmed.
pub fn serialize_ddi(contract: &DdiContract) -> String {
    let mut out = String::new();
    let g = &contract.guarantee;
    out.push_str("<DDI>\n");
    out.push_str(&format!("  <ComponentName>{}</ComponentName>\n", escape_text(&contract.component_name)));
    out.push_str("  <Guarantee>\n");
    out.push_str(&format!(
        "    <ConfigurationName>{}</ConfigurationName>\n",
        escape_text(&g.configuration_name)
    ));
    out.push_str(&format!("    <IntegrityLevel>{}</IntegrityLevel>\n", g.integrity_level));
    out.push_str(&format!("    <SecurityProperty>{}</SecurityProperty>\n", g.security_property));
    out.push_str("    <DemandSet>\n");
    for demand in &g.demands {
        out.push_str("      <Demand>\n");
        match demand {
            Demand::Configuration { name, integrity_level } => {
                out.push_str(&format!("        <ConfigurationName>{}</ConfigurationName>\n", escape_text(name)));
                out.push_str(&format!("        <IntegrityLevel>{integrity_level}</IntegrityLevel>\n"));
            }
            Demand::PlatformService { failure, reaction, integrity_level, error_text, .. } => {
                out.push_str("        <Platform_Service>\n");
                out.push_str(&format!("          <Failure>{}</Failure>\n", escape_text(failure)));
                out.push_str(&format!("          <Reaction>{}</Reaction>\n", escape_text(reaction)));
                out.push_str(&format!("          <IntegrityLevel>{integrity_level}</IntegrityLevel>\n"));
                out.push_str(&format!("          <Error>{}</Error>\n", escape_text(error_text)));
                out.push_str("        </Platform_Service>\n");
            }
            Demand::HealthMonitoring { application, resource, integrity_level, latency_text, .. } => {
                out.push_str("        <HealthMonitoring>\n");
                out.push_str("          <Failure>\n");
                out.push_str(&format!("            <Application>{}</Application>\n", escape_text(application)));
                out.push_str(&format!(
                    "            <ApplicationResourceName>{}</ApplicationResourceName>\n",
                    escape_text(resource)
                ));
                out.push_str(&format!("            <Latency>{}</Latency>\n", escape_text(latency_text)));
                out.push_str("          </Failure>\n");
                out.push_str(&format!("          <IntegrityLevel>{integrity_level}</IntegrityLevel>\n"));
                out.push_str("        </HealthMonitoring>\n");
            }
        }
        out.push_str("      </Demand>\n");
    }
    out.push_str("    </DemandSet>\n");
    out.push_str("  </Guarantee>\n");
    out.push_str("</DDI>\n");
    out
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigurationCapability {
    pub name: String,
    pub integrity_level: IntegrityLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformServiceCapability {
    pub failure: String,
    pub reaction: String,
    pub integrity_level: IntegrityLevel,
    /// Residual error rate of the reaction, percent.
    pub error_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthMonitorCapability {
    pub application: String,
    pub resource: String,
    pub integrity_level: IntegrityLevel,
    /// Latency at which the monitor raises a failure, ms. A smaller value
    /// means a more sensitive monitor.
    pub latency_ms: f64,
}

/// What the consuming platform declares it can offer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapabilitySet {
    pub configurations: Vec<ConfigurationCapability>,
    pub platform_services: Vec<PlatformServiceCapability>,
    pub health_monitors: Vec<HealthMonitorCapability>,
}

impl CapabilitySet {
    pub fn validate(&self) -> Result<(), String> {
        for (i, a) in self.configurations.iter().enumerate() {
            if self.configurations[..i].iter().any(|b| b.name == a.name) {
                return Err(format!("duplicate configuration capability \"{}\"", a.name));
            }
        }
        for (i, a) in self.platform_services.iter().enumerate() {
            if self.platform_services[..i].iter().any(|b| b.failure == a.failure) {
                return Err(format!("duplicate platform service capability \"{}\"", a.failure));
            }
            if !a.error_percent.is_finite() || a.error_percent < 0.0 {
                return Err(format!("platform service \"{}\": error_percent must be >= 0", a.failure));
            }
        }
        for (i, a) in self.health_monitors.iter().enumerate() {
            if self.health_monitors[..i]
                .iter()
                .any(|b| b.application == a.application && b.resource == a.resource)
            {
                return Err(format!("duplicate health monitor for \"{}\"/\"{}\"", a.application, a.resource));
            }
            if !a.latency_ms.is_finite() || a.latency_ms < 0.0 {
                return Err(format!("health monitor \"{}\": latency_ms must be >= 0", a.resource));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Accepted,
    /// Carries every unmet demand, in contract order (never empty).
    Rejected(Vec<Demand>),
}

fn demand_met(demand: &Demand, caps: &CapabilitySet) -> bool {
    match demand {
        Demand::Configuration { name, integrity_level } => caps
            .configurations
            .iter()
            .any(|c| c.name == *name && c.integrity_level >= *integrity_level),
        Demand::PlatformService { failure, reaction, integrity_level, error_percent, .. } => {
            caps.platform_services.iter().any(|c| {
                c.failure == *failure
                    && c.reaction == *reaction
                    && c.integrity_level >= *integrity_level
                    && c.error_percent <= *error_percent
            })
        }
        Demand::HealthMonitoring { application, resource, integrity_level, latency_threshold_ms, .. } => {
            caps.health_monitors.iter().any(|c| {
                c.application == *application
                    && c.resource == *resource
                    && c.integrity_level >= *integrity_level
                    && c.latency_ms <= *latency_threshold_ms
            })
        }
    }
}

/// Binary integration decision: every demand must be matched by a capability
/// of the same kind and name at a sufficient integrity level, with the
/// quantitative fields at least as good as demanded (error rate no higher,
/// monitor latency no higher). Pure and total.
pub fn evaluate(contract: &DdiContract, capabilities: &CapabilitySet) -> Evaluation {
    let unmet: Vec<Demand> = contract
        .guarantee
        .demands
        .iter()
        .filter(|d| !demand_met(d, capabilities))
        .cloned()
        .collect();
    if unmet.is_empty() {
        Evaluation::Accepted
    } else {
        Evaluation::Rejected(unmet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    #[default]
    Strict,
    Permissive,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateDecision {
    Pass,
    Drop(DropReason),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DropReason {
    MissingContract,
    Unmet(Vec<Demand>),
}

/// Gate one message's contract. Contract-less messages are dropped in strict
/// mode and passed in permissive mode.
pub fn gate(
    contract: Option<&DdiContract>,
    capabilities: &CapabilitySet,
    mode: GateMode,
) -> GateDecision {
    match contract {
        None => match mode {
            GateMode::Strict => GateDecision::Drop(DropReason::MissingContract),
            GateMode::Permissive => GateDecision::Pass,
        },
        Some(c) => match evaluate(c, capabilities) {
            Evaluation::Accepted => GateDecision::Pass,
            Evaluation::Rejected(unmet) => GateDecision::Drop(DropReason::Unmet(unmet)),
        },
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_level() -> impl Strategy<Value = IntegrityLevel> {
        prop::sample::select(vec![
            IntegrityLevel::Qm,
            IntegrityLevel::A,
            IntegrityLevel::B,
            IntegrityLevel::C,
            IntegrityLevel::D,
        ])
    }

    fn arb_name() -> impl Strategy<Value = String> {
        // Includes characters that need escaping to exercise the round trip.
        "[a-zA-Z][a-zA-Z0-9 &<>_-]{0,14}".prop_map(|s| s.trim().to_string())
    }

    prop_compose! {
        fn arb_demand()(
            kind in 0..3usize,
            name in arb_name(),
            other in arb_name(),
            level in arb_level(),
            quant in 0..40u32,
        ) -> Demand {
            match kind {
                0 => Demand::Configuration { name, integrity_level: level },
                1 => Demand::PlatformService {
                    failure: name,
                    reaction: other,
                    integrity_level: level,
                    error_percent: quant as f64 * 0.5,
                    error_text: format!("{} %", quant as f64 * 0.5),
                },
                _ => Demand::HealthMonitoring {
                    application: name,
                    resource: other,
                    integrity_level: level,
                    latency_threshold_ms: quant as f64,
                    latency_text: format!("more than {} ms", quant as f64),
                },
            }
        }
    }

    prop_compose! {
        fn arb_contract()(
            component in "[a-zA-Z][a-zA-Z0-9 &-]{0,14}",
            config in arb_name(),
            level in arb_level(),
            sec in 0..10u32,
            demands in prop::collection::vec(arb_demand(), 0..6),
        ) -> DdiContract {
            let component = component.trim().to_string();
            let component = if component.is_empty() { "X".to_string() } else { component };
            DdiContract {
                component_name: component,
                guarantee: Guarantee {
                    configuration_name: config,
                    integrity_level: level,
                    security_property: sec,
                    demands,
                },
            }
        }
    }

    fn caps_meeting(demands: &[Demand], exact: bool) -> CapabilitySet {
        let mut caps = CapabilitySet::default();
        for d in demands {
            match d {
                Demand::Configuration { name, integrity_level } => {
                    if !caps.configurations.iter().any(|c| c.name == *name) {
                        caps.configurations.push(ConfigurationCapability {
                            name: name.clone(),
                            integrity_level: if exact { *integrity_level } else { IntegrityLevel::D },
                        });
                    }
                }
                Demand::PlatformService { failure, reaction, integrity_level, error_percent, .. } => {
                    if !caps.platform_services.iter().any(|c| c.failure == *failure) {
                        caps.platform_services.push(PlatformServiceCapability {
                            failure: failure.clone(),
                            reaction: reaction.clone(),
                            integrity_level: if exact { *integrity_level } else { IntegrityLevel::D },
                            error_percent: *error_percent,
                        });
                    }
                }
                Demand::HealthMonitoring { application, resource, integrity_level, latency_threshold_ms, .. } => {
                    if !caps
                        .health_monitors
                        .iter()
                        .any(|c| c.application == *application && c.resource == *resource)
                    {
                        caps.health_monitors.push(HealthMonitorCapability {
                            application: application.clone(),
                            resource: resource.clone(),
                            integrity_level: if exact { *integrity_level } else { IntegrityLevel::D },
                            latency_ms: *latency_threshold_ms,
                        });
                    }
                }
            }
        }
        caps
    }

    fn raise_one(caps: &mut CapabilitySet, which: usize) {
        let n1 = caps.configurations.len();
        let n2 = caps.platform_services.len();
        let total = n1 + n2 + caps.health_monitors.len();
        if total == 0 {
            return;
        }
        let i = which % total;
        let bump = |l: &mut IntegrityLevel| *l = IntegrityLevel::D;
        if i < n1 {
            bump(&mut caps.configurations[i].integrity_level);
        } else if i < n1 + n2 {
            bump(&mut caps.platform_services[i - n1].integrity_level);
        } else {
            bump(&mut caps.health_monitors[i - n1 - n2].integrity_level);
        }
    }

    proptest! {
        #[test]
        fn serialization_round_trips(contract in arb_contract()) {
            let doc = serialize_ddi(&contract);
            let back = parse_ddi(&doc);
            prop_assert_eq!(back.unwrap(), contract);
        }

        #[test]
        fn raising_capability_levels_preserves_acceptance(
            contract in arb_contract(),
            which in 0..16usize,
        ) {
            let mut caps = caps_meeting(&contract.guarantee.demands, true);
            let before = evaluate(&contract, &caps);
            raise_one(&mut caps, which);
            let after = evaluate(&contract, &caps);
            if before == Evaluation::Accepted {
                prop_assert_eq!(after, Evaluation::Accepted);
            }
        }

        #[test]
        fn rejection_always_names_at_least_one_demand(contract in arb_contract()) {
            match evaluate(&contract, &CapabilitySet::default()) {
                Evaluation::Accepted => prop_assert!(contract.guarantee.demands.is_empty()),
                Evaluation::Rejected(unmet) => prop_assert!(!unmet.is_empty()),
            }
        }

        #[test]
        fn parser_is_total_on_noise(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_ddi(&text);
        }
    }
}
