//! Rule-based efficiency labels for cluster summaries.
//!
//! Rules are evaluated in order and the first match wins. A manual
//! override keyed by `(journey_id, cluster_id)` beats every rule.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClusterError, ClusterSummary};
use crate::telemetry::EfficiencyLabel;
use crate::weather::SeverityOrder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryField {
    NMembers,
    MeanSpeed,
    MeanAcceleration,
    MeanElevationChange,
    IsIdlingMode,
    HourMode,
    /// Rank of the weather mode under the config's severity order.
    WeatherSeverity,
    MeanFuelEconomy,
}

impl SummaryField {
    fn value(self, s: &ClusterSummary, order: &SeverityOrder) -> f64 {
        match self {
            SummaryField::NMembers => s.n_members as f64,
            SummaryField::MeanSpeed => s.mean_speed,
            SummaryField::MeanAcceleration => s.mean_acceleration,
            SummaryField::MeanElevationChange => s.mean_elevation_change,
            SummaryField::IsIdlingMode => s.is_idling_mode as f64,
            SummaryField::HourMode => s.hour_mode as f64,
            SummaryField::WeatherSeverity => order.rank(s.weather_mode) as f64,
            SummaryField::MeanFuelEconomy => s.mean_fuel_economy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "lt", alias = "<")]
    Lt,
    #[serde(rename = "le", alias = "<=")]
    Le,
    #[serde(rename = "gt", alias = ">")]
    Gt,
    #[serde(rename = "ge", alias = ">=")]
    Ge,
    #[serde(rename = "eq", alias = "==")]
    Eq,
    #[serde(rename = "ne", alias = "!=")]
    Ne,
    #[serde(rename = "in")]
    In,
    #[serde(rename = "not_in")]
    NotIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Number(f64),
    Set(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub field: SummaryField,
    pub op: Op,
    pub value: Operand,
}

impl Predicate {
    fn holds(&self, s: &ClusterSummary, order: &SeverityOrder) -> bool {
        let x = self.field.value(s, order);
        match (&self.op, &self.value) {
            (Op::Lt, Operand::Number(v)) => x < *v,
            (Op::Le, Operand::Number(v)) => x <= *v,
            (Op::Gt, Operand::Number(v)) => x > *v,
            (Op::Ge, Operand::Number(v)) => x >= *v,
            (Op::Eq, Operand::Number(v)) => x == *v,
            (Op::Ne, Operand::Number(v)) => x != *v,
            (Op::In, Operand::Set(vs)) => vs.contains(&x),
            (Op::NotIn, Operand::Set(vs)) => !vs.contains(&x),
            // Rejected by validate().
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default)]
    pub name: String,
    pub label: EfficiencyLabel,
    /// All predicates must hold; an empty list always matches.
    #[serde(default)]
    pub when: Vec<Predicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRuleConfig {
    #[serde(default)]
    pub severity_order: SeverityOrder,
    pub rules: Vec<Rule>,
}

/// Default thresholds used by [`LabelRuleConfig::default`].
pub const ECONOMY_FLOOR: f64 = 40.0;
pub const CONGESTION_SPEED: f64 = 15.0;
pub const PEAK_HOURS: [u8; 5] = [7, 8, 17, 18, 19];
pub const BENIGN_SEVERITY_MAX: f64 = 4.0;

impl Default for LabelRuleConfig {
    fn default() -> Self {
        let p = |field, op, value| Predicate { field, op, value };
        LabelRuleConfig {
            severity_order: SeverityOrder::default(),
            rules: vec![
                Rule {
                    name: "excessive idling".into(),
                    label: EfficiencyLabel::Inefficient,
                    when: vec![p(SummaryField::IsIdlingMode, Op::Eq, Operand::Number(1.0))],
                },
                Rule {
                    name: "economy above floor".into(),
                    label: EfficiencyLabel::Efficient,
                    when: vec![p(
                        SummaryField::MeanFuelEconomy,
                        Op::Ge,
                        Operand::Number(ECONOMY_FLOOR),
                    )],
                },
                Rule {
                    name: "poor economy under favorable conditions".into(),
                    label: EfficiencyLabel::Inefficient,
                    when: vec![
                        p(
                            SummaryField::WeatherSeverity,
                            Op::Le,
                            Operand::Number(BENIGN_SEVERITY_MAX),
                        ),
                        p(
                            SummaryField::HourMode,
                            Op::NotIn,
                            Operand::Set(PEAK_HOURS.iter().map(|&h| h as f64).collect()),
                        ),
                        p(
                            SummaryField::MeanFuelEconomy,
                            Op::Lt,
                            Operand::Number(ECONOMY_FLOOR),
                        ),
                        p(
                            SummaryField::MeanSpeed,
                            Op::Gt,
                            Operand::Number(CONGESTION_SPEED),
                        ),
                    ],
                },
                Rule {
                    name: "external conditions".into(),
                    label: EfficiencyLabel::Efficient,
                    when: Vec::new(),
                },
            ],
        }
    }
}

impl LabelRuleConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        for (i, rule) in self.rules.iter().enumerate() {
            for p in &rule.when {
                let ok = match (&p.op, &p.value) {
                    (Op::In | Op::NotIn, Operand::Set(_)) => true,
                    (Op::In | Op::NotIn, Operand::Number(_)) => false,
                    (_, Operand::Number(v)) => v.is_finite(),
                    (_, Operand::Set(_)) => false,
                };
                if !ok {
                    return Err(ClusterError::Config(format!(
                        "rule {} ({:?}): operator {:?} on {:?} needs {}",
                        i + 1,
                        rule.name,
                        p.op,
                        p.field,
                        if matches!(p.op, Op::In | Op::NotIn) {
                            "a list of numbers"
                        } else {
                            "a single finite number"
                        }
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ClusterError> {
        let cfg: LabelRuleConfig =
            toml::from_str(s).map_err(|e| ClusterError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClusterError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("rule config serializes")
    }

    /// Label from the first matching rule, or `Unlabeled`.
    pub fn apply(&self, summary: &ClusterSummary) -> EfficiencyLabel {
        self.rules
            .iter()
            .find(|r| {
                r.when
                    .iter()
                    .all(|p| p.holds(summary, &self.severity_order))
            })
            .map_or(EfficiencyLabel::Unlabeled, |r| r.label)
    }
}

/// Manual labels keyed by `(journey_id, cluster_id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides(HashMap<(String, usize), EfficiencyLabel>);

impl Overrides {
    pub fn insert(
        &mut self,
        journey_id: impl Into<String>,
        cluster_id: usize,
        label: EfficiencyLabel,
    ) {
        self.0.insert((journey_id.into(), cluster_id), label);
    }

    pub fn get(&self, journey_id: &str, cluster_id: usize) -> Option<EfficiencyLabel> {
        self.0.get(&(journey_id.to_string(), cluster_id)).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses `journey_id,cluster_id,label` lines; blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<Self, ClusterError> {
        let mut out = Overrides::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| ClusterError::Config(format!("override line {}: {why}", i + 1));
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let [journey, cluster, label] = parts[..] else {
                return Err(bad("expected journey_id,cluster_id,label"));
            };
            let cluster: usize = cluster
                .parse()
                .map_err(|_| bad("cluster_id is not an integer"))?;
            let label: EfficiencyLabel = label.parse().map_err(|e: String| bad(&e))?;
            out.insert(journey, cluster, label);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClusterError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

pub fn label_clusters(
    summaries: &[ClusterSummary],
    rules: &LabelRuleConfig,
    overrides: &Overrides,
) -> Vec<ClusterSummary> {
    summaries
        .iter()
        .map(|s| {
            let label = overrides
                .get(&s.journey_id, s.cluster_id)
                .unwrap_or_else(|| rules.apply(s));
            ClusterSummary { label, ..s.clone() }
        })
        .collect()
}
