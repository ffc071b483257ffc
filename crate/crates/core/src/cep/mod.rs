//! Complex event processing: declarative patterns and the network that
//! evaluates them over sensor and estimator streams.

mod engine;

pub use engine::{Engine, LocationKey};

use serde::{Deserialize, Serialize};

use crate::event::{attr, Event, EventKind};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CepError {
    #[error("invalid pattern `{id}`: {reason}")]
    InvalidPattern { id: String, reason: String },
    #[error("pattern config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub attribute: String,
    pub op: Cmp,
    pub value: f64,
}

impl Predicate {
    pub fn new(attribute: &str, op: Cmp, value: f64) -> Self {
        Predicate {
            attribute: attribute.to_string(),
            op,
            value,
        }
    }

    /// False when the attribute is missing.
    pub fn holds(&self, e: &Event) -> bool {
        let Some(x) = e.attr(&self.attribute) else {
            return false;
        };
        match self.op {
            Cmp::Gt => x > self.value,
            Cmp::Ge => x >= self.value,
            Cmp::Lt => x < self.value,
            Cmp::Le => x <= self.value,
        }
    }
}

pub fn all_hold(preds: &[Predicate], e: &Event) -> bool {
    preds.iter().all(|p| p.holds(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternKind {
    ThresholdWindow,
    Trend,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule")]
pub enum CertaintyRule {
    Deterministic,
    Sigmoid { a: f64, n0: f64 },
}

/// Logistic certainty of a trend that has grown `n` times. Kept strictly
/// below one so forecasts never claim certainty.
pub fn sigmoid(n: f64, a: f64, n0: f64) -> f64 {
    (1.0 / (1.0 + (-a * (n - n0)).exp())).min(1.0 - 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternScope {
    Cell,
    Ramp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternDefinition {
    pub id: String,
    pub kind: PatternKind,
    pub scope: PatternScope,
    /// Kind of the input events the pattern reads.
    pub input: EventKind,
    /// Attributes an input must carry to be considered at all.
    #[serde(default)]
    pub requires: Vec<String>,
    /// Conditions an input must satisfy to count towards a window.
    #[serde(default)]
    pub predicates: Vec<Predicate>,
    #[serde(default = "one")]
    pub match_count: usize,
    /// Window length in seconds; unused by trends.
    #[serde(default)]
    pub window_seconds: u64,
    /// Derived kinds that open the window. Empty: the first qualifying
    /// input opens it.
    #[serde(default)]
    pub open_on: Vec<EventKind>,
    /// Derived kinds that close the window.
    #[serde(default)]
    pub close_on: Vec<EventKind>,
    /// Derived kinds after which an expired window reopens on the next
    /// input, until the pattern fires.
    #[serde(default)]
    pub rearm_after: Vec<EventKind>,
    /// Fire once per episode: after firing, inputs are ignored until one
    /// of `reset_on` occurs.
    #[serde(default)]
    pub once_per_episode: bool,
    #[serde(default)]
    pub reset_on: Vec<EventKind>,
    pub output: EventKind,
    pub certainty: CertaintyRule,
    /// Trend attribute.
    #[serde(default)]
    pub attribute: Option<String>,
    /// Conditions on the latest input before a trend may emit.
    #[serde(default)]
    pub gate: Vec<Predicate>,
    /// Input attributes copied onto (window, trend) or averaged into
    /// (aggregate) the output.
    #[serde(default)]
    pub copy: Vec<String>,
}

fn one() -> usize {
    1
}

impl PatternDefinition {
    pub fn validate(&self) -> Result<(), CepError> {
        let bad = |reason: &str| {
            Err(CepError::InvalidPattern {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.match_count == 0 {
            return bad("match_count must be at least 1");
        }
        let sigmoid = matches!(self.certainty, CertaintyRule::Sigmoid { .. });
        if sigmoid && self.kind != PatternKind::Trend {
            return bad("sigmoid certainty is only allowed on trend patterns");
        }
        if sigmoid != self.output.is_forecast() {
            return bad("forecast outputs need a sigmoid certainty, others must be deterministic");
        }
        match self.kind {
            PatternKind::ThresholdWindow | PatternKind::Aggregate if self.window_seconds == 0 => {
                bad("window duration must be positive")
            }
            PatternKind::Trend if self.attribute.is_none() => bad("trend needs an attribute"),
            _ => Ok(()),
        }
    }

    /// Whether `e` is an input of this pattern.
    pub fn accepts(&self, e: &Event) -> bool {
        let scope = match e.scope() {
            crate::event::Scope::Cell => PatternScope::Cell,
            crate::event::Scope::Ramp => PatternScope::Ramp,
        };
        e.kind == self.input
            && scope == self.scope
            && self.requires.iter().all(|a| e.attributes.contains_key(a))
            && self
                .attribute
                .as_ref()
                .is_none_or(|a| e.attributes.contains_key(a))
    }
}

/// Numeric thresholds behind the default pattern set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Congestion: density above, veh/km.
    pub density1: f64,
    /// Congestion: speed below, km/h.
    pub speed1: f64,
    /// Clear: density below, veh/km.
    pub density2: f64,
    /// Clear: speed above, km/h.
    pub speed2: f64,
    /// Density a rising trend must have reached before it is reported.
    pub trend_density: f64,
    /// Queue occupancy a rising queue must have reached.
    pub trend_queue_fraction: f64,
}

impl Thresholds {
    /// Density thresholds at `g1`/`g2` of the critical density.
    pub fn from_critical_density(rho_c: f64, g1: f64, g2: f64, free_flow_speed: f64) -> Self {
        Thresholds {
            density1: g1 * rho_c,
            speed1: 25.0,
            density2: g2 * rho_c,
            speed2: 0.6 * free_flow_speed,
            trend_density: 0.5 * rho_c,
            trend_queue_fraction: 0.6,
        }
    }
}

/// Congestion, clear-congestion, predicted-congestion, predicted ramp
/// overflow and rolling averages.
pub fn default_patterns(t: &Thresholds) -> Vec<PatternDefinition> {
    let density_speed = vec![attr::DENSITY.to_string(), attr::SPEED.to_string()];
    let base = PatternDefinition {
        id: String::new(),
        kind: PatternKind::ThresholdWindow,
        scope: PatternScope::Cell,
        input: EventKind::SensorReading,
        requires: density_speed.clone(),
        predicates: vec![],
        match_count: 15,
        window_seconds: 300,
        open_on: vec![],
        close_on: vec![],
        rearm_after: vec![],
        once_per_episode: false,
        reset_on: vec![],
        output: EventKind::Congestion,
        certainty: CertaintyRule::Deterministic,
        attribute: None,
        gate: vec![],
        copy: density_speed.clone(),
    };
    let trend = CertaintyRule::Sigmoid { a: 1.0, n0: 5.0 };
    vec![
        PatternDefinition {
            id: "congestion".into(),
            predicates: vec![
                Predicate::new(attr::DENSITY, Cmp::Gt, t.density1),
                Predicate::new(attr::SPEED, Cmp::Lt, t.speed1),
            ],
            once_per_episode: true,
            reset_on: vec![EventKind::ClearCongestion],
            ..base.clone()
        },
        PatternDefinition {
            id: "clear_congestion".into(),
            predicates: vec![
                Predicate::new(attr::DENSITY, Cmp::Lt, t.density2),
                Predicate::new(attr::SPEED, Cmp::Gt, t.speed2),
            ],
            open_on: vec![EventKind::Congestion, EventKind::PredictedCongestion],
            rearm_after: vec![EventKind::Congestion],
            output: EventKind::ClearCongestion,
            ..base.clone()
        },
        PatternDefinition {
            id: "predicted_congestion".into(),
            kind: PatternKind::Trend,
            match_count: 5,
            window_seconds: 0,
            close_on: vec![EventKind::Congestion, EventKind::ClearCongestion],
            output: EventKind::PredictedCongestion,
            certainty: trend,
            attribute: Some(attr::DENSITY.into()),
            gate: vec![Predicate::new(attr::DENSITY, Cmp::Ge, t.trend_density)],
            copy: vec![attr::DENSITY.into()],
            ..base.clone()
        },
        PatternDefinition {
            id: "predicted_ramp_overflow".into(),
            kind: PatternKind::Trend,
            scope: PatternScope::Ramp,
            input: EventKind::Calculation,
            requires: vec![attr::QUEUE_ESTIMATE.into(), attr::QUEUE_FRACTION.into()],
            match_count: 5,
            window_seconds: 0,
            output: EventKind::PredictedRampOverflow,
            certainty: trend,
            attribute: Some(attr::QUEUE_ESTIMATE.into()),
            gate: vec![Predicate::new(attr::QUEUE_FRACTION, Cmp::Ge, t.trend_queue_fraction)],
            copy: vec![attr::QUEUE_ESTIMATE.into()],
            ..base.clone()
        },
        PatternDefinition {
            id: "calculations".into(),
            kind: PatternKind::Aggregate,
            requires: density_speed,
            match_count: 1,
            window_seconds: 60,
            output: EventKind::Calculation,
            copy: vec![attr::DENSITY.into(), attr::SPEED.into(), attr::FLOW.into()],
            ..base
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternFile {
    #[serde(rename = "pattern")]
    pub patterns: Vec<PatternDefinition>,
}

/// Parses a TOML file of `[[pattern]]` tables.
pub fn patterns_from_toml(text: &str) -> Result<Vec<PatternDefinition>, CepError> {
    let f: PatternFile = toml::from_str(text).map_err(|e| CepError::Config(e.to_string()))?;
    for p in &f.patterns {
        p.validate()?;
    }
    Ok(f.patterns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(5.0, 1.0, 5.0), 0.5);
        assert!((sigmoid(10.0, 1.0, 5.0) - 0.993_307_149_075_715_2).abs() < 1e-12);
        assert!(sigmoid(100.0, 1.0, 5.0) < 1.0);
        for n in 5..30 {
            assert!(sigmoid(n as f64 + 1.0, 1.0, 5.0) > sigmoid(n as f64, 1.0, 5.0));
        }
    }

    #[test]
    fn default_patterns_are_valid_and_round_trip() {
        let t = Thresholds::from_critical_density(60.0, 0.8, 0.7, 100.0);
        let ps = default_patterns(&t);
        for p in &ps {
            p.validate().unwrap();
        }
        let text = toml::to_string(&PatternFile { patterns: ps.clone() }).unwrap();
        assert_eq!(patterns_from_toml(&text).unwrap(), ps);
    }

    #[test]
    fn rejects_sigmoid_on_window_patterns() {
        let t = Thresholds::from_critical_density(60.0, 0.8, 0.7, 100.0);
        let mut p = default_patterns(&t).remove(0);
        p.certainty = CertaintyRule::Sigmoid { a: 1.0, n0: 5.0 };
        assert!(p.validate().is_err());
        let mut p = default_patterns(&t).remove(0);
        p.match_count = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn predicate_on_missing_attribute_is_false() {
        let e = Event::new("a", EventKind::SensorReading, 0, 0);
        assert!(!Predicate::new(attr::DENSITY, Cmp::Lt, 10.0).holds(&e));
    }
}
