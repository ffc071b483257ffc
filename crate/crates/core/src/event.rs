//! Shared event vocabulary and the NDJSON wire format.
//!
//! Every module talks through [`Event`] values. An event is a typed,
//! timestamped occurrence at a cell or ramp with a bag of numeric attributes.
//! Forecast events (`PredictedCongestion`, `PredictedRampOverflow`) carry a
//! certainty; every other kind must not.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Simulation tick length in seconds.
pub const TICK_SECONDS: u64 = 15;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EventError {
    #[error("malformed event: {0}")]
    MalformedEvent(String),
    #[error("unknown event kind `{0}`")]
    UnknownKind(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    SensorReading,
    Congestion,
    ClearCongestion,
    PredictedCongestion,
    PredictedRampOverflow,
    Calculation,
    RampCoordination,
    ClearRampCoordination,
    ControlCommand,
    OperatorAction,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::SensorReading,
        EventKind::Congestion,
        EventKind::ClearCongestion,
        EventKind::PredictedCongestion,
        EventKind::PredictedRampOverflow,
        EventKind::Calculation,
        EventKind::RampCoordination,
        EventKind::ClearRampCoordination,
        EventKind::ControlCommand,
        EventKind::OperatorAction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SensorReading => "SensorReading",
            EventKind::Congestion => "Congestion",
            EventKind::ClearCongestion => "ClearCongestion",
            EventKind::PredictedCongestion => "PredictedCongestion",
            EventKind::PredictedRampOverflow => "PredictedRampOverflow",
            EventKind::Calculation => "Calculation",
            EventKind::RampCoordination => "RampCoordination",
            EventKind::ClearRampCoordination => "ClearRampCoordination",
            EventKind::ControlCommand => "ControlCommand",
            EventKind::OperatorAction => "OperatorAction",
        }
    }

    /// Forecast kinds are the only ones that carry a certainty.
    pub fn is_forecast(self) -> bool {
        matches!(
            self,
            EventKind::PredictedCongestion | EventKind::PredictedRampOverflow
        )
    }

    pub fn topic(self) -> Topic {
        match self {
            EventKind::SensorReading => Topic::Sensors,
            EventKind::Congestion
            | EventKind::ClearCongestion
            | EventKind::PredictedCongestion
            | EventKind::PredictedRampOverflow
            | EventKind::Calculation => Topic::Derived,
            EventKind::ControlCommand
            | EventKind::RampCoordination
            | EventKind::ClearRampCoordination => Topic::Commands,
            EventKind::OperatorAction => Topic::Operator,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EventError::UnknownKind(s.to_string()))
    }
}

/// Addressable bus topics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topic {
    Sensors,
    Derived,
    Commands,
    Operator,
}

impl Topic {
    pub const ALL: [Topic; 4] = [Topic::Sensors, Topic::Derived, Topic::Commands, Topic::Operator];

    pub fn as_str(self) -> &'static str {
        match self {
            Topic::Sensors => "sensors",
            Topic::Derived => "derived",
            Topic::Commands => "commands",
            Topic::Operator => "operator",
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown topic `{s}`"))
    }
}

/// Attribute names used across modules.
pub mod attr {
    pub const DENSITY: &str = "density";
    pub const SPEED: &str = "speed";
    pub const FLOW: &str = "flow";
    pub const OCCUPANCY: &str = "occupancy";
    pub const QUEUE: &str = "queue";
    pub const ARRIVAL_FLOW: &str = "arrival_flow";
    pub const RAMP_FLOW: &str = "ramp_flow";
    pub const DENSITY_ESTIMATE: &str = "density_estimate";
    pub const QUEUE_ESTIMATE: &str = "queue_estimate";
    pub const QUEUE_FRACTION: &str = "queue_fraction";
    pub const DENSITY_AVG: &str = "density_avg";
    pub const SPEED_AVG: &str = "speed_avg";
    pub const FLOW_AVG: &str = "flow_avg";
    pub const COUNT: &str = "count";
    pub const EPISODE: &str = "episode";
    pub const RUN_LENGTH: &str = "run_length";
    pub const RATE: &str = "rate";
    pub const MODE: &str = "mode";
    pub const DESIRED_QUEUE: &str = "desired_queue";
    pub const REQUESTED_QUEUE_TARGET: &str = "requested_queue_target";
    pub const REQUESTING_RAMP: &str = "requesting_ramp";
    pub const SUGGESTED: &str = "suggested";
    pub const DECISION: &str = "decision";
    pub const ACTION: &str = "action";
    pub const VALUE: &str = "value";
}

/// Whether an event's `location` names a freeway cell or an on-ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Cell,
    Ramp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub kind: EventKind,
    /// Simulation time in seconds.
    pub timestamp: u64,
    pub location: u32,
    pub attributes: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub certainty: Option<f64>,
}

impl Event {
    pub fn new(id: impl Into<String>, kind: EventKind, timestamp: u64, location: u32) -> Self {
        Event {
            id: id.into(),
            kind,
            timestamp,
            location,
            attributes: BTreeMap::new(),
            certainty: None,
        }
    }

    pub fn with_attr(mut self, name: &str, value: f64) -> Self {
        self.attributes.insert(name.to_string(), value);
        self
    }

    pub fn with_certainty(mut self, certainty: f64) -> Self {
        self.certainty = Some(certainty);
        self
    }

    pub fn attr(&self, name: &str) -> Option<f64> {
        self.attributes.get(name).copied()
    }

    pub fn topic(&self) -> Topic {
        self.kind.topic()
    }

    /// Ramp-scoped kinds always address a ramp. Sensor readings and
    /// calculations address a ramp when they carry queue measurements.
    pub fn scope(&self) -> Scope {
        match self.kind {
            EventKind::PredictedRampOverflow
            | EventKind::RampCoordination
            | EventKind::ClearRampCoordination
            | EventKind::ControlCommand
            | EventKind::OperatorAction => Scope::Ramp,
            EventKind::SensorReading if self.attributes.contains_key(attr::QUEUE) => Scope::Ramp,
            EventKind::Calculation if self.attributes.contains_key(attr::QUEUE_ESTIMATE) => {
                Scope::Ramp
            }
            _ => Scope::Cell,
        }
    }

    /// Tick index of the event timestamp.
    pub fn tick(&self) -> u64 {
        self.timestamp / TICK_SECONDS
    }

    pub fn validate(&self) -> Result<(), EventError> {
        if self.id.is_empty() {
            return Err(EventError::InvariantViolation("empty id".into()));
        }
        for (name, v) in &self.attributes {
            if !v.is_finite() {
                return Err(EventError::InvariantViolation(format!(
                    "attribute `{name}` is not finite"
                )));
            }
        }
        match (self.kind.is_forecast(), self.certainty) {
            (true, None) => {
                return Err(EventError::InvariantViolation(format!(
                    "{} requires a certainty",
                    self.kind
                )))
            }
            (false, Some(_)) => {
                return Err(EventError::InvariantViolation(format!(
                    "{} must not carry a certainty",
                    self.kind
                )))
            }
            (true, Some(c)) if !(0.0..=1.0).contains(&c) => {
                return Err(EventError::InvariantViolation(format!(
                    "certainty {c} outside [0, 1]"
                )))
            }
            _ => {}
        }
        if self.kind == EventKind::SensorReading {
            for (name, v) in &self.attributes {
                if *v < 0.0 {
                    return Err(EventError::InvariantViolation(format!(
                        "sensor attribute `{name}` is negative"
                    )));
                }
            }
            if let Some(occ) = self.attr(attr::OCCUPANCY) {
                if occ > 100.0 {
                    return Err(EventError::InvariantViolation(format!(
                        "occupancy {occ} above 100"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Encodes one event as a single NDJSON line, newline included.
pub fn serialize_event(e: &Event) -> Vec<u8> {
    let mut out = serde_json::to_vec(e).expect("event serialization is infallible");
    out.push(b'\n');
    out
}

pub fn serialize_event_line(e: &Event) -> String {
    String::from_utf8(serialize_event(e)).expect("json is utf-8")
}

#[derive(Deserialize)]
struct RawEvent {
    id: String,
    kind: String,
    timestamp: u64,
    location: u32,
    #[serde(default)]
    attributes: BTreeMap<String, f64>,
    #[serde(default)]
    certainty: Option<f64>,
}

/// Parses one NDJSON line (a trailing newline is accepted).
pub fn deserialize_event(bytes: &[u8]) -> Result<Event, EventError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| EventError::MalformedEvent(format!("invalid utf-8: {e}")))?;
    let line = text.strip_suffix('\n').unwrap_or(text);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.contains('\n') {
        return Err(EventError::MalformedEvent(
            "more than one line in frame".into(),
        ));
    }
    // Check the kind before the full shape so that an unknown kind is reported
    // as such even when the rest of the object is incomplete.
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| EventError::MalformedEvent(e.to_string()))?;
    match value.get("kind") {
        Some(serde_json::Value::String(k)) => {
            k.parse::<EventKind>()?;
        }
        Some(_) => return Err(EventError::MalformedEvent("`kind` is not a string".into())),
        None => return Err(EventError::MalformedEvent("missing `kind`".into())),
    }
    let raw: RawEvent =
        serde_json::from_value(value).map_err(|e| EventError::MalformedEvent(e.to_string()))?;
    let event = Event {
        id: raw.id,
        kind: raw.kind.parse()?,
        timestamp: raw.timestamp,
        location: raw.location,
        attributes: raw.attributes,
        certainty: raw.certainty,
    };
    event.validate()?;
    Ok(event)
}

/// Deterministic id source: `<prefix>-<n>`.
#[derive(Debug, Clone)]
pub struct IdGen {
    prefix: String,
    next: u64,
}

impl IdGen {
    pub fn new(prefix: &str) -> Self {
        IdGen {
            prefix: prefix.to_string(),
            next: 0,
        }
    }

    pub fn next_id(&mut self) -> String {
        let id = format!("{}-{}", self.prefix, self.next);
        self.next += 1;
        id
    }
}
