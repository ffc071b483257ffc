//! Evaluation metrics: time spent, free-flow time, savings, and the
//! quality of congestion detection and forecasting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ctm::{FreewayNetwork, Trajectory};
use crate::event::{Event, EventKind};

/// Forecasts and detections this many seconds before an annotated start
/// still count as matching it.
pub const MATCH_SLACK_SECONDS: u64 = 300;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no delay to save: reference time spent equals free-flow time")]
    DivisionDegenerate,
    #[error("annotation at location {location} ends before it starts")]
    InvalidAnnotation { location: u32 },
}

/// `sum_t T (sum_k L_k rho_k(t) + sum_i q_i(t))` over the recorded steps.
pub fn compute_tts(net: &FreewayNetwork, traj: &Trajectory) -> f64 {
    let lengths: Vec<f64> = net.cells.iter().map(|c| c.length).collect();
    tts_from_series(
        net.tick,
        &lengths,
        traj.states.iter().map(|s| (s.densities.as_slice(), s.queues.as_slice())),
    )
}

/// Time spent from per-step densities and queues.
pub fn tts_from_series<'a>(
    tick: f64,
    lengths: &[f64],
    rows: impl IntoIterator<Item = (&'a [f64], &'a [f64])>,
) -> f64 {
    rows.into_iter()
        .map(|(rho, q)| {
            let mainline: f64 = lengths.iter().zip(rho).map(|(l, r)| l * r).sum();
            tick * (mainline + q.iter().sum::<f64>())
        })
        .sum()
}

/// Expected free-flow travel time, h, of a vehicle that enters at the
/// upstream boundary of `cell` and leaves through off-ramps according to
/// the split ratios.
pub fn route_free_flow_time(net: &FreewayNetwork, cell: usize) -> f64 {
    let mut survive = 1.0;
    let mut time = 0.0;
    for c in &net.cells[cell..] {
        time += survive * c.length / c.fd.free_flow_speed;
        survive *= 1.0 - c.offramp_split;
    }
    time
}

/// Free-flow time of every vehicle admitted into the network, veh·h.
/// Spilled vehicles never enter and are not counted.
pub fn compute_tft(net: &FreewayNetwork, traj: &Trajectory) -> f64 {
    let route: Vec<f64> = net
        .ramps
        .iter()
        .map(|r| route_free_flow_time(net, r.attach_cell))
        .collect();
    (0..traj.steps())
        .map(|t| {
            let f = traj.flows(t);
            route
                .iter()
                .enumerate()
                .map(|(i, rt)| (f.arrivals[i] * net.tick - f.spill[i]).max(0.0) * rt)
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    pub total: f64,
    pub delay: f64,
}

/// Savings of `tts_b` relative to `tts_a`, as a fraction of total time and
/// of delay over free-flow time.
pub fn relative_savings(tts_a: f64, tts_b: f64, tft: f64) -> Result<Savings, MetricsError> {
    if !(tts_a - tft > 0.0) || !(tts_a > 0.0) {
        return Err(MetricsError::DivisionDegenerate);
    }
    Ok(Savings {
        total: (tts_a - tts_b) / tts_a,
        delay: (tts_a - tts_b) / (tts_a - tft),
    })
}

/// Ground-truth congestion episode, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub location: u32,
    pub start: u64,
    pub end: u64,
}

impl Annotation {
    pub fn matches(&self, e: &Event) -> bool {
        e.location == self.location
            && e.timestamp + MATCH_SLACK_SECONDS >= self.start
            && e.timestamp <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    /// Fraction of considered emissions that match an annotation; 1 when
    /// nothing was emitted.
    pub precision: f64,
    /// Fraction of annotations matched by at least one emission; 1 when
    /// there are none.
    pub recall: f64,
    pub emitted: usize,
    pub matched_emissions: usize,
    pub annotations: usize,
    pub matched_annotations: usize,
    /// Per matched annotation: start minus the earliest matching emission,
    /// seconds (negative when the first match came after the start).
    pub lead_times: Vec<i64>,
}

/// Scores emissions of `kind` against annotations. Forecasts below
/// `certainty_threshold` are ignored.
pub fn precision_recall(
    events: &[Event],
    kind: EventKind,
    annotations: &[Annotation],
    certainty_threshold: f64,
) -> Result<DetectionScore, MetricsError> {
    for a in annotations {
        if a.end < a.start {
            return Err(MetricsError::InvalidAnnotation {
                location: a.location,
            });
        }
    }
    let considered: Vec<&Event> = events
        .iter()
        .filter(|e| e.kind == kind && e.certainty.is_none_or(|c| c >= certainty_threshold))
        .collect();
    let matched_emissions = considered
        .iter()
        .filter(|e| annotations.iter().any(|a| a.matches(e)))
        .count();
    let mut lead_times = Vec::new();
    let mut matched_annotations = 0;
    for a in annotations {
        if let Some(first) = considered
            .iter()
            .filter(|e| a.matches(e))
            .map(|e| e.timestamp)
            .min()
        {
            matched_annotations += 1;
            lead_times.push(a.start as i64 - first as i64);
        }
    }
    let ratio = |n: usize, d: usize| if d == 0 { 1.0 } else { n as f64 / d as f64 };
    Ok(DetectionScore {
        precision: ratio(matched_emissions, considered.len()),
        recall: ratio(matched_annotations, annotations.len()),
        emitted: considered.len(),
        matched_emissions,
        annotations: annotations.len(),
        matched_annotations,
        lead_times,
    })
}

/// For each Congestion event: seconds since the earliest forecast at
/// `certainty_threshold` or above at the same location, no older than
/// `max_lead` seconds and later than the previous Congestion or
/// ClearCongestion there, if any.
pub fn forecast_lead_times(
    events: &[Event],
    certainty_threshold: f64,
    max_lead: u64,
) -> Vec<Option<u64>> {
    let mut sorted: Vec<&Event> = events.iter().collect();
    sorted.sort_by_key(|e| (e.timestamp, e.location, e.kind));
    let mut forecasts: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    let mut out = Vec::new();
    for e in sorted {
        match e.kind {
            EventKind::PredictedCongestion
                if e.certainty.is_some_and(|c| c >= certainty_threshold) =>
            {
                forecasts.entry(e.location).or_default().push(e.timestamp);
            }
            EventKind::Congestion => {
                let seen = forecasts.remove(&e.location).unwrap_or_default();
                out.push(
                    seen.into_iter()
                        .find(|&t| e.timestamp - t <= max_lead)
                        .map(|t| e.timestamp - t),
                );
            }
            EventKind::ClearCongestion => {
                forecasts.remove(&e.location);
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadStats {
    pub count: usize,
    pub min_minutes: f64,
    pub mean_minutes: f64,
    pub max_minutes: f64,
}

pub fn lead_stats(seconds: &[i64]) -> Option<LeadStats> {
    if seconds.is_empty() {
        return None;
    }
    let m: Vec<f64> = seconds.iter().map(|&s| s as f64 / 60.0).collect();
    Some(LeadStats {
        count: m.len(),
        min_minutes: m.iter().copied().fold(f64::INFINITY, f64::min),
        mean_minutes: m.iter().sum::<f64>() / m.len() as f64,
        max_minutes: m.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// veh·h
    pub tts: f64,
    /// veh·h
    pub tft: f64,
    /// Vehicles turned away by full ramp queues.
    pub spill: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub savings: Option<Savings>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lead_time: Option<LeadStats>,
}

impl MetricsReport {
    pub fn from_run(net: &FreewayNetwork, traj: &Trajectory) -> Self {
        MetricsReport {
            tts: compute_tts(net, traj),
            tft: compute_tft(net, traj),
            spill: traj.total_spill(),
            savings: None,
            precision: None,
            recall: None,
            lead_time: None,
        }
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "TTS    {:>12.3} veh·h\nTFT    {:>12.3} veh·h\nspill  {:>12.3} veh\n",
            self.tts, self.tft, self.spill
        );
        if let Some(sv) = self.savings {
            s += &format!(
                "saving {:>11.2} % of total, {:.2} % of delay\n",
                100.0 * sv.total,
                100.0 * sv.delay
            );
        }
        if let (Some(p), Some(r)) = (self.precision, self.recall) {
            s += &format!("precision {:.3}  recall {:.3}\n", p, r);
        }
        if let Some(l) = self.lead_time {
            s += &format!(
                "lead time min {:.2} / mean {:.2} / max {:.2} min over {}\n",
                l.min_minutes, l.mean_minutes, l.max_minutes, l.count
            );
        }
        s
    }
}
