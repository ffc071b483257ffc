//! Flat-file formats: trajectory and queue CSVs, annotation and sample
//! CSVs, NDJSON event logs and JSON metrics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::ctm::Trajectory;
use crate::event::{serialize_event, Event};
use crate::fd::PredictionGridRow;
use crate::metrics::{Annotation, MetricsReport};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: u64,
    pub cell: usize,
    /// veh/km
    pub density: f64,
    /// Flow out of the cell during the step, veh/h.
    pub flow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueRow {
    pub step: u64,
    pub ramp: usize,
    /// veh, at the start of the step
    pub queue: f64,
    /// veh/h
    pub arrival: f64,
    /// veh/h
    pub ramp_flow: f64,
    /// Commanded rate, veh/h.
    pub rate: f64,
    /// Vehicles turned away during the step.
    pub spill: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub density: f64,
    pub flow: f64,
    /// Downstream density, for the two-dimensional fit.
    #[serde(default)]
    pub density_downstream: Option<f64>,
}

pub fn trajectory_rows(traj: &Trajectory) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (t, s) in traj.states.iter().enumerate() {
        let f = traj.flows(t);
        for (k, &density) in s.densities.iter().enumerate() {
            rows.push(TrajectoryRow {
                step: t as u64,
                cell: k,
                density,
                flow: f.outflows[k],
            });
        }
    }
    rows
}

pub fn queue_rows(traj: &Trajectory, rates: &[Vec<f64>]) -> Vec<QueueRow> {
    let mut rows = Vec::new();
    for (t, s) in traj.states.iter().enumerate() {
        let f = traj.flows(t);
        for (i, &queue) in s.queues.iter().enumerate() {
            rows.push(QueueRow {
                step: t as u64,
                ramp: i,
                queue,
                arrival: f.arrivals[i],
                ramp_flow: f.ramp_flows[i],
                rate: rates.get(t).and_then(|r| r.get(i)).copied().unwrap_or(f64::NAN),
                spill: f.spill[i],
            });
        }
    }
    rows
}

pub fn write_csv<T: Serialize>(w: impl Write, rows: &[T]) -> Result<(), IoError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(r: impl Read) -> Result<Vec<T>, IoError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Regroups rows into per-step vectors indexed by cell (or ramp). Every
/// step must list the same, contiguous set of indices.
pub fn by_step<T>(
    rows: &[T],
    key: impl Fn(&T) -> (u64, usize),
    value: impl Fn(&T) -> f64,
) -> Result<Vec<Vec<f64>>, IoError> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let (t, i) = key(r);
        let t = t as usize;
        if t > out.len() {
            return Err(IoError::Invalid(format!("step {t} follows step {}", out.len())));
        }
        if t == out.len() {
            out.push(Vec::new());
        }
        if i != out[t].len() {
            return Err(IoError::Invalid(format!("step {t}: index {i} out of order")));
        }
        out[t].push(value(r));
    }
    if out.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(IoError::Invalid("steps list different numbers of rows".into()));
    }
    Ok(out)
}

pub fn write_annotations(w: impl Write, a: &[Annotation]) -> Result<(), IoError> {
    write_csv(w, a)
}

pub fn read_annotations(r: impl Read) -> Result<Vec<Annotation>, IoError> {
    let a: Vec<Annotation> = read_csv(r)?;
    if let Some(bad) = a.iter().find(|a| a.end < a.start) {
        return Err(IoError::Invalid(format!(
            "annotation at {} ends before it starts",
            bad.location
        )));
    }
    Ok(a)
}

pub fn write_prediction_grid(w: impl Write, rows: &[PredictionGridRow]) -> Result<(), IoError> {
    write_csv(w, rows)
}

pub fn write_events(mut w: impl Write, events: &[Event]) -> Result<(), IoError> {
    for e in events {
        w.write_all(&serialize_event(e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(mut w: impl Write, m: &MetricsReport) -> Result<(), IoError> {
    serde_json::to_writer_pretty(&mut w, m)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_metrics(r: impl Read) -> Result<MetricsReport, IoError> {
    Ok(serde_json::from_reader(r)?)
}
