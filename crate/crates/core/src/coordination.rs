//! Event-driven coordination between metered ramps.
//!
//! Each metered ramp runs two state machines. The first decides whether the
//! local controller is off, controls density, or controls density and
//! queue. The second decides whether the ramp asks its upstream partner to
//! hold back vehicles, which it does by sending a `RampCoordination` event
//! every tick while the request is active.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::control::ControlMode;
use crate::event::{attr, Event, EventKind, IdGen};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CoordinationError {
    #[error("headroom l(rho_c - rho) + q_max - q is not positive")]
    DegenerateDenominator,
    #[error("invalid coordination parameter: {0}")]
    InvalidParameter(String),
}

/// Inputs of the expected-travel-time trade-off between a downstream
/// (requesting) ramp and its upstream partner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffInputs {
    /// Probability of the forecast event.
    pub p_event: f64,
    /// h
    pub horizon: f64,
    /// km
    pub cell_length: f64,
    /// veh/km
    pub rho_c_ds: f64,
    /// veh/km
    pub rho_ds: f64,
    /// veh
    pub q_bar_us: f64,
    /// veh
    pub q_bar_ds: f64,
    /// veh
    pub q_ds: f64,
    /// Capacity drop in flow units, veh/h.
    pub delta_phi: f64,
    /// Expected congestion duration, h.
    pub t_con: f64,
}

/// Extra waiting time caused on the upstream ramp, veh·h.
pub fn delta_t_ramp_bound(i: &TradeoffInputs) -> f64 {
    i.horizon * (i.q_bar_ds / (i.q_bar_ds + i.q_bar_us)) * i.q_bar_us
}

/// Extra time spent in congestion if the request is not made, veh·h.
pub fn delta_t_ml_bound(i: &TradeoffInputs) -> Result<f64, CoordinationError> {
    let denom = i.cell_length * (i.rho_c_ds - i.rho_ds) + i.q_bar_ds - i.q_ds;
    if !(denom > 0.0) {
        return Err(CoordinationError::DegenerateDenominator);
    }
    Ok(i.q_bar_us * i.horizon / denom * i.delta_phi * i.t_con)
}

/// `P * dT_ml > (1 - P) * dT_ramp`; true when the mainline bound is degenerate.
pub fn tradeoff(i: &TradeoffInputs) -> bool {
    match delta_t_ml_bound(i) {
        Ok(ml) => i.p_event * ml > (1.0 - i.p_event) * delta_t_ramp_bound(i),
        Err(CoordinationError::DegenerateDenominator) => true,
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StarEvents {
    pub to_pc: bool,
    pub to_pr: bool,
    pub congestion: bool,
}

impl StarEvents {
    pub fn event_part(&self, ca: bool) -> bool {
        (self.to_pc || self.to_pr || self.congestion) && ca
    }
}

/// Activation rule for an upstream coordination request.
pub fn star_condition(ev: &StarEvents, ca: bool, q: f64, q_bar: f64, gamma4: f64) -> bool {
    ev.event_part(ca) || q >= gamma4 * q_bar
}

/// Queue target that gives `self` the same occupancy as its partner.
pub fn balancing_target(q_bar_self: f64, q_bar_partner: f64, q_partner: f64) -> f64 {
    q_bar_self / q_bar_partner * q_partner
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gammas {
    /// Density activation fallback, fraction of critical density.
    pub g1: f64,
    /// Density deactivation fallback, fraction of critical density.
    pub g2: f64,
    /// Request release, fraction of queue capacity.
    pub g3: f64,
    /// Request activation fallback, fraction of queue capacity.
    pub g4: f64,
}

impl Default for Gammas {
    fn default() -> Self {
        Gammas {
            g1: 0.8,
            g2: 0.7,
            g3: 0.7,
            g4: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinationConfig {
    pub gammas: Gammas,
    /// Forecasts below this certainty are ignored for activation.
    pub certainty_threshold: f64,
    /// Trade-off horizon, h.
    pub horizon: f64,
    /// Expected congestion duration, h.
    pub t_con: f64,
    /// Ticks without a request after which queue control is dropped.
    pub rc_timeout_ticks: u64,
    /// Ticks a forecast stays relevant after its last emission.
    pub forecast_memory_ticks: u64,
    /// Cells upstream of the merge cell that belong to a ramp's area.
    pub area_upstream: usize,
    /// Cells from the merge cell downstream that belong to a ramp's area.
    pub area_downstream: usize,
    /// Activations of upstream coordination wait for an operator decision.
    pub confirm: bool,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        CoordinationConfig {
            gammas: Gammas::default(),
            certainty_threshold: 0.6,
            horizon: 0.25,
            t_con: 1.0,
            rc_timeout_ticks: 4,
            forecast_memory_ticks: 20,
            area_upstream: 2,
            area_downstream: 2,
            confirm: false,
        }
    }
}

impl CoordinationConfig {
    pub fn validate(&self) -> Result<(), CoordinationError> {
        let g = self.gammas;
        for (name, v) in [("g1", g.g1), ("g2", g.g2), ("g3", g.g3), ("g4", g.g4)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(CoordinationError::InvalidParameter(format!(
                    "{name} = {v} outside (0, 1]"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.certainty_threshold) {
            return Err(CoordinationError::InvalidParameter(
                "certainty threshold outside [0, 1]".into(),
            ));
        }
        if !(self.horizon > 0.0 && self.t_con >= 0.0) {
            return Err(CoordinationError::InvalidParameter(
                "horizon must be positive and t_con non-negative".into(),
            ));
        }
        if self.rc_timeout_ticks == 0 {
            return Err(CoordinationError::InvalidParameter(
                "rc timeout must be at least one tick".into(),
            ));
        }
        Ok(())
    }
}

/// Static description of one metered ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampInfo {
    pub ramp: u32,
    pub attach_cell: u32,
    /// km
    pub cell_length: f64,
    pub critical_density: f64,
    /// veh/h
    pub capacity: f64,
    pub capacity_drop: f64,
    pub max_queue: f64,
    /// Nearest metered ramp upstream.
    pub partner: Option<u32>,
}

/// Orders ramps upstream to downstream and pairs each with the nearest
/// metered ramp upstream of it.
pub fn pair_ramps(mut ramps: Vec<RampInfo>) -> Vec<RampInfo> {
    ramps.sort_by_key(|r| (r.attach_cell, r.ramp));
    let mut prev = None;
    for r in &mut ramps {
        r.partner = prev;
        prev = Some(r.ramp);
    }
    ramps
}

/// Per-tick local measurements of one ramp.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    /// Merge-cell density, veh/km.
    pub rho: f64,
    /// Queue, veh.
    pub queue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Confirmation {
    #[default]
    None,
    Pending,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RampCoordState {
    pub mode: ControlMode,
    pub request_active: bool,
    pub ca: bool,
    pub to_pc: bool,
    pub to_pr: bool,
    /// Downstream ramp currently served, and the tick of its last request.
    pub served: Option<(u32, u64)>,
    pub desired_queue: Option<f64>,
    pub confirmation: Confirmation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationState {
    pub ramps: Vec<RampInfo>,
    pub per_ramp: Vec<RampCoordState>,
    pub config: CoordinationConfig,
    /// Cells with a detected, not yet cleared congestion.
    pub congested: BTreeSet<u32>,
    /// Last forecast per cell: (tick, certainty).
    pub last_pc: BTreeMap<u32, (u64, f64)>,
    /// Last ramp overflow forecast per ramp: (tick, certainty).
    pub last_pr: BTreeMap<u32, (u64, f64)>,
}

/// What a tick of coordination produced.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmOutput {
    pub events: Vec<Event>,
    /// Per ramp in `ramps` order.
    pub modes: Vec<ControlMode>,
    /// Queue targets of ramps in queue control.
    pub targets: Vec<Option<f64>>,
}

/// Density-control transitions for a ramp that is not serving a request.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensityInputs {
    pub congestion: bool,
    pub forecast: bool,
    pub clear_this_tick: bool,
    pub rho: f64,
    pub rho_c: f64,
}

pub fn density_transition(mode: ControlMode, d: &DensityInputs, g: &Gammas) -> ControlMode {
    let high = d.rho >= g.g1 * d.rho_c;
    match mode {
        ControlMode::Inactive if d.congestion || d.forecast || high => ControlMode::DensityControl,
        ControlMode::DensityControl
            if !d.congestion
                && !d.forecast
                && !high
                && (d.clear_this_tick || d.rho <= g.g2 * d.rho_c) =>
        {
            ControlMode::Inactive
        }
        m => m,
    }
}

/// Whether a request stays or becomes active, ignoring confirmation.
pub fn request_transition(
    active: bool,
    ev: &StarEvents,
    ca: bool,
    q: f64,
    q_bar: f64,
    g: &Gammas,
) -> bool {
    if !active {
        star_condition(ev, ca, q, q_bar, g.g4)
    } else {
        !(q <= g.g3 * q_bar && !ev.event_part(ca))
    }
}

impl CoordinationState {
    pub fn new(ramps: Vec<RampInfo>, config: CoordinationConfig) -> Result<Self, CoordinationError> {
        config.validate()?;
        let n = ramps.len();
        Ok(CoordinationState {
            ramps,
            per_ramp: vec![RampCoordState::default(); n],
            config,
            congested: BTreeSet::new(),
            last_pc: BTreeMap::new(),
            last_pr: BTreeMap::new(),
        })
    }

    fn index_of(&self, ramp: u32) -> Option<usize> {
        self.ramps.iter().position(|r| r.ramp == ramp)
    }

    fn area(&self, i: usize) -> std::ops::Range<u32> {
        let a = self.ramps[i].attach_cell as usize;
        let lo = a.saturating_sub(self.config.area_upstream);
        (lo as u32)..((a + self.config.area_downstream) as u32)
    }

    fn recent(&self, at: Option<(u64, f64)>, tick: u64) -> Option<f64> {
        at.filter(|(t, c)| {
            tick.saturating_sub(*t) < self.config.forecast_memory_ticks
                && *c >= self.config.certainty_threshold
        })
        .map(|(_, c)| c)
    }

    /// Highest-certainty recent forecast in the area of ramp `i`.
    fn area_forecast(&self, i: usize, tick: u64) -> Option<f64> {
        self.area(i)
            .filter_map(|cell| self.recent(self.last_pc.get(&cell).copied(), tick))
            .fold(None, |best: Option<f64>, c| Some(best.map_or(c, |b| b.max(c))))
    }

    fn tradeoff_for(&self, i: usize, p: f64, m: &Measurement) -> bool {
        let r = &self.ramps[i];
        let Some(us) = r.partner.and_then(|p| self.index_of(p)) else {
            return false;
        };
        tradeoff(&TradeoffInputs {
            p_event: p,
            horizon: self.config.horizon,
            cell_length: r.cell_length,
            rho_c_ds: r.critical_density,
            rho_ds: m.rho,
            q_bar_us: self.ramps[us].max_queue,
            q_bar_ds: r.max_queue,
            q_ds: m.queue,
            delta_phi: r.capacity_drop * r.capacity,
            t_con: self.config.t_con,
        })
    }
}

/// Advances the coordinator by one tick.
///
/// `events` are this tick's derived events (Congestion, ClearCongestion,
/// forecasts), any externally injected coordination events, and operator
/// actions. `meas` holds one measurement per ramp in `s.ramps` order.
pub fn fsm_step(
    s: &CoordinationState,
    events: &[Event],
    meas: &[Measurement],
    tick: u64,
    ids: &mut IdGen,
) -> (CoordinationState, FsmOutput) {
    let mut n = s.clone();
    let ts = tick * crate::event::TICK_SECONDS;
    let g = n.config.gammas;

    let mut cleared = BTreeSet::new();
    let mut external_rc = Vec::new();
    let mut decisions: BTreeMap<u32, f64> = BTreeMap::new();
    for e in events {
        match e.kind {
            EventKind::Congestion => {
                n.congested.insert(e.location);
            }
            EventKind::ClearCongestion => {
                n.congested.remove(&e.location);
                n.last_pc.remove(&e.location);
                cleared.insert(e.location);
            }
            EventKind::PredictedCongestion => {
                n.last_pc.insert(e.location, (tick, e.certainty.unwrap_or(0.0)));
            }
            EventKind::PredictedRampOverflow => {
                n.last_pr.insert(e.location, (tick, e.certainty.unwrap_or(0.0)));
            }
            EventKind::RampCoordination | EventKind::ClearRampCoordination
                if e.attr(attr::SUGGESTED) != Some(1.0) =>
            {
                external_rc.push(e.clone());
            }
            EventKind::OperatorAction if e.attr(attr::ACTION) == Some(0.0) => {
                if let Some(d) = e.attr(attr::DECISION) {
                    decisions.insert(e.location, d);
                }
            }
            _ => {}
        }
    }

    let m = n.ramps.len();
    let mut out = Vec::new();

    // Density control.
    for i in 0..m {
        let area = n.area(i);
        let rho_c = n.ramps[i].critical_density;
        let d = DensityInputs {
            congestion: n.congested.iter().any(|c| area.contains(c)),
            forecast: n.area_forecast(i, tick).is_some(),
            clear_this_tick: cleared.iter().any(|c| area.contains(c)),
            rho: meas[i].rho,
            rho_c,
        };
        let st = &mut n.per_ramp[i];
        let base = if st.mode == ControlMode::DensityAndQueueControl {
            ControlMode::DensityControl
        } else {
            st.mode
        };
        let next = density_transition(base, &d, &g);
        if st.mode != ControlMode::DensityAndQueueControl {
            st.mode = next;
        }
        st.ca = st.mode.is_active();
    }

    // Upstream coordination requests.
    let mut requests: Vec<Event> = Vec::new();
    for i in 0..m {
        let Some(partner) = n.ramps[i].partner else { continue };
        let ramp = n.ramps[i].ramp;
        let area = n.area(i);
        let pc = n.area_forecast(i, tick);
        let pr = n.recent(n.last_pr.get(&ramp).copied(), tick);
        let to_pc = pc.is_some_and(|p| n.tradeoff_for(i, p, &meas[i]));
        let to_pr = pr.is_some_and(|p| n.tradeoff_for(i, p, &meas[i]));
        let ev = StarEvents {
            to_pc,
            to_pr,
            congestion: n.congested.iter().any(|c| area.contains(c)),
        };
        let q_bar = n.ramps[i].max_queue;
        let st = &mut n.per_ramp[i];
        st.to_pc = to_pc;
        st.to_pr = to_pr;
        let want = request_transition(st.request_active, &ev, st.ca, meas[i].queue, q_bar, &g);

        if !st.request_active && want {
            if n.config.confirm {
                match (st.confirmation, decisions.get(&ramp)) {
                    (Confirmation::Pending, Some(&d)) if d == 0.0 || d == 1.0 => {
                        st.confirmation = Confirmation::None;
                        st.request_active = true;
                    }
                    (Confirmation::Pending, Some(_)) => st.confirmation = Confirmation::Rejected,
                    (Confirmation::None, _) => {
                        st.confirmation = Confirmation::Pending;
                        out.push(
                            Event::new(ids.next_id(), EventKind::RampCoordination, ts, partner)
                                .with_attr(attr::REQUESTING_RAMP, ramp as f64)
                                .with_attr(attr::SUGGESTED, 1.0),
                        );
                    }
                    _ => {}
                }
            } else {
                st.request_active = true;
            }
        } else if !want {
            if st.request_active {
                st.request_active = false;
                requests.push(
                    Event::new(ids.next_id(), EventKind::ClearRampCoordination, ts, partner)
                        .with_attr(attr::REQUESTING_RAMP, ramp as f64),
                );
            }
            st.confirmation = Confirmation::None;
        }

        if st.request_active {
            let us = n.ramps.iter().find(|r| r.ramp == partner);
            let q_bar_us = us.map_or(q_bar, |r| r.max_queue);
            let target = balancing_target(q_bar_us, q_bar, meas[i].queue).clamp(1.0, q_bar_us);
            requests.push(
                Event::new(ids.next_id(), EventKind::RampCoordination, ts, partner)
                    .with_attr(attr::REQUESTING_RAMP, ramp as f64)
                    .with_attr(attr::REQUESTED_QUEUE_TARGET, target),
            );
        }
    }

    // Queue control on the receiving side.
    for e in external_rc.iter().chain(&requests) {
        let Some(j) = n.index_of(e.location) else { continue };
        let from = e.attr(attr::REQUESTING_RAMP).unwrap_or(-1.0);
        let st = &mut n.per_ramp[j];
        match e.kind {
            EventKind::RampCoordination => {
                st.mode = ControlMode::DensityAndQueueControl;
                st.served = Some((from as u32, tick));
                st.desired_queue = e
                    .attr(attr::REQUESTED_QUEUE_TARGET)
                    .map(|t| t.clamp(1.0, n.ramps[j].max_queue));
            }
            EventKind::ClearRampCoordination => {
                if st.served.is_some_and(|(r, _)| r as f64 == from) {
                    st.mode = ControlMode::DensityControl;
                    st.served = None;
                    st.desired_queue = None;
                }
            }
            _ => {}
        }
    }
    for st in &mut n.per_ramp {
        if let Some((_, last)) = st.served {
            if tick.saturating_sub(last) >= n.config.rc_timeout_ticks {
                st.mode = ControlMode::DensityControl;
                st.served = None;
                st.desired_queue = None;
            }
        }
        st.ca = st.mode.is_active();
    }

    out.extend(requests);
    let output = FsmOutput {
        events: out,
        modes: n.per_ramp.iter().map(|r| r.mode).collect(),
        targets: n
            .per_ramp
            .iter()
            .map(|r| match r.mode {
                ControlMode::DensityAndQueueControl => r.desired_queue,
                _ => None,
            })
            .collect(),
    };
    (n, output)
}
