//! Random coordination traffic around a chain of three metered ramps.

use rand::Rng;
use rampflow::coordination::{pair_ramps, CoordinationConfig, CoordinationState, FsmOutput, Measurement, RampInfo};
use rampflow::event::{attr, Event, EventKind, TICK_SECONDS};

pub fn chain(capacity_drop: f64, confirm: bool) -> CoordinationState {
    let mk = |ramp, cell| RampInfo {
        ramp,
        attach_cell: cell,
        cell_length: 0.5,
        critical_density: 60.0,
        capacity: 6000.0,
        capacity_drop,
        max_queue: 50.0,
        partner: None,
    };
    let config = CoordinationConfig {
        confirm,
        ..CoordinationConfig::default()
    };
    CoordinationState::new(pair_ramps(vec![mk(2, 10), mk(6, 20), mk(9, 30)]), config).unwrap()
}

/// One tick of random derived events, coordination traffic and operator
/// decisions around the three-ramp chain.
pub fn random_events(rng: &mut impl Rng, tick: u64) -> Vec<Event> {
    let ts = tick * TICK_SECONDS;
    let mut out = Vec::new();
    let cell = |rng: &mut dyn rand::RngCore| [8u32, 10, 11, 19, 20, 21, 29, 30, 31][rng.random_range(0..9)];
    for _ in 0..rng.random_range(0..4) {
        let id = format!("e{tick}-{}", out.len());
        let e = match rng.random_range(0..7) {
            0 => Event::new(id, EventKind::Congestion, ts, cell(rng)),
            1 => Event::new(id, EventKind::ClearCongestion, ts, cell(rng)),
            2 => Event::new(id, EventKind::PredictedCongestion, ts, cell(rng))
                .with_certainty(rng.random_range(0.01..0.99)),
            3 => Event::new(id, EventKind::PredictedRampOverflow, ts, [2, 6, 9][rng.random_range(0..3)])
                .with_certainty(rng.random_range(0.01..0.99)),
            4 => Event::new(id, EventKind::RampCoordination, ts, [2, 6, 9][rng.random_range(0..3)])
                .with_attr(attr::REQUESTING_RAMP, [6.0, 9.0, 77.0][rng.random_range(0..3)])
                .with_attr(attr::REQUESTED_QUEUE_TARGET, rng.random_range(0.0..60.0)),
            5 => Event::new(id, EventKind::ClearRampCoordination, ts, [2, 6, 9][rng.random_range(0..3)])
                .with_attr(attr::REQUESTING_RAMP, [6.0, 9.0, 77.0][rng.random_range(0..3)]),
            _ => Event::new(id, EventKind::OperatorAction, ts, [6, 9][rng.random_range(0..2)])
                .with_attr(attr::ACTION, 0.0)
                .with_attr(attr::DECISION, rng.random_range(0..3) as f64),
        };
        out.push(e);
    }
    out
}

pub fn random_measurements(rng: &mut impl Rng) -> Vec<Measurement> {
    (0..3)
        .map(|_| Measurement {
            rho: rng.random_range(0.0..120.0),
            queue: rng.random_range(0.0..50.0),
        })
        .collect()
}

pub fn coordination_traffic<'a>(events: &'a [Event], out: &'a FsmOutput) -> impl Iterator<Item = &'a Event> {
    events.iter().chain(&out.events).filter(|e| {
        matches!(e.kind, EventKind::RampCoordination | EventKind::ClearRampCoordination)
            && e.attr(attr::SUGGESTED) != Some(1.0)
    })
}

