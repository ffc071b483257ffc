//! Shared helpers for the integration tests: a brute-force reference for the
//! default pattern set and random stream builders.
#![allow(dead_code)]

pub mod fsm;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rampflow::cep::Thresholds;
use rampflow::event::{attr, Event, EventKind};

/// Thresholds used by the stream tests: far enough apart that congestion
/// and clearing cannot both hold on one reading.
pub fn stream_thresholds() -> Thresholds {
    Thresholds {
        density1: 72.0,
        speed1: 40.0,
        density2: 45.0,
        speed2: 70.0,
        trend_density: 30.0,
        trend_queue_fraction: 0.6,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Reading {
    pub t: u64,
    pub density: f64,
    pub speed: f64,
    pub flow: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QueueCalc {
    pub t: u64,
    pub queue: f64,
    pub fraction: f64,
}

/// A random multi-location stream: a few cells with regime-switching
/// densities, occasional gaps and repeated values, and a few ramps with
/// queue estimates. At most `max_events` events.
pub fn random_stream(seed: u64, max_events: usize) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = rng.random_range(1..=3u32);
    let ramps = rng.random_range(0..=1u32);
    let per_tick = (cells + ramps) as usize;
    let ticks = max_events / per_tick;
    let mut out = Vec::new();
    for loc in 0..cells {
        let mut d: f64 = rng.random_range(10.0..90.0);
        let mut target = d;
        for tick in 0..ticks as u64 {
            if rng.random_bool(0.05) {
                target = [20.0, 50.0, 110.0][rng.random_range(0..3)];
            }
            if !rng.random_bool(0.1) {
                d += (target - d) * 0.15 + rng.random_range(-3.0..3.0);
                d = d.max(0.0);
            }
            if rng.random_bool(0.15) {
                continue;
            }
            let v = if d > 60.0 {
                rng.random_range(10.0..45.0)
            } else {
                rng.random_range(60.0..100.0)
            };
            out.push(
                Event::new(format!("r{loc}-{tick}"), EventKind::SensorReading, tick * 15, loc)
                    .with_attr(attr::DENSITY, d)
                    .with_attr(attr::SPEED, v)
                    .with_attr(attr::FLOW, d * v),
            );
        }
    }
    for ramp in 0..ramps {
        let mut q: f64 = 0.0;
        for tick in 0..ticks as u64 {
            q = (q + rng.random_range(-2.0..4.0)).clamp(0.0, 50.0);
            if rng.random_bool(0.1) {
                continue;
            }
            out.push(
                Event::new(format!("q{ramp}-{tick}"), EventKind::Calculation, tick * 15, ramp)
                    .with_attr(attr::QUEUE_ESTIMATE, q)
                    .with_attr(attr::QUEUE_FRACTION, q / 50.0),
            );
        }
    }
    out
}

fn logistic(n: usize) -> f64 {
    let c = 1.0 / (1.0 + (5.0 - n as f64).exp());
    c.min(1.0 - 1e-12)
}

/// Trend emission at position `j` of `xs` given the last close before
/// `j`. Returns the run length.
fn run_at(xs: &[f64], start: usize, j: usize) -> usize {
    let mut n = 0;
    let mut i = j;
    while i > start && xs[i] > xs[i - 1] {
        n += 1;
        i -= 1;
    }
    n
}

/// Outputs of the default patterns for one cell, recomputed at every
/// reading from the whole history. Returned with their pattern index.
pub fn reference_cell(th: &Thresholds, loc: u32, rs: &[Reading]) -> Vec<(usize, Event)> {
    let jam = |r: &Reading| r.density > th.density1 && r.speed < th.speed1;
    let free = |r: &Reading| r.density < th.density2 && r.speed > th.speed2;
    let ds: Vec<f64> = rs.iter().map(|r| r.density).collect();
    // (reading index, kind) of every C, CC and PC emitted so far.
    let mut log: Vec<(usize, EventKind)> = Vec::new();
    let mut episodes: Vec<(usize, u64)> = Vec::new();
    let mut out = Vec::new();
    for j in 0..rs.len() {
        let r = rs[j];
        let last = |k: EventKind| log.iter().rev().find(|(_, x)| *x == k).map(|(i, _)| *i);
        let mut now = Vec::new();

        // Congestion: greedy 300-s windows since the last clearing.
        let epoch = last(EventKind::ClearCongestion).map_or(0, |i| i + 1);
        let suppressed = log
            .iter()
            .any(|(i, k)| *i >= epoch && *k == EventKind::Congestion);
        if !suppressed {
            let mut w: Option<(u64, usize)> = None;
            let mut fired = false;
            for (i, x) in rs.iter().enumerate().take(j + 1).skip(epoch) {
                if w.is_some_and(|(t0, _)| x.t > t0 + 300) {
                    w = None;
                }
                if w.is_none() && jam(x) {
                    w = Some((x.t, 0));
                }
                if let Some((_, c)) = w.as_mut() {
                    if jam(x) {
                        *c += 1;
                        if *c == 15 {
                            assert_eq!(i, j, "reference fired twice in one episode");
                            fired = true;
                        }
                    }
                }
            }
            if fired {
                now.push((
                    0,
                    Event::new("", EventKind::Congestion, r.t, loc)
                        .with_attr(attr::DENSITY, r.density)
                        .with_attr(attr::SPEED, r.speed),
                ));
            }
        }

        // Clearing: windows opened by C or PC; after a C an expired
        // window reopens on the next reading.
        let mut w: Option<(u64, usize)> = None;
        let mut rearm = false;
        let mut fired = false;
        for (i, x) in rs.iter().enumerate().take(j + 1).skip(epoch) {
            if w.is_some_and(|(t0, _)| x.t > t0 + 300) {
                w = None;
            }
            if w.is_none() && rearm {
                w = Some((x.t, 0));
            }
            if let Some((_, c)) = w.as_mut() {
                if free(x) {
                    *c += 1;
                    if *c == 15 {
                        assert_eq!(i, j);
                        fired = true;
                    }
                }
            }
            if i < j {
                for (_, k) in log.iter().filter(|(at, _)| *at == i) {
                    if *k == EventKind::Congestion {
                        rearm = true;
                    }
                    if w.is_none() {
                        w = Some((x.t, 0));
                    }
                }
            }
        }
        if fired {
            now.push((
                1,
                Event::new("", EventKind::ClearCongestion, r.t, loc)
                    .with_attr(attr::DENSITY, r.density)
                    .with_attr(attr::SPEED, r.speed),
            ));
        }

        // Rising density since the last C or CC.
        let close = log
            .iter()
            .rev()
            .find(|(_, k)| *k != EventKind::PredictedCongestion)
            .map_or(0, |(i, _)| i + 1);
        if j >= close {
            let n = run_at(&ds, close, j);
            if n >= 5 && r.density >= th.trend_density {
                let ep = match episodes.last() {
                    Some(&(p, e)) if p + n >= j && p >= close => e,
                    Some(&(_, e)) => e + 1,
                    None => 1,
                };
                episodes.push((j, ep));
                now.push((
                    2,
                    Event::new("", EventKind::PredictedCongestion, r.t, loc)
                        .with_attr(attr::DENSITY, r.density)
                        .with_attr(attr::RUN_LENGTH, n as f64)
                        .with_attr(attr::EPISODE, ep as f64)
                        .with_certainty(logistic(n)),
                ));
            }
        }

        // One-minute averages.
        let recent: Vec<&Reading> = rs[..=j].iter().filter(|x| x.t + 60 > r.t).collect();
        let mean = |f: fn(&Reading) -> f64| recent.iter().map(|x| f(x)).sum::<f64>() / recent.len() as f64;
        now.push((
            4,
            Event::new("", EventKind::Calculation, r.t, loc)
                .with_attr(attr::COUNT, recent.len() as f64)
                .with_attr(attr::DENSITY_AVG, mean(|x| x.density))
                .with_attr(attr::SPEED_AVG, mean(|x| x.speed))
                .with_attr(attr::FLOW_AVG, mean(|x| x.flow)),
        ));

        for (_, e) in &now {
            if e.kind != EventKind::Calculation {
                log.push((j, e.kind));
            }
        }
        out.extend(now);
    }
    out
}

/// Rising queue estimates at one ramp.
pub fn reference_ramp(th: &Thresholds, loc: u32, qs: &[QueueCalc]) -> Vec<(usize, Event)> {
    let xs: Vec<f64> = qs.iter().map(|q| q.queue).collect();
    let mut out = Vec::new();
    let mut last: Option<(usize, u64)> = None;
    for j in 0..qs.len() {
        let n = run_at(&xs, 0, j);
        if n >= 5 && qs[j].fraction >= th.trend_queue_fraction {
            let ep = match last {
                Some((p, e)) if p + n >= j => e,
                Some((_, e)) => e + 1,
                None => 1,
            };
            last = Some((j, ep));
            out.push((
                3,
                Event::new("", EventKind::PredictedRampOverflow, qs[j].t, loc)
                    .with_attr(attr::QUEUE_ESTIMATE, qs[j].queue)
                    .with_attr(attr::RUN_LENGTH, n as f64)
                    .with_attr(attr::EPISODE, ep as f64)
                    .with_certainty(logistic(n)),
            ));
        }
    }
    out
}

/// Reference outputs for a whole stream in the engine's output order.
pub fn reference(th: &Thresholds, events: &[Event]) -> Vec<Event> {
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| (e.timestamp, e.location));
    let mut cells: std::collections::BTreeMap<u32, Vec<Reading>> = Default::default();
    let mut ramps: std::collections::BTreeMap<u32, Vec<QueueCalc>> = Default::default();
    for e in &sorted {
        match e.kind {
            EventKind::SensorReading => cells.entry(e.location).or_default().push(Reading {
                t: e.timestamp,
                density: e.attr(attr::DENSITY).unwrap(),
                speed: e.attr(attr::SPEED).unwrap(),
                flow: e.attr(attr::FLOW).unwrap(),
            }),
            EventKind::Calculation => ramps.entry(e.location).or_default().push(QueueCalc {
                t: e.timestamp,
                queue: e.attr(attr::QUEUE_ESTIMATE).unwrap(),
                fraction: e.attr(attr::QUEUE_FRACTION).unwrap(),
            }),
            _ => {}
        }
    }
    let mut all: Vec<(usize, Event)> = Vec::new();
    for (loc, rs) in &cells {
        all.extend(reference_cell(th, *loc, rs));
    }
    for (loc, qs) in &ramps {
        all.extend(reference_ramp(th, *loc, qs));
    }
    all.sort_by(|(pa, a), (pb, b)| {
        (a.timestamp, a.location, a.kind, *pa).cmp(&(b.timestamp, b.location, b.kind, *pb))
    });
    all.into_iter().map(|(_, e)| e).collect()
}

/// Equal up to ids, with attributes and certainty within `tol`.
pub fn same_event(a: &Event, b: &Event, tol: f64) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs()));
    a.kind == b.kind
        && a.timestamp == b.timestamp
        && a.location == b.location
        && a.attributes.len() == b.attributes.len()
        && a.attributes
            .iter()
            .zip(&b.attributes)
            .all(|((ka, va), (kb, vb))| ka == kb && close(*va, *vb))
        && match (a.certainty, b.certainty) {
            (None, None) => true,
            (Some(x), Some(y)) => close(x, y),
            _ => false,
        }
}

/// A random line of cells with ramps and off-ramps that satisfies the
/// CFL condition at a 15-s tick.
pub fn random_network(rng: &mut impl Rng, nonmonotonic: bool) -> rampflow::ctm::FreewayNetwork {
    use rampflow::ctm::{CellSpec, DemandProfile, FreewayNetwork, RampSpec};
    use rampflow::fd::FundamentalDiagram;
    let tick = 15.0 / 3600.0;
    let n = rng.random_range(2..=6);
    let cells = (0..n)
        .map(|_| {
            let rho_c = rng.random_range(20.0..60.0);
            let jam = rng.random_range(rho_c * 2.5..rho_c * 5.0);
            let cap = rho_c * rng.random_range(60.0..110.0);
            let fd = FundamentalDiagram::new(rho_c, jam, cap, rng.random_range(0.0..0.3)).unwrap();
            let min_len = fd.free_flow_speed.max(fd.congestion_wave_speed()) * tick;
            CellSpec {
                length: min_len * rng.random_range(1.0..2.0),
                fd,
                has_sensor: true,
                offramp_split: if rng.random_bool(0.3) { rng.random_range(0.0..0.4) } else { 0.0 },
            }
        })
        .collect();
    let m = rng.random_range(1..=3);
    let ramps = (0..m)
        .map(|i| RampSpec {
            attach_cell: if i == 0 { 0 } else { rng.random_range(0..n) },
            max_queue: rng.random_range(10.0..80.0),
            max_flow: rng.random_range(500.0..3000.0),
            min_flow: 0.0,
            demand: DemandProfile::constant(0.0),
            metered: true,
        })
        .collect();
    FreewayNetwork { cells, ramps, tick, nonmonotonic }
}

/// A random state of `net`: densities up to jam, queues up to capacity.
pub fn random_state(rng: &mut impl Rng, net: &rampflow::ctm::FreewayNetwork) -> rampflow::ctm::SimState {
    let rho = net
        .cells
        .iter()
        .map(|c| rng.random_range(0.0..=c.fd.jam_density))
        .collect();
    let mut s = rampflow::ctm::SimState::new(net, rho, 0);
    for (q, r) in s.queues.iter_mut().zip(&net.ramps) {
        *q = rng.random_range(0.0..=r.max_queue);
    }
    s
}
