//! Cell Transmission Model freeway simulator with metered on-ramps.
//!
//! Cells are numbered downstream. On-ramps merge into the upstream boundary
//! of their attach cell; off-ramps leave at the downstream boundary of a cell
//! with a fixed split ratio. Ramp arrivals wait in a bounded queue and are
//! released at most at the commanded metering rate. Where mainline and ramp
//! demand exceed downstream supply, supply is shared in proportion to the
//! demands.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::event::{attr, Event, EventKind, IdGen, TICK_SECONDS};
use crate::fd::FundamentalDiagram;

/// Density below which a cell is considered empty, veh/km.
const EMPTY_DENSITY: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("metering rate {rate} for ramp {ramp} outside [0, {max}]")]
    CommandOutOfRange { ramp: usize, rate: f64, max: f64 },
    #[error("expected {expected} metering rates, got {got}")]
    CommandCount { expected: usize, got: usize },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("horizon must be positive")]
    EmptyHorizon,
    #[error("controller failed: {0}")]
    Controller(String),
}

/// Piecewise-linear arrival demand over `(seconds, veh/h)` breakpoints,
/// held constant outside the first and last breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DemandProfile {
    pub breakpoints: Vec<(f64, f64)>,
}

impl DemandProfile {
    pub fn constant(vph: f64) -> Self {
        DemandProfile {
            breakpoints: vec![(0.0, vph)],
        }
    }

    pub fn new(mut breakpoints: Vec<(f64, f64)>) -> Self {
        breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        DemandProfile { breakpoints }
    }

    pub fn value_at(&self, seconds: f64) -> f64 {
        let bp = &self.breakpoints;
        match bp.len() {
            0 => 0.0,
            _ if seconds <= bp[0].0 => bp[0].1,
            _ if seconds >= bp[bp.len() - 1].0 => bp[bp.len() - 1].1,
            _ => {
                let i = bp.partition_point(|p| p.0 <= seconds);
                let (t0, v0) = bp[i - 1];
                let (t1, v1) = bp[i];
                if t1 == t0 {
                    v1
                } else {
                    v0 + (v1 - v0) * (seconds - t0) / (t1 - t0)
                }
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DemandProfile {
            breakpoints: self.breakpoints.iter().map(|&(t, v)| (t, v * factor)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    /// km
    pub length: f64,
    pub fd: FundamentalDiagram,
    pub has_sensor: bool,
    /// Fraction of the cell's outflow leaving through an off-ramp at its
    /// downstream boundary.
    pub offramp_split: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampSpec {
    pub attach_cell: usize,
    /// vehicles
    pub max_queue: f64,
    /// veh/h
    pub max_flow: f64,
    /// veh/h
    pub min_flow: f64,
    pub demand: DemandProfile,
    pub metered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreewayNetwork {
    pub cells: Vec<CellSpec>,
    pub ramps: Vec<RampSpec>,
    /// Sampling time in hours.
    pub tick: f64,
    /// Use the capacity-drop demand function.
    pub nonmonotonic: bool,
}

impl FreewayNetwork {
    pub fn tick_seconds(&self) -> u64 {
        (self.tick * 3600.0).round() as u64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidNetwork(m));
        if self.cells.is_empty() {
            return bad("no cells".into());
        }
        if !(self.tick > 0.0) {
            return bad("tick must be positive".into());
        }
        if self.tick_seconds() != TICK_SECONDS {
            return bad(format!(
                "tick must be {TICK_SECONDS} s, got {} s",
                self.tick * 3600.0
            ));
        }
        for (k, c) in self.cells.iter().enumerate() {
            if !(c.length > 0.0) {
                return bad(format!("cell {k} has non-positive length"));
            }
            if !(0.0..1.0).contains(&c.offramp_split) {
                return bad(format!("cell {k} off-ramp split outside [0, 1)"));
            }
            c.fd
                .validate()
                .map_err(|e| SimError::InvalidNetwork(format!("cell {k}: {e}")))?;
            let cfl = c.fd.free_flow_speed.max(c.fd.congestion_wave_speed()) * self.tick;
            if cfl > c.length + 1e-12 {
                return bad(format!(
                    "cell {k} violates the CFL condition ({cfl:.3} km per tick > {} km)",
                    c.length
                ));
            }
        }
        for (i, r) in self.ramps.iter().enumerate() {
            if r.attach_cell >= self.cells.len() {
                return bad(format!("ramp {i} attaches to missing cell {}", r.attach_cell));
            }
            if !(r.max_queue > 0.0) {
                return bad(format!("ramp {i} needs a positive queue capacity"));
            }
            if !(0.0 <= r.min_flow && r.min_flow <= r.max_flow) {
                return bad(format!("ramp {i} needs 0 <= min_flow <= max_flow"));
            }
        }
        Ok(())
    }

    /// Vehicles on the mainline plus all ramp queues.
    pub fn vehicle_count(&self, s: &SimState) -> f64 {
        let mainline: f64 = self
            .cells
            .iter()
            .zip(&s.densities)
            .map(|(c, rho)| c.length * rho)
            .sum();
        mainline + s.queues.iter().sum::<f64>()
    }

    /// Metering rates that leave every ramp unrestricted.
    pub fn open_loop_rates(&self) -> Vec<f64> {
        self.ramps.iter().map(|r| r.max_flow).collect()
    }

    pub fn metered_ramps(&self) -> Vec<usize> {
        (0..self.ramps.len()).filter(|&i| self.ramps[i].metered).collect()
    }

    /// Arrival demand of every ramp at the start of `step`, veh/h.
    pub fn arrivals_at(&self, step: u64) -> Vec<f64> {
        let t = (step * self.tick_seconds()) as f64;
        self.ramps.iter().map(|r| r.demand.value_at(t).max(0.0)).collect()
    }
}

/// Upstream demand `d(rho)`, veh/h.
pub fn demand_fn(fd: &FundamentalDiagram, rho_us: f64, nonmonotonic: bool) -> f64 {
    let rho = rho_us.max(0.0);
    if rho <= fd.critical_density {
        return fd.free_flow_speed * rho;
    }
    if !nonmonotonic {
        return fd.capacity;
    }
    let excess = ((rho - fd.critical_density) / (fd.jam_density - fd.critical_density)).min(1.0);
    fd.capacity * (1.0 - fd.capacity_drop * excess)
}

/// Downstream supply `s(rho)`, veh/h.
pub fn supply_fn(fd: &FundamentalDiagram, rho_ds: f64) -> f64 {
    let rho = rho_ds.max(0.0);
    if rho <= fd.critical_density {
        fd.capacity
    } else {
        (fd.congestion_wave_speed() * (fd.jam_density - rho)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// veh/km per cell
    pub densities: Vec<f64>,
    /// vehicles per ramp
    pub queues: Vec<f64>,
    /// current step index
    pub time: u64,
    pub rng_seed: u64,
    /// Flows of the most recent step; what sensors report.
    pub last: StepFlows,
}

impl SimState {
    pub fn new(net: &FreewayNetwork, densities: Vec<f64>, rng_seed: u64) -> Self {
        let last = StepFlows::zeros(net.cells.len(), net.ramps.len());
        SimState {
            queues: vec![0.0; net.ramps.len()],
            densities,
            time: 0,
            rng_seed,
            last,
        }
    }

    pub fn empty(net: &FreewayNetwork, rng_seed: u64) -> Self {
        SimState::new(net, vec![0.0; net.cells.len()], rng_seed)
    }

    pub fn timestamp(&self) -> u64 {
        self.time * TICK_SECONDS
    }
}

/// Flows realised during one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StepFlows {
    /// Total outflow of each cell (mainline through plus off-ramp), veh/h.
    pub outflows: Vec<f64>,
    /// Total inflow of each cell (mainline through plus merging ramps), veh/h.
    pub inflows: Vec<f64>,
    /// Flow released from each ramp queue, veh/h.
    pub ramp_flows: Vec<f64>,
    /// Arrival demand at each ramp, veh/h.
    pub arrivals: Vec<f64>,
    /// Off-ramp flow at the downstream boundary of each cell, veh/h.
    pub offramp_flows: Vec<f64>,
    /// Flow leaving the last cell, veh/h.
    pub exit_flow: f64,
    /// Vehicles discarded at each ramp because its queue was full.
    pub spill: Vec<f64>,
}

impl StepFlows {
    fn zeros(cells: usize, ramps: usize) -> Self {
        StepFlows {
            outflows: vec![0.0; cells],
            inflows: vec![0.0; cells],
            ramp_flows: vec![0.0; ramps],
            arrivals: vec![0.0; ramps],
            offramp_flows: vec![0.0; cells],
            exit_flow: 0.0,
            spill: vec![0.0; ramps],
        }
    }

    pub fn total_spill(&self) -> f64 {
        self.spill.iter().sum()
    }
}

/// Advances the network by one tick under the given metering rates
/// (one per ramp, veh/h).
pub fn step(net: &FreewayNetwork, s: &SimState, rates: &[f64]) -> Result<SimState, SimError> {
    let arrivals = net.arrivals_at(s.time);
    step_with_arrivals(net, s, rates, &arrivals)
}

/// [`step`] with explicit arrival demand per ramp (veh/h).
pub fn step_with_arrivals(
    net: &FreewayNetwork,
    s: &SimState,
    rates: &[f64],
    arrivals: &[f64],
) -> Result<SimState, SimError> {
    let n = net.cells.len();
    let m = net.ramps.len();
    if rates.len() != m {
        return Err(SimError::CommandCount {
            expected: m,
            got: rates.len(),
        });
    }
    for (i, (&r, spec)) in rates.iter().zip(&net.ramps).enumerate() {
        if !(0.0..=spec.max_flow).contains(&r) {
            return Err(SimError::CommandOutOfRange {
                ramp: i,
                rate: r,
                max: spec.max_flow,
            });
        }
    }
    let t = net.tick;

    // Ramp demand: what the meter would release given queue and arrivals.
    let ramp_demand: Vec<f64> = (0..m)
        .map(|i| rates[i].min(s.queues[i] / t + arrivals[i]))
        .collect();

    let mut f = StepFlows::zeros(n, m);
    f.arrivals = arrivals.to_vec();

    for j in 0..n {
        let (mainline, beta) = if j == 0 {
            (0.0, 0.0)
        } else {
            let up = &net.cells[j - 1];
            let beta = up.offramp_split;
            ((1.0 - beta) * demand_fn(&up.fd, s.densities[j - 1], net.nonmonotonic), beta)
        };
        let ramp_total: f64 = net
            .ramps
            .iter()
            .enumerate()
            .filter(|(_, r)| r.attach_cell == j)
            .map(|(i, _)| ramp_demand[i])
            .sum();
        let supply = supply_fn(&net.cells[j].fd, s.densities[j]);
        let total = mainline + ramp_total;
        let share = if total > supply { supply / total } else { 1.0 };

        let through = mainline * share;
        for (i, r) in net.ramps.iter().enumerate() {
            if r.attach_cell == j {
                f.ramp_flows[i] = ramp_demand[i] * share;
            }
        }
        f.inflows[j] = through + ramp_total * share;
        if j > 0 {
            let outflow = through / (1.0 - beta);
            f.outflows[j - 1] = outflow;
            f.offramp_flows[j - 1] = outflow - through;
        }
    }
    let last = &net.cells[n - 1];
    f.outflows[n - 1] = demand_fn(&last.fd, s.densities[n - 1], net.nonmonotonic);
    f.exit_flow = f.outflows[n - 1];

    let densities: Vec<f64> = (0..n)
        .map(|j| {
            let c = &net.cells[j];
            (s.densities[j] + t / c.length * (f.inflows[j] - f.outflows[j])).max(0.0)
        })
        .collect();

    let mut queues = vec![0.0; m];
    for i in 0..m {
        let q = s.queues[i] + t * (arrivals[i] - f.ramp_flows[i]);
        let cap = net.ramps[i].max_queue;
        if q > cap {
            f.spill[i] = q - cap;
            queues[i] = cap;
        } else {
            queues[i] = q.max(0.0);
        }
    }

    Ok(SimState {
        densities,
        queues,
        time: s.time + 1,
        rng_seed: s.rng_seed,
        last: f,
    })
}

/// Conservation residual of one step: change in vehicle count minus
/// `(inflow - outflow) * T - spill`.
pub fn balance_residual(net: &FreewayNetwork, before: &SimState, after: &SimState) -> f64 {
    let f = &after.last;
    let inflow: f64 = f.arrivals.iter().sum();
    let outflow: f64 = f.offramp_flows.iter().sum::<f64>() + f.exit_flow;
    let expected = (inflow - outflow) * net.tick - f.total_spill();
    net.vehicle_count(after) - net.vehicle_count(before) - expected
}

fn noisy(rng: &mut impl Rng, value: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return value;
    }
    let eps: f64 = StandardNormal.sample(rng);
    (value * (1.0 + sigma * eps)).max(0.0)
}

/// One reading per sensor-equipped cell and one per ramp, with
/// multiplicative Gaussian noise of relative std `sigma` on density, speed
/// and the ramp measurements.
pub fn emit_sensor_events(
    net: &FreewayNetwork,
    s: &SimState,
    sigma: f64,
    rng: &mut impl Rng,
    ids: &mut IdGen,
) -> Vec<Event> {
    let ts = s.timestamp();
    let mut out = Vec::new();
    for (k, c) in net.cells.iter().enumerate() {
        if !c.has_sensor {
            continue;
        }
        let rho = s.densities[k];
        let flow = s.last.outflows.get(k).copied().unwrap_or(0.0);
        let speed = if rho < EMPTY_DENSITY {
            c.fd.free_flow_speed
        } else {
            (flow / rho).min(c.fd.free_flow_speed)
        };
        let rho_m = noisy(rng, rho, sigma);
        let speed_m = noisy(rng, speed, sigma);
        let flow_m = if rho > 0.0 && speed > 0.0 {
            flow * (rho_m / rho) * (speed_m / speed)
        } else {
            flow
        };
        let occupancy = (100.0 * rho_m / c.fd.jam_density).min(100.0);
        out.push(
            Event::new(ids.next_id(), EventKind::SensorReading, ts, k as u32)
                .with_attr(attr::DENSITY, rho_m)
                .with_attr(attr::SPEED, speed_m)
                .with_attr(attr::FLOW, flow_m.max(0.0))
                .with_attr(attr::OCCUPANCY, occupancy),
        );
    }
    for i in 0..net.ramps.len() {
        let q = noisy(rng, s.queues[i], sigma);
        let arr = noisy(rng, s.last.arrivals[i], sigma);
        let rf = noisy(rng, s.last.ramp_flows[i], sigma);
        out.push(
            Event::new(ids.next_id(), EventKind::SensorReading, ts, i as u32)
                .with_attr(attr::QUEUE, q)
                .with_attr(attr::ARRIVAL_FLOW, arr)
                .with_attr(attr::RAMP_FLOW, rf),
        );
    }
    out
}

/// Full record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// State at the start of each step, `horizon` entries.
    pub states: Vec<SimState>,
    pub final_state: SimState,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len()
    }

    /// Flows realised during step `t` (recorded on the following state).
    pub fn flows(&self, t: usize) -> &StepFlows {
        if t + 1 < self.states.len() {
            &self.states[t + 1].last
        } else {
            &self.final_state.last
        }
    }

    pub fn total_spill(&self) -> f64 {
        (0..self.steps()).map(|t| self.flows(t).total_spill()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    /// Sensor events in emission order.
    pub sensor_log: Vec<Event>,
}

/// Closed loop: emit sensors, ask the controller for rates, step.
pub fn run_scenario<R, C>(
    net: &FreewayNetwork,
    initial: SimState,
    horizon: u64,
    sigma: f64,
    rng: &mut R,
    mut controller: C,
) -> Result<RunOutput, SimError>
where
    R: Rng,
    C: FnMut(&SimState, &[Event]) -> Result<Vec<f64>, SimError>,
{
    if horizon == 0 {
        return Err(SimError::EmptyHorizon);
    }
    net.validate()?;
    let mut ids = IdGen::new("sim");
    let mut state = initial;
    let mut states = Vec::with_capacity(horizon as usize);
    let mut sensor_log = Vec::new();
    for _ in 0..horizon {
        let readings = emit_sensor_events(net, &state, sigma, rng, &mut ids);
        let rates = controller(&state, &readings)?;
        sensor_log.extend(readings);
        let next = step(net, &state, &rates)?;
        states.push(state);
        state = next;
    }
    Ok(RunOutput {
        trajectory: Trajectory {
            states,
            final_state: state,
        },
        sensor_log,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn fd85() -> FundamentalDiagram {
        FundamentalDiagram::new(85.0, 170.0, 6000.0, 0.15).unwrap()
    }

    pub(crate) fn line_network(n: usize, nonmonotonic: bool) -> FreewayNetwork {
        let fd = FundamentalDiagram::new(60.0, 180.0, 6000.0, 0.15).unwrap();
        FreewayNetwork {
            cells: (0..n)
                .map(|_| CellSpec {
                    length: 0.5,
                    fd,
                    has_sensor: true,
                    offramp_split: 0.0,
                })
                .collect(),
            ramps: vec![RampSpec {
                attach_cell: 0,
                max_queue: 1e6,
                max_flow: 10_000.0,
                min_flow: 0.0,
                demand: DemandProfile::constant(0.0),
                metered: false,
            }],
            tick: 1.0 / 240.0,
            nonmonotonic,
        }
    }

    #[test]
    fn demand_examples() {
        let fd = fd85();
        assert_eq!(demand_fn(&fd, 0.0, false), 0.0);
        assert_eq!(demand_fn(&fd, 0.0, true), 0.0);
        assert!((demand_fn(&fd, 85.0, false) - 6000.0).abs() < 1e-9);
        assert!((demand_fn(&fd, 85.0, true) - 6000.0).abs() < 1e-9);
        assert!((demand_fn(&fd, 170.0, true) - 5100.0).abs() < 1e-9);
        assert_eq!(demand_fn(&fd, 170.0, false), 6000.0);
    }

    #[test]
    fn supply_examples() {
        let fd = fd85();
        assert_eq!(supply_fn(&fd, 10.0), 6000.0);
        assert_eq!(supply_fn(&fd, 85.0), 6000.0);
        assert_eq!(supply_fn(&fd, 170.0), 0.0);
        assert!((supply_fn(&fd, 127.5) - 3000.0).abs() < 1e-9);
    }

    #[test]
    fn demand_profile_interpolates() {
        let p = DemandProfile::new(vec![(0.0, 0.0), (100.0, 1000.0)]);
        assert_eq!(p.value_at(-5.0), 0.0);
        assert_eq!(p.value_at(50.0), 500.0);
        assert_eq!(p.value_at(500.0), 1000.0);
        assert_eq!(DemandProfile::default().value_at(3.0), 0.0);
    }

    #[test]
    fn empty_network_is_a_fixed_point() {
        let net = line_network(4, true);
        let s = SimState::empty(&net, 1);
        let next = step(&net, &s, &net.open_loop_rates()).unwrap();
        assert_eq!(next.densities, s.densities);
        assert_eq!(next.queues, s.queues);
        assert_eq!(next.time, 1);
    }

    #[test]
    fn eq1_single_cell_update() {
        // Middle cell of three: inflow 1800 from upstream, outflow 1200.
        let fd = FundamentalDiagram::new(85.0, 170.0, 6000.0, 0.0).unwrap();
        let mut net = line_network(3, false);
        for c in &mut net.cells {
            c.fd = fd;
        }
        let up = 1800.0 / fd.free_flow_speed;
        let mid = 30.0;
        let s = SimState::new(&net, vec![up, mid, 0.0], 0);
        // Outflow of the middle cell is its demand v * 30 = 2117.6; force 1200 by
        // choosing a downstream density with supply 1200.
        let rho_ds = fd.jam_density - 1200.0 / fd.congestion_wave_speed();
        let s = SimState {
            densities: vec![up, mid, rho_ds],
            ..s
        };
        let next = step(&net, &s, &net.open_loop_rates()).unwrap();
        assert!((next.densities[1] - 35.0).abs() < 1e-9, "{}", next.densities[1]);
    }

    #[test]
    fn rejects_out_of_range_commands() {
        let net = line_network(2, false);
        let s = SimState::empty(&net, 0);
        assert!(matches!(
            step(&net, &s, &[20_000.0]),
            Err(SimError::CommandOutOfRange { ramp: 0, .. })
        ));
        assert!(matches!(
            step(&net, &s, &[-1.0]),
            Err(SimError::CommandOutOfRange { .. })
        ));
        assert!(matches!(step(&net, &s, &[]), Err(SimError::CommandCount { .. })));
    }

    #[test]
    fn queue_spill_is_counted() {
        let mut net = line_network(2, false);
        net.ramps.push(RampSpec {
            attach_cell: 1,
            max_queue: 5.0,
            max_flow: 2000.0,
            min_flow: 0.0,
            demand: DemandProfile::constant(2400.0),
            metered: true,
        });
        let mut s = SimState::empty(&net, 0);
        let mut spilled = 0.0;
        for _ in 0..10 {
            let next = step(&net, &s, &[10_000.0, 0.0]).unwrap();
            assert!(next.queues[1] <= 5.0);
            assert!(balance_residual(&net, &s, &next).abs() < 1e-9);
            spilled += next.last.total_spill();
            s = next;
        }
        // 10 veh/tick arrive, 5 fit.
        assert!((spilled - 95.0).abs() < 1e-9, "{spilled}");
    }

    #[test]
    fn noiseless_sensors_equal_truth() {
        let net = line_network(3, false);
        let mut s = SimState::new(&net, vec![10.0, 20.0, 30.0], 0);
        s.last.outflows = vec![1000.0, 2000.0, 3000.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ev = emit_sensor_events(&net, &s, 0.0, &mut rng, &mut IdGen::new("t"));
        assert_eq!(ev.len(), 4);
        for (k, e) in ev.iter().take(3).enumerate() {
            assert_eq!(e.attr(attr::DENSITY), Some(s.densities[k]));
            assert_eq!(e.attr(attr::FLOW), Some(s.last.outflows[k]));
            assert_eq!(e.attr(attr::SPEED), Some(100.0));
            e.validate().unwrap();
        }
        assert_eq!(ev[3].scope(), crate::event::Scope::Ramp);
    }

    #[test]
    fn sensors_skip_unequipped_cells() {
        let mut net = line_network(3, false);
        net.cells[1].has_sensor = false;
        let s = SimState::empty(&net, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ev = emit_sensor_events(&net, &s, 0.1, &mut rng, &mut IdGen::new("t"));
        let cells: Vec<u32> = ev
            .iter()
            .filter(|e| e.scope() == crate::event::Scope::Cell)
            .map(|e| e.location)
            .collect();
        assert_eq!(cells, vec![0, 2]);
    }

    #[test]
    fn noise_is_unbiased_on_average() {
        let net = line_network(1, false);
        let s = SimState::new(&net, vec![40.0], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut ids = IdGen::new("t");
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| emit_sensor_events(&net, &s, 0.05, &mut rng, &mut ids)[0].attr(attr::DENSITY).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 40.0).abs() / 40.0 < 0.01, "{mean}");
    }

    #[test]
    fn network_validation() {
        let mut net = line_network(2, false);
        net.cells[0].length = 0.2;
        assert!(net.validate().is_err());
        let mut net = line_network(2, false);
        net.ramps[0].attach_cell = 9;
        assert!(net.validate().is_err());
        let mut net = line_network(2, false);
        net.cells[1].offramp_split = 1.0;
        assert!(net.validate().is_err());
    }
}
