//! The closed loop: sensors, estimation, event processing, coordination,
//! local control and the simulator, advanced one barrier-synchronised tick
//! at a time over the bus.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bus::{Bus, BusError};
use crate::cep::{CepError, Engine};
use crate::control::{ControlError, ControlMode, LocalController, LocalControllerState, Override};
use crate::coordination::{
    fsm_step, pair_ramps, CoordinationError, CoordinationState, Measurement, RampInfo,
};
use crate::ctm::{emit_sensor_events, step, FreewayNetwork, SimError, SimState, Trajectory};
use crate::estimation::{kf_predict, kf_update, EstimationError, FlowInputs, KalmanFilter};
use crate::event::{attr, Event, EventKind, IdGen, Scope, Topic};
use crate::fd::FdEstimator;
use crate::gateway::{CellSnapshot, RampSnapshot, Snapshot};
use crate::metrics::MetricsReport;
use crate::scenario::{ConfigError, ScenarioConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Cep(#[from] CepError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    /// Open loop: every ramp releases at its maximum rate.
    None,
    /// Independent feedback control per metered ramp.
    Local,
    /// Local control plus upstream queue coordination.
    Coordinated,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [
        ControllerKind::None,
        ControllerKind::Local,
        ControllerKind::Coordinated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::None => "none",
            ControllerKind::Local => "local",
            ControllerKind::Coordinated => "coordinated",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown controller `{s}` (none, local, coordinated)"))
    }
}

/// Scripted operator answering suggested coordination activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OperatorPolicy {
    /// Suggestions stay pending until someone else answers.
    #[default]
    Silent,
    AcceptAll,
    RejectAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub controller: ControllerKind,
    pub seed: u64,
    pub horizon: u64,
    /// Compute and publish commands without applying them.
    pub advisory: bool,
    /// Coordination activations wait for an operator decision.
    pub confirm: bool,
    pub operator: OperatorPolicy,
}

impl PipelineOptions {
    pub fn from_scenario(s: &ScenarioConfig, controller: ControllerKind) -> Self {
        PipelineOptions {
            controller,
            seed: s.seed,
            horizon: s.horizon,
            advisory: false,
            confirm: s.coordination.confirm,
            operator: OperatorPolicy::default(),
        }
    }
}

/// Shared queue of operator actions waiting for the next tick boundary.
pub type Inbound = Arc<Mutex<VecDeque<Event>>>;

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub network: FreewayNetwork,
    pub trajectory: Trajectory,
    /// Every published event in publication order.
    pub events: Vec<Event>,
    /// Applied rates per step and ramp, veh/h.
    pub rates: Vec<Vec<f64>>,
    pub metrics: MetricsReport,
}

struct MeteredRamp {
    ramp: usize,
    attach: usize,
    filter: KalmanFilter,
    controller: LocalController,
    prior_critical_density: f64,
    samples: VecDeque<(f64, f64)>,
    last_rate: f64,
}

pub struct Pipeline {
    pub scenario: ScenarioConfig,
    pub network: FreewayNetwork,
    opts: PipelineOptions,
    state: SimState,
    states: Vec<SimState>,
    rates: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    bus: Bus,
    engine: Engine,
    coord: CoordinationState,
    metered: Vec<MeteredRamp>,
    inbound: Inbound,
    sensor_ids: IdGen,
    estimate_ids: IdGen,
    coord_ids: IdGen,
    control_ids: IdGen,
    operator_ids: IdGen,
    estimator: FdEstimator,
}

impl Pipeline {
    pub fn new(scenario: ScenarioConfig, opts: PipelineOptions) -> Result<Self, PipelineError> {
        scenario.validate()?;
        let network = scenario.network(opts.seed)?;
        network.validate()?;
        let engine = Engine::new(scenario.pattern_set())?;
        let mut config = scenario.coordination.clone();
        config.confirm = opts.confirm;

        let sigma = scenario.noise;
        let mut metered = Vec::new();
        let mut infos = Vec::new();
        for i in network.metered_ramps() {
            let r = &network.ramps[i];
            let cell = &network.cells[r.attach_cell];
            let rho_c = cell.fd.critical_density;
            let mut state =
                LocalControllerState::new(scenario.control.gain, rho_c, r.min_flow, r.max_flow, r.max_queue)?;
            state.last_ramp_flow = r.max_flow;
            metered.push(MeteredRamp {
                ramp: i,
                attach: r.attach_cell,
                filter: KalmanFilter::with_defaults(sigma, rho_c, r.max_queue, network.tick, cell.length)?,
                controller: LocalController::new(state, scenario.control.alpha),
                prior_critical_density: rho_c,
                samples: VecDeque::new(),
                last_rate: r.max_flow,
            });
            infos.push(RampInfo {
                ramp: i as u32,
                attach_cell: r.attach_cell as u32,
                cell_length: cell.length,
                critical_density: rho_c,
                capacity: cell.fd.capacity,
                capacity_drop: cell.fd.capacity_drop,
                max_queue: r.max_queue,
                partner: None,
            });
        }
        if opts.controller == ControllerKind::Coordinated {
            infos = pair_ramps(infos);
            // Keep `metered` aligned with the coordinator's ramp order.
            metered.sort_by_key(|m| infos.iter().position(|r| r.ramp as usize == m.ramp));
        }
        let coord = CoordinationState::new(infos, config)?;

        Ok(Pipeline {
            state: SimState::empty(&network, opts.seed),
            states: Vec::with_capacity(opts.horizon as usize),
            rates: Vec::with_capacity(opts.horizon as usize),
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            bus: Bus::new(),
            engine,
            coord,
            metered,
            inbound: Arc::default(),
            sensor_ids: IdGen::new("sen"),
            estimate_ids: IdGen::new("est"),
            coord_ids: IdGen::new("crd"),
            control_ids: IdGen::new("ctl"),
            operator_ids: IdGen::new("op"),
            estimator: FdEstimator::default(),
            scenario,
            network,
            opts,
        })
    }

    pub fn bus_mut(&mut self) -> &mut Bus {
        &mut self.bus
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    /// Queue for operator actions arriving from outside (gateway clients).
    pub fn inbound(&self) -> Inbound {
        self.inbound.clone()
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn coordination(&self) -> &CoordinationState {
        &self.coord
    }

    pub fn tick_index(&self) -> u64 {
        self.state.time
    }

    pub fn is_done(&self) -> bool {
        self.state.time >= self.opts.horizon
    }

    pub fn snapshot(&self) -> Snapshot {
        let last_rates = self.rates.last();
        Snapshot {
            timestamp: self.state.timestamp(),
            cells: self
                .state
                .densities
                .iter()
                .enumerate()
                .map(|(k, &d)| CellSnapshot {
                    cell: k as u32,
                    density: d,
                })
                .collect(),
            ramps: self
                .state
                .queues
                .iter()
                .enumerate()
                .map(|(i, &q)| RampSnapshot {
                    ramp: i as u32,
                    queue: q,
                    rate: last_rates.map_or(self.network.ramps[i].max_flow, |r| r[i]),
                    mode: self
                        .metered
                        .iter()
                        .find(|m| m.ramp == i)
                        .map_or(0.0, |m| m.controller.state.mode.code()),
                })
                .collect(),
        }
    }

    /// Advances the loop by one tick. Order: operator inbound, sensors,
    /// estimation and event processing, coordination, local control,
    /// simulator step.
    pub fn tick(&mut self) -> Result<(), PipelineError> {
        let tick = self.state.time;
        let ts = self.state.timestamp();

        let operator = self.drain_operator(ts)?;

        let readings = emit_sensor_events(
            &self.network,
            &self.state,
            self.scenario.noise,
            &mut self.rng,
            &mut self.sensor_ids,
        );
        for e in &readings {
            self.bus.publish(Topic::Sensors, e.clone())?;
        }
        let (cells, ramps) = index_readings(&self.network, &readings);

        let estimates = self.estimate(ts, &cells, &ramps)?;
        for e in &estimates {
            self.bus.publish(Topic::Derived, e.clone())?;
        }
        let mut cep_input = readings.clone();
        cep_input.extend(estimates);
        let derived = self.engine.epn_step(&cep_input);
        for e in &derived {
            self.bus.publish(Topic::Derived, e.clone())?;
        }

        let rates = if self.opts.controller == ControllerKind::None {
            self.network.open_loop_rates()
        } else {
            self.coordinate(tick, &derived, &operator)?;
            self.control(ts, &ramps)?
        };
        let applied = if self.opts.advisory {
            self.network.open_loop_rates()
        } else {
            rates
        };

        if self.scenario.control.refit_every > 0
            && tick > 0
            && tick % self.scenario.control.refit_every == 0
        {
            self.refit();
        }

        let next = step(&self.network, &self.state, &applied)?;
        self.rates.push(applied);
        self.states.push(std::mem::replace(&mut self.state, next));
        Ok(())
    }

    fn drain_operator(&mut self, ts: u64) -> Result<Vec<Event>, PipelineError> {
        let pending: Vec<Event> = self.inbound.lock().expect("inbound poisoned").drain(..).collect();
        let mut out = Vec::new();
        for mut e in pending {
            e.timestamp = ts;
            if e.id.is_empty() {
                e.id = self.operator_ids.next_id();
            }
            self.bus.publish(Topic::Operator, e.clone())?;
            if let Some(m) = self.metered.iter_mut().find(|m| m.ramp as u32 == e.location) {
                let value = e.attr(attr::VALUE).unwrap_or(0.0);
                match (e.attr(attr::ACTION), e.attr(attr::DECISION)) {
                    (Some(a), Some(d)) if a != 0.0 && d == 2.0 => m.controller.clear_overrides(),
                    (Some(1.0), Some(_)) => m.controller.apply_override(Override::PinRate(value)),
                    (Some(2.0), Some(_)) => m.controller.apply_override(Override::MinRate(value)),
                    _ => {}
                }
            }
            out.push(e);
        }
        Ok(out)
    }

    fn estimate(
        &mut self,
        ts: u64,
        cells: &[Option<&Event>],
        ramps: &[Option<&Event>],
    ) -> Result<Vec<Event>, PipelineError> {
        let net = &self.network;
        let mut out = Vec::new();
        for m in &mut self.metered {
            let a = m.attach;
            let flow_of = |k: usize| cells[k].and_then(|e| e.attr(attr::FLOW));
            let mut inflow = 0.0;
            if a > 0 {
                let beta = net.cells[a - 1].offramp_split;
                inflow += (1.0 - beta) * flow_of(a - 1).unwrap_or(0.0);
            }
            for (i, r) in net.ramps.iter().enumerate() {
                if r.attach_cell == a {
                    inflow += ramps[i].and_then(|e| e.attr(attr::RAMP_FLOW)).unwrap_or(0.0);
                }
            }
            let own = ramps[m.ramp];
            let u = FlowInputs {
                inflow,
                outflow: flow_of(a).unwrap_or(0.0),
                arrivals: own.and_then(|e| e.attr(attr::ARRIVAL_FLOW)).unwrap_or(0.0),
                ramp_flow: own.and_then(|e| e.attr(attr::RAMP_FLOW)).unwrap_or(0.0),
            };
            let predicted = kf_predict(&m.filter, &u);
            let z_rho = cells[a].and_then(|e| e.attr(attr::DENSITY));
            let z_q = own.and_then(|e| e.attr(attr::QUEUE));
            m.filter = match (z_rho, z_q) {
                (Some(r), Some(q)) => kf_update(&predicted, (r, q))?,
                _ => predicted,
            };
            if let (Some(r), Some(f)) = (z_rho, flow_of(a)) {
                m.samples.push_back((r, f));
                while m.samples.len() > self.scenario.control.refit_every.max(1) as usize {
                    m.samples.pop_front();
                }
            }
            let q_bar = net.ramps[m.ramp].max_queue;
            let q = m.filter.queue().clamp(0.0, q_bar);
            out.push(
                Event::new(self.estimate_ids.next_id(), EventKind::Calculation, ts, m.ramp as u32)
                    .with_attr(attr::DENSITY_ESTIMATE, m.filter.density().max(0.0))
                    .with_attr(attr::QUEUE_ESTIMATE, q)
                    .with_attr(attr::QUEUE_FRACTION, q / q_bar),
            );
        }
        Ok(out)
    }

    fn measurements(&self) -> Vec<Measurement> {
        self.metered
            .iter()
            .map(|m| Measurement {
                rho: m.filter.density().max(0.0),
                queue: m.filter.queue().clamp(0.0, self.network.ramps[m.ramp].max_queue),
            })
            .collect()
    }

    fn coordinate(&mut self, tick: u64, derived: &[Event], operator: &[Event]) -> Result<(), PipelineError> {
        let mut inputs = derived.to_vec();
        inputs.extend(operator.iter().cloned());
        let meas = self.measurements();
        let (next, out) = fsm_step(&self.coord, &inputs, &meas, tick, &mut self.coord_ids);
        self.coord = next;
        for e in &out.events {
            self.bus.publish(Topic::Commands, e.clone())?;
            if e.attr(attr::SUGGESTED) == Some(1.0) {
                self.answer_suggestion(e);
            }
        }
        for (m, (mode, target)) in self.metered.iter_mut().zip(out.modes.iter().zip(&out.targets)) {
            m.controller.state.mode = *mode;
            m.controller.state.desired_queue = target.unwrap_or(0.0);
        }
        Ok(())
    }

    fn answer_suggestion(&mut self, suggestion: &Event) {
        let decision = match self.opts.operator {
            OperatorPolicy::Silent => return,
            OperatorPolicy::AcceptAll => 0.0,
            OperatorPolicy::RejectAll => 2.0,
        };
        let Some(from) = suggestion.attr(attr::REQUESTING_RAMP) else {
            return;
        };
        let action = Event::new(
            self.operator_ids.next_id(),
            EventKind::OperatorAction,
            suggestion.timestamp,
            from as u32,
        )
        .with_attr(attr::ACTION, 0.0)
        .with_attr(attr::DECISION, decision)
        .with_attr(attr::VALUE, 0.0);
        self.inbound.lock().expect("inbound poisoned").push_back(action);
    }

    fn control(&mut self, ts: u64, ramps: &[Option<&Event>]) -> Result<Vec<f64>, PipelineError> {
        let mut rates = self.network.open_loop_rates();
        let dt = self.network.tick * self.scenario.control.saturation_ticks as f64;
        let meas = self.measurements();
        for (m, z) in self.metered.iter_mut().zip(meas) {
            let reading = ramps[m.ramp];
            let arrivals = reading.and_then(|e| e.attr(attr::ARRIVAL_FLOW));
            let ramp_flow = reading
                .and_then(|e| e.attr(attr::RAMP_FLOW))
                .unwrap_or(m.last_rate);
            if let Some(a) = arrivals {
                m.controller.observe_arrivals(a);
            }
            let out = m.controller.step(z.rho, z.queue, ramp_flow, dt)?;
            m.last_rate = out.rate;
            rates[m.ramp] = out.rate;
            let cmd = Event::new(
                self.control_ids.next_id(),
                EventKind::ControlCommand,
                ts,
                m.ramp as u32,
            )
            .with_attr(attr::RATE, out.rate)
            .with_attr(attr::MODE, out.mode.code())
            .with_attr(attr::DESIRED_QUEUE, m.controller.state.effective_desired_queue());
            self.bus.publish(Topic::Commands, cmd)?;
        }
        Ok(rates)
    }

    /// Re-estimates each metered ramp's critical density from the last
    /// window of merge-cell readings. Fits far from the configured value or
    /// without both regimes in the window are ignored.
    fn refit(&mut self) {
        for (i, m) in self.metered.iter_mut().enumerate() {
            let samples: Vec<(f64, f64)> = m.samples.iter().copied().collect();
            let Ok(fd) = self.estimator.estimate_critical_density(&samples) else {
                continue;
            };
            let rho_c = fd.critical_density;
            let prior = m.prior_critical_density;
            if (0.8 * prior..=1.2 * prior).contains(&rho_c) {
                m.controller.state.target_density = rho_c;
                self.coord.ramps[i].critical_density = rho_c;
            }
        }
    }

    /// Runs to the horizon.
    pub fn run(mut self) -> Result<RunResult, PipelineError> {
        while !self.is_done() {
            self.tick()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunResult {
        let trajectory = Trajectory {
            states: self.states,
            final_state: self.state,
        };
        let metrics = MetricsReport::from_run(&self.network, &trajectory);
        RunResult {
            network: self.network,
            trajectory,
            events: self.bus.log().to_vec(),
            rates: self.rates,
            metrics,
        }
    }
}

/// Readings by cell and by ramp index.
fn index_readings<'a>(
    net: &FreewayNetwork,
    readings: &'a [Event],
) -> (Vec<Option<&'a Event>>, Vec<Option<&'a Event>>) {
    let mut cells = vec![None; net.cells.len()];
    let mut ramps = vec![None; net.ramps.len()];
    for e in readings {
        let slot = match e.scope() {
            Scope::Cell => cells.get_mut(e.location as usize),
            Scope::Ramp => ramps.get_mut(e.location as usize),
        };
        if let Some(s) = slot {
            *s = Some(e);
        }
    }
    (cells, ramps)
}

/// Convenience: runs `scenario` under `controller` with its own seed and
/// horizon.
pub fn run_controller(
    scenario: &ScenarioConfig,
    controller: ControllerKind,
    seed: u64,
) -> Result<RunResult, PipelineError> {
    let opts = PipelineOptions {
        seed,
        ..PipelineOptions::from_scenario(scenario, controller)
    };
    Pipeline::new(scenario.clone(), opts)?.run()
}

/// Mode of every metered ramp at the end of a run, for diagnostics.
pub fn final_modes(p: &Pipeline) -> Vec<(usize, ControlMode)> {
    p.metered.iter().map(|m| (m.ramp, m.controller.state.mode)).collect()
}
