use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rampflow::bus::{parse_ndjson, replay, Bus, ReplaySpeed};
use rampflow::cep::Engine;
use rampflow::event::{EventKind, TICK_SECONDS};
use rampflow::fd::FdEstimator;
use rampflow::gateway::Gateway;
use rampflow::io::{self, QueueRow, SampleRow, TrajectoryRow};
use rampflow::metrics::{
    lead_stats, precision_recall, route_free_flow_time, relative_savings, tts_from_series,
    MetricsReport,
};
use rampflow::pipeline::{ControllerKind, OperatorPolicy, Pipeline, PipelineOptions};
use rampflow::scenario::{default_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "rampflow", version, about = "Event-driven freeway ramp metering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Controller {
    None,
    Local,
    Coordinated,
}

impl From<Controller> for ControllerKind {
    fn from(c: Controller) -> Self {
        match c {
            Controller::None => ControllerKind::None,
            Controller::Local => ControllerKind::Local,
            Controller::Coordinated => ControllerKind::Coordinated,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Operator {
    /// Suggestions stay pending.
    Silent,
    Accept,
    Reject,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario TOML; the shipped 45-cell scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "coordinated")]
    controller: Controller,
    /// Ticks of 15 s; defaults to the scenario's.
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Coordination activations wait for an operator decision.
    #[arg(long)]
    confirm: bool,
    /// Publish commands without applying them.
    #[arg(long)]
    advisory: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write trajectory, queues, events and metrics.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// How suggested coordinations are answered under --confirm.
        #[arg(long, value_enum, default_value = "accept")]
        operator: Operator,
    },
    /// Publish a recorded NDJSON log on a bus, optionally re-deriving events.
    Replay {
        #[arg(long)]
        events: PathBuf,
        /// Wall seconds per simulated second; as fast as possible if omitted.
        #[arg(long)]
        scale: Option<f64>,
        /// Re-run event processing over the sensor readings and write the
        /// derived events here.
        #[arg(long)]
        derive: Option<PathBuf>,
        /// Patterns and thresholds for --derive.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Metrics of a simulate output directory.
    Evaluate {
        #[arg(long)]
        run_dir: PathBuf,
        /// Scenario the run used (for cell lengths and routes).
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Output directory of a reference run for savings.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// CSV of annotated congestion episodes (location, start, end).
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = 0.6)]
        certainty: f64,
        /// Where to write the JSON report; stdout table only if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a fundamental diagram to (density, flow) samples.
    FitFd {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        grid_step: f64,
    },
    /// Run the loop live and serve it to dashboards over TCP.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Wall time per tick.
        #[arg(long, default_value_t = 1000)]
        tick_ms: u64,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure::Config(e.to_string())
    }
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<rampflow::pipeline::PipelineError> for Failure {
    fn from(e: rampflow::pipeline::PipelineError) -> Self {
        match e {
            rampflow::pipeline::PipelineError::Config(c) => Failure::config(c),
            other => Failure::runtime(other),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            run,
            out_dir,
            operator,
        } => simulate(run, &out_dir, operator),
        Command::Replay {
            events,
            scale,
            derive,
            scenario,
        } => replay_cmd(&events, scale, derive.as_deref(), scenario.as_deref()),
        Command::Evaluate {
            run_dir,
            scenario,
            baseline,
            annotations,
            certainty,
            out,
        } => evaluate(
            &run_dir,
            scenario.as_deref(),
            baseline.as_deref(),
            annotations.as_deref(),
            certainty,
            out.as_deref(),
        ),
        Command::FitFd {
            samples,
            out_dir,
            grid_step,
        } => fit_fd(&samples, &out_dir, grid_step),
        Command::Serve {
            run,
            addr,
            tick_ms,
        } => serve(run, &addr, tick_ms),
    }
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p).map_err(Failure::config),
        None => Ok(default_scenario()),
    }
}

fn options(run: &RunArgs, s: &ScenarioConfig) -> Result<PipelineOptions> {
    let mut o = PipelineOptions::from_scenario(s, run.controller.into());
    if let Some(h) = run.horizon {
        if h == 0 {
            return Err(Failure::config("--horizon must be positive"));
        }
        o.horizon = h;
    }
    if let Some(seed) = run.seed {
        o.seed = seed;
    }
    o.confirm |= run.confirm;
    o.advisory = run.advisory;
    Ok(o)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))
}

fn simulate(run: RunArgs, out_dir: &Path, operator: Operator) -> Result<()> {
    let scenario = load_scenario(run.scenario.as_deref())?;
    let mut opts = options(&run, &scenario)?;
    opts.operator = match operator {
        Operator::Silent => OperatorPolicy::Silent,
        Operator::Accept => OperatorPolicy::AcceptAll,
        Operator::Reject => OperatorPolicy::RejectAll,
    };
    let result = Pipeline::new(scenario, opts)?.run()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let io_err = Failure::runtime;
    io::write_csv(create(&out_dir.join("trajectory.csv"))?, &io::trajectory_rows(&result.trajectory))
        .map_err(io_err)?;
    io::write_csv(
        create(&out_dir.join("queues.csv"))?,
        &io::queue_rows(&result.trajectory, &result.rates),
    )
    .map_err(io_err)?;
    io::write_events(create(&out_dir.join("events.ndjson"))?, &result.events).map_err(io_err)?;
    io::write_metrics(create(&out_dir.join("metrics.json"))?, &result.metrics).map_err(io_err)?;
    print!("{}", result.metrics.table());
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn replay_cmd(
    events: &Path,
    scale: Option<f64>,
    derive: Option<&Path>,
    scenario: Option<&Path>,
) -> Result<()> {
    let speed = match scale {
        Some(s) if s.is_finite() && s >= 0.0 => ReplaySpeed::RealTime { scale: s },
        Some(s) => return Err(Failure::config(format!("--scale must be >= 0, got {s}"))),
        None => ReplaySpeed::AsFastAsPossible,
    };
    let mut bus = Bus::new();
    let n = replay(open(events)?, &mut bus, speed).map_err(Failure::runtime)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in bus.log() {
        *counts.entry(e.topic().to_string()).or_default() += 1;
    }
    println!("replayed {n} events");
    for (t, c) in &counts {
        println!("  {t:<10} {c}");
    }
    if let Some(out) = derive {
        let s = load_scenario(scenario)?;
        let mut engine = Engine::new(s.pattern_set()).map_err(Failure::config)?;
        let mut derived = Vec::new();
        let readings: Vec<_> = bus
            .log()
            .iter()
            .filter(|e| e.kind == EventKind::SensorReading)
            .cloned()
            .collect();
        for chunk in readings.chunk_by(|a, b| a.timestamp == b.timestamp) {
            derived.extend(engine.epn_step(chunk));
        }
        io::write_events(create(out)?, &derived).map_err(Failure::runtime)?;
        println!("derived {} events into {}", derived.len(), out.display());
    }
    Ok(())
}

fn evaluate(
    run_dir: &Path,
    scenario: Option<&Path>,
    baseline: Option<&Path>,
    annotations: Option<&Path>,
    certainty: f64,
    out: Option<&Path>,
) -> Result<()> {
    let s = load_scenario(scenario)?;
    let net = s.network(s.seed).map_err(Failure::config)?;
    let mut report = metrics_of_dir(run_dir, &net)?;
    if let Some(b) = baseline {
        let base = metrics_of_dir(b, &net)?;
        report.savings = Some(relative_savings(base.tts, report.tts, base.tft).map_err(Failure::runtime)?);
    }
    if let Some(a) = annotations {
        let ann = io::read_annotations(open(a)?).map_err(Failure::config)?;
        let events = parse_ndjson(open(&run_dir.join("events.ndjson"))?).map_err(Failure::runtime)?;
        let det = precision_recall(&events, EventKind::Congestion, &ann, certainty)
            .map_err(Failure::config)?;
        let fc = precision_recall(&events, EventKind::PredictedCongestion, &ann, certainty)
            .map_err(Failure::config)?;
        report.precision = Some(det.precision);
        report.recall = Some(det.recall);
        report.lead_time = lead_stats(&fc.lead_times);
    }
    print!("{}", report.table());
    if let Some(o) = out {
        io::write_metrics(create(o)?, &report).map_err(Failure::runtime)?;
    }
    Ok(())
}

/// Time spent and free-flow time recomputed from the CSV outputs.
fn metrics_of_dir(dir: &Path, net: &rampflow::ctm::FreewayNetwork) -> Result<MetricsReport> {
    let traj: Vec<TrajectoryRow> =
        io::read_csv(open(&dir.join("trajectory.csv"))?).map_err(Failure::runtime)?;
    let queues: Vec<QueueRow> =
        io::read_csv(open(&dir.join("queues.csv"))?).map_err(Failure::runtime)?;
    let rho = io::by_step(&traj, |r| (r.step, r.cell), |r| r.density).map_err(Failure::runtime)?;
    let q = io::by_step(&queues, |r| (r.step, r.ramp), |r| r.queue).map_err(Failure::runtime)?;
    if rho.len() != q.len() {
        return Err(Failure::runtime("trajectory and queue files cover different steps"));
    }
    if rho.first().is_some_and(|r| r.len() != net.cells.len())
        || q.first().is_some_and(|r| r.len() != net.ramps.len())
    {
        return Err(Failure::config("run does not match the scenario's network"));
    }
    let lengths: Vec<f64> = net.cells.iter().map(|c| c.length).collect();
    let tts = tts_from_series(
        net.tick,
        &lengths,
        rho.iter().zip(&q).map(|(r, q)| (r.as_slice(), q.as_slice())),
    );
    let routes: Vec<f64> = net
        .ramps
        .iter()
        .map(|r| route_free_flow_time(net, r.attach_cell))
        .collect();
    let tft = queues
        .iter()
        .map(|r| (r.arrival * net.tick - r.spill).max(0.0) * routes[r.ramp])
        .sum();
    Ok(MetricsReport {
        tts,
        tft,
        spill: queues.iter().map(|r| r.spill).sum(),
        savings: None,
        precision: None,
        recall: None,
        lead_time: None,
    })
}

#[derive(Serialize)]
struct FdSummary {
    samples: usize,
    critical_density: f64,
    capacity: f64,
    jam_density: f64,
    free_flow_speed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    capacity_drop: Option<f64>,
}

fn fit_fd(samples: &Path, out_dir: &Path, grid_step: f64) -> Result<()> {
    if !(grid_step > 0.0) {
        return Err(Failure::config("--grid-step must be positive"));
    }
    let rows: Vec<SampleRow> = io::read_csv(open(samples)?).map_err(Failure::config)?;
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.density, r.flow)).collect();
    let est = FdEstimator::default();
    let fd = est.estimate_critical_density(&pairs).map_err(Failure::runtime)?;
    let triples: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| r.density_downstream.map(|d| (r.density, d, r.flow)))
        .collect();
    let capacity_drop = if triples.is_empty() {
        None
    } else {
        Some(est.estimate_capacity_drop(&triples).map_err(Failure::runtime)?)
    };
    let model = est.fit_1d(&pairs).map_err(Failure::runtime)?;
    let hi = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let grid = est
        .prediction_grid(&model, 0.0, hi, grid_step)
        .map_err(Failure::runtime)?;
    let summary = FdSummary {
        samples: rows.len(),
        critical_density: fd.critical_density,
        capacity: fd.capacity,
        jam_density: fd.jam_density,
        free_flow_speed: fd.free_flow_speed,
        capacity_drop,
    };
    std::fs::create_dir_all(out_dir).map_err(Failure::runtime)?;
    let mut w = create(&out_dir.join("fd.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(Failure::runtime)?;
    io::write_prediction_grid(create(&out_dir.join("prediction_grid.csv"))?, &grid)
        .map_err(Failure::runtime)?;
    println!(
        "critical density {:.2} veh/km, capacity {:.0} veh/h, jam density {:.1} veh/km, free-flow speed {:.1} km/h",
        fd.critical_density, fd.capacity, fd.jam_density, fd.free_flow_speed
    );
    if let Some(d) = capacity_drop {
        println!("capacity drop {:.3}", d);
    }
    Ok(())
}

fn serve(run: RunArgs, addr: &str, tick_ms: u64) -> Result<()> {
    let scenario = load_scenario(run.scenario.as_deref())?;
    let opts = options(&run, &scenario)?;
    let mut p = Pipeline::new(scenario, opts)?;
    let gw = Gateway::bind(addr, p.inbound(), p.snapshot())
        .map_err(|e| Failure::runtime(format!("cannot listen on {addr}: {e}")))?;
    gw.attach(p.bus_mut());
    eprintln!("serving on {}", gw.local_addr());
    while !p.is_done() {
        p.tick()?;
        gw.update_snapshot(p.snapshot());
        std::thread::sleep(Duration::from_millis(tick_ms));
    }
    let r = p.finish();
    print!("{}", r.metrics.table());
    eprintln!("finished after {} s of traffic", r.trajectory.steps() as u64 * TICK_SECONDS);
    gw.shutdown();
    Ok(())
}
