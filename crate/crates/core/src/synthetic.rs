//! Synthetic sensor streams with ground-truth congestion annotations, for
//! scoring detection and forecasting.
//!
//! Each cell gets a few episodes of one of four shapes:
//! * `Buildup`: density climbs steadily into congestion, holds, recovers.
//! * `Jump`: congestion appears within one tick, holds, recovers.
//! * `Light`: density just crosses the annotation rule but stays below the
//!   detection thresholds.
//! * `Surge`: density rises but stays below critical; never annotated.
//!
//! Readings follow a triangular diagram and carry multiplicative noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cep::{default_patterns, CepError, Engine, Thresholds};
use crate::event::{attr, Event, EventKind, IdGen, TICK_SECONDS};
use crate::metrics::Annotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeShape {
    Buildup,
    Jump,
    Light,
    Surge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub cells: u32,
    pub ticks: u64,
    pub critical_density: f64,
    pub jam_density: f64,
    pub free_flow_speed: f64,
    /// Background density, veh/km.
    pub free_density: f64,
    /// Relative sensor noise.
    pub noise: f64,
    /// Annotated while true density is at least this...
    pub annotate_density: f64,
    /// ...and true speed at most this...
    pub annotate_speed: f64,
    /// ...for at least this many ticks.
    pub annotate_min_ticks: u64,
    /// Relative weights of Buildup, Jump, Light and Surge.
    pub weights: [f64; 4],
    pub episodes_per_cell: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            cells: 8,
            ticks: 720,
            critical_density: 60.0,
            jam_density: 180.0,
            free_flow_speed: 100.0,
            free_density: 20.0,
            noise: 0.02,
            annotate_density: 60.0,
            annotate_speed: 95.0,
            annotate_min_ticks: 8,
            weights: [0.6, 0.15, 0.25, 0.15],
            episodes_per_cell: 3,
        }
    }
}

impl SyntheticConfig {
    /// Equilibrium speed on the triangular diagram, km/h.
    pub fn speed(&self, density: f64) -> f64 {
        if density <= self.critical_density {
            self.free_flow_speed
        } else {
            let w = self.free_flow_speed * self.critical_density
                / (self.jam_density - self.critical_density);
            w * (self.jam_density - density) / density
        }
    }

    /// Detection thresholds strictly tighter than the annotation rule:
    /// higher density, lower speed.
    pub fn thresholds(&self) -> Thresholds {
        let rho_c = self.critical_density;
        Thresholds {
            density1: 1.1 * self.annotate_density,
            speed1: self.annotate_speed - 10.0,
            density2: 0.7 * rho_c,
            speed2: self.annotate_speed,
            trend_density: 0.5 * rho_c,
            trend_queue_fraction: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub cell: u32,
    pub shape: EpisodeShape,
    /// First tick of the episode.
    pub start: u64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRun {
    pub readings: Vec<Event>,
    pub annotations: Vec<Annotation>,
    pub episodes: Vec<Episode>,
    /// True density per tick, per cell.
    pub truth: Vec<Vec<f64>>,
}

fn pick_shape(rng: &mut ChaCha8Rng, w: &[f64; 4]) -> EpisodeShape {
    let total: f64 = w.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, s) in [
        EpisodeShape::Buildup,
        EpisodeShape::Jump,
        EpisodeShape::Light,
        EpisodeShape::Surge,
    ]
    .into_iter()
    .enumerate()
    {
        if x < w[i] {
            return s;
        }
        x -= w[i];
    }
    EpisodeShape::Surge
}

/// `(rise, hold, fall)` in ticks and the peak density.
fn profile(rng: &mut ChaCha8Rng, shape: EpisodeShape, cfg: &SyntheticConfig) -> (u64, u64, u64, f64) {
    let rho_c = cfg.critical_density;
    match shape {
        EpisodeShape::Buildup => (
            rng.random_range(18..=26),
            rng.random_range(25..=40),
            rng.random_range(10..=20),
            rng.random_range(1.45 * rho_c..=1.8 * rho_c),
        ),
        EpisodeShape::Jump => (
            1,
            rng.random_range(25..=40),
            rng.random_range(10..=20),
            rng.random_range(1.45 * rho_c..=1.8 * rho_c),
        ),
        EpisodeShape::Light => (
            rng.random_range(10..=14),
            rng.random_range(15..=25),
            rng.random_range(8..=12),
            rng.random_range(1.05 * rho_c..=1.08 * rho_c),
        ),
        EpisodeShape::Surge => (
            rng.random_range(8..=12),
            rng.random_range(3..=8),
            rng.random_range(8..=12),
            rng.random_range(0.7 * rho_c..=0.85 * rho_c),
        ),
    }
}

fn noisy(rng: &mut ChaCha8Rng, v: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return v;
    }
    let eps: f64 = StandardNormal.sample(rng);
    (v * (1.0 + sigma * eps)).max(0.0)
}

/// Intervals where the rule holds for at least `annotate_min_ticks`.
pub fn annotate(cfg: &SyntheticConfig, cell: u32, densities: &[f64]) -> Vec<Annotation> {
    let hit = |r: f64| r >= cfg.annotate_density && cfg.speed(r) <= cfg.annotate_speed;
    let mut out = Vec::new();
    let mut t = 0;
    while t < densities.len() {
        if !hit(densities[t]) {
            t += 1;
            continue;
        }
        let s = t;
        while t < densities.len() && hit(densities[t]) {
            t += 1;
        }
        if (t - s) as u64 >= cfg.annotate_min_ticks {
            out.push(Annotation {
                location: cell,
                start: s as u64 * TICK_SECONDS,
                end: (t - 1) as u64 * TICK_SECONDS,
            });
        }
    }
    out
}

/// One annotated run; deterministic in `seed`.
pub fn generate(cfg: &SyntheticConfig, seed: u64) -> SyntheticRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.ticks as usize;
    let mut truth = vec![vec![cfg.free_density; n]; cfg.cells as usize];
    let mut episodes = Vec::new();
    // Episodes are spread over equal slots so that they neither overlap
    // nor fall inside each other's matching window.
    let slots = cfg.episodes_per_cell.max(1) as u64;
    let slot = cfg.ticks / slots;
    for cell in 0..cfg.cells {
        for k in 0..slots {
            let shape = pick_shape(&mut rng, &cfg.weights);
            let (rise, hold, fall, peak) = profile(&mut rng, shape, cfg);
            let len = rise + hold + fall;
            if len + 40 > slot {
                continue;
            }
            let start = k * slot + rng.random_range(20..=slot - len - 20);
            let base = cfg.free_density;
            for i in 0..len {
                let t = (start + i) as usize;
                let rho = if i < rise {
                    base + (peak - base) * (i + 1) as f64 / rise as f64
                } else if i < rise + hold {
                    peak
                } else {
                    peak - (peak - base) * (i - rise - hold + 1) as f64 / fall as f64
                };
                truth[cell as usize][t] = rho;
            }
            episodes.push(Episode {
                cell,
                shape,
                start,
                peak,
            });
        }
    }
    let annotations = (0..cfg.cells)
        .flat_map(|c| annotate(cfg, c, &truth[c as usize]))
        .collect();
    let mut ids = IdGen::new("syn");
    let mut readings = Vec::with_capacity(n * cfg.cells as usize);
    for t in 0..n {
        for cell in 0..cfg.cells {
            let rho = truth[cell as usize][t];
            let v = cfg.speed(rho);
            let rho_m = noisy(&mut rng, rho, cfg.noise);
            let v_m = noisy(&mut rng, v, cfg.noise);
            readings.push(
                Event::new(ids.next_id(), EventKind::SensorReading, t as u64 * TICK_SECONDS, cell)
                    .with_attr(attr::DENSITY, rho_m)
                    .with_attr(attr::SPEED, v_m)
                    .with_attr(attr::FLOW, rho_m * v_m)
                    .with_attr(
                        attr::OCCUPANCY,
                        (100.0 * rho_m / cfg.jam_density).min(100.0),
                    ),
            );
        }
    }
    SyntheticRun {
        readings,
        annotations,
        episodes,
        truth,
    }
}

/// Readings grouped by tick, in order.
pub fn by_tick(readings: &[Event]) -> Vec<Vec<Event>> {
    let mut out: Vec<Vec<Event>> = Vec::new();
    for e in readings {
        let t = e.tick() as usize;
        if out.len() <= t {
            out.resize_with(t + 1, Vec::new);
        }
        out[t].push(e.clone());
    }
    out
}

/// Derived events of the default patterns over a run, tick by tick.
pub fn detect(run: &SyntheticRun, thresholds: &Thresholds) -> Result<Vec<Event>, CepError> {
    let mut engine = Engine::new(default_patterns(thresholds))?;
    Ok(by_tick(&run.readings)
        .iter()
        .flat_map(|tick| engine.epn_step(tick))
        .collect())
}
