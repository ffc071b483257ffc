//! Scenario files: network geometry, demand, noise and controller settings.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cep::{default_patterns, patterns_from_toml, PatternDefinition, Thresholds};
use crate::coordination::CoordinationConfig;
use crate::ctm::{CellSpec, DemandProfile, FreewayNetwork, RampSpec};
use crate::event::TICK_SECONDS;
use crate::fd::FundamentalDiagram;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConfig {
    pub critical_density: f64,
    pub jam_density: f64,
    pub capacity: f64,
    #[serde(default)]
    pub capacity_drop: f64,
}

impl FdConfig {
    pub fn build(&self) -> Result<FundamentalDiagram, ConfigError> {
        FundamentalDiagram::new(
            self.critical_density,
            self.jam_density,
            self.capacity,
            self.capacity_drop,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Per-cell deviations from the default diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellOverride {
    /// First and last cell (inclusive) the override applies to.
    pub cells: (usize, usize),
    #[serde(default)]
    pub fd: Option<FdConfig>,
    #[serde(default)]
    pub has_sensor: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfframpConfig {
    pub cell: usize,
    pub split: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampConfig {
    pub attach_cell: usize,
    pub max_queue: f64,
    pub max_flow: f64,
    #[serde(default)]
    pub min_flow: f64,
    #[serde(default)]
    pub metered: bool,
    /// `(seconds, veh/h)` breakpoints.
    pub demand: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// veh/h per veh/km
    pub gain: f64,
    /// Demand predictor smoothing.
    pub alpha: f64,
    /// Refit the critical density from data every this many ticks; 0 disables.
    pub refit_every: u64,
    /// Horizon of the queue bounds on the metering rate, in ticks: queue
    /// errors are closed over this many ticks rather than in one.
    pub saturation_ticks: u64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            gain: 20.0,
            alpha: 0.3,
            refit_every: 240,
            saturation_ticks: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CepConfig {
    /// Overrides the thresholds derived from the diagram and gammas.
    pub thresholds: Option<Thresholds>,
    /// TOML file with `[[pattern]]` tables, relative to the scenario file.
    pub patterns_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon: u64,
    /// Relative sensor noise.
    #[serde(default)]
    pub noise: f64,
    /// Relative per-seed perturbation of every demand profile.
    #[serde(default)]
    pub demand_jitter: f64,
    #[serde(default = "yes")]
    pub nonmonotonic: bool,
    pub cell_count: usize,
    /// km
    pub cell_length: f64,
    pub fd: FdConfig,
    #[serde(default)]
    pub cell_overrides: Vec<CellOverride>,
    #[serde(default)]
    pub offramps: Vec<OfframpConfig>,
    /// Ramp 0 is conventionally the mainline origin.
    pub ramps: Vec<RampConfig>,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub coordination: CoordinationConfig,
    #[serde(default)]
    pub cep: CepConfig,
    /// Resolved `cep.patterns_file` contents.
    #[serde(skip)]
    pub patterns: Option<Vec<PatternDefinition>>,
}

fn yes() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let s: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.display().to_string(),
                source,
            })
        };
        let mut s = ScenarioConfig::from_toml(&read(path)?)?;
        if let Some(f) = &s.cep.patterns_file {
            let p = path.parent().unwrap_or(Path::new(".")).join(f);
            let patterns =
                patterns_from_toml(&read(&p)?).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            s.patterns = Some(patterns);
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.cell_count == 0 {
            return bad("need at least one cell".into());
        }
        if !(self.noise >= 0.0) || !(self.demand_jitter >= 0.0 && self.demand_jitter < 1.0) {
            return bad("noise must be >= 0 and demand_jitter in [0, 1)".into());
        }
        for o in &self.offramps {
            if o.cell >= self.cell_count {
                return bad(format!("off-ramp at missing cell {}", o.cell));
            }
        }
        for o in &self.cell_overrides {
            if o.cells.0 > o.cells.1 || o.cells.1 >= self.cell_count {
                return bad(format!("cell override range {:?} is invalid", o.cells));
            }
        }
        if self.control.saturation_ticks == 0 {
            return bad("saturation_ticks must be at least 1".into());
        }
        if !(self.control.gain > 0.0) || !(0.0 < self.control.alpha && self.control.alpha <= 1.0) {
            return bad("control gain must be positive and alpha in (0, 1]".into());
        }
        self.coordination
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.network(self.seed)?
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// The network with demand perturbed deterministically by `seed`.
    pub fn network(&self, seed: u64) -> Result<FreewayNetwork, ConfigError> {
        let base = self.fd.build()?;
        let mut cells: Vec<CellSpec> = (0..self.cell_count)
            .map(|_| CellSpec {
                length: self.cell_length,
                fd: base,
                has_sensor: true,
                offramp_split: 0.0,
            })
            .collect();
        for o in &self.cell_overrides {
            let fd = o.fd.map(|f| f.build()).transpose()?;
            for c in &mut cells[o.cells.0..=o.cells.1] {
                if let Some(fd) = fd {
                    c.fd = fd;
                }
                if let Some(s) = o.has_sensor {
                    c.has_sensor = s;
                }
            }
        }
        for o in &self.offramps {
            cells[o.cell].offramp_split = o.split;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d3a4d);
        let ramps = self
            .ramps
            .iter()
            .map(|r| {
                let factor = if self.demand_jitter > 0.0 {
                    1.0 + rng.random_range(-self.demand_jitter..=self.demand_jitter)
                } else {
                    1.0
                };
                RampSpec {
                    attach_cell: r.attach_cell,
                    max_queue: r.max_queue,
                    max_flow: r.max_flow,
                    min_flow: r.min_flow,
                    demand: DemandProfile::new(r.demand.clone()).scaled(factor),
                    metered: r.metered,
                }
            })
            .collect();
        Ok(FreewayNetwork {
            cells,
            ramps,
            tick: TICK_SECONDS as f64 / 3600.0,
            nonmonotonic: self.nonmonotonic,
        })
    }

    pub fn thresholds(&self) -> Thresholds {
        self.cep.thresholds.unwrap_or_else(|| {
            let g = self.coordination.gammas;
            Thresholds::from_critical_density(
                self.fd.critical_density,
                g.g1,
                g.g2,
                self.fd.capacity / self.fd.critical_density,
            )
        })
    }

    pub fn pattern_set(&self) -> Vec<PatternDefinition> {
        self.patterns
            .clone()
            .unwrap_or_else(|| default_patterns(&self.thresholds()))
    }
}

/// The shipped scenario: a 45-cell freeway with ten entrances, five of them
/// metered, and a rush-hour surge at the downstream end.
pub const DEFAULT_SCENARIO: &str = include_str!("../../../scenarios/default.toml");

pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig::from_toml(DEFAULT_SCENARIO).expect("shipped scenario is valid")
}
