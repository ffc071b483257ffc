//! Local integral-feedback ramp metering with queue-aware saturation.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ControlError {
    #[error("demand prediction needs at least one sample")]
    EmptyHistory,
    #[error("invalid controller parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ControlMode {
    #[default]
    Inactive,
    DensityControl,
    DensityAndQueueControl,
}

impl ControlMode {
    /// Numeric code used in event attributes.
    pub fn code(self) -> f64 {
        match self {
            ControlMode::Inactive => 0.0,
            ControlMode::DensityControl => 1.0,
            ControlMode::DensityAndQueueControl => 2.0,
        }
    }

    pub fn is_active(self) -> bool {
        self != ControlMode::Inactive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalControllerState {
    /// Ramp flow measured during the last tick, veh/h.
    pub last_ramp_flow: f64,
    /// veh/h per veh/km
    pub gain: f64,
    /// Critical density of the merge cell, veh/km.
    pub target_density: f64,
    /// Desired queue length, only used in queue control, veh.
    pub desired_queue: f64,
    pub mode: ControlMode,
    /// veh/h
    pub min_flow: f64,
    /// veh/h
    pub max_flow: f64,
    /// veh
    pub max_queue: f64,
}

impl LocalControllerState {
    pub fn new(
        gain: f64,
        target_density: f64,
        min_flow: f64,
        max_flow: f64,
        max_queue: f64,
    ) -> Result<Self, ControlError> {
        if !(gain > 0.0) {
            return Err(ControlError::InvalidParameter("gain must be positive".into()));
        }
        if !(0.0 <= min_flow && min_flow <= max_flow) {
            return Err(ControlError::InvalidParameter(
                "need 0 <= min_flow <= max_flow".into(),
            ));
        }
        if !(max_queue > 0.0) {
            return Err(ControlError::InvalidParameter(
                "queue capacity must be positive".into(),
            ));
        }
        Ok(LocalControllerState {
            last_ramp_flow: 0.0,
            gain,
            target_density,
            desired_queue: max_queue,
            mode: ControlMode::Inactive,
            min_flow,
            max_flow,
            max_queue,
        })
    }

    /// Queue target used by the upper saturation bound; zero outside
    /// queue control so the bound only limits release to what is there.
    pub fn effective_desired_queue(&self) -> f64 {
        match self.mode {
            ControlMode::DensityAndQueueControl => self.desired_queue,
            _ => 0.0,
        }
    }
}

/// `r(t-1) + K (rho_c - rho)`, unsaturated.
pub fn alinea_ideal_rate(c: &LocalControllerState, rho: f64) -> f64 {
    c.last_ramp_flow + c.gain * (c.target_density - rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Saturation {
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
    /// The interval was empty; the anti-overflow bound won.
    pub queue_conflict: bool,
}

/// Clamps `ideal` into the queue-feasible interval. An empty interval
/// resolves to the lower bound. The result always lies in `[0, max_flow]`.
pub fn saturate_rate(
    ideal: f64,
    c: &LocalControllerState,
    q: f64,
    demand: f64,
    dt: f64,
) -> Saturation {
    let lower = c.min_flow.max((q - c.max_queue) / dt + demand);
    let upper = c.max_flow.min((q - c.effective_desired_queue()) / dt + demand);
    let (raw, queue_conflict) = if lower > upper {
        (lower, true)
    } else {
        (ideal.clamp(lower, upper), false)
    };
    Saturation {
        rate: raw.clamp(0.0, c.max_flow),
        lower,
        upper,
        queue_conflict,
    }
}

/// Exponentially weighted moving average of arrival flows, oldest first.
pub fn predict_demand(history: &[f64], alpha: f64) -> Result<f64, ControlError> {
    let (first, rest) = history.split_first().ok_or(ControlError::EmptyHistory)?;
    Ok(rest.iter().fold(*first, |s, &x| alpha * x + (1.0 - alpha) * s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Override {
    /// Fixed metering rate, veh/h.
    PinRate(f64),
    /// Operator lower bound, veh/h.
    MinRate(f64),
}

/// Output of one controller tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlOutput {
    pub rate: f64,
    pub mode: ControlMode,
    pub queue_conflict: bool,
}

/// One metered ramp: feedback law, demand predictor and operator overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalController {
    pub state: LocalControllerState,
    pub alpha: f64,
    demand_estimate: Option<f64>,
    pin: Option<f64>,
    operator_min: Option<f64>,
    last_command: Option<f64>,
}

impl LocalController {
    pub fn new(state: LocalControllerState, alpha: f64) -> Self {
        LocalController {
            state,
            alpha,
            demand_estimate: None,
            pin: None,
            operator_min: None,
            last_command: None,
        }
    }

    /// Feeds one measured arrival flow into the predictor.
    pub fn observe_arrivals(&mut self, arrivals: f64) {
        self.demand_estimate = Some(match self.demand_estimate {
            None => arrivals,
            Some(s) => self.alpha * arrivals + (1.0 - self.alpha) * s,
        });
    }

    pub fn predicted_demand(&self) -> Result<f64, ControlError> {
        self.demand_estimate.ok_or(ControlError::EmptyHistory)
    }

    pub fn apply_override(&mut self, o: Override) {
        match o {
            Override::PinRate(r) => self.pin = Some(r.clamp(0.0, self.state.max_flow)),
            Override::MinRate(r) => self.operator_min = Some(r.clamp(0.0, self.state.max_flow)),
        }
    }

    pub fn clear_overrides(&mut self) {
        self.pin = None;
        self.operator_min = None;
    }

    /// Computes this tick's rate from the measured merge density and queue.
    /// `last_ramp_flow` is the ramp flow measured during the previous tick.
    ///
    /// When the anti-overflow bound binds and the merge delivered less than
    /// the previous command, the command is scaled up by that shortfall so
    /// the realised flow, not just the command, meets the bound.
    pub fn step(
        &mut self,
        rho: f64,
        queue: f64,
        last_ramp_flow: f64,
        dt: f64,
    ) -> Result<ControlOutput, ControlError> {
        let delivered = match self.last_command {
            Some(cmd) if cmd > 1.0 && last_ramp_flow < cmd => (last_ramp_flow / cmd).max(MIN_DELIVERY),
            _ => 1.0,
        };
        self.state.last_ramp_flow = last_ramp_flow;
        let out = self.command(rho, queue, dt, delivered)?;
        self.last_command = Some(out.rate);
        Ok(out)
    }

    fn command(
        &self,
        rho: f64,
        queue: f64,
        dt: f64,
        delivered: f64,
    ) -> Result<ControlOutput, ControlError> {
        let mode = self.state.mode;
        if let Some(r) = self.pin {
            return Ok(ControlOutput {
                rate: r,
                mode,
                queue_conflict: false,
            });
        }
        if !mode.is_active() {
            return Ok(ControlOutput {
                rate: self.state.max_flow,
                mode,
                queue_conflict: false,
            });
        }
        let demand = self.predicted_demand()?;
        let mut c = self.state.clone();
        if let Some(m) = self.operator_min {
            c.min_flow = c.min_flow.max(m);
        }
        let q = queue.clamp(0.0, c.max_queue);
        let sat = saturate_rate(alinea_ideal_rate(&c, rho), &c, q, demand, dt);
        let mut rate = sat.rate;
        if sat.lower > c.min_flow && rate <= sat.lower {
            rate = (sat.lower / delivered).min(c.max_flow);
        }
        Ok(ControlOutput {
            rate,
            mode,
            queue_conflict: sat.queue_conflict,
        })
    }
}

/// Floor on the delivered fraction used to scale anti-overflow commands.
const MIN_DELIVERY: f64 = 0.25;
