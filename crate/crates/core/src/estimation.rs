//! Two-state Kalman filter for the cell at a metered ramp: mainline
//! density and ramp queue, driven by measured boundary and ramp flows.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EstimationError {
    #[error("innovation covariance is not invertible")]
    NumericalBreakdown,
    #[error("invalid filter parameter: {0}")]
    InvalidParameter(String),
}

/// Measured flows over one tick, veh/h.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowInputs {
    pub inflow: f64,
    pub outflow: f64,
    pub arrivals: f64,
    pub ramp_flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanFilter {
    /// (density veh/km, queue veh)
    pub state: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    pub process_noise: Matrix2<f64>,
    pub measurement_noise: Matrix2<f64>,
    /// Tick, h.
    pub tick: f64,
    /// Cell length, km.
    pub cell_length: f64,
}

impl KalmanFilter {
    pub fn new(
        initial: (f64, f64),
        initial_variance: f64,
        process_noise: Matrix2<f64>,
        measurement_noise: Matrix2<f64>,
        tick: f64,
        cell_length: f64,
    ) -> Result<Self, EstimationError> {
        if !(tick > 0.0 && cell_length > 0.0) {
            return Err(EstimationError::InvalidParameter(
                "tick and cell length must be positive".into(),
            ));
        }
        if !(initial_variance >= 0.0) {
            return Err(EstimationError::InvalidParameter(
                "initial variance must be non-negative".into(),
            ));
        }
        Ok(KalmanFilter {
            state: Vector2::new(initial.0, initial.1),
            covariance: Matrix2::identity() * initial_variance,
            process_noise,
            measurement_noise,
            tick,
            cell_length,
        })
    }

    /// Defaults for a sensor with relative noise `sigma`: measurement noise
    /// is scaled to the critical density and to half the queue capacity.
    pub fn with_defaults(
        sigma: f64,
        critical_density: f64,
        max_queue: f64,
        tick: f64,
        cell_length: f64,
    ) -> Result<Self, EstimationError> {
        let r_rho = (sigma * critical_density).powi(2).max(1e-6);
        let r_q = (sigma * max_queue / 2.0).powi(2).max(1e-6);
        KalmanFilter::new(
            (0.0, 0.0),
            100.0,
            Matrix2::new(1.0, 0.0, 0.0, 0.5),
            Matrix2::new(r_rho, 0.0, 0.0, r_q),
            tick,
            cell_length,
        )
    }

    pub fn density(&self) -> f64 {
        self.state[0]
    }

    pub fn queue(&self) -> f64 {
        self.state[1]
    }
}

/// Conservation model: density moves by the net boundary flow, the queue
/// by arrivals minus released flow. Covariance grows by `Q`.
pub fn kf_predict(f: &KalmanFilter, u: &FlowInputs) -> KalmanFilter {
    let mut next = f.clone();
    next.state[0] += f.tick / f.cell_length * (u.inflow - u.outflow);
    next.state[1] += f.tick * (u.arrivals - u.ramp_flow);
    next.covariance = f.covariance + f.process_noise;
    next
}

/// Direct measurement of both states; Joseph-form covariance update.
pub fn kf_update(f: &KalmanFilter, z: (f64, f64)) -> Result<KalmanFilter, EstimationError> {
    let p = f.covariance;
    let r = f.measurement_noise;
    let s = p + r;
    let s_inv = s.try_inverse().ok_or(EstimationError::NumericalBreakdown)?;
    let k = p * s_inv;
    if k.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::NumericalBreakdown);
    }
    let innovation = Vector2::new(z.0, z.1) - f.state;
    let i_k = Matrix2::identity() - k;
    let cov = i_k * p * i_k.transpose() + k * r * k.transpose();
    let mut next = f.clone();
    next.state = (f.state + k * innovation).map(|v| v.max(0.0));
    next.covariance = (cov + cov.transpose()) * 0.5;
    Ok(next)
}
