//! Fundamental diagrams and their data-driven identification.

mod estimate;
mod gp;

pub use estimate::{
    estimate_capacity_drop, estimate_critical_density, FdEstimator, PredictionGridRow,
};
pub use gp::{gp_fit, GpHyperparams, GpModel, GpPrediction};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FdError {
    #[error("invalid fundamental diagram: {0}")]
    InvalidDiagram(String),
    #[error("kernel matrix is not positive definite (degenerate hyperparameters or data)")]
    SingularKernel,
    #[error("query has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("samples do not cover both the free-flow and the congested regime")]
    InsufficientRegimeCoverage,
}

/// Triangular (piecewise-affine) flow-density relation with an optional
/// capacity drop above the critical density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram {
    /// veh/km
    pub critical_density: f64,
    /// veh/km
    pub jam_density: f64,
    /// veh/h
    pub capacity: f64,
    /// km/h
    pub free_flow_speed: f64,
    /// Fraction of capacity lost once the upstream density exceeds the
    /// critical density, in `[0, 1)`.
    pub capacity_drop: f64,
}

impl FundamentalDiagram {
    /// Builds a diagram from critical density, jam density and capacity; the
    /// free-flow speed follows as `capacity / critical_density`.
    pub fn new(
        critical_density: f64,
        jam_density: f64,
        capacity: f64,
        capacity_drop: f64,
    ) -> Result<Self, FdError> {
        let fd = FundamentalDiagram {
            critical_density,
            jam_density,
            capacity,
            free_flow_speed: capacity / critical_density,
            capacity_drop,
        };
        fd.validate()?;
        Ok(fd)
    }

    pub fn validate(&self) -> Result<(), FdError> {
        let all_finite = [
            self.critical_density,
            self.jam_density,
            self.capacity,
            self.free_flow_speed,
            self.capacity_drop,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(FdError::InvalidDiagram("non-finite parameter".into()));
        }
        if !(self.critical_density > 0.0 && self.critical_density < self.jam_density) {
            return Err(FdError::InvalidDiagram(format!(
                "need 0 < critical density ({}) < jam density ({})",
                self.critical_density, self.jam_density
            )));
        }
        if self.capacity <= 0.0 {
            return Err(FdError::InvalidDiagram("capacity must be positive".into()));
        }
        let implied = self.free_flow_speed * self.critical_density;
        if (implied - self.capacity).abs() > 1e-9 * self.capacity.max(1.0) {
            return Err(FdError::InvalidDiagram(format!(
                "capacity {} differs from free-flow speed x critical density = {}",
                self.capacity, implied
            )));
        }
        if !(0.0..1.0).contains(&self.capacity_drop) {
            return Err(FdError::InvalidDiagram(format!(
                "capacity drop {} outside [0, 1)",
                self.capacity_drop
            )));
        }
        Ok(())
    }

    /// Backward wave speed of the congested branch, km/h.
    pub fn congestion_wave_speed(&self) -> f64 {
        self.capacity / (self.jam_density - self.critical_density)
    }

    /// Equilibrium flow on the triangular diagram (no capacity drop).
    pub fn equilibrium_flow(&self, density: f64) -> f64 {
        let rho = density.max(0.0);
        if rho <= self.critical_density {
            self.free_flow_speed * rho
        } else {
            (self.congestion_wave_speed() * (self.jam_density - rho)).max(0.0)
        }
    }

    /// Equilibrium speed, km/h. Free-flow speed on an empty road.
    pub fn equilibrium_speed(&self, density: f64) -> f64 {
        if density < 1e-9 {
            self.free_flow_speed
        } else {
            self.equilibrium_flow(density) / density
        }
    }

    pub fn with_capacity_drop(mut self, capacity_drop: f64) -> Self {
        self.capacity_drop = capacity_drop;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_flow_speed_follows_capacity() {
        let fd = FundamentalDiagram::new(85.0, 170.0, 6000.0, 0.15).unwrap();
        assert!((fd.free_flow_speed * 85.0 - 6000.0).abs() < 1e-9);
        assert!((fd.congestion_wave_speed() - 6000.0 / 85.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_parameters() {
        assert!(FundamentalDiagram::new(0.0, 170.0, 6000.0, 0.0).is_err());
        assert!(FundamentalDiagram::new(180.0, 170.0, 6000.0, 0.0).is_err());
        assert!(FundamentalDiagram::new(85.0, 170.0, 6000.0, 1.0).is_err());
        let mut fd = FundamentalDiagram::new(85.0, 170.0, 6000.0, 0.0).unwrap();
        fd.free_flow_speed = 100.0;
        assert!(fd.validate().is_err());
    }

    #[test]
    fn equilibrium_branches() {
        let fd = FundamentalDiagram::new(60.0, 180.0, 6000.0, 0.0).unwrap();
        assert_eq!(fd.equilibrium_flow(30.0), 3000.0);
        assert_eq!(fd.equilibrium_flow(120.0), 3000.0);
        assert_eq!(fd.equilibrium_flow(180.0), 0.0);
        assert_eq!(fd.equilibrium_speed(0.0), 100.0);
    }
}
