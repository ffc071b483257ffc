//! Zero-mean Gaussian-process regression with a squared-exponential ARD kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::FdError;

/// z-value of a two-sided 90% interval.
const Z90: f64 = 1.645;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub signal_variance: f64,
    /// One length scale per input dimension.
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
}

impl GpHyperparams {
    pub fn dims(&self) -> usize {
        self.length_scales.len()
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPrediction {
    pub mean: f64,
    /// Posterior variance of the latent function (no observation noise).
    pub variance: f64,
}

impl GpPrediction {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }

    /// 90% credible interval of the latent function.
    pub fn interval90(&self) -> (f64, f64) {
        (self.mean - Z90 * self.std(), self.mean + Z90 * self.std())
    }
}

/// A fitted GP. Immutable after [`gp_fit`].
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    hyper: GpHyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Fits a GP to `points` (each of dimension `hyper.dims()`) and `targets`.
pub fn gp_fit(
    points: &[Vec<f64>],
    targets: &[f64],
    hyper: &GpHyperparams,
) -> Result<GpModel, FdError> {
    if points.is_empty() {
        return Err(FdError::InvalidData("at least one training point required".into()));
    }
    if points.len() != targets.len() {
        return Err(FdError::InvalidData(format!(
            "{} points but {} targets",
            points.len(),
            targets.len()
        )));
    }
    let dims = hyper.dims();
    if dims == 0 {
        return Err(FdError::InvalidData("no input dimensions".into()));
    }
    for p in points {
        if p.len() != dims {
            return Err(FdError::DimensionMismatch {
                expected: dims,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(FdError::InvalidData("non-finite input".into()));
        }
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(FdError::InvalidData("non-finite target".into()));
    }
    let degenerate = !(hyper.noise_variance > 0.0)
        || !(hyper.signal_variance > 0.0)
        || hyper.length_scales.iter().any(|l| !(*l > 0.0) || !l.is_finite())
        || !hyper.noise_variance.is_finite()
        || !hyper.signal_variance.is_finite();
    if degenerate {
        return Err(FdError::SingularKernel);
    }

    let n = points.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let v = hyper.kernel(&points[i], &points[j]);
        if i == j {
            v + hyper.noise_variance
        } else {
            v
        }
    });
    let chol = Cholesky::new(k).ok_or(FdError::SingularKernel)?;
    let alpha = chol.solve(&DVector::from_column_slice(targets));
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(FdError::SingularKernel);
    }
    Ok(GpModel {
        inputs: points.to_vec(),
        targets: targets.to_vec(),
        hyper: hyper.clone(),
        chol,
        alpha,
    })
}

impl GpModel {
    pub fn dims(&self) -> usize {
        self.hyper.dims()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn training_data(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.inputs, &self.targets)
    }

    pub fn predict(&self, query: &[f64]) -> Result<GpPrediction, FdError> {
        if query.len() != self.dims() {
            return Err(FdError::DimensionMismatch {
                expected: self.dims(),
                got: query.len(),
            });
        }
        let k_star = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|x| self.hyper.kernel(x, query)),
        );
        let mean = k_star.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .ok_or(FdError::SingularKernel)?;
        let variance = (self.hyper.signal_variance - v.dot(&v)).max(0.0);
        Ok(GpPrediction { mean, variance })
    }
}
