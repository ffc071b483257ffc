use serde::Serialize;

use super::gp::{gp_fit, GpHyperparams, GpModel};
use super::{FdError, FundamentalDiagram};

/// Fixed-hyperparameter estimator for critical density, capacity and
/// capacity drop.
#[derive(Debug, Clone)]
pub struct FdEstimator {
    pub hyper_1d: GpHyperparams,
    pub hyper_2d: GpHyperparams,
    /// Density grid resolution for the argmax search, veh/km.
    pub grid_step: f64,
    /// Minimum samples required on each side of the critical density.
    pub min_regime_samples: usize,
    /// How far above the critical density a sample must be to count as
    /// congested, veh/km.
    pub congested_margin: f64,
}

impl Default for FdEstimator {
    fn default() -> Self {
        FdEstimator {
            hyper_1d: GpHyperparams {
                signal_variance: 4000.0 * 4000.0,
                length_scales: vec![10.0],
                noise_variance: 150.0 * 150.0,
            },
            hyper_2d: GpHyperparams {
                signal_variance: 4000.0 * 4000.0,
                length_scales: vec![10.0, 10.0],
                noise_variance: 150.0 * 150.0,
            },
            grid_step: 0.5,
            min_regime_samples: 5,
            congested_margin: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionGridRow {
    pub density: f64,
    pub mean: f64,
    pub lower90: f64,
    pub upper90: f64,
}

fn check_finite(values: impl IntoIterator<Item = f64>) -> Result<(), FdError> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(FdError::InvalidData("non-finite sample".into()))
    }
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Argmax of `f` over `grid`; the first maximum wins on ties.
fn argmax(grid: &[f64], f: impl Fn(f64) -> Result<f64, FdError>) -> Result<(f64, f64), FdError> {
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &x in grid {
        let y = f(x)?;
        if y > best.1 {
            best = (x, y);
        }
    }
    Ok(best)
}

impl FdEstimator {
    pub fn fit_1d(&self, samples: &[(f64, f64)]) -> Result<GpModel, FdError> {
        let mut sorted = samples.to_vec();
        // Canonical order makes the fit independent of sample order.
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let points: Vec<Vec<f64>> = sorted.iter().map(|s| vec![s.0]).collect();
        let targets: Vec<f64> = sorted.iter().map(|s| s.1).collect();
        gp_fit(&points, &targets, &self.hyper_1d)
    }

    /// Critical density as the argmax of the GP posterior mean, capacity as
    /// its maximum, jam density from a least-squares congested branch
    /// through `(critical density, capacity)`.
    pub fn estimate_critical_density(
        &self,
        samples: &[(f64, f64)],
    ) -> Result<FundamentalDiagram, FdError> {
        if samples.is_empty() {
            return Err(FdError::InsufficientRegimeCoverage);
        }
        check_finite(samples.iter().flat_map(|s| [s.0, s.1]))?;
        // Canonical order, so the sums below do not depend on input order.
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let samples = &sorted[..];
        let model = self.fit_1d(samples)?;
        let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let g = grid(lo.max(0.0), hi, self.grid_step);
        if g.is_empty() {
            return Err(FdError::InsufficientRegimeCoverage);
        }
        let (rho_c, capacity) = argmax(&g, |x| Ok(model.predict(&[x])?.mean))?;

        let below = samples.iter().filter(|s| s.0 < rho_c - self.grid_step).count();
        let above: Vec<&(f64, f64)> = samples
            .iter()
            .filter(|s| s.0 > rho_c + self.grid_step)
            .collect();
        if below < self.min_regime_samples
            || above.len() < self.min_regime_samples
            || !(rho_c > 0.0)
            || !(capacity > 0.0)
        {
            return Err(FdError::InsufficientRegimeCoverage);
        }

        // flow = capacity - w (rho - rho_c), least squares in w.
        let (num, den) = above.iter().fold((0.0, 0.0), |(n, d), s| {
            let x = s.0 - rho_c;
            (n + x * (capacity - s.1), d + x * x)
        });
        let wave_speed = num / den;
        if !(wave_speed > 0.0) {
            return Err(FdError::InsufficientRegimeCoverage);
        }
        FundamentalDiagram::new(rho_c, rho_c + capacity / wave_speed, capacity, 0.0)
    }

    /// Capacity drop from `(upstream density, downstream density, flow)`
    /// samples via a 2D GP: one minus the mean flow deep in the congested
    /// upstream regime (with free downstream conditions) over capacity.
    pub fn estimate_capacity_drop(&self, samples: &[(f64, f64, f64)]) -> Result<f64, FdError> {
        if samples.len() < 2 * self.min_regime_samples {
            return Err(FdError::InsufficientRegimeCoverage);
        }
        check_finite(samples.iter().flat_map(|s| [s.0, s.1, s.2]))?;
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
        });
        let points: Vec<Vec<f64>> = sorted.iter().map(|s| vec![s.0, s.1]).collect();
        let targets: Vec<f64> = sorted.iter().map(|s| s.2).collect();
        let model = gp_fit(&points, &targets, &self.hyper_2d)?;

        // Downstream reference: median of the lower half of downstream
        // densities, where supply is not binding.
        let mut ds: Vec<f64> = sorted.iter().map(|s| s.1).collect();
        ds.sort_by(f64::total_cmp);
        let ds_cut = quantile(&ds, 0.5);
        let free: Vec<&(f64, f64, f64)> = sorted.iter().filter(|s| s.1 <= ds_cut).collect();
        let mut free_ds: Vec<f64> = free.iter().map(|s| s.1).collect();
        free_ds.sort_by(f64::total_cmp);
        let rho_ds_ref = quantile(&free_ds, 0.5);

        let lo = free.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let hi = free.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let g = grid(lo.max(0.0), hi, self.grid_step);
        if g.is_empty() {
            return Err(FdError::InsufficientRegimeCoverage);
        }
        let slice = |x: f64| model.predict(&[x, rho_ds_ref]).map(|p| p.mean);
        let means = g.iter().map(|&x| slice(x)).collect::<Result<Vec<f64>, FdError>>()?;
        let (top_at, peak) = argmax(&g, slice)?;
        // The maximum of a noisy mean overshoots, badly so on a flat top.
        // Capacity is the average over the grid points statistically tied
        // with the maximum; the critical density is the first of them.
        let tie = 2.0 * model.predict(&[top_at, rho_ds_ref])?.std();
        let tied: Vec<(f64, f64)> = g
            .iter()
            .zip(&means)
            .filter(|(_, m)| **m >= peak - tie)
            .map(|(x, m)| (*x, *m))
            .collect();
        let rho_c = tied[0].0;
        let capacity = tied.iter().map(|t| t.1).sum::<f64>() / tied.len() as f64;

        let below = free.iter().filter(|s| s.0 < rho_c - self.grid_step).count();
        let mut congested: Vec<f64> = free
            .iter()
            .map(|s| s.0)
            .filter(|&x| x > rho_c + self.congested_margin)
            .collect();
        if below < self.min_regime_samples
            || congested.len() < self.min_regime_samples
            || !(capacity > 0.0)
        {
            return Err(FdError::InsufficientRegimeCoverage);
        }
        // Mean flow over the deepest tenth of the congested samples.
        congested.sort_by(f64::total_cmp);
        let deep_from = quantile(&congested, 0.9);
        let deep: Vec<f64> = congested.into_iter().filter(|&x| x >= deep_from).collect();
        let mut flow = 0.0;
        for &x in &deep {
            flow += slice(x)?;
        }
        let congested_flow = flow / deep.len() as f64;
        Ok((1.0 - congested_flow / capacity).clamp(0.0, 1.0 - 1e-9))
    }

    /// Posterior mean and 90% band on a density grid, for plotting.
    pub fn prediction_grid(
        &self,
        model: &GpModel,
        lo: f64,
        hi: f64,
        step: f64,
    ) -> Result<Vec<PredictionGridRow>, FdError> {
        grid(lo, hi, step)
            .into_iter()
            .map(|x| {
                let p = model.predict(&[x])?;
                let (lower90, upper90) = p.interval90();
                Ok(PredictionGridRow {
                    density: x,
                    mean: p.mean,
                    lower90,
                    upper90,
                })
            })
            .collect()
    }
}

/// [`FdEstimator::estimate_critical_density`] with default settings.
pub fn estimate_critical_density(samples: &[(f64, f64)]) -> Result<FundamentalDiagram, FdError> {
    FdEstimator::default().estimate_critical_density(samples)
}

/// [`FdEstimator::estimate_capacity_drop`] with default settings.
pub fn estimate_capacity_drop(samples: &[(f64, f64, f64)]) -> Result<f64, FdError> {
    FdEstimator::default().estimate_capacity_drop(samples)
}
