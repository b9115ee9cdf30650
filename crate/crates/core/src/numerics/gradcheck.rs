//! Central finite-difference verification of tape gradients.

use rand::Rng;

use super::{GradientSet, NumericsError, ParameterSet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Random directions over the full parameter vector.
    pub directions: usize,
    /// Individually perturbed coordinates.
    pub coordinates: usize,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            directions: 2,
            coordinates: 4,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checks: usize,
    /// `(analytic, numeric)` of the worst check.
    pub worst: (f64, f64),
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient against central differences of `loss`.
///
/// `loss_and_grad` returns the loss and its gradient; `loss` evaluates the
/// loss alone. Directions are unit vectors drawn from a seeded stream, and
/// coordinate checks pick parameters uniformly.
pub fn check_gradients<L, G>(
    params: &ParameterSet,
    loss_and_grad: G,
    loss: L,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, NumericsError>
where
    G: Fn(&ParameterSet) -> Result<(f64, GradientSet), NumericsError>,
    L: Fn(&ParameterSet) -> Result<f64, NumericsError>,
{
    let (_, grads) = loss_and_grad(params)?;
    let g = grads.as_set().flat_values();
    let p = params.flat_values();
    let n = p.len();
    let mut rng = rng::substream(cfg.seed, &["gradcheck"]);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checks: 0,
        worst: (0.0, 0.0),
    };
    let probe = |dir: &[f64], report: &mut GradCheckReport| -> Result<(), NumericsError> {
        let shifted = |sign: f64| -> Vec<f64> {
            p.iter().zip(dir).map(|(&v, &d)| v + sign * cfg.step * d).collect()
        };
        let plus = loss(&params.with_flat_values(&shifted(1.0))?)?;
        let minus = loss(&params.with_flat_values(&shifted(-1.0))?)?;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let analytic: f64 = g.iter().zip(dir).map(|(a, b)| a * b).sum();
        let err = relative_error(analytic, numeric, cfg.floor);
        report.checks += 1;
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = (analytic, numeric);
        }
        Ok(())
    };
    for _ in 0..cfg.directions {
        let mut dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            dir.iter_mut().for_each(|v| *v /= norm);
        }
        probe(&dir, &mut report)?;
    }
    for _ in 0..cfg.coordinates.min(n) {
        let mut dir = vec![0.0; n];
        dir[rng.random_range(0..n)] = 1.0;
        probe(&dir, &mut report)?;
    }
    Ok(report)
}
