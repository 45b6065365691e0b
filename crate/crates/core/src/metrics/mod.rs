//! Goodness-of-fit metrics and per-voxel metric maps.

pub mod special;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FittedVolume;
use crate::maps::{Provenance, StatMap};
use crate::volume::{sample_variance, ObservationVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    LowerBetter,
    HigherBetter,
}

impl Polarity {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Polarity::LowerBetter => a < b,
            Polarity::HigherBetter => a > b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Mse,
    R2,
    Aic,
    FStat,
    FPvalue,
    Prss,
    Vnprss,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Mse,
        Metric::R2,
        Metric::Aic,
        Metric::FStat,
        Metric::FPvalue,
        Metric::Prss,
        Metric::Vnprss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::R2 => "r2",
            Metric::Aic => "aic",
            Metric::FStat => "f-stat",
            Metric::FPvalue => "f-pvalue",
            Metric::Prss => "prss",
            Metric::Vnprss => "vnprss",
        }
    }

    pub fn polarity(self) -> Polarity {
        match self {
            Metric::R2 | Metric::FStat => Polarity::HigherBetter,
            _ => Polarity::LowerBetter,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Metric::ALL.into_iter().find(|m| m.name() == key).ok_or_else(|| {
            let names: Vec<_> = Metric::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown metric '{s}'; available: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: Metric,
    pub value: f64,
    pub polarity: Polarity,
    /// Set by VN-PRSS when the curve has no variance; `value` is +inf.
    pub flat: bool,
}

impl MetricScore {
    fn new(metric: Metric, value: f64) -> Self {
        Self {
            metric,
            value,
            polarity: metric.polarity(),
            flat: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrssParams {
    pub penalty_weight: f64,
    pub grid_points: usize,
}

impl Default for PrssParams {
    fn default() -> Self {
        Self {
            penalty_weight: 0.1,
            grid_points: 100,
        }
    }
}

impl PrssParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_weight >= 0.0) || !self.penalty_weight.is_finite() {
            return Err(Error::Validation(format!("penalty_weight must be >= 0, got {}", self.penalty_weight)));
        }
        if self.grid_points < 3 {
            return Err(Error::Validation(format!("grid_points must be >= 3, got {}", self.grid_points)));
        }
        Ok(())
    }
}

/// Flat curves below this variance are scored +inf by VN-PRSS.
pub const VNPRSS_FLOOR: f64 = 1e-12;

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Input("empty observation vector".into()));
    }
    if y.len() != y_hat.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            found: y_hat.len(),
        });
    }
    Ok(())
}

fn rss(y: &[f64], y_hat: &[f64]) -> f64 {
    y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<MetricScore> {
    check_pair(y, y_hat)?;
    Ok(MetricScore::new(Metric::Mse, rss(y, y_hat) / y.len() as f64))
}

pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<MetricScore> {
    check_pair(y, y_hat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(tss > 0.0) {
        return Err(Error::Undefined("R² of a zero-variance response".into()));
    }
    Ok(MetricScore::new(Metric::R2, 1.0 - rss(y, y_hat) / tss))
}

/// Gaussian AIC `n·ln(rss/n) + 2k`, with rss floored at 1e-300.
pub fn aic(rss: f64, n: usize, k: f64) -> MetricScore {
    let n = n as f64;
    MetricScore::new(Metric::Aic, n * (rss.max(1e-300) / n).ln() + 2.0 * k)
}

/// F statistic and its upper-tail p-value for nested models. A negative
/// numerator (full model fits worse) yields F = 0, p = 1.
pub fn f_test(rss_full: f64, rss_restricted: f64, df_full: f64, df_restricted: f64, n: usize) -> Result<(f64, f64)> {
    if !(df_full > df_restricted) {
        return Err(Error::Validation(format!(
            "full model df ({df_full}) must exceed restricted df ({df_restricted})"
        )));
    }
    if !(n as f64 > df_full) {
        return Err(Error::InsufficientData { n, df: df_full });
    }
    if !(rss_full >= 0.0 && rss_restricted >= 0.0) {
        return Err(Error::Input("residual sums of squares must be non-negative".into()));
    }
    let d1 = df_full - df_restricted;
    let d2 = n as f64 - df_full;
    let num = (rss_restricted - rss_full) / d1;
    let f = if num <= 0.0 {
        0.0
    } else if rss_full == 0.0 {
        f64::INFINITY
    } else {
        num / (rss_full / d2)
    };
    Ok((f, special::f_survival(f, d1, d2)))
}

/// Squared second-difference roughness `Σ (Δ²c / Δt²)²` of a curve sampled
/// on a uniform grid.
pub fn curvature_penalty(grid: &[f64], curve: &[f64]) -> Result<f64> {
    if grid.len() != curve.len() {
        return Err(Error::Dimension {
            expected: grid.len(),
            found: curve.len(),
        });
    }
    if grid.len() < 3 {
        return Err(Error::Input("curvature needs at least 3 grid points".into()));
    }
    let dt = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Input("grid must be strictly increasing".into()));
    }
    for (i, w) in grid.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > 1e-9 * dt.max(grid[i].abs()) {
            return Err(Error::Input(format!("grid is not uniform at point {}", i + 1)));
        }
    }
    Ok(curve
        .windows(3)
        .map(|w| {
            let d2 = (w[2] - 2.0 * w[1] + w[0]) / (dt * dt);
            d2 * d2
        })
        .sum())
}

pub fn prss(y: &[f64], y_hat: &[f64], grid: &[f64], curve: &[f64], params: &PrssParams) -> Result<MetricScore> {
    check_pair(y, y_hat)?;
    params.validate()?;
    if curve.len() != params.grid_points {
        return Err(Error::Dimension {
            expected: params.grid_points,
            found: curve.len(),
        });
    }
    let base = rss(y, y_hat);
    let value = if params.penalty_weight == 0.0 {
        base
    } else {
        base + params.penalty_weight * curvature_penalty(grid, curve)?
    };
    Ok(MetricScore::new(Metric::Prss, value))
}

/// PRSS divided by the sample variance of the curve.
pub fn vnprss(prss_value: f64, curve: &[f64]) -> MetricScore {
    let var = if curve.len() < 2 { 0.0 } else { sample_variance(curve) };
    if !(var > VNPRSS_FLOOR) {
        return MetricScore {
            flat: true,
            ..MetricScore::new(Metric::Vnprss, f64::INFINITY)
        };
    }
    MetricScore::new(Metric::Vnprss, prss_value / var)
}

/// Uniform grid over the observed range of one predictor covariate.
pub fn predictor_grid(fitted: &FittedVolume, which: usize, points: usize) -> Result<Vec<f64>> {
    let term = fitted
        .design
        .predictor_terms
        .get(which)
        .ok_or_else(|| Error::Name(format!("predictor index {which} out of range")))?;
    let (lo, hi) = term.raw_range();
    let points = points.max(2);
    Ok((0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (points - 1) as f64
            }
        })
        .collect())
}

/// Scores every fitted voxel. Unmasked and degenerate voxels are NaN; so are
/// voxels where the F-test is undefined (too few subjects for the model df),
/// any non-finite score, and VN-PRSS voxels whose curve is flat.
pub fn evaluate_volume(
    fitted: &FittedVolume,
    obs: &ObservationVolume,
    metric: Metric,
    prss_params: &PrssParams,
) -> Result<StatMap> {
    if !fitted.geometry.matches(obs.geometry(), 1e-6) {
        return Err(Error::Geometry("fitted volume and observations differ in geometry".into()));
    }
    let n = obs.n_subjects();
    if fitted.design.n_subjects() != n {
        return Err(Error::Dimension {
            expected: n,
            found: fitted.design.n_subjects(),
        });
    }
    let has_predictors = !fitted.design.predictor_terms.is_empty();
    if !has_predictors && matches!(metric, Metric::FStat | Metric::FPvalue | Metric::Prss | Metric::Vnprss) {
        return Err(Error::Config(format!(
            "metric {metric} needs a predictor stage, but the design has no predictors"
        )));
    }
    let curve_metric = matches!(metric, Metric::Prss | Metric::Vnprss);
    if curve_metric {
        prss_params.validate()?;
    }
    let grid = if curve_metric {
        predictor_grid(fitted, 0, prss_params.grid_points)?
    } else {
        Vec::new()
    };
    // A degenerate grid (constant predictor) has no curvature to measure.
    let grid_ok = grid.len() >= 3 && grid[grid.len() - 1] > grid[0];

    let scored: Vec<f64> = fitted
        .voxels
        .par_iter()
        .zip(&fitted.models)
        .map(|(&v, m)| -> Result<f64> {
            if m.degenerate {
                return Ok(f64::NAN);
            }
            let value = match metric {
                Metric::Mse => m.rss_full / n as f64,
                Metric::R2 => {
                    let y = obs.series(v);
                    let mean = y.iter().sum::<f64>() / n as f64;
                    let tss: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
                    1.0 - m.rss_full / tss
                }
                Metric::Aic => aic(m.rss_full, n, m.df_full).value,
                Metric::FStat | Metric::FPvalue => {
                    match f_test(m.rss_full, m.rss_restricted, m.df_full, m.df_restricted, n) {
                        Ok((f, p)) => {
                            if metric == Metric::FStat {
                                f
                            } else {
                                p
                            }
                        }
                        Err(Error::InsufficientData { .. } | Error::Validation(_)) => f64::NAN,
                        Err(e) => return Err(e),
                    }
                }
                Metric::Prss | Metric::Vnprss => {
                    let curve = m.predictor_curve(&fitted.design, 0, &grid);
                    let penalty = if prss_params.penalty_weight == 0.0 || !grid_ok {
                        0.0
                    } else {
                        prss_params.penalty_weight * curvature_penalty(&grid, &curve)?
                    };
                    let value = m.rss_full + penalty;
                    if metric == Metric::Prss {
                        value
                    } else {
                        let s = vnprss(value, &curve);
                        if s.flat {
                            f64::NAN
                        } else {
                            s.value
                        }
                    }
                }
            };
            Ok(if value.is_finite() { value } else { f64::NAN })
        })
        .collect::<Result<_>>()?;

    let mut values = vec![f64::NAN; fitted.geometry.n_voxels()];
    for (&v, s) in fitted.voxels.iter().zip(scored) {
        values[v] = s;
    }
    let mut params = BTreeMap::new();
    if curve_metric {
        params.insert("penalty_weight".into(), serde_json::json!(prss_params.penalty_weight));
        params.insert("grid_points".into(), serde_json::json!(prss_params.grid_points));
    }
    if matches!(metric, Metric::FStat | Metric::FPvalue | Metric::Aic) {
        let df = match fitted.family() {
            crate::fit::Family::Glm => "rank of design blocks",
            crate::fit::Family::Gam => "corrector rank + sum of (smoother trace - 1)",
            _ => "corrector rank + free support vectors + 1",
        };
        params.insert("df".into(), serde_json::json!(df));
    }
    let provenance = Provenance {
        family: Some(fitted.family().name().to_string()),
        design_hash: Some(fitted.design.spec.hash()),
        params,
        steps: Vec::new(),
    };
    StatMap::new(fitted.geometry.clone(), values, metric.name(), metric.polarity(), provenance)
}
