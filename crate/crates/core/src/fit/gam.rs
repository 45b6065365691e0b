//! Additive models `f(x) = α + Σ f_i(x_i)` estimated by backfitting.

use serde::{Deserialize, Serialize};

use super::smoother::{PreparedSmoother, Smoother, SmootherSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GamOptions {
    /// Convergence threshold on the largest per-point component change,
    /// relative to the standard deviation of the response.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GamOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamParams {
    pub alpha: f64,
    pub components: Vec<Smoother>,
    /// `1 + Σ (trace(S_i) - 1)`.
    pub df_equiv: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn gam_fit(
    inputs: &[Vec<f64>],
    y: &[f64],
    smoothers: &[SmootherSpec],
    options: GamOptions,
) -> Result<GamParams> {
    if smoothers.len() != inputs.len() {
        return Err(Error::Dimension {
            expected: inputs.len(),
            found: smoothers.len(),
        });
    }
    let prepared = inputs
        .iter()
        .zip(smoothers)
        .map(|(x, &spec)| PreparedSmoother::new(spec, x))
        .collect::<Result<Vec<_>>>()?;
    gam_fit_prepared(&prepared, y, options).map(|(params, _)| params)
}

/// Backfitting over smoothers already bound to their abscissae.
/// Also returns the fitted values at the training points.
pub fn gam_fit_prepared(
    smoothers: &[PreparedSmoother],
    y: &[f64],
    options: GamOptions,
) -> Result<(GamParams, Vec<f64>)> {
    if smoothers.is_empty() {
        return Err(Error::Input("additive model needs at least one input column".into()));
    }
    if !(options.tol > 0.0) {
        return Err(Error::Validation(format!("backfitting tol must be positive, got {}", options.tol)));
    }
    let n = y.len();
    for s in smoothers {
        if s.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: s.len(),
            });
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite observation".into()));
    }
    let df_equiv = 1.0 + smoothers.iter().map(|s| s.trace() - 1.0).sum::<f64>();

    let (min, max) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if min == max {
        let zero = vec![0.0; n];
        let components = smoothers
            .iter()
            .map(|s| s.fit(&zero))
            .collect::<Result<Vec<_>>>()?;
        let params = GamParams {
            alpha: y[0],
            components,
            df_equiv,
            converged: true,
            iterations: 0,
        };
        return Ok((params, y.to_vec()));
    }

    let alpha = y.iter().sum::<f64>() / n as f64;
    let sd = crate::volume::sample_variance(y).sqrt();
    let threshold = options.tol * sd;
    let k = smoothers.len();
    let mut f = vec![vec![0.0; n]; k];
    // running Σ_j f_j
    let mut total = vec![0.0; n];
    let mut targets = vec![vec![0.0; n]; k];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for (i, s) in smoothers.iter().enumerate() {
            for t in 0..n {
                targets[i][t] = y[t] - alpha - (total[t] - f[i][t]);
            }
            let mut next = s.smooth(&targets[i]);
            let mean = next.iter().sum::<f64>() / n as f64;
            for v in &mut next {
                *v -= mean;
            }
            for t in 0..n {
                max_change = max_change.max((next[t] - f[i][t]).abs());
                total[t] += next[t] - f[i][t];
            }
            f[i] = next;
        }
        if max_change < threshold {
            converged = true;
            break;
        }
    }

    let mut components = Vec::with_capacity(k);
    for (i, s) in smoothers.iter().enumerate() {
        let mut comp = s.fit(&targets[i])?;
        let raw_mean = s.smooth(&targets[i]).iter().sum::<f64>() / n as f64;
        comp.shift = raw_mean;
        components.push(comp);
    }
    let fitted = (0..n).map(|t| alpha + f.iter().map(|fi| fi[t]).sum::<f64>()).collect();
    Ok((
        GamParams {
            alpha,
            components,
            df_equiv,
            converged,
            iterations,
        },
        fitted,
    ))
}

pub fn gam_predict(params: &GamParams, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if inputs.len() != params.components.len() {
        return Err(Error::Dimension {
            expected: params.components.len(),
            found: inputs.len(),
        });
    }
    let n = inputs.first().map_or(0, Vec::len);
    let mut out = vec![params.alpha; n];
    for (comp, x) in params.components.iter().zip(inputs) {
        if x.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: x.len(),
            });
        }
        for (o, &v) in out.iter_mut().zip(x) {
            *o += comp.evaluate(v);
        }
    }
    Ok(out)
}
