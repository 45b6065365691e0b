//! Univariate linear scatterplot smoothers.
//!
//! All three kinds are linear in the response, so a [`PreparedSmoother`]
//! caches the n×n smoother ("hat") matrix for a fixed set of abscissae; every
//! backfitting sweep and every voxel sharing those abscissae then costs one
//! matrix-vector product.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::linalg::LeastSquares;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SmootherSpec {
    /// Natural cubic smoothing spline with roughness penalty `penalty · ∫f''²`.
    CubicSpline { penalty: f64 },
    /// Least-squares polynomial.
    Polynomial { degree: u32 },
    /// Nadaraya–Watson with Gaussian weights `exp(-(x_i - x)² / (2 h²))`.
    GaussianKernel { bandwidth: f64 },
}

impl SmootherSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SmootherSpec::CubicSpline { penalty } if !(penalty > 0.0 && penalty.is_finite()) => {
                Err(Error::Validation(format!("spline penalty must be positive, got {penalty}")))
            }
            SmootherSpec::Polynomial { degree: 0 } => {
                Err(Error::Validation("polynomial smoother degree must be ≥ 1".into()))
            }
            SmootherSpec::GaussianKernel { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::Validation(format!("kernel bandwidth must be positive, got {bandwidth}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum Basis {
    Spline {
        knots: Vec<f64>,
        /// Knot index of each training abscissa.
        group: Vec<usize>,
    },
    Polynomial {
        center: f64,
        scale: f64,
        ls: LeastSquares,
    },
    Kernel,
}

/// A smoother bound to fixed training abscissae.
#[derive(Debug, Clone)]
pub struct PreparedSmoother {
    spec: SmootherSpec,
    x: Vec<f64>,
    hat: DMatrix<f64>,
    trace: f64,
    basis: Basis,
}

impl PreparedSmoother {
    pub fn new(spec: SmootherSpec, x: &[f64]) -> Result<Self> {
        spec.validate()?;
        if x.is_empty() {
            return Err(Error::Input("smoother needs at least one point".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite smoother abscissa".into()));
        }
        let (hat, basis) = match spec {
            SmootherSpec::CubicSpline { penalty } => {
                if x.len() < 4 {
                    return Err(Error::Input(format!(
                        "cubic spline smoother needs at least 4 points, got {}",
                        x.len()
                    )));
                }
                spline_hat(x, penalty)
            }
            SmootherSpec::Polynomial { degree } => polynomial_hat(x, degree),
            SmootherSpec::GaussianKernel { bandwidth } => (kernel_hat(x, bandwidth), Basis::Kernel),
        };
        let trace = hat.diagonal().sum();
        Ok(Self {
            spec,
            x: x.to_vec(),
            hat,
            trace,
            basis,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn hat(&self) -> &DMatrix<f64> {
        &self.hat
    }

    /// Smoothed values at the training abscissae.
    pub fn smooth(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        for (j, &yj) in y.iter().enumerate() {
            if yj == 0.0 {
                continue;
            }
            for (o, &h) in out.iter_mut().zip(self.hat.column(j).iter()) {
                *o += h * yj;
            }
        }
        out
    }

    /// Fitted smoother state that can be evaluated anywhere.
    pub fn fit(&self, y: &[f64]) -> Result<Smoother> {
        if y.len() != self.x.len() {
            return Err(Error::Dimension {
                expected: self.x.len(),
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite smoother response".into()));
        }
        let state = match &self.basis {
            Basis::Spline { knots, group } => {
                let fitted = self.smooth(y);
                let mut values = vec![0.0; knots.len()];
                for (i, &g) in group.iter().enumerate() {
                    values[g] = fitted[i];
                }
                let second_derivs = spline_second_derivatives(knots, &values);
                SmootherState::Spline {
                    knots: knots.clone(),
                    values,
                    second_derivs,
                }
            }
            Basis::Polynomial { center, scale, ls } => SmootherState::Polynomial {
                center: *center,
                scale: *scale,
                coefficients: ls.solve(y),
            },
            Basis::Kernel => {
                let SmootherSpec::GaussianKernel { bandwidth } = self.spec else {
                    unreachable!("kernel basis only built for kernel spec")
                };
                SmootherState::Kernel {
                    bandwidth,
                    x: self.x.clone(),
                    targets: y.to_vec(),
                }
            }
        };
        Ok(Smoother {
            spec: self.spec,
            trace: self.trace,
            shift: 0.0,
            state,
        })
    }
}

/// A fitted univariate smoother.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoother {
    pub spec: SmootherSpec,
    /// Trace of the smoother matrix on the training abscissae.
    pub trace: f64,
    /// Subtracted from every evaluation (identifiability centering in GAMs).
    pub shift: f64,
    state: SmootherState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum SmootherState {
    Spline {
        knots: Vec<f64>,
        values: Vec<f64>,
        second_derivs: Vec<f64>,
    },
    Polynomial {
        center: f64,
        scale: f64,
        coefficients: Vec<f64>,
    },
    Kernel {
        bandwidth: f64,
        x: Vec<f64>,
        targets: Vec<f64>,
    },
}

impl Smoother {
    pub fn evaluate(&self, t: f64) -> f64 {
        let raw = match &self.state {
            SmootherState::Spline {
                knots,
                values,
                second_derivs,
            } => eval_natural_spline(knots, values, second_derivs, t),
            SmootherState::Polynomial {
                center,
                scale,
                coefficients,
            } => {
                let u = (t - center) / scale;
                coefficients.iter().rev().fold(0.0, |acc, &c| acc * u + c)
            }
            SmootherState::Kernel {
                bandwidth,
                x,
                targets,
            } => {
                let denom = 2.0 * bandwidth * bandwidth;
                let max_e = x
                    .iter()
                    .map(|&xi| -(xi - t) * (xi - t) / denom)
                    .fold(f64::NEG_INFINITY, f64::max);
                let (num, den) = x.iter().zip(targets).fold((0.0, 0.0), |(n, d), (&xi, &yi)| {
                    let w = (-(xi - t) * (xi - t) / denom - max_e).exp();
                    (n + w * yi, d + w)
                });
                num / den
            }
        };
        raw - self.shift
    }

    pub fn evaluate_many(&self, t: &[f64]) -> Vec<f64> {
        t.iter().map(|&v| self.evaluate(v)).collect()
    }
}

pub fn smoother_fit(spec: SmootherSpec, x: &[f64], y: &[f64]) -> Result<Smoother> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    PreparedSmoother::new(spec, x)?.fit(y)
}

/// Smoother matrix of the natural cubic smoothing spline, in Reinsch form.
///
/// Tied abscissae are merged into one knot whose response is the group mean
/// and whose weight is the group size.
fn spline_hat(x: &[f64], penalty: f64) -> (DMatrix<f64>, Basis) {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut knots: Vec<f64> = Vec::new();
    let mut group = vec![0; x.len()];
    for &i in &order {
        if knots.last() != Some(&x[i]) {
            knots.push(x[i]);
        }
        group[i] = knots.len() - 1;
    }
    let m = knots.len();
    let mut counts = vec![0.0; m];
    for &g in &group {
        counts[g] += 1.0;
    }

    // Smoother on knot means: S = I - λ W⁻¹ Q (R + λ Qᵀ W⁻¹ Q)⁻¹ Qᵀ
    let mut s_knots = DMatrix::<f64>::identity(m, m);
    if m >= 3 {
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let inner = m - 2;
        let mut q = DMatrix::<f64>::zeros(m, inner);
        let mut r = DMatrix::<f64>::zeros(inner, inner);
        for j in 0..inner {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < inner {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let mut winv_q = q.clone();
        for (row, &c) in counts.iter().enumerate() {
            winv_q.row_mut(row).scale_mut(1.0 / c);
        }
        let b = &r + (q.transpose() * &winv_q) * penalty;
        let b_inv = b
            .cholesky()
            .expect("R + λ QᵀW⁻¹Q is positive definite")
            .inverse();
        s_knots -= (winv_q * b_inv * q.transpose()) * penalty;
    }

    let n = x.len();
    let hat = DMatrix::from_fn(n, n, |i, j| s_knots[(group[i], group[j])] / counts[group[j]]);
    (hat, Basis::Spline { knots, group })
}

/// Second derivatives at the knots of the natural cubic spline through
/// `values`: solves R γ = Qᵀ g with γ zero at both ends.
fn spline_second_derivatives(knots: &[f64], values: &[f64]) -> Vec<f64> {
    let m = knots.len();
    let mut gamma = vec![0.0; m];
    if m < 3 {
        return gamma;
    }
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let inner = m - 2;
    let rhs: Vec<f64> = (0..inner)
        .map(|j| {
            (values[j + 2] - values[j + 1]) / h[j + 1] - (values[j + 1] - values[j]) / h[j]
        })
        .collect();
    let diag: Vec<f64> = (0..inner).map(|j| (h[j] + h[j + 1]) / 3.0).collect();
    let off: Vec<f64> = (0..inner.saturating_sub(1)).map(|j| h[j + 1] / 6.0).collect();
    let sol = solve_symmetric_tridiagonal(&diag, &off, &rhs);
    gamma[1..m - 1].copy_from_slice(&sol);
    gamma
}

fn solve_symmetric_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - off[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

fn eval_natural_spline(knots: &[f64], g: &[f64], gamma: &[f64], t: f64) -> f64 {
    let m = knots.len();
    if m == 1 {
        return g[0];
    }
    if t <= knots[0] {
        let h = knots[1] - knots[0];
        let slope = (g[1] - g[0]) / h - h * gamma[1] / 6.0;
        return g[0] + slope * (t - knots[0]);
    }
    if t >= knots[m - 1] {
        let h = knots[m - 1] - knots[m - 2];
        let slope = (g[m - 1] - g[m - 2]) / h + h * gamma[m - 2] / 6.0;
        return g[m - 1] + slope * (t - knots[m - 1]);
    }
    let i = knots.partition_point(|&k| k <= t).saturating_sub(1).min(m - 2);
    let h = knots[i + 1] - knots[i];
    let a = t - knots[i];
    let b = knots[i + 1] - t;
    (a * g[i + 1] + b * g[i]) / h
        - a * b / 6.0 * ((1.0 + a / h) * gamma[i + 1] + (1.0 + b / h) * gamma[i])
}

fn polynomial_hat(x: &[f64], degree: u32) -> (DMatrix<f64>, Basis) {
    let n = x.len();
    let center = x.iter().sum::<f64>() / n as f64;
    let spread = x.iter().map(|v| (v - center).abs()).fold(0.0, f64::max);
    let scale = if spread > 0.0 { spread } else { 1.0 };
    let vander = DMatrix::from_fn(n, degree as usize + 1, |r, c| ((x[r] - center) / scale).powi(c as i32));
    let ls = LeastSquares::new(&vander);
    let hat = &vander * ls.solve_matrix(&DMatrix::identity(n, n));
    (hat, Basis::Polynomial { center, scale, ls })
}

fn kernel_hat(x: &[f64], bandwidth: f64) -> DMatrix<f64> {
    let n = x.len();
    let denom = 2.0 * bandwidth * bandwidth;
    let mut w = DMatrix::from_fn(n, n, |i, j| (-(x[i] - x[j]).powi(2) / denom).exp());
    for mut row in w.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    w
}
