//! ε-insensitive support vector regression solved by sequential minimal
//! optimization.
//!
//! The dual is written over 2n variables `a = (α, α*)` with signs
//! `s = (+1…, −1…)`:
//!
//! ```text
//! min ½ aᵀQa + pᵀa   s.t.  Σ s_t a_t = 0,  0 ≤ a_t ≤ C
//! Q_tu = s_t s_u K(x_t, x_u),   p = (ε − y, ε + y)
//! ```
//!
//! so that `β_i = α_i − α*_i` and `f(x) = Σ β_i K(x_i, x) + b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Kernel {
    /// `exp(-γ ‖x − x'‖²)`
    Rbf { gamma: f64 },
    /// `(γ ⟨x, x'⟩ + coef0)^degree`
    Polynomial { gamma: f64, degree: u32, coef0: f64 },
}

impl Kernel {
    pub fn gamma(&self) -> f64 {
        match *self {
            Kernel::Rbf { gamma } | Kernel::Polynomial { gamma, .. } => gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.gamma();
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::Validation(format!("kernel gamma must be positive, got {g}")));
        }
        if let Kernel::Polynomial { degree: 0, .. } = self {
            return Err(Error::Validation("polynomial kernel degree must be ≥ 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Polynomial { gamma, degree, coef0 } => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (gamma * dot + coef0).powi(degree as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrHyper {
    pub epsilon: f64,
    pub c: f64,
}

impl SvrHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Validation(format!("epsilon must be ≥ 0, got {}", self.epsilon)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Validation(format!("C must be positive, got {}", self.c)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoOptions {
    /// Maximal KKT violation at termination, as a multiple of C.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SmoOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 10_000_000,
        }
    }
}

/// Dense kernel matrix over training rows, shared by every voxel fit that uses
/// the same inputs.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    kernel: Kernel,
    rows: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn new(kernel: Kernel, rows: Vec<Vec<f64>>) -> Result<Self> {
        kernel.validate()?;
        let n = rows.len();
        if let Some(d) = rows.first().map(Vec::len) {
            if let Some(bad) = rows.iter().find(|r| r.len() != d) {
                return Err(Error::Dimension {
                    expected: d,
                    found: bad.len(),
                });
            }
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite SVR input".into()));
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = kernel.eval(&rows[i], &rows[j]);
                values[i * n + j] = k;
                values[j * n + i] = k;
            }
        }
        Ok(Self { kernel, rows, values })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.rows.len() + j]
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let n = self.rows.len();
        &self.values[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportVector {
    pub index: usize,
    pub coefficient: f64,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub hyper: SvrHyper,
    pub kernel: Kernel,
    /// `β_i = α_i − α*_i` for every training subject.
    pub dual_coeffs: Vec<f64>,
    pub bias: f64,
    /// Training rows with nonzero β, retained for kernel evaluation.
    pub support: Vec<SupportVector>,
    /// Dual objective `½ βᵀKβ + ε Σ|β| − yᵀβ` at the solution.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvrParams {
    pub fn support_mask(&self) -> Vec<bool> {
        self.dual_coeffs.iter().map(|&b| b != 0.0).collect()
    }
}

pub fn svr_fit(x: &[Vec<f64>], y: &[f64], hyper: SvrHyper, kernel: Kernel) -> Result<SvrParams> {
    let km = KernelMatrix::new(kernel, x.to_vec())?;
    svr_fit_with_kernel(&km, y, hyper, SmoOptions::default())
}

pub fn svr_fit_with_kernel(
    km: &KernelMatrix,
    y: &[f64],
    hyper: SvrHyper,
    options: SmoOptions,
) -> Result<SvrParams> {
    hyper.validate()?;
    let n = km.len();
    if n < 2 {
        return Err(Error::Input(format!("SVR needs at least 2 observations, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite SVR target".into()));
    }

    let c = hyper.c;
    let eps = options.tolerance * c;
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let idx = |t: usize| if t < n { t } else { t - n };

    let mut a = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| if t < n { hyper.epsilon - y[t] } else { hyper.epsilon + y[t - n] })
        .collect();
    let qd: Vec<f64> = (0..l).map(|t| km.get(idx(t), idx(t))).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iter {
        let Some((i, j)) = select_working_set(&a, &grad, &qd, km, n, c, eps) else {
            converged = true;
            break;
        };
        iterations += 1;

        let (si, sj) = (sign(i), sign(j));
        let kij = km.get(idx(i), idx(j));
        let (old_i, old_j) = (a[i], a[j]);
        if si != sj {
            let quad = qd[i] + qd[j] + 2.0 * (si * sj * kij);
            let quad = if quad <= 0.0 { TAU } else { quad };
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let quad = qd[i] + qd[j] - 2.0 * (si * sj * kij);
            let quad = if quad <= 0.0 { TAU } else { quad };
            let delta = (grad[i] - grad[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }

        let di = a[i] - old_i;
        let dj = a[j] - old_j;
        let (ri, rj) = (km.row(idx(i)), km.row(idx(j)));
        let (ci, cj) = (si * di, sj * dj);
        for t in 0..l {
            let u = idx(t);
            grad[t] += sign(t) * (ri[u] * ci + rj[u] * cj);
        }
    }

    let dual_coeffs: Vec<f64> = (0..n).map(|i| a[i] - a[i + n]).collect();
    let bias = if dual_coeffs.iter().all(|&b| b == 0.0) {
        // feasible interval is [max y − ε, min y + ε]
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        (lo + hi) / 2.0
    } else {
        -rho(&a, &grad, n, c)
    };
    let objective = (0..l)
        .map(|t| {
            let p = if t < n { hyper.epsilon - y[t] } else { hyper.epsilon + y[t - n] };
            a[t] * (grad[t] + p)
        })
        .sum::<f64>()
        / 2.0;
    let support = dual_coeffs
        .iter()
        .enumerate()
        .filter(|(_, &b)| b != 0.0)
        .map(|(i, &b)| SupportVector {
            index: i,
            coefficient: b,
            input: km.rows[i].clone(),
        })
        .collect();

    Ok(SvrParams {
        hyper,
        kernel: km.kernel,
        dual_coeffs,
        bias,
        support,
        objective,
        iterations,
        converged,
    })
}

const TAU: f64 = 1e-12;

/// Second-order working-set selection; `None` once the maximal violation
/// falls below `eps`.
fn select_working_set(
    a: &[f64],
    grad: &[f64],
    qd: &[f64],
    km: &KernelMatrix,
    n: usize,
    c: f64,
    eps: f64,
) -> Option<(usize, usize)> {
    let l = a.len();
    let mut gmax = f64::NEG_INFINITY;
    let mut i_sel = None;
    for t in 0..l {
        if t < n {
            if a[t] < c && -grad[t] >= gmax {
                gmax = -grad[t];
                i_sel = Some(t);
            }
        } else if a[t] > 0.0 && grad[t] >= gmax {
            gmax = grad[t];
            i_sel = Some(t);
        }
    }
    let i = i_sel?;
    let si = if i < n { 1.0 } else { -1.0 };
    let ki = km.row(if i < n { i } else { i - n });

    let mut gmax2 = f64::NEG_INFINITY;
    let mut j_sel = None;
    let mut obj_min = f64::INFINITY;
    for t in 0..l {
        let (st, u) = if t < n { (1.0, t) } else { (-1.0, t - n) };
        // Q_it
        let q_it = si * st * ki[u];
        if t < n {
            if a[t] > 0.0 {
                let grad_diff = gmax + grad[t];
                gmax2 = gmax2.max(grad[t]);
                if grad_diff > 0.0 {
                    let quad = qd[i] + qd[t] - 2.0 * si * q_it;
                    let quad = if quad > 0.0 { quad } else { TAU };
                    let obj = -(grad_diff * grad_diff) / quad;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        } else if a[t] < c {
            let grad_diff = gmax - grad[t];
            gmax2 = gmax2.max(-grad[t]);
            if grad_diff > 0.0 {
                let quad = qd[i] + qd[t] + 2.0 * si * q_it;
                let quad = if quad > 0.0 { quad } else { TAU };
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = Some(t);
                }
            }
        }
    }
    if gmax + gmax2 < eps {
        return None;
    }
    j_sel.map(|j| (i, j))
}

/// Offset ρ = −b: mean of s_t G_t over free variables, else the midpoint of
/// the KKT bounds.
fn rho(a: &[f64], grad: &[f64], n: usize, c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..a.len() {
        let s = if t < n { 1.0 } else { -1.0 };
        let yg = s * grad[t];
        if a[t] >= c {
            if s < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if a[t] <= 0.0 {
            if s > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

pub fn svr_predict(params: &SvrParams, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    if let Some(sv) = params.support.first() {
        if let Some(bad) = x.iter().find(|r| r.len() != sv.input.len()) {
            return Err(Error::Dimension {
                expected: sv.input.len(),
                found: bad.len(),
            });
        }
    }
    Ok(x.iter().map(|row| params.decision(row)).collect())
}

impl SvrParams {
    #[inline]
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias
            + self
                .support
                .iter()
                .map(|sv| sv.coefficient * self.kernel.eval(&sv.input, row))
                .sum::<f64>()
    }

    /// Training predictions using a precomputed kernel matrix.
    pub(crate) fn predict_training(&self, km: &KernelMatrix) -> Vec<f64> {
        let n = km.len();
        let mut out = vec![self.bias; n];
        for sv in &self.support {
            let row = km.row(sv.index);
            for (o, &k) in out.iter_mut().zip(row) {
                *o += sv.coefficient * k;
            }
        }
        out
    }
}

/// Equivalent degrees of freedom: unbounded support vectors plus one for the
/// bias.
pub fn svr_equivalent_df(params: &SvrParams) -> f64 {
    let c = params.hyper.c;
    let free = params
        .dual_coeffs
        .iter()
        .filter(|&&b| b != 0.0 && b.abs() < c)
        .count();
    (free + 1) as f64
}
