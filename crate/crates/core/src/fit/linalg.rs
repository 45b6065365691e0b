//! Minimum-norm least squares through the singular value decomposition.

use nalgebra::{DMatrix, DVector};

/// Precomputed pseudo-inverse of a design block.
///
/// Singular values below `max(n, p) · ε · σ_max` are treated as zero, which
/// yields the minimum-norm solution for rank-deficient blocks.
/// [`LeastSquares::with_scale`] replaces `σ_max` with a caller-given scale.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pinv: DMatrix<f64>,
    rank: usize,
}

impl LeastSquares {
    pub fn new(x: &DMatrix<f64>) -> Self {
        Self::with_scale(x, None)
    }

    /// Rank cutoff relative to `scale` instead of this block's own largest
    /// singular value. Needed when `x` is a residual of a larger matrix whose
    /// dependent columns leave only rounding noise behind.
    pub fn with_scale(x: &DMatrix<f64>, scale: Option<f64>) -> Self {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Self {
                pinv: DMatrix::zeros(p, n),
                rank: 0,
            };
        }
        let svd = x.clone().svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let sigma_max = scale.unwrap_or_else(|| svd.singular_values.max());
        let tol = n.max(p) as f64 * f64::EPSILON * sigma_max;
        let mut pinv = DMatrix::zeros(p, n);
        let mut rank = 0;
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > tol {
                rank += 1;
                // pinv += v_k u_kᵀ / s
                let v = v_t.row(k);
                let u = u.column(k);
                pinv.ger(1.0 / s, &v.transpose(), &u, 1.0);
            }
        }
        Self { pinv, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_rows(&self) -> usize {
        self.pinv.ncols()
    }

    pub fn n_cols(&self) -> usize {
        self.pinv.nrows()
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        (&self.pinv * y).iter().copied().collect()
    }

    /// Coefficients for every column of `y` at once.
    pub fn solve_matrix(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        &self.pinv * y
    }
}

/// `x · beta` written into a fresh vector.
pub(crate) fn mat_vec(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.nrows()];
    for (c, &b) in beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(x.column(c).iter()) {
            *o += v * b;
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
