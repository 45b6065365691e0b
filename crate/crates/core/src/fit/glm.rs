use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::linalg::{mat_vec, LeastSquares};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmParams {
    pub coefficients: Vec<f64>,
}

/// Ordinary least squares; minimum-norm coefficients when `x` is rank deficient.
pub fn glm_fit(x: &DMatrix<f64>, y: &[f64]) -> Result<GlmParams> {
    if x.nrows() < 1 {
        return Err(Error::Input("least squares needs at least one observation".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite observation".into()));
    }
    Ok(GlmParams {
        coefficients: LeastSquares::new(x).solve(y),
    })
}

pub fn glm_predict(params: &GlmParams, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != params.coefficients.len() {
        return Err(Error::Dimension {
            expected: params.coefficients.len(),
            found: x.ncols(),
        });
    }
    Ok(mat_vec(x, &params.coefficients))
}
