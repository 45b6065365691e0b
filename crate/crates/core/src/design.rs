//! Corrector / predictor design matrices with per-covariate polynomial
//! expansion.
//!
//! Each covariate is optionally z-scored, raised to powers `1..=degree`, and
//! each resulting power column is z-scored again, so every non-intercept
//! column ends up with mean 0 and unit sample standard deviation. The
//! intercept always lives in the corrector block.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume::CovariateTable;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub covariate: String,
    pub degree: u32,
}

impl Term {
    pub fn new(covariate: impl Into<String>, degree: u32) -> Self {
        Self {
            covariate: covariate.into(),
            degree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub correctors: Vec<Term>,
    pub predictors: Vec<Term>,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in self.correctors.iter().chain(&self.predictors) {
            if t.degree == 0 {
                return Err(Error::Validation(format!(
                    "covariate '{}' has degree 0; degrees must be ≥ 1",
                    t.covariate
                )));
            }
            if !seen.insert(t.covariate.as_str()) {
                return Err(Error::Validation(format!(
                    "covariate '{}' appears more than once",
                    t.covariate
                )));
            }
        }
        Ok(())
    }

    /// Stable short hash used to tag derived artifacts.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("design spec serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Affine map `(x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub shift: f64,
    pub scale: f64,
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling {
        shift: 0.0,
        scale: 1.0,
    };

    fn fit(values: &[f64]) -> Scaling {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        if var > 0.0 {
            Scaling {
                shift: mean,
                scale: var.sqrt(),
            }
        } else {
            // constant columns are left as they are
            Scaling::IDENTITY
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }
}

/// Expansion of one covariate into its power columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedTerm {
    pub covariate: String,
    pub degree: u32,
    /// Applied to the raw covariate before exponentiation.
    pub input_scaling: Scaling,
    /// Applied to each power column, index `power - 1`.
    pub column_scaling: Vec<Scaling>,
    /// Raw covariate values of the training subjects.
    pub raw: Vec<f64>,
}

impl ExpandedTerm {
    fn build(covariate: &str, degree: u32, raw: &[f64], standardize: bool) -> Self {
        let input_scaling = if standardize {
            Scaling::fit(raw)
        } else {
            Scaling::IDENTITY
        };
        let z: Vec<f64> = raw.iter().map(|&x| input_scaling.apply(x)).collect();
        let column_scaling = (1..=degree)
            .map(|p| {
                if standardize {
                    let col: Vec<f64> = z.iter().map(|v| v.powi(p as i32)).collect();
                    Scaling::fit(&col)
                } else {
                    Scaling::IDENTITY
                }
            })
            .collect();
        Self {
            covariate: covariate.to_string(),
            degree,
            input_scaling,
            column_scaling,
            raw: raw.to_vec(),
        }
    }

    /// Design columns for a raw covariate value.
    pub fn expand(&self, raw: f64) -> impl Iterator<Item = f64> + '_ {
        let z = self.input_scaling.apply(raw);
        self.column_scaling
            .iter()
            .enumerate()
            .map(move |(p, s)| s.apply(z.powi(p as i32 + 1)))
    }

    /// The degree-1 column value, used as the input of kernel and smoother fits.
    pub fn linear_input(&self, raw: f64) -> f64 {
        self.column_scaling[0].apply(self.input_scaling.apply(raw))
    }

    pub fn column_names(&self) -> impl Iterator<Item = String> + '_ {
        (1..=self.degree).map(move |p| {
            if p == 1 {
                self.covariate.clone()
            } else {
                format!("{}^{p}", self.covariate)
            }
        })
    }

    pub fn raw_range(&self) -> (f64, f64) {
        self.raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub spec: DesignSpec,
    /// Includes the leading intercept column.
    pub corrector_block: DMatrix<f64>,
    pub predictor_block: DMatrix<f64>,
    pub corrector_terms: Vec<ExpandedTerm>,
    pub predictor_terms: Vec<ExpandedTerm>,
    pub column_names: Vec<String>,
}

pub fn build_design(table: &CovariateTable, spec: &DesignSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    let n = table.n_subjects();
    let expand_all = |terms: &[Term]| -> Result<Vec<ExpandedTerm>> {
        terms
            .iter()
            .map(|t| {
                let raw = table
                    .column(&t.covariate)
                    .ok_or_else(|| Error::Name(format!("covariate '{}' not in table", t.covariate)))?;
                Ok(ExpandedTerm::build(&t.covariate, t.degree, raw, spec.standardize))
            })
            .collect()
    };
    let corrector_terms = expand_all(&spec.correctors)?;
    let predictor_terms = expand_all(&spec.predictors)?;

    let p_c = 1 + corrector_terms.iter().map(|t| t.degree as usize).sum::<usize>();
    let p_p = predictor_terms.iter().map(|t| t.degree as usize).sum::<usize>();
    let mut corrector_block = DMatrix::zeros(n, p_c);
    let mut predictor_block = DMatrix::zeros(n, p_p);
    for s in 0..n {
        corrector_block[(s, 0)] = 1.0;
        fill_row(&corrector_terms, s, &mut corrector_block, 1);
        fill_row(&predictor_terms, s, &mut predictor_block, 0);
    }

    let mut column_names = vec!["intercept".to_string()];
    for t in corrector_terms.iter().chain(&predictor_terms) {
        column_names.extend(t.column_names());
    }
    Ok(DesignMatrix {
        spec: spec.clone(),
        corrector_block,
        predictor_block,
        corrector_terms,
        predictor_terms,
        column_names,
    })
}

fn fill_row(terms: &[ExpandedTerm], s: usize, block: &mut DMatrix<f64>, start: usize) {
    let mut c = start;
    for t in terms {
        for v in t.expand(t.raw[s]) {
            block[(s, c)] = v;
            c += 1;
        }
    }
}

pub fn restricted_design(m: &DesignMatrix) -> DesignMatrix {
    let n = m.n_subjects();
    let p_c = m.corrector_block.ncols();
    let mut spec = m.spec.clone();
    spec.predictors.clear();
    DesignMatrix {
        spec,
        corrector_block: m.corrector_block.clone(),
        predictor_block: DMatrix::zeros(n, 0),
        corrector_terms: m.corrector_terms.clone(),
        predictor_terms: Vec::new(),
        column_names: m.column_names[..p_c].to_vec(),
    }
}

impl DesignMatrix {
    pub fn n_subjects(&self) -> usize {
        self.corrector_block.nrows()
    }

    /// One column per predictor covariate: its standardized degree-1 values.
    /// These are the inputs of the kernel and smoother families.
    pub fn predictor_inputs(&self) -> Vec<Vec<f64>> {
        self.predictor_terms
            .iter()
            .map(|t| t.raw.iter().map(|&x| t.linear_input(x)).collect())
            .collect()
    }

    pub fn corrector_means(&self) -> Vec<f64> {
        column_means(&self.corrector_block)
    }

    pub fn predictor_index(&self, name: &str) -> Option<usize> {
        self.predictor_terms.iter().position(|t| t.covariate == name)
    }

    /// Predictor-block row where predictor `which` takes raw value `raw`
    /// and every other predictor sits at the mean of its training columns.
    pub fn predictor_row_at(&self, which: usize, raw: f64) -> Vec<f64> {
        let means = column_means(&self.predictor_block);
        let mut row = Vec::with_capacity(means.len());
        let mut c = 0;
        for (t_idx, t) in self.predictor_terms.iter().enumerate() {
            if t_idx == which {
                row.extend(t.expand(raw));
            } else {
                row.extend_from_slice(&means[c..c + t.degree as usize]);
            }
            c += t.degree as usize;
        }
        row
    }

    /// Kernel/smoother input vector at raw value `raw` of predictor `which`,
    /// other inputs at their training means.
    pub fn predictor_input_at(&self, which: usize, raw: f64) -> Vec<f64> {
        self.predictor_inputs()
            .iter()
            .enumerate()
            .map(|(t, col)| {
                if t == which {
                    self.predictor_terms[t].linear_input(raw)
                } else {
                    col.iter().sum::<f64>() / col.len() as f64
                }
            })
            .collect()
    }
}

pub(crate) fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}
