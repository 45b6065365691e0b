//! Two-stage per-voxel fitting shared by every model family.
//!
//! Stage one regresses the observations on the corrector block (the
//! restricted model). Stage two fits the chosen family to the corrector
//! residuals using the predictor block. For the GLM family the predictor
//! columns are first residualized on the correctors, which makes the staged
//! fit identical to the joint least-squares fit and keeps the F-test exact.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gam::{gam_fit_prepared, GamOptions, GamParams};
use super::glm::GlmParams;
use super::linalg::{dot, mat_vec, LeastSquares};
use super::smoother::{PreparedSmoother, SmootherSpec};
use super::svr::{svr_equivalent_df, svr_fit_with_kernel, Kernel, KernelMatrix, SmoOptions, SvrHyper, SvrParams};
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::volume::{ObservationVolume, VolumeGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Glm,
    Gam,
    SvrPoly,
    SvrRbf,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Glm => "glm",
            Family::Gam => "gam",
            Family::SvrPoly => "svr-poly",
            Family::SvrRbf => "svr-rbf",
        }
    }
}

/// Family plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelSpec {
    Glm,
    Gam {
        smoother: SmootherSpec,
        #[serde(default)]
        options: GamOptions,
    },
    Svr {
        kernel: Kernel,
        hyper: SvrHyper,
    },
}

impl ModelSpec {
    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Glm => Family::Glm,
            ModelSpec::Gam { .. } => Family::Gam,
            ModelSpec::Svr { kernel: Kernel::Rbf { .. }, .. } => Family::SvrRbf,
            ModelSpec::Svr { kernel: Kernel::Polynomial { .. }, .. } => Family::SvrPoly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Glm => Ok(()),
            ModelSpec::Gam { smoother, options } => {
                smoother.validate()?;
                if !(options.tol > 0.0) {
                    return Err(Error::Validation("backfitting tol must be positive".into()));
                }
                Ok(())
            }
            ModelSpec::Svr { kernel, hyper } => {
                kernel.validate()?;
                hyper.validate()
            }
        }
    }

    /// Overrides one named hyperparameter; used by grid search.
    pub fn with_hyper(mut self, name: &str, value: f64) -> Result<Self> {
        let family = self.family().name();
        match (&mut self, name.to_ascii_lowercase().as_str()) {
            (ModelSpec::Svr { hyper, .. }, "epsilon") => hyper.epsilon = value,
            (ModelSpec::Svr { hyper, .. }, "c") => hyper.c = value,
            (ModelSpec::Svr { kernel: Kernel::Rbf { gamma }, .. }, "gamma")
            | (ModelSpec::Svr { kernel: Kernel::Polynomial { gamma, .. }, .. }, "gamma") => *gamma = value,
            (ModelSpec::Gam { smoother: SmootherSpec::CubicSpline { penalty }, .. }, "penalty") => *penalty = value,
            (ModelSpec::Gam { smoother: SmootherSpec::GaussianKernel { bandwidth }, .. }, "bandwidth") => *bandwidth = value,
            _ => return Err(Error::Name(format!("hyperparameter '{name}' does not apply to {family}"))),
        }
        self.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredictorFit {
    /// No predictors: the full model is the restricted model.
    None,
    Glm {
        params: GlmParams,
        /// Corrector-space adjustment from residualizing the predictor
        /// columns: the stage predicts `x_p·β − x_c·offset`.
        corrector_offset: Vec<f64>,
    },
    Gam(GamParams),
    Svr(SvrParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedVoxelModel {
    pub family: Family,
    pub corrector: GlmParams,
    pub predictor: PredictorFit,
    pub rss_full: f64,
    pub rss_restricted: f64,
    pub df_full: f64,
    pub df_restricted: f64,
    /// Zero-variance observations; no model was fitted.
    pub degenerate: bool,
}

impl FittedVoxelModel {
    /// Corrector-stage prediction for the training subjects.
    pub fn corrector_prediction(&self, design: &DesignMatrix) -> Vec<f64> {
        mat_vec(&design.corrector_block, &self.corrector.coefficients)
    }

    /// Observations minus the corrector-stage prediction.
    pub fn corrected_observations(&self, design: &DesignMatrix, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.corrector_prediction(design))
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Predictor-stage curve along predictor `which` (raw covariate units),
    /// with the other predictors and all correctors at their sample means.
    pub fn predictor_curve(&self, design: &DesignMatrix, which: usize, grid: &[f64]) -> Vec<f64> {
        match &self.predictor {
            PredictorFit::None => vec![0.0; grid.len()],
            PredictorFit::Glm {
                params,
                corrector_offset,
            } => {
                let shift = dot(&design.corrector_means(), corrector_offset);
                grid.iter()
                    .map(|&t| dot(&design.predictor_row_at(which, t), &params.coefficients) - shift)
                    .collect()
            }
            PredictorFit::Gam(params) => grid
                .iter()
                .map(|&t| {
                    let input = design.predictor_input_at(which, t);
                    params.alpha
                        + params
                            .components
                            .iter()
                            .zip(&input)
                            .map(|(c, &x)| c.evaluate(x))
                            .sum::<f64>()
                })
                .collect(),
            PredictorFit::Svr(params) => grid
                .iter()
                .map(|&t| params.decision(&design.predictor_input_at(which, t)))
                .collect(),
        }
    }
}

enum Stage {
    None,
    Glm {
        ls: LeastSquares,
        residualized: DMatrix<f64>,
        /// Corrector coefficients of each predictor column, p_c × p_p.
        projection: DMatrix<f64>,
    },
    Gam {
        smoothers: Vec<PreparedSmoother>,
        options: GamOptions,
    },
    Svr {
        kernel: KernelMatrix,
        hyper: SvrHyper,
    },
}

/// A fitter bound to one design and model spec. Everything that depends only
/// on the design (factorizations, smoother and kernel matrices) is computed
/// once here and shared by every voxel.
pub struct VoxelFitter<'a> {
    design: &'a DesignMatrix,
    spec: ModelSpec,
    corrector: LeastSquares,
    stage: Stage,
}

impl<'a> VoxelFitter<'a> {
    pub fn new(design: &'a DesignMatrix, spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let corrector = LeastSquares::new(&design.corrector_block);
        let stage = if design.predictor_block.ncols() == 0 {
            Stage::None
        } else {
            match spec {
                ModelSpec::Glm => {
                    let xp = &design.predictor_block;
                    let projection = corrector.solve_matrix(xp);
                    let residualized = xp - &design.corrector_block * &projection;
                    let joint_norm = (design.corrector_block.norm_squared() + xp.norm_squared()).sqrt();
                    Stage::Glm {
                        ls: LeastSquares::with_scale(&residualized, Some(joint_norm)),
                        residualized,
                        projection,
                    }
                }
                ModelSpec::Gam { smoother, options } => Stage::Gam {
                    smoothers: design
                        .predictor_inputs()
                        .iter()
                        .map(|x| PreparedSmoother::new(smoother, x))
                        .collect::<Result<_>>()?,
                    options,
                },
                ModelSpec::Svr { kernel, hyper } => {
                    let inputs = design.predictor_inputs();
                    let rows = (0..design.n_subjects())
                        .map(|s| inputs.iter().map(|c| c[s]).collect())
                        .collect();
                    Stage::Svr {
                        kernel: KernelMatrix::new(kernel, rows)?,
                        hyper,
                    }
                }
            }
        };
        Ok(Self {
            design,
            spec,
            corrector,
            stage,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn fit(&self, y: &[f64]) -> Result<FittedVoxelModel> {
        let n = self.design.n_subjects();
        if y.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite observation".into()));
        }
        let family = self.spec.family();
        let corrector = GlmParams {
            coefficients: self.corrector.solve(y),
        };
        let df_restricted = self.corrector.rank() as f64;

        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if lo == hi {
            return Ok(FittedVoxelModel {
                family,
                corrector,
                predictor: PredictorFit::None,
                rss_full: 0.0,
                rss_restricted: 0.0,
                df_full: df_restricted,
                df_restricted,
                degenerate: true,
            });
        }

        let fitted_c = mat_vec(&self.design.corrector_block, &corrector.coefficients);
        let resid: Vec<f64> = y.iter().zip(&fitted_c).map(|(a, b)| a - b).collect();
        let rss_restricted = resid.iter().map(|r| r * r).sum::<f64>();
        let rss_of = |pred: &[f64]| resid.iter().zip(pred).map(|(r, p)| (r - p) * (r - p)).sum::<f64>();

        let (predictor, rss_full, df_stage) = match &self.stage {
            Stage::None => (PredictorFit::None, rss_restricted, 0.0),
            Stage::Glm {
                ls,
                residualized,
                projection,
            } => {
                let beta = ls.solve(&resid);
                let pred = mat_vec(residualized, &beta);
                let offset: Vec<f64> = (0..projection.nrows())
                    .map(|r| dot(&projection.row(r).iter().copied().collect::<Vec<_>>(), &beta))
                    .collect();
                let rss = rss_of(&pred).min(rss_restricted);
                (
                    PredictorFit::Glm {
                        params: GlmParams { coefficients: beta },
                        corrector_offset: offset,
                    },
                    rss,
                    ls.rank() as f64,
                )
            }
            Stage::Gam { smoothers, options } => {
                let (params, fitted) = gam_fit_prepared(smoothers, &resid, *options)?;
                let rss = rss_of(&fitted);
                let df = params.df_equiv - 1.0;
                (PredictorFit::Gam(params), rss, df)
            }
            Stage::Svr { kernel, hyper } => {
                let params = svr_fit_with_kernel(kernel, &resid, *hyper, SmoOptions::default())?;
                let rss = rss_of(&params.predict_training(kernel));
                let df = svr_equivalent_df(&params);
                (PredictorFit::Svr(params), rss, df)
            }
        };

        Ok(FittedVoxelModel {
            family,
            corrector,
            predictor,
            rss_full,
            rss_restricted,
            df_full: df_restricted + df_stage,
            df_restricted,
            degenerate: false,
        })
    }
}

pub fn fit_voxel(design: &DesignMatrix, y: &[f64], spec: ModelSpec) -> Result<FittedVoxelModel> {
    VoxelFitter::new(design, spec)?.fit(y)
}

/// One model family fitted at every masked voxel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedVolume {
    pub geometry: VolumeGeometry,
    pub spec: ModelSpec,
    pub design: DesignMatrix,
    /// Linear indices of the fitted voxels, ascending.
    pub voxels: Vec<usize>,
    pub models: Vec<FittedVoxelModel>,
}

impl FittedVolume {
    pub fn family(&self) -> Family {
        self.spec.family()
    }

    pub fn get(&self, linear: usize) -> Option<&FittedVoxelModel> {
        self.voxels
            .binary_search(&linear)
            .ok()
            .map(|i| &self.models[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &FittedVoxelModel)> {
        self.voxels.iter().copied().zip(&self.models)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        rmp_serde::to_vec_named(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        rmp_serde::from_slice(bytes).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Fits every masked voxel independently. Output does not depend on the
/// number of worker threads.
pub fn fit_volume(obs: &ObservationVolume, design: &DesignMatrix, spec: ModelSpec) -> Result<FittedVolume> {
    if design.n_subjects() != obs.n_subjects() {
        return Err(Error::Dimension {
            expected: obs.n_subjects(),
            found: design.n_subjects(),
        });
    }
    let fitter = VoxelFitter::new(design, spec)?;
    let voxels: Vec<usize> = obs.masked_voxels().collect();
    let geometry = obs.geometry();
    let models = voxels
        .par_iter()
        .map(|&v| {
            fitter.fit(obs.series(v)).map_err(|e| Error::AtVoxel {
                voxel: geometry.coords(v),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FittedVolume {
        geometry: geometry.clone(),
        spec,
        design: design.clone(),
        voxels,
        models,
    })
}
