//! Model fitting: least squares, smoothers and backfitted additive models,
//! ε-SVR, and the per-voxel correct-then-predict pipeline.

mod gam;
mod glm;
mod linalg;
mod smoother;
mod svr;
mod voxel;

pub use gam::{gam_fit, gam_fit_prepared, gam_predict, GamOptions, GamParams};
pub use glm::{glm_fit, glm_predict, GlmParams};
pub use linalg::LeastSquares;
pub use smoother::{smoother_fit, PreparedSmoother, Smoother, SmootherSpec};
pub use svr::{
    svr_equivalent_df, svr_fit, svr_fit_with_kernel, svr_predict, Kernel, KernelMatrix, SmoOptions,
    SupportVector, SvrHyper, SvrParams,
};
pub use voxel::{
    fit_volume, fit_voxel, Family, FittedVolume, FittedVoxelModel, ModelSpec, PredictorFit, VoxelFitter,
};
