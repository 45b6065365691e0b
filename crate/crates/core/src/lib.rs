//! Voxel-wise model fitting for neuroimaging cohorts.
//!
//! Observations are 4-D NIfTI volumes (one 3-D image per subject) plus a
//! covariate table. Each masked voxel is fitted independently with a GLM,
//! an additive model or ε-SVR after regressing out nuisance covariates, and
//! the fits are scored into statistical maps.

pub mod design;
pub mod error;
pub mod fit;
pub mod maps;
pub mod metrics;
pub mod search;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
