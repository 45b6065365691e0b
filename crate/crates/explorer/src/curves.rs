use serde::Serialize;
use voxfit_core::metrics::predictor_grid;
use voxfit_core::{Error, Result};

use crate::session::Session;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCurve {
    pub name: String,
    pub family: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrectedObservation {
    /// Raw predictor covariate value.
    pub x: f64,
    /// Observation minus the corrector-stage prediction.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveBundle {
    pub voxel: [usize; 3],
    /// No model at this voxel (outside the mask or zero variance).
    pub empty: bool,
    pub reason: Option<String>,
    pub predictor: Option<String>,
    pub grid: Vec<f64>,
    pub models: Vec<ModelCurve>,
    pub corrected_observations: Vec<CorrectedObservation>,
}

impl CurveBundle {
    fn empty(voxel: [usize; 3], reason: &str) -> Self {
        Self {
            voxel,
            empty: true,
            reason: Some(reason.into()),
            predictor: None,
            grid: Vec::new(),
            models: Vec::new(),
            corrected_observations: Vec::new(),
        }
    }
}

/// Predictor-stage curves of every session model at one voxel, sampled on a
/// uniform grid over the observed range of the chosen predictor (the first
/// by default), with all other covariates at their sample means.
pub fn curves_at(session: &Session, voxel: [usize; 3], predictor: Option<&str>) -> Result<CurveBundle> {
    if !session.geometry.contains(voxel) {
        return Err(Error::Input(format!(
            "voxel {:?} outside volume of dims {:?}",
            voxel, session.geometry.dims
        )));
    }
    let Some((_, first)) = session.models.first() else {
        return Ok(CurveBundle::empty(voxel, "session has no fitted models"));
    };
    let which = match predictor {
        None => 0,
        Some(name) => first
            .design
            .predictor_index(name)
            .ok_or_else(|| Error::Name(format!("no predictor named '{name}'")))?,
    };
    let Some(term) = first.design.predictor_terms.get(which) else {
        return Ok(CurveBundle::empty(voxel, "design has no predictors"));
    };
    let linear = session.geometry.linear(voxel);
    if !session.observations.mask()[linear] {
        return Ok(CurveBundle::empty(voxel, "voxel is outside the analysis mask"));
    }
    let mut fits = Vec::with_capacity(session.models.len());
    for (name, volume) in &session.models {
        match volume.get(linear) {
            Some(m) if !m.degenerate => fits.push((name, volume, m)),
            Some(_) => return Ok(CurveBundle::empty(voxel, "observations have zero variance")),
            None => return Ok(CurveBundle::empty(voxel, "voxel was not fitted")),
        }
    }
    let grid = predictor_grid(first, which, session.grid_points)?;
    let models = fits
        .iter()
        .map(|(name, volume, m)| {
            let w = volume.design.predictor_index(&term.covariate).unwrap_or(which);
            ModelCurve {
                name: (*name).clone(),
                family: volume.family().name().to_string(),
                values: m.predictor_curve(&volume.design, w, &grid),
            }
        })
        .collect();
    let (_, volume, model) = fits[0];
    let y = session.observations.series(linear);
    let corrected = model.corrected_observations(&volume.design, y);
    let corrected_observations = term
        .raw
        .iter()
        .zip(corrected)
        .map(|(&x, y)| CorrectedObservation { x, y })
        .collect();
    Ok(CurveBundle {
        voxel,
        empty: false,
        reason: None,
        predictor: Some(term.covariate.clone()),
        grid,
        models,
        corrected_observations,
    })
}
