use serde::Serialize;
use sha2::{Digest, Sha256};
use voxfit_core::fit::FittedVolume;
use voxfit_core::maps::{LabelMap, StatMap};
use voxfit_core::metrics::Polarity;
use voxfit_core::volume::{ObservationVolume, VolumeGeometry};
use voxfit_core::{Error, Result};

/// Everything the explorer serves. Immutable once built.
#[derive(Debug, Clone)]
pub struct Session {
    pub geometry: VolumeGeometry,
    pub observations: ObservationVolume,
    /// Fitted volumes in legend order.
    pub models: Vec<(String, FittedVolume)>,
    pub maps: Vec<(String, StatMap)>,
    pub labels: Option<LabelMap>,
    /// Points per curve.
    pub grid_points: usize,
}

impl Session {
    pub fn new(
        observations: ObservationVolume,
        models: Vec<(String, FittedVolume)>,
        maps: Vec<(String, StatMap)>,
        labels: Option<LabelMap>,
    ) -> Result<Self> {
        let geometry = observations.geometry().clone();
        let check = |g: &VolumeGeometry, what: &str| {
            if g.matches(&geometry, 1e-6) {
                Ok(())
            } else {
                Err(Error::Geometry(format!("{what} does not match the observation geometry")))
            }
        };
        for (name, m) in &models {
            check(&m.geometry, &format!("fitted model '{name}'"))?;
            if m.design.n_subjects() != observations.n_subjects() {
                return Err(Error::Dimension {
                    expected: observations.n_subjects(),
                    found: m.design.n_subjects(),
                });
            }
        }
        for (name, m) in &maps {
            check(&m.geometry, &format!("map '{name}'"))?;
        }
        if let Some(l) = &labels {
            check(&l.geometry, "label map")?;
        }
        Ok(Self {
            geometry,
            observations,
            models,
            maps,
            labels,
            grid_points: 100,
        })
    }

    pub fn with_grid_points(mut self, n: usize) -> Self {
        self.grid_points = n.max(2);
        self
    }

    pub fn meta(&self) -> Meta {
        let mut metrics: Vec<String> = Vec::new();
        for (_, m) in &self.maps {
            if !metrics.contains(&m.metric) {
                metrics.push(m.metric.clone());
            }
        }
        Meta {
            dims: self.geometry.dims,
            voxel_sizes: self.geometry.voxel_sizes,
            affine: self.geometry.affine,
            n_subjects: self.observations.n_subjects(),
            models: self.models.iter().map(|(n, _)| n.clone()).collect(),
            families: self.models.iter().map(|(_, m)| m.family().name().to_string()).collect(),
            predictors: self
                .models
                .first()
                .map(|(_, m)| m.design.predictor_terms.iter().map(|t| t.covariate.clone()).collect())
                .unwrap_or_default(),
            maps: self
                .maps
                .iter()
                .enumerate()
                .map(|(index, (name, m))| MapInfo {
                    index,
                    name: name.clone(),
                    metric: m.metric.clone(),
                    polarity: m.polarity,
                    range: finite_range(&m.values),
                })
                .collect(),
            metrics,
            label_legend: self.labels.as_ref().map(|l| l.legend.clone()),
        }
    }

    /// SHA-256 over every piece of session data; a read-only service never
    /// changes it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in self.observations.to_subject_major() {
            h.update(v.to_le_bytes());
        }
        for b in self.observations.mask() {
            h.update([u8::from(*b)]);
        }
        for (name, m) in &self.models {
            h.update(name.as_bytes());
            h.update(m.to_bytes().unwrap_or_default());
        }
        for (name, m) in &self.maps {
            h.update(name.as_bytes());
            for v in &m.values {
                h.update(v.to_le_bytes());
            }
        }
        if let Some(l) = &self.labels {
            for v in &l.labels {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn finite_range(values: &[f64]) -> Option<[f64; 2]> {
    let mut it = values.iter().copied().filter(|v| v.is_finite());
    let first = it.next()?;
    Some(it.fold([first, first], |[lo, hi], v| [lo.min(v), hi.max(v)]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapInfo {
    pub index: usize,
    pub name: String,
    pub metric: String,
    pub polarity: Polarity,
    /// Finite min and max, absent when the map is all NaN.
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub dims: [usize; 3],
    pub voxel_sizes: [f64; 3],
    pub affine: [[f64; 4]; 4],
    pub n_subjects: usize,
    pub models: Vec<String>,
    pub families: Vec<String>,
    pub predictors: Vec<String>,
    pub maps: Vec<MapInfo>,
    pub metrics: Vec<String>,
    pub label_legend: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn parse(s: &str) -> Option<Axis> {
        match s {
            "x" | "X" => Some(Axis::X),
            "y" | "Y" => Some(Axis::Y),
            "z" | "Z" => Some(Axis::Z),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        ["x", "y", "z"][self.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slice<T> {
    pub axis: &'static str,
    pub index: usize,
    /// `[rows, cols]`. Rows run along the lower remaining axis: a z slice
    /// has shape `[dims[0], dims[1]]` with element `(i, j)` at `i·dims[1] + j`.
    pub shape: [usize; 2],
    pub values: Vec<T>,
}

/// Extracts a 2-D slice orthogonal to `axis`.
pub fn slice<T: Copy>(geometry: &VolumeGeometry, data: &[T], axis: Axis, index: usize) -> Option<Slice<T>> {
    let dims = geometry.dims;
    let a = axis.index();
    if index >= dims[a] {
        return None;
    }
    let (r, c) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    };
    let mut values = Vec::with_capacity(dims[r] * dims[c]);
    for row in 0..dims[r] {
        for col in 0..dims[c] {
            let mut ijk = [0; 3];
            ijk[a] = index;
            ijk[r] = row;
            ijk[c] = col;
            values.push(data[geometry.linear(ijk)]);
        }
    }
    Some(Slice {
        axis: axis.name(),
        index,
        shape: [dims[r], dims[c]],
        values,
    })
}
