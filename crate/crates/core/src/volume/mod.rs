//! Volumetric data model: grid geometry, the per-subject observation stack and
//! its voxel mask.

mod covariates;
mod nifti;

pub use covariates::{align_subjects, load_covariates, CovariateTable};
pub use nifti::{load_nifti, save_nifti, NiftiDataType, NiftiImage, WriteOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel grid plus its voxel-index → world (mm) mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    pub dims: [usize; 3],
    pub affine: [[f64; 4]; 4],
    pub voxel_sizes: [f64; 3],
}

impl VolumeGeometry {
    /// Axis-aligned geometry with the given voxel sizes and origin at voxel 0.
    pub fn new(dims: [usize; 3], voxel_sizes: [f64; 3]) -> Result<Self> {
        let mut affine = [[0.0; 4]; 4];
        for (a, &s) in voxel_sizes.iter().enumerate() {
            affine[a][a] = s;
        }
        affine[3][3] = 1.0;
        Self::with_affine(dims, affine)
    }

    /// Builds a geometry from an affine, deriving voxel sizes from its column norms.
    pub fn with_affine(dims: [usize; 3], affine: [[f64; 4]; 4]) -> Result<Self> {
        let mut voxel_sizes = [0.0; 3];
        for (c, size) in voxel_sizes.iter_mut().enumerate() {
            *size = (0..3).map(|r| affine[r][c] * affine[r][c]).sum::<f64>().sqrt();
        }
        let g = VolumeGeometry {
            dims,
            affine,
            voxel_sizes,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("dims must be positive, got {:?}", self.dims)));
        }
        if self.affine[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Validation("affine last row must be (0, 0, 0, 1)".into()));
        }
        for c in 0..3 {
            let norm = (0..3)
                .map(|r| self.affine[r][c] * self.affine[r][c])
                .sum::<f64>()
                .sqrt();
            let size = self.voxel_sizes[c];
            if !(size > 0.0) || (norm - size).abs() > 1e-4 * size.max(1.0) {
                return Err(Error::Validation(format!(
                    "voxel size {size} on axis {c} inconsistent with affine column norm {norm}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Linear index with the first axis varying fastest (NIfTI order).
    #[inline]
    pub fn linear(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let i = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn contains(&self, [i, j, k]: [usize; 3]) -> bool {
        i < self.dims[0] && j < self.dims[1] && k < self.dims[2]
    }

    /// Equal grids and affines within `tol`.
    pub fn matches(&self, other: &VolumeGeometry, tol: f64) -> bool {
        self.dims == other.dims
            && self
                .affine
                .iter()
                .flatten()
                .zip(other.affine.iter().flatten())
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Per-subject scalar volumes for one analysis, stored voxel-major so that
/// each voxel's series across subjects is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVolume {
    geometry: VolumeGeometry,
    n_subjects: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl ObservationVolume {
    /// `data` is voxel-major: `data[voxel * n_subjects + subject]`.
    /// With no mask, voxels with positive across-subject variance are kept.
    pub fn new(
        geometry: VolumeGeometry,
        n_subjects: usize,
        data: Vec<f64>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if n_subjects == 0 {
            return Err(Error::Shape("at least one subject is required".into()));
        }
        let n_vox = geometry.n_voxels();
        if data.len() != n_vox * n_subjects {
            return Err(Error::Dimension {
                expected: n_vox * n_subjects,
                found: data.len(),
            });
        }
        let mask = match mask {
            Some(m) => {
                if m.len() != n_vox {
                    return Err(Error::Dimension {
                        expected: n_vox,
                        found: m.len(),
                    });
                }
                m
            }
            None => data
                .chunks_exact(n_subjects)
                .map(|s| sample_variance(s) > 0.0)
                .collect(),
        };
        Ok(Self {
            geometry,
            n_subjects,
            data,
            mask,
        })
    }

    /// Builds from a 4-D image whose volumes are subjects.
    pub fn from_image(image: &NiftiImage, mask: Option<Vec<bool>>) -> Result<Self> {
        let n_vox = image.geometry.n_voxels();
        let n_subjects = image.n_volumes;
        let mut data = vec![0.0; n_vox * n_subjects];
        for s in 0..n_subjects {
            let vol = &image.data[s * n_vox..(s + 1) * n_vox];
            for (v, &x) in vol.iter().enumerate() {
                data[v * n_subjects + s] = x;
            }
        }
        Self::new(image.geometry.clone(), n_subjects, data, mask)
    }

    /// Inverse of [`ObservationVolume::from_image`]: subject-major NIfTI order.
    pub fn to_subject_major(&self) -> Vec<f64> {
        let n_vox = self.geometry.n_voxels();
        let mut out = vec![0.0; self.data.len()];
        for v in 0..n_vox {
            for s in 0..self.n_subjects {
                out[s * n_vox + v] = self.data[v * self.n_subjects + s];
            }
        }
        out
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn series(&self, linear: usize) -> &[f64] {
        &self.data[linear * self.n_subjects..(linear + 1) * self.n_subjects]
    }

    pub fn masked_voxels(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(v, &m)| m.then_some(v))
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.geometry.n_voxels() {
            return Err(Error::Dimension {
                expected: self.geometry.n_voxels(),
                found: mask.len(),
            });
        }
        self.mask = mask;
        Ok(self)
    }

    /// Reorders subjects: output subject `s` is input subject `perm[s]`.
    pub(crate) fn permute_subjects(&self, perm: &[usize]) -> Self {
        let n = self.n_subjects;
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks_exact(n).zip(data.chunks_exact_mut(n)) {
            for (d, &p) in dst.iter_mut().zip(perm) {
                *d = src[p];
            }
        }
        Self {
            geometry: self.geometry.clone(),
            n_subjects: n,
            data,
            mask: self.mask.clone(),
        }
    }
}

/// Unbiased (n − 1) sample variance; 0 for fewer than two values.
pub fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}
