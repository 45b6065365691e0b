//! Seeded synthetic cohorts: a quadratic age trend everywhere in an
//! ellipsoidal brain mask, plus a cubic effect of a biomarker index inside a
//! cubic region.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{save_nifti, CovariateTable, NiftiDataType, ObservationVolume, VolumeGeometry, WriteOptions};

pub const MAX_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub n_subjects: usize,
    pub noise_sd: f64,
    /// Standard deviation of the index effect over the index distribution.
    pub effect_sd: f64,
    /// Edge length of the effect cube, in voxels.
    pub effect_size: usize,
    /// Lowest corner of the effect cube; centred when absent.
    pub effect_origin: Option<[usize; 3]>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            voxel_size: 2.0,
            n_subjects: 60,
            noise_sd: 0.05,
            effect_sd: 0.05,
            effect_size: 6,
            effect_origin: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn snr(&self) -> f64 {
        self.effect_sd / self.noise_sd
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0 || d > MAX_DIM) {
            return Err(Error::Validation(format!(
                "synthetic dims must lie in 1..={MAX_DIM}, got {:?}",
                self.dims
            )));
        }
        if self.n_subjects < 2 {
            return Err(Error::Validation("need at least 2 subjects".into()));
        }
        if !(self.noise_sd >= 0.0 && self.effect_sd >= 0.0 && self.voxel_size > 0.0) {
            return Err(Error::Validation("noise_sd, effect_sd must be >= 0 and voxel_size > 0".into()));
        }
        let origin = self.origin();
        if (0..3).any(|a| origin[a] + self.effect_size > self.dims[a]) {
            return Err(Error::Validation(format!(
                "effect cube of size {} at {:?} exceeds dims {:?}",
                self.effect_size, origin, self.dims
            )));
        }
        Ok(())
    }

    pub fn origin(&self) -> [usize; 3] {
        self.effect_origin
            .unwrap_or_else(|| self.dims.map(|d| d.saturating_sub(self.effect_size) / 2))
    }
}

/// Age trend shared by every brain voxel: mild quadratic decline.
pub fn age_effect(age: f64) -> f64 {
    let a = age - 70.0;
    -0.004 * a - 0.000_1 * a * a
}

/// Cubic index effect `4u³ − 3u` scaled to standard deviation `effect_sd`
/// when `u ~ U[-1, 1)`.
pub fn index_effect(index: f64, effect_sd: f64) -> f64 {
    let sd = (17.0f64 / 35.0).sqrt();
    effect_sd * (4.0 * index.powi(3) - 3.0 * index) / sd
}

fn baseline(ijk: [usize; 3], dims: [usize; 3]) -> f64 {
    let t: f64 = (0..3).map(|a| ijk[a] as f64 / dims[a].max(1) as f64).sum();
    0.4 + 0.1 * (std::f64::consts::PI * t).sin()
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub observations: ObservationVolume,
    pub covariates: CovariateTable,
    pub brain_mask: Vec<bool>,
    pub effect_mask: Vec<bool>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let n = spec.n_subjects;
    let geometry = VolumeGeometry::new(spec.dims, [spec.voxel_size; 3])?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let age: Vec<f64> = (0..n).map(|_| rng.random_range(55.0..85.0)).collect();
    let sex: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
    let index: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ids = (0..n).map(|i| format!("sub-{:03}", i + 1)).collect();
    let covariates = CovariateTable::new(
        ids,
        vec![("age".into(), age.clone()), ("sex".into(), sex), ("index".into(), index.clone())],
    )?;

    let dims = spec.dims;
    let origin = spec.origin();
    let centre = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let radius = dims.map(|d| 0.45 * d as f64);
    let n_vox = geometry.n_voxels();
    let mut brain_mask = vec![false; n_vox];
    let mut effect_mask = vec![false; n_vox];
    let mut data = vec![0.0; n_vox * n];
    let age_term: Vec<f64> = age.iter().map(|&a| age_effect(a)).collect();
    let index_term: Vec<f64> = index.iter().map(|&u| index_effect(u, spec.effect_sd)).collect();
    for v in 0..n_vox {
        let ijk = geometry.coords(v);
        let r2: f64 = (0..3)
            .map(|a| ((ijk[a] as f64 - centre[a]) / radius[a]).powi(2))
            .sum();
        if r2 > 1.0 {
            continue;
        }
        brain_mask[v] = true;
        let inside = (0..3).all(|a| ijk[a] >= origin[a] && ijk[a] < origin[a] + spec.effect_size);
        effect_mask[v] = inside;
        let base = baseline(ijk, dims);
        for s in 0..n {
            let noise: f64 = rng.sample(StandardNormal);
            let effect = if inside { index_term[s] } else { 0.0 };
            data[v * n + s] = base + age_term[s] + effect + spec.noise_sd * noise;
        }
    }
    let observations = ObservationVolume::new(geometry, n, data, Some(brain_mask.clone()))?;
    Ok(SynthDataset {
        spec: spec.clone(),
        observations,
        covariates,
        brain_mask,
        effect_mask,
    })
}

/// File names written by [`SynthDataset::save`].
pub const OBSERVATIONS_FILE: &str = "observations.nii.gz";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const EFFECT_MASK_FILE: &str = "effect_mask.nii.gz";
pub const BRAIN_MASK_FILE: &str = "brain_mask.nii.gz";

impl SynthDataset {
    /// Writes observations (float32), covariates and both masks (uint8).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let geometry = self.observations.geometry();
        let float = WriteOptions {
            datatype: NiftiDataType::Float32,
            descrip: format!("synthetic observations seed={}", self.spec.seed),
            ..WriteOptions::default()
        };
        save_nifti(dir.join(OBSERVATIONS_FILE), geometry, &self.observations.to_subject_major(), &float)?;
        let csv_path = dir.join(COVARIATES_FILE);
        std::fs::write(&csv_path, self.covariates.to_csv("subject")).map_err(|e| Error::io(&csv_path, e))?;
        let byte = |descrip: &str| WriteOptions {
            datatype: NiftiDataType::UInt8,
            descrip: descrip.into(),
            ..WriteOptions::default()
        };
        let as_f64 = |m: &[bool]| m.iter().map(|&b| f64::from(u8::from(b))).collect::<Vec<_>>();
        save_nifti(dir.join(EFFECT_MASK_FILE), geometry, &as_f64(&self.effect_mask), &byte("effect mask"))?;
        save_nifti(dir.join(BRAIN_MASK_FILE), geometry, &as_f64(&self.brain_mask), &byte("brain mask"))?;
        Ok(())
    }
}
