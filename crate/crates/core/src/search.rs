//! Hyperparameter grid search on random variance-filtered voxel subsets,
//! scoring each combination by inverse-variance-weighted error.

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::fit::{ModelSpec, VoxelFitter};
use crate::volume::{sample_variance, ObservationVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    Linear,
    Logarithmic,
    RandomUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperAxis {
    /// `epsilon`, `c`, `gamma`, `penalty` or `bandwidth`.
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub axes: Vec<HyperAxis>,
    #[serde(default)]
    pub seed: u64,
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|b| b.name.eq_ignore_ascii_case(&a.name)) {
                return Err(Error::Validation(format!("duplicate grid axis '{}'", a.name)));
            }
            if !(a.min.is_finite() && a.max.is_finite()) || !(a.min < a.max) {
                return Err(Error::Validation(format!(
                    "axis '{}': need finite min < max, got [{}, {}]",
                    a.name, a.min, a.max
                )));
            }
            if a.count == 0 {
                return Err(Error::Validation(format!("axis '{}': count must be >= 1", a.name)));
            }
            if a.sampling == Sampling::Logarithmic && a.min <= 0.0 {
                return Err(Error::Validation(format!(
                    "axis '{}': logarithmic sampling needs min > 0, got {}",
                    a.name, a.min
                )));
            }
        }
        Ok(())
    }

    pub fn n_combos(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }
}

/// One point of the grid: axis name → value, in axis order.
#[derive(Debug, Clone, PartialEq)]
pub struct Combo(pub Vec<(String, f64)>);

impl Combo {
    pub fn apply(&self, base: ModelSpec) -> Result<ModelSpec> {
        self.0.iter().try_fold(base, |spec, (name, v)| spec.with_hyper(name, *v))
    }
}

impl Serialize for Combo {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

fn axis_values(axis: &HyperAxis, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = axis.count;
    let frac = |i: usize| if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
    match axis.sampling {
        Sampling::Linear => (0..n)
            .map(|i| if i + 1 == n && n > 1 { axis.max } else { axis.min + (axis.max - axis.min) * frac(i) })
            .collect(),
        Sampling::Logarithmic => {
            let (lo, hi) = (axis.min.log10(), axis.max.log10());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        axis.min
                    } else if i + 1 == n {
                        axis.max
                    } else {
                        10f64.powf(lo + (hi - lo) * frac(i))
                    }
                })
                .collect()
        }
        Sampling::RandomUniform => (0..n).map(|_| rng.random_range(axis.min..axis.max)).collect(),
    }
}

/// Cartesian product of the axis samples, last axis varying fastest.
pub fn sample_grid(grid: &HyperGrid) -> Result<Vec<Combo>> {
    grid.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    let values: Vec<Vec<f64>> = grid.axes.iter().map(|a| axis_values(a, &mut rng)).collect();
    let mut combos = vec![Combo(Vec::new())];
    for (axis, vals) in grid.axes.iter().zip(&values) {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |&v| {
                    let mut next = c.0.clone();
                    next.push((axis.name.clone(), v));
                    Combo(next)
                })
            })
            .collect();
    }
    Ok(combos)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoxelSelection {
    /// Linear voxel indices, in draw order.
    pub voxels: Vec<usize>,
    /// Fewer than `m` voxels qualified.
    pub shortfall: bool,
}

/// Masked voxels whose across-subject sample variance exceeds `var_min`.
pub fn qualifying_voxels(obs: &ObservationVolume, var_min: f64) -> Vec<usize> {
    obs.masked_voxels()
        .filter(|&v| sample_variance(obs.series(v)) > var_min)
        .collect()
}

fn draw(qualifying: &[usize], m: usize, rng: &mut impl RngCore) -> VoxelSelection {
    if qualifying.len() <= m {
        return VoxelSelection {
            voxels: qualifying.to_vec(),
            shortfall: qualifying.len() < m,
        };
    }
    VoxelSelection {
        voxels: sample(rng, qualifying.len(), m).into_iter().map(|i| qualifying[i]).collect(),
        shortfall: false,
    }
}

/// Uniform draw of `m` distinct qualifying voxels.
pub fn select_voxels(obs: &ObservationVolume, var_min: f64, m: usize, seed: u64) -> Result<VoxelSelection> {
    if m == 0 {
        return Err(Error::Validation("m must be at least 1".into()));
    }
    let q = qualifying_voxels(obs, var_min);
    if q.is_empty() {
        return Err(Error::EmptySelection { var_min });
    }
    Ok(draw(&q, m, &mut ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorFn {
    #[default]
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub var_min: f64,
    pub m: usize,
    pub n_iters: usize,
    #[serde(default)]
    pub error_fn: ErrorFn,
    pub seed: u64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            var_min: 1e-4,
            m: 100,
            n_iters: 5,
            error_fn: ErrorFn::Mse,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchResult {
    pub combos: Vec<Combo>,
    pub scores: Vec<f64>,
    pub best: usize,
    /// Voxel coordinates drawn in each iteration.
    pub voxel_subsets: Vec<Vec<[usize; 3]>>,
    pub iterations: usize,
    pub shortfall: bool,
}

/// Variance-weighted error of one fitted voxel: `MSE / Var(y)`.
pub fn weighted_error(rss: f64, y: &[f64]) -> f64 {
    (rss / y.len() as f64) / sample_variance(y)
}

/// Scores every combination on the same voxel subsets and returns the
/// argmin (earliest combination on ties).
pub fn grid_search(
    obs: &ObservationVolume,
    design: &DesignMatrix,
    base: ModelSpec,
    grid: &HyperGrid,
    settings: &SearchSettings,
) -> Result<GridSearchResult> {
    if settings.n_iters == 0 {
        return Err(Error::Validation("n_iters must be at least 1".into()));
    }
    if settings.m == 0 {
        return Err(Error::Validation("m must be at least 1".into()));
    }
    if design.n_subjects() != obs.n_subjects() {
        return Err(Error::Dimension {
            expected: obs.n_subjects(),
            found: design.n_subjects(),
        });
    }
    let combos = sample_grid(grid)?;
    let specs = combos
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.apply(base).map_err(|e| Error::InCombo {
                combo: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let qualifying = qualifying_voxels(obs, settings.var_min);
    if qualifying.is_empty() {
        return Err(Error::EmptySelection {
            var_min: settings.var_min,
        });
    }
    let mut master = ChaCha8Rng::seed_from_u64(settings.seed);
    let subsets: Vec<VoxelSelection> = (0..settings.n_iters)
        .map(|_| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
            draw(&qualifying, settings.m, &mut rng)
        })
        .collect();

    let geometry = obs.geometry();
    let scores = specs
        .par_iter()
        .enumerate()
        .map(|(ci, &spec)| -> Result<f64> {
            let in_combo = |e: Error| Error::InCombo {
                combo: ci,
                source: Box::new(e),
            };
            let fitter = VoxelFitter::new(design, spec).map_err(in_combo)?;
            let mut total = 0.0;
            for subset in &subsets {
                let errors = subset
                    .voxels
                    .par_iter()
                    .map(|&v| {
                        let y = obs.series(v);
                        fitter
                            .fit(y)
                            .map(|m| weighted_error(m.rss_full, y))
                            .map_err(|e| Error::AtVoxel {
                                voxel: geometry.coords(v),
                                source: Box::new(e),
                            })
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(in_combo)?;
                total += errors.iter().sum::<f64>() / errors.len() as f64;
            }
            Ok(total / subsets.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(GridSearchResult {
        combos,
        scores,
        best,
        voxel_subsets: subsets
            .iter()
            .map(|s| s.voxels.iter().map(|&v| geometry.coords(v)).collect())
            .collect(),
        iterations: settings.n_iters,
        shortfall: subsets.iter().any(|s| s.shortfall),
    })
}
