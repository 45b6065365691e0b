//! Statistical map post-processing: significance thresholding, cluster
//! extent filtering, Z transformation, best-fit labeling and map comparison.

mod components;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use components::{label_components, Components, Connectivity};

use crate::error::{Error, Result};
use crate::metrics::special::normal_inverse_survival;
use crate::metrics::Polarity;
use crate::volume::{load_nifti, save_nifti, NiftiDataType, VolumeGeometry, WriteOptions};

pub const P_VALUE_METRIC: &str = "f-pvalue";

/// Where a map came from and what has been done to it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub family: Option<String>,
    pub design_hash: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    /// Post-processing applied in order, e.g. `p<0.001`, `cluster>=27/6`.
    #[serde(default)]
    pub steps: Vec<String>,
}

impl Provenance {
    fn with_step(&self, step: String) -> Self {
        let mut out = self.clone();
        if !out.steps.contains(&step) {
            out.steps.push(step);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatMap {
    pub geometry: VolumeGeometry,
    /// One value per voxel, x fastest; NaN marks excluded voxels.
    pub values: Vec<f64>,
    pub metric: String,
    pub polarity: Polarity,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct StatSidecar {
    metric: String,
    polarity: Polarity,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct LabelSidecar {
    metric: String,
    legend: Vec<String>,
    provenance: Provenance,
}

/// `maps/glm.f-pvalue.nii.gz` → `maps/glm.f-pvalue.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let stem = name
        .strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .unwrap_or(name);
    path.with_file_name(format!("{stem}.json"))
}

fn descrip(metric: &str, provenance: &Provenance) -> String {
    let mut parts = vec![metric.to_string()];
    parts.extend(provenance.family.clone());
    parts.extend(provenance.design_hash.clone());
    parts.extend(provenance.steps.iter().cloned());
    let mut s = parts.join(" ");
    // NIfTI descrip holds 80 bytes including the terminator.
    while s.len() > 79 {
        s.pop();
    }
    s
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

impl StatMap {
    pub fn new(
        geometry: VolumeGeometry,
        values: Vec<f64>,
        metric: impl Into<String>,
        polarity: Polarity,
        provenance: Provenance,
    ) -> Result<Self> {
        if values.len() != geometry.n_voxels() {
            return Err(Error::Dimension {
                expected: geometry.n_voxels(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| v.is_infinite()) {
            return Err(Error::Validation(format!("map value at linear index {i} is infinite")));
        }
        Ok(Self {
            geometry,
            values,
            metric: metric.into(),
            polarity,
            provenance,
        })
    }

    pub fn is_p_value(&self) -> bool {
        self.metric == P_VALUE_METRIC && self.polarity == Polarity::LowerBetter
    }

    pub fn get(&self, ijk: [usize; 3]) -> Option<f64> {
        self.geometry.contains(ijk).then(|| self.values[self.geometry.linear(ijk)])
    }

    pub fn count_finite(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    fn derived(&self, values: Vec<f64>, step: String) -> StatMap {
        StatMap {
            geometry: self.geometry.clone(),
            values,
            metric: self.metric.clone(),
            polarity: self.polarity,
            provenance: self.provenance.with_step(step),
        }
    }

    /// Float32 NIfTI plus a JSON sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let opts = WriteOptions {
            datatype: NiftiDataType::Float32,
            descrip: descrip(&self.metric, &self.provenance),
            ..WriteOptions::default()
        };
        save_nifti(path, &self.geometry, &self.values, &opts)?;
        write_json(
            &sidecar_path(path),
            &StatSidecar {
                metric: self.metric.clone(),
                polarity: self.polarity,
                provenance: self.provenance.clone(),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let image = load_nifti(path)?;
        let side: StatSidecar = read_json(&sidecar_path(path))?;
        let n = image.geometry.n_voxels();
        let mut values = image.data;
        values.truncate(n);
        StatMap::new(image.geometry, values, side.metric, side.polarity, side.provenance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub geometry: VolumeGeometry,
    /// 0 = no candidate survived, i ≥ 1 = `legend[i - 1]`.
    pub labels: Vec<i16>,
    pub legend: Vec<String>,
    pub metric: String,
    pub provenance: Provenance,
}

impl LabelMap {
    pub fn get(&self, ijk: [usize; 3]) -> Option<i16> {
        self.geometry.contains(ijk).then(|| self.labels[self.geometry.linear(ijk)])
    }

    /// Voxel counts per label, index 0 included.
    pub fn counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.legend.len() + 1];
        for &l in &self.labels {
            out[l as usize] += 1;
        }
        out
    }

    /// Int16 NIfTI plus a JSON sidecar holding the legend.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let opts = WriteOptions {
            datatype: NiftiDataType::Int16,
            descrip: descrip(&format!("best-fit {}", self.metric), &self.provenance),
            ..WriteOptions::default()
        };
        let data: Vec<f64> = self.labels.iter().map(|&l| f64::from(l)).collect();
        save_nifti(path, &self.geometry, &data, &opts)?;
        write_json(
            &sidecar_path(path),
            &LabelSidecar {
                metric: self.metric.clone(),
                legend: self.legend.clone(),
                provenance: self.provenance.clone(),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let image = load_nifti(path)?;
        let side: LabelSidecar = read_json(&sidecar_path(path))?;
        let n = image.geometry.n_voxels();
        let max = side.legend.len() as f64;
        let labels = image.data[..n]
            .iter()
            .map(|&v| {
                if v >= 0.0 && v <= max && v.fract() == 0.0 {
                    Ok(v as i16)
                } else {
                    Err(Error::Format(format!("label {v} outside legend of {}", side.legend.len())))
                }
            })
            .collect::<Result<_>>()?;
        Ok(LabelMap {
            geometry: image.geometry,
            labels,
            legend: side.legend,
            metric: side.metric,
            provenance: side.provenance,
        })
    }
}

/// Keeps voxels with p < alpha; everything else becomes NaN.
pub fn threshold_map(map: &StatMap, alpha: f64) -> Result<StatMap> {
    if !map.is_p_value() {
        return Err(Error::Polarity(format!(
            "significance thresholding needs a p-value map, got '{}'",
            map.metric
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let values = map
        .values
        .iter()
        .map(|&p| if p < alpha { p } else { f64::NAN })
        .collect();
    Ok(map.derived(values, format!("p<{alpha}")))
}

/// Removes connected components of non-NaN voxels smaller than `min_size`.
pub fn cluster_filter(map: &StatMap, min_size: usize, connectivity: Connectivity) -> Result<StatMap> {
    if min_size == 0 {
        return Err(Error::Validation("min_size must be at least 1".into()));
    }
    let present: Vec<bool> = map.values.iter().map(|v| !v.is_nan()).collect();
    let comps = label_components(&present, map.geometry.dims, connectivity);
    let values = map
        .values
        .iter()
        .zip(&comps.labels)
        .map(|(&v, &l)| if l > 0 && comps.sizes[l as usize - 1] >= min_size { v } else { f64::NAN })
        .collect();
    Ok(map.derived(values, format!("cluster>={min_size}/{}", connectivity.neighbours())))
}

/// `z = Φ⁻¹(1 − p)` with p clamped to [1e-16, 1 − 1e-16]; NaN passes through.
pub fn z_transform(map: &StatMap) -> StatMap {
    let values = map
        .values
        .iter()
        .map(|&p| {
            if p.is_nan() {
                p
            } else {
                normal_inverse_survival(p.clamp(1e-16, 1.0 - 1e-16))
            }
        })
        .collect();
    let mut out = map.derived(values, "z".into());
    out.metric = "z".into();
    out.polarity = Polarity::HigherBetter;
    out
}

/// Per-voxel index (1-based) of the best surviving candidate map. When
/// `alpha` is given each map is thresholded first; `min_size > 1` then
/// applies the cluster filter. Ties go to the earliest map.
pub fn best_fit_labels(
    maps: &[StatMap],
    legend: &[String],
    alpha: Option<f64>,
    min_size: usize,
    connectivity: Connectivity,
) -> Result<LabelMap> {
    if maps.len() < 2 {
        return Err(Error::Comparison(format!("need at least 2 maps to compare, got {}", maps.len())));
    }
    if legend.len() != maps.len() {
        return Err(Error::Dimension {
            expected: maps.len(),
            found: legend.len(),
        });
    }
    if maps.len() > i16::MAX as usize {
        return Err(Error::Comparison("too many maps for an int16 label map".into()));
    }
    let first = &maps[0];
    for m in &maps[1..] {
        if m.metric != first.metric || m.polarity != first.polarity {
            return Err(Error::Comparison(format!(
                "mixed metrics: '{}' vs '{}'",
                first.metric, m.metric
            )));
        }
        if !m.geometry.matches(&first.geometry, 1e-6) {
            return Err(Error::Geometry("maps differ in geometry".into()));
        }
    }
    let mut filtered = Vec::with_capacity(maps.len());
    for m in maps {
        let mut m = match alpha {
            Some(a) => threshold_map(m, a)?,
            None => m.clone(),
        };
        if min_size > 1 {
            m = cluster_filter(&m, min_size, connectivity)?;
        }
        filtered.push(m);
    }
    let polarity = first.polarity;
    let labels = (0..first.geometry.n_voxels())
        .map(|v| {
            let mut best: Option<(usize, f64)> = None;
            for (i, m) in filtered.iter().enumerate() {
                let x = m.values[v];
                if x.is_nan() {
                    continue;
                }
                if best.is_none_or(|(_, b)| polarity.better(x, b)) {
                    best = Some((i, x));
                }
            }
            best.map_or(0, |(i, _)| i as i16 + 1)
        })
        .collect();
    let mut provenance = Provenance::default();
    if let Some(a) = alpha {
        provenance.steps.push(format!("p<{a}"));
    }
    if min_size > 1 {
        provenance.steps.push(format!("cluster>={min_size}/{}", connectivity.neighbours()));
    }
    Ok(LabelMap {
        geometry: first.geometry.clone(),
        labels,
        legend: legend.to_vec(),
        metric: first.metric.clone(),
        provenance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSimilarity {
    /// Pearson correlation over voxels finite in both maps.
    pub correlation: f64,
    /// Dice overlap of the supra-threshold sets.
    pub dice: f64,
    pub overlap_voxels: usize,
}

/// Voxel-wise `a − b` plus global similarity. With `alpha`, the Dice sets
/// are voxels with p < alpha (p-value maps only); otherwise the non-NaN
/// voxels.
pub fn map_difference(a: &StatMap, b: &StatMap, alpha: Option<f64>) -> Result<(StatMap, MapSimilarity)> {
    if !a.geometry.matches(&b.geometry, 1e-6) {
        return Err(Error::Geometry("maps differ in geometry".into()));
    }
    if a.metric != b.metric {
        return Err(Error::Comparison(format!("mixed metrics: '{}' vs '{}'", a.metric, b.metric)));
    }
    let values: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();

    let pairs: Vec<(f64, f64)> = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| !x.is_nan() && !y.is_nan())
        .map(|(&x, &y)| (x, y))
        .collect();
    let correlation = pearson(&pairs);

    let (sa, sb) = match alpha {
        Some(al) => (threshold_map(a, al)?, threshold_map(b, al)?),
        None => (a.clone(), b.clone()),
    };
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (x, y) in sa.values.iter().zip(&sb.values) {
        let (ia, ib) = (!x.is_nan(), !y.is_nan());
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    let dice = if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    };

    let mut provenance = Provenance::default();
    provenance.steps.push("difference".into());
    let diff = StatMap {
        geometry: a.geometry.clone(),
        values,
        metric: format!("{}-difference", a.metric),
        polarity: a.polarity,
        provenance,
    };
    Ok((
        diff,
        MapSimilarity {
            correlation,
            dice,
            overlap_voxels: both,
        },
    ))
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    if pairs.len() < 2 {
        return f64::NAN;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}
