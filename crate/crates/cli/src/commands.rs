//! The pipeline verbs. Each returns the paths it wrote.

use std::path::{Path, PathBuf};

use serde::Serialize;
use voxfit_core::design::{build_design, DesignMatrix, DesignSpec, Term};
use voxfit_core::fit::{fit_volume, FittedVolume, Kernel, SmootherSpec};
use voxfit_core::maps::{
    best_fit_labels, cluster_filter, map_difference, threshold_map, z_transform, LabelMap, MapSimilarity, StatMap,
};
use voxfit_core::metrics::{evaluate_volume, Metric};
use voxfit_core::search::{grid_search, GridSearchResult, HyperAxis, Sampling};
use voxfit_core::synth::{self, SynthSpec};
use voxfit_core::volume::{load_covariates, load_nifti, CovariateTable, ObservationVolume};
use voxfit_explorer::Session;

use crate::artifacts::{Manifest, Run};
use crate::config::{
    EvaluationConfig, ExploreConfig, FamilyName, InputConfig, ModelConfig, OutputConfig, PipelineConfig,
    SearchConfig, CONFIG_VERSION,
};
use crate::error::CliError;

pub fn fit_rel(model: &str) -> String {
    format!("fits/{model}.fit")
}

pub fn map_rel(model: &str, metric: &str) -> String {
    format!("maps/{model}.{metric}.nii.gz")
}

pub fn labels_rel(metric: &str) -> String {
    format!("compare/labels.{metric}.nii.gz")
}

pub struct Inputs {
    pub observations: ObservationVolume,
    pub covariates: CovariateTable,
    pub design: DesignMatrix,
}

/// Loads observations, optional mask and covariates and builds the design.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs, CliError> {
    let input = &cfg.input;
    let image = load_nifti(&input.observations)?;
    let mask = match &input.mask {
        Some(p) => {
            let m = load_nifti(p)?;
            if !m.geometry.matches(&image.geometry, 1e-4) {
                return Err(CliError::data(format!(
                    "mask {} does not match the observation geometry",
                    p.display()
                )));
            }
            Some(m.volume(0).iter().map(|&v| v > 0.0).collect())
        }
        None => None,
    };
    let observations = ObservationVolume::from_image(&image, mask)?;
    let covariates = load_covariates(&input.covariates, &input.subject_column)?;
    if covariates.n_subjects() != observations.n_subjects() {
        return Err(CliError::data(format!(
            "{} has {} volumes but {} lists {} subjects",
            input.observations.display(),
            observations.n_subjects(),
            input.covariates.display(),
            covariates.n_subjects()
        )));
    }
    let design = build_design(&covariates, &cfg.design)?;
    Ok(Inputs {
        observations,
        covariates,
        design,
    })
}

fn require_fit(dir: &Path, manifest: &Manifest, cfg: &PipelineConfig, model: &ModelConfig) -> Result<PathBuf, CliError> {
    let rel = fit_rel(&model.name);
    let path = dir.join(&rel);
    let Some(rec) = manifest.record(&rel).filter(|_| path.is_file()) else {
        return Err(CliError::data(format!(
            "no fitted volume for model '{}' in {}; run `voxfit fit` first",
            model.name,
            dir.display()
        )));
    };
    if rec.fit_hash.as_deref() != Some(cfg.fit_hash(model).as_str()) {
        return Err(CliError::config(format!(
            "fitted volume for model '{}' was made with a different configuration; re-run `voxfit fit`",
            model.name
        )));
    }
    Ok(path)
}

/// Fits every selected model and stores one fitted volume per model.
pub fn cmd_fit(cfg: &PipelineConfig, selection: Option<&[String]>) -> Result<Vec<PathBuf>, CliError> {
    let models = cfg.select_models(selection)?;
    if models.is_empty() {
        return Err(CliError::config("no models configured; add at least one [[models]] entry"));
    }
    let inputs = load_inputs(cfg)?;
    let mut run = Run::begin(&cfg.output.dir, "fit")?;
    for m in models {
        let fitted = fit_volume(&inputs.observations, &inputs.design, m.spec()?)
            .map_err(|e| CliError::from(e).context(format!("model '{}'", m.name)))?;
        let bytes = fitted.to_bytes()?;
        run.write_bytes(&fit_rel(&m.name), &bytes, Some(&m.name), Some(&cfg.fit_hash(m)))?;
    }
    run.commit()
}

/// Metric maps per model. For p-value maps with `alpha` configured, also a
/// thresholded and cluster-filtered map and its Z transform.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    selection: Option<&[String]>,
    metrics: Option<&[Metric]>,
) -> Result<Vec<PathBuf>, CliError> {
    let models = cfg.select_models(selection)?;
    if models.is_empty() {
        return Err(CliError::config("no models to evaluate"));
    }
    let metrics = metrics.unwrap_or(&cfg.evaluation.metrics);
    if metrics.is_empty() {
        return Err(CliError::config("no metrics selected"));
    }
    let inputs = load_inputs(cfg)?;
    let mut run = Run::begin(&cfg.output.dir, "evaluate")?;
    let eval = &cfg.evaluation;
    for m in models {
        let path = require_fit(run.dir(), run.manifest(), cfg, m)?;
        let fitted = FittedVolume::load(&path)?;
        let hash = cfg.fit_hash(m);
        for &metric in metrics {
            let map = evaluate_volume(&fitted, &inputs.observations, metric, &eval.prss())
                .map_err(|e| CliError::from(e).context(format!("model '{}'", m.name)))?;
            run.save_map(&map_rel(&m.name, metric.name()), &map, Some(&m.name), Some(&hash))?;
            if metric == Metric::FPvalue {
                if let Some(alpha) = eval.alpha {
                    let kept = cluster_filter(&threshold_map(&map, alpha)?, eval.min_cluster, eval.connectivity)?;
                    let z = z_transform(&kept);
                    run.save_map(
                        &map_rel(&m.name, "f-pvalue.thresholded"),
                        &kept,
                        Some(&m.name),
                        Some(&hash),
                    )?;
                    run.save_map(&map_rel(&m.name, "z"), &z, Some(&m.name), Some(&hash))?;
                }
            }
        }
    }
    run.commit()
}

#[derive(Debug, Clone, Serialize)]
pub struct PairSimilarity {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub similarity: MapSimilarity,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub metric: String,
    pub legend: Vec<String>,
    /// Voxels won by each model, in legend order.
    pub label_counts: Vec<usize>,
    /// Voxels where no model survived.
    pub unlabeled: usize,
    pub pairs: Vec<PairSimilarity>,
}

/// Best-fit label map across models plus pairwise difference maps.
pub fn cmd_compare(
    cfg: &PipelineConfig,
    selection: Option<&[String]>,
    metric: Option<Metric>,
) -> Result<(Vec<PathBuf>, CompareReport), CliError> {
    let models = cfg.select_models(selection)?;
    if models.len() < 2 {
        return Err(CliError::config(format!(
            "compare needs at least 2 models, got {}",
            models.len()
        )));
    }
    let metric = metric
        .or_else(|| cfg.evaluation.metrics.first().copied())
        .ok_or_else(|| CliError::config("no metric selected"))?;
    let mut run = Run::begin(&cfg.output.dir, "compare")?;
    let mut maps = Vec::with_capacity(models.len());
    for m in &models {
        let rel = map_rel(&m.name, metric.name());
        let path = run.dir().join(&rel);
        let rec = run.manifest().record(&rel).filter(|_| path.is_file()).ok_or_else(|| {
            CliError::data(format!(
                "no {} map for model '{}'; run `voxfit evaluate --metric {}` first",
                metric.name(),
                m.name,
                metric.name()
            ))
        })?;
        if rec.fit_hash.as_deref() != Some(cfg.fit_hash(m).as_str()) {
            return Err(CliError::config(format!(
                "{} map for model '{}' is stale; re-run fit and evaluate",
                metric.name(),
                m.name
            )));
        }
        maps.push(StatMap::load(&path)?);
    }
    let legend: Vec<String> = models.iter().map(|m| m.name.clone()).collect();
    let eval = &cfg.evaluation;
    let (alpha, min_size) = match eval.alpha {
        Some(a) if metric == Metric::FPvalue => (Some(a), eval.min_cluster),
        _ => (None, 1),
    };
    let labels = best_fit_labels(&maps, &legend, alpha, min_size, eval.connectivity)?;
    run.save_labels(&labels_rel(metric.name()), &labels)?;

    let mut pairs = Vec::new();
    for a in 0..maps.len() {
        for b in a + 1..maps.len() {
            let (diff, similarity) = map_difference(&maps[a], &maps[b], alpha)?;
            let rel = format!("compare/diff.{}.{}.{}.nii.gz", legend[a], legend[b], metric.name());
            run.save_map(&rel, &diff, None, None)?;
            pairs.push(PairSimilarity {
                a: legend[a].clone(),
                b: legend[b].clone(),
                similarity,
            });
        }
    }
    let counts = labels.counts();
    let report = CompareReport {
        metric: metric.name().into(),
        legend,
        label_counts: counts[1..].to_vec(),
        unlabeled: counts[0],
        pairs,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))? + "\n";
    run.write_bytes(&format!("compare/similarity.{}.json", metric.name()), json.as_bytes(), None, None)?;
    Ok((run.commit()?, report))
}

/// Runs the configured grid search. Returns written paths, the result and
/// the winning combination as a config snippet.
pub fn cmd_search(cfg: &PipelineConfig) -> Result<(Vec<PathBuf>, GridSearchResult, String), CliError> {
    let search = cfg
        .search
        .as_ref()
        .ok_or_else(|| CliError::config("no [search] section in the config"))?;
    let model = cfg.model(&search.model)?;
    let inputs = load_inputs(cfg)?;
    let result = grid_search(
        &inputs.observations,
        &inputs.design,
        model.spec()?,
        &search.grid(),
        &search.settings(),
    )?;
    let mut snippet = format!("# best of {} combinations for model '{}'\n", result.combos.len(), model.name);
    for (name, value) in &result.combos[result.best].0 {
        match name.to_ascii_lowercase().as_str() {
            "gamma" => snippet.push_str(&format!("kernel.gamma = {value}\n")),
            "penalty" => snippet.push_str(&format!("smoother.penalty = {value}\n")),
            "bandwidth" => snippet.push_str(&format!("smoother.bandwidth = {value}\n")),
            other => snippet.push_str(&format!("{other} = {value}\n")),
        }
    }
    let mut run = Run::begin(&cfg.output.dir, "search")?;
    let json = serde_json::to_string_pretty(&result).map_err(|e| CliError::runtime(e.to_string()))? + "\n";
    run.write_bytes("search/result.json", json.as_bytes(), Some(&model.name), None)?;
    Ok((run.commit()?, result, snippet))
}

/// Builds the explorer session from whatever artifacts exist.
pub fn load_session(cfg: &PipelineConfig) -> Result<Session, CliError> {
    let inputs = load_inputs(cfg)?;
    let dir = &cfg.output.dir;
    let manifest = Manifest::load(dir)?;
    let mut models = Vec::new();
    let mut maps = Vec::new();
    for m in &cfg.models {
        let Ok(path) = require_fit(dir, &manifest, cfg, m) else {
            continue;
        };
        models.push((m.name.clone(), FittedVolume::load(&path)?));
        for metric in Metric::ALL.iter().map(|x| x.name()).chain(["z"]) {
            let rel = map_rel(&m.name, metric);
            if manifest.record(&rel).is_some() && dir.join(&rel).is_file() {
                maps.push((format!("{}.{metric}", m.name), StatMap::load(dir.join(&rel))?));
            }
        }
    }
    if models.is_empty() {
        return Err(CliError::data(format!(
            "no fitted volumes in {}; run `voxfit fit` first",
            dir.display()
        )));
    }
    let labels = cfg
        .evaluation
        .metrics
        .iter()
        .map(|m| labels_rel(m.name()))
        .find(|rel| manifest.record(rel).is_some() && dir.join(rel).is_file())
        .map(|rel| LabelMap::load(dir.join(rel)))
        .transpose()?;
    let session = Session::new(inputs.observations, models, maps, labels)?;
    Ok(session.with_grid_points(cfg.explore.grid_points))
}

/// Serves the explorer until interrupted.
pub fn cmd_explore(cfg: &PipelineConfig, on_ready: impl FnOnce(&str)) -> Result<(), CliError> {
    let session = load_session(cfg)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let server = voxfit_explorer::bind(session, &cfg.explore.bind, cfg.explore.assets.clone())
            .await
            .map_err(|e| CliError::runtime(e.to_string()))?;
        on_ready(&format!("http://{}/", server.local_addr()));
        server
            .serve_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::runtime(e.to_string()))
    })
}

/// Pipeline config matching a synthetic dataset written to the same
/// directory.
pub fn synth_config(spec: &SynthSpec) -> PipelineConfig {
    let n_vox: usize = spec.dims.iter().product();
    PipelineConfig {
        config_version: CONFIG_VERSION,
        input: InputConfig {
            observations: synth::OBSERVATIONS_FILE.into(),
            covariates: synth::COVARIATES_FILE.into(),
            subject_column: "subject".into(),
            mask: Some(synth::BRAIN_MASK_FILE.into()),
        },
        design: DesignSpec {
            correctors: vec![Term::new("age", 2), Term::new("sex", 1)],
            predictors: vec![Term::new("index", 3)],
            standardize: true,
        },
        models: vec![
            ModelConfig {
                name: "glm-poly".into(),
                family: FamilyName::Glm,
                kernel: None,
                epsilon: None,
                c: None,
                smoother: None,
                tol: None,
                max_iter: None,
            },
            ModelConfig {
                name: "svr-poly".into(),
                family: FamilyName::Svr,
                kernel: Some(Kernel::Polynomial {
                    gamma: 1.0 / 3.0,
                    degree: 3,
                    coef0: 1.0,
                }),
                epsilon: Some(0.01),
                c: Some(1.0),
                smoother: None,
                tol: None,
                max_iter: None,
            },
            ModelConfig {
                name: "svr-rbf".into(),
                family: FamilyName::Svr,
                kernel: Some(Kernel::Rbf { gamma: 0.5 }),
                epsilon: Some(0.01),
                c: Some(1.0),
                smoother: None,
                tol: None,
                max_iter: None,
            },
            ModelConfig {
                name: "gam-spline".into(),
                family: FamilyName::Gam,
                kernel: None,
                epsilon: None,
                c: None,
                smoother: Some(SmootherSpec::CubicSpline { penalty: 1.0 }),
                tol: None,
                max_iter: None,
            },
        ],
        evaluation: EvaluationConfig {
            metrics: vec![Metric::FPvalue],
            alpha: Some(0.001),
            // 100 voxels at full brain scale, scaled down for small volumes.
            min_cluster: if n_vox <= 32 * 32 * 32 { 27 } else { 100 },
            ..EvaluationConfig::default()
        },
        search: Some(SearchConfig {
            model: "svr-rbf".into(),
            var_min: 1e-4,
            m: 50,
            n_iters: 3,
            seed: spec.seed,
            error_fn: Default::default(),
            axes: vec![
                HyperAxis {
                    name: "epsilon".into(),
                    min: 0.005,
                    max: 0.5,
                    count: 3,
                    sampling: Sampling::Logarithmic,
                },
                HyperAxis {
                    name: "c".into(),
                    min: 0.1,
                    max: 10.0,
                    count: 3,
                    sampling: Sampling::Logarithmic,
                },
            ],
        }),
        output: OutputConfig { dir: "out".into() },
        explore: ExploreConfig::default(),
    }
}

/// Writes a synthetic dataset, its generator settings and a ready-to-run
/// `config.toml` into `dir`.
pub fn cmd_synth(spec: &SynthSpec, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = synth::generate(spec).map_err(|e| CliError::config(e.to_string()))?;
    data.save(dir)?;
    let config = synth_config(spec).to_toml()?;
    let spec_text = toml::to_string_pretty(&SynthFile { synth: spec.clone() })
        .map_err(|e| CliError::runtime(e.to_string()))?;
    std::fs::write(dir.join("config.toml"), config)?;
    std::fs::write(dir.join(SYNTH_FILE), spec_text)?;
    Ok([
        synth::OBSERVATIONS_FILE,
        synth::COVARIATES_FILE,
        synth::EFFECT_MASK_FILE,
        synth::BRAIN_MASK_FILE,
        "config.toml",
        SYNTH_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect())
}

pub const SYNTH_FILE: &str = "synth.toml";

/// Generator settings as written next to a synthetic dataset.
#[derive(Serialize, serde::Deserialize)]
pub struct SynthFile {
    pub synth: SynthSpec,
}
