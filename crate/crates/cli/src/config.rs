//! Pipeline configuration file (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voxfit_core::design::DesignSpec;
use voxfit_core::fit::{GamOptions, Kernel, ModelSpec, SmootherSpec, SvrHyper};
use voxfit_core::maps::Connectivity;
use voxfit_core::metrics::{Metric, PrssParams};
use voxfit_core::search::{ErrorFn, HyperAxis, HyperGrid, SearchSettings};
use voxfit_core::volume::load_covariates;

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub config_version: u32,
    pub input: InputConfig,
    pub design: DesignSpec,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub explore: ExploreConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// 4-D NIfTI, one volume per subject in covariate-row order.
    pub observations: PathBuf,
    pub covariates: PathBuf,
    #[serde(default = "default_subject_column")]
    pub subject_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

fn default_subject_column() -> String {
    "subject".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Glm,
    Gam,
    Svr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Kernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoother: Option<SmootherSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl ModelConfig {
    pub fn spec(&self) -> Result<ModelSpec, CliError> {
        let stray = |field: &str| {
            CliError::config(format!(
                "model '{}': '{field}' does not apply to family {:?}",
                self.name, self.family
            ))
        };
        let spec = match self.family {
            FamilyName::Glm => {
                for (set, f) in [
                    (self.kernel.is_some(), "kernel"),
                    (self.epsilon.is_some(), "epsilon"),
                    (self.c.is_some(), "c"),
                    (self.smoother.is_some(), "smoother"),
                ] {
                    if set {
                        return Err(stray(f));
                    }
                }
                ModelSpec::Glm
            }
            FamilyName::Gam => {
                if self.kernel.is_some() || self.epsilon.is_some() || self.c.is_some() {
                    return Err(stray("kernel/epsilon/c"));
                }
                let d = GamOptions::default();
                ModelSpec::Gam {
                    smoother: self.smoother.unwrap_or(SmootherSpec::CubicSpline { penalty: 1.0 }),
                    options: GamOptions {
                        tol: self.tol.unwrap_or(d.tol),
                        max_iter: self.max_iter.unwrap_or(d.max_iter),
                    },
                }
            }
            FamilyName::Svr => {
                if self.smoother.is_some() || self.tol.is_some() || self.max_iter.is_some() {
                    return Err(stray("smoother/tol/max_iter"));
                }
                ModelSpec::Svr {
                    kernel: self
                        .kernel
                        .ok_or_else(|| CliError::config(format!("model '{}': svr needs a kernel", self.name)))?,
                    hyper: SvrHyper {
                        epsilon: self.epsilon.unwrap_or(0.1),
                        c: self.c.unwrap_or(1.0),
                    },
                }
            }
        };
        spec.validate()
            .map_err(|e| CliError::config(format!("model '{}': {e}", self.name)))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub metrics: Vec<Metric>,
    /// Significance level for thresholded maps; unset disables them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub min_cluster: usize,
    pub connectivity: Connectivity,
    pub penalty_weight: f64,
    pub grid_points: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let prss = PrssParams::default();
        Self {
            metrics: vec![Metric::FPvalue],
            alpha: None,
            min_cluster: 100,
            connectivity: Connectivity::Six,
            penalty_weight: prss.penalty_weight,
            grid_points: prss.grid_points,
        }
    }
}

impl EvaluationConfig {
    pub fn prss(&self) -> PrssParams {
        PrssParams {
            penalty_weight: self.penalty_weight,
            grid_points: self.grid_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Name of the model whose hyperparameters are searched.
    pub model: String,
    #[serde(default = "default_var_min")]
    pub var_min: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_n_iters")]
    pub n_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub error_fn: ErrorFn,
    #[serde(default)]
    pub axes: Vec<HyperAxis>,
}

fn default_var_min() -> f64 {
    SearchSettings::default().var_min
}
fn default_m() -> usize {
    SearchSettings::default().m
}
fn default_n_iters() -> usize {
    SearchSettings::default().n_iters
}

impl SearchConfig {
    pub fn grid(&self) -> HyperGrid {
        HyperGrid {
            axes: self.axes.clone(),
            seed: self.seed,
        }
    }

    pub fn settings(&self) -> SearchSettings {
        SearchSettings {
            var_min: self.var_min,
            m: self.m,
            n_iters: self.n_iters,
            error_fn: self.error_fn,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("voxfit-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreConfig {
    pub bind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assets: Option<PathBuf>,
    pub grid_points: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            assets: None,
            grid_points: 100,
        }
    }
}

fn is_safe_name(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::runtime(e.to_string()))
    }

    /// Reads, resolves relative paths against the file's directory and
    /// validates, including that inputs exist and the design's covariates
    /// are present in the table.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        cfg.check_inputs()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input.observations);
        fix(&mut self.input.covariates);
        if let Some(m) = &mut self.input.mask {
            fix(m);
        }
        fix(&mut self.output.dir);
        if let Some(a) = &mut self.explore.assets {
            fix(a);
        }
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.config_version != CONFIG_VERSION {
            return Err(CliError::config(format!(
                "unsupported config_version {} (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        self.design.validate().map_err(|e| CliError::config(e.to_string()))?;
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !is_safe_name(&m.name) {
                return Err(CliError::config(format!(
                    "model name '{}' must use only letters, digits, '-', '_' or '.'",
                    m.name
                )));
            }
            if !names.insert(m.name.as_str()) {
                return Err(CliError::config(format!("duplicate model name '{}'", m.name)));
            }
            m.spec()?;
        }
        let e = &self.evaluation;
        if let Some(a) = e.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(CliError::config(format!("evaluation.alpha must lie in [0, 1], got {a}")));
            }
        }
        if e.min_cluster == 0 {
            return Err(CliError::config("evaluation.min_cluster must be at least 1"));
        }
        e.prss().validate().map_err(|err| CliError::config(err.to_string()))?;
        if let Some(s) = &self.search {
            if !names.contains(s.model.as_str()) {
                return Err(CliError::config(format!("search.model '{}' is not a configured model", s.model)));
            }
            s.grid().validate().map_err(|err| CliError::config(err.to_string()))?;
            if s.m == 0 || s.n_iters == 0 {
                return Err(CliError::config("search.m and search.n_iters must be at least 1"));
            }
        }
        Ok(())
    }

    fn check_inputs(&self) -> Result<(), CliError> {
        let mut paths = vec![&self.input.observations, &self.input.covariates];
        paths.extend(self.input.mask.as_ref());
        for p in paths {
            if !p.is_file() {
                return Err(CliError::config(format!("input file not found: {}", p.display())));
            }
        }
        let table = load_covariates(&self.input.covariates, &self.input.subject_column)?;
        for t in self.design.correctors.iter().chain(&self.design.predictors) {
            if table.column(&t.covariate).is_none() {
                return Err(CliError::config(format!(
                    "design covariate '{}' not in {} (columns: {})",
                    t.covariate,
                    self.input.covariates.display(),
                    table.names().join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Result<&ModelConfig, CliError> {
        self.models.iter().find(|m| m.name == name).ok_or_else(|| {
            let known: Vec<_> = self.models.iter().map(|m| m.name.as_str()).collect();
            CliError::usage(format!("unknown model '{name}'; configured: {}", known.join(", ")))
        })
    }

    /// Models named in `selection`, or all of them.
    pub fn select_models(&self, selection: Option<&[String]>) -> Result<Vec<&ModelConfig>, CliError> {
        match selection {
            None => Ok(self.models.iter().collect()),
            Some(names) => names.iter().map(|n| self.model(n)).collect(),
        }
    }

    /// Hash of everything that determines one model's fitted volume.
    pub fn fit_hash(&self, model: &ModelConfig) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            input: &'a InputConfig,
            design: &'a DesignSpec,
            model: &'a ModelConfig,
        }
        let text = serde_json::to_string(&Key {
            input: &self.input,
            design: &self.design,
            model,
        })
        .expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..16])
    }
}
