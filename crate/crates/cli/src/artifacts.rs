//! Output directory handling: exclusive lock, atomic writes, manifest.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voxfit_core::maps::{sidecar_path, LabelMap, StatMap};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub sha256: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Fit hash of the configuration the artifact derives from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub updated_unix: u64,
    /// Relative path → record.
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            tool: "voxfit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            updated_unix: 0,
            artifacts: BTreeMap::new(),
        }
    }
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn record(&self, rel: &str) -> Option<&ArtifactRecord> {
        self.artifacts.get(rel)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Exclusive ownership of an output directory for one run.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CliError::runtime(format!(
                    "{} is locked by another run (delete {} if that run is gone)",
                    dir.display(),
                    path.display()
                ))
            } else {
                CliError::runtime(format!("cannot create {}: {e}", path.display()))
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn tmp_name(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    path.with_file_name(format!(".tmp-{}-{name}", std::process::id()))
}

/// One command's writes into the output directory. Files land atomically;
/// if the run is dropped without [`Run::commit`], everything it wrote is
/// removed and the manifest is left untouched.
pub struct Run {
    dir: PathBuf,
    command: String,
    manifest: Manifest,
    written: Vec<String>,
    committed: bool,
    _lock: OutputLock,
}

impl Run {
    pub fn begin(dir: &Path, command: &str) -> Result<Self, CliError> {
        let lock = OutputLock::acquire(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            manifest: Manifest::load(dir)?,
            written: Vec::new(),
            committed: false,
            _lock: lock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn prepare(&self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
        Ok(path)
    }

    fn register(&mut self, rel: &str, model: Option<&str>, fit_hash: Option<&str>) -> Result<(), CliError> {
        let sha256 = sha256_file(&self.dir.join(rel))?;
        self.manifest.artifacts.insert(
            rel.to_string(),
            ArtifactRecord {
                sha256,
                command: self.command.clone(),
                model: model.map(String::from),
                fit_hash: fit_hash.map(String::from),
            },
        );
        self.written.push(rel.to_string());
        Ok(())
    }

    fn rename(tmp: &Path, path: &Path) -> Result<(), CliError> {
        std::fs::rename(tmp, path)
            .map_err(|e| CliError::runtime(format!("cannot move {} into place: {e}", path.display())))
    }

    pub fn write_bytes(
        &mut self,
        rel: &str,
        bytes: &[u8],
        model: Option<&str>,
        fit_hash: Option<&str>,
    ) -> Result<PathBuf, CliError> {
        let path = self.prepare(rel)?;
        let tmp = tmp_name(&path);
        std::fs::write(&tmp, bytes).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", tmp.display())))?;
        Self::rename(&tmp, &path)?;
        self.register(rel, model, fit_hash)?;
        Ok(path)
    }

    fn save_with_sidecar(
        &mut self,
        rel: &str,
        model: Option<&str>,
        fit_hash: Option<&str>,
        save: impl FnOnce(&Path) -> voxfit_core::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let path = self.prepare(rel)?;
        let tmp = tmp_name(&path);
        if let Err(e) = save(&tmp) {
            let _ = std::fs::remove_file(&tmp);
            let _ = std::fs::remove_file(sidecar_path(&tmp));
            return Err(e.into());
        }
        let side = sidecar_path(&path);
        Self::rename(&sidecar_path(&tmp), &side)?;
        Self::rename(&tmp, &path)?;
        let side_rel = side
            .strip_prefix(&self.dir)
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .unwrap_or_default();
        self.register(&side_rel, model, fit_hash)?;
        self.register(rel, model, fit_hash)?;
        Ok(path)
    }

    pub fn save_map(
        &mut self,
        rel: &str,
        map: &StatMap,
        model: Option<&str>,
        fit_hash: Option<&str>,
    ) -> Result<PathBuf, CliError> {
        self.save_with_sidecar(rel, model, fit_hash, |p| map.save(p))
    }

    pub fn save_labels(&mut self, rel: &str, labels: &LabelMap) -> Result<PathBuf, CliError> {
        self.save_with_sidecar(rel, None, None, |p| labels.save(p))
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>, CliError> {
        self.manifest.updated_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::runtime(e.to_string()))?;
        let path = self.dir.join(MANIFEST);
        let tmp = tmp_name(&path);
        std::fs::write(&tmp, text + "\n")?;
        Self::rename(&tmp, &path)?;
        self.committed = true;
        Ok(self.written.iter().map(|r| self.dir.join(r)).collect())
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        if !self.committed {
            for rel in &self.written {
                let _ = std::fs::remove_file(self.dir.join(rel));
            }
        }
    }
}
