//! Per-stage manifests: which inputs (by digest) produced which outputs,
//! under which configuration.
//!
//! A stage writes `<out>.manifest.json` beside its output. Re-running a stage
//! over the same output path with a different template or corpus digest fails
//! fast unless drift is explicitly allowed.

use crate::hashing::sha256_hex;
use crate::types::RunConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("digest drift for {what}: manifest has {previous}, current run has {current} (pass --allow-drift to override)")]
    Drift {
        what: String,
        previous: String,
        current: String,
    },
}

/// Provenance record for one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub run_id: String,
    pub stage: String,
    pub config: RunConfig,
    pub stage_outputs: BTreeMap<String, PathBuf>,
    pub template_digest: Option<String>,
    pub corpus_digest: Option<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl PipelineManifest {
    /// Start a manifest for a stage. The run id is a digest of the stage
    /// name, configuration, and input digests, so identical runs share it.
    pub fn start(
        stage: &str,
        config: &RunConfig,
        template_digest: Option<String>,
        corpus_digest: Option<String>,
        input_digests: &[String],
    ) -> PipelineManifest {
        let config_json = serde_json::to_string(config).expect("config serializes");
        let identity = format!(
            "{stage}\n{config_json}\n{}\n{}\n{}",
            template_digest.as_deref().unwrap_or(""),
            corpus_digest.as_deref().unwrap_or(""),
            input_digests.join("\n")
        );
        PipelineManifest {
            run_id: sha256_hex(identity.as_bytes())[..16].to_string(),
            stage: stage.to_string(),
            config: config.clone(),
            stage_outputs: BTreeMap::new(),
            template_digest,
            corpus_digest,
            started_unix: now_unix(),
            finished_unix: 0,
        }
    }

    pub fn record_output(&mut self, name: &str, path: &Path) {
        self.stage_outputs
            .insert(name.to_string(), path.to_path_buf());
    }

    /// Check every recorded output exists, stamp the finish time, and write
    /// `<out>.manifest.json` next to the primary output.
    pub fn finalize(mut self, primary_output: &Path) -> Result<PathBuf, ManifestError> {
        for (name, path) in &self.stage_outputs {
            if !path.exists() {
                return Err(ManifestError::Invalid {
                    path: path.display().to_string(),
                    message: format!("stage output '{name}' does not exist"),
                });
            }
        }
        self.finished_unix = now_unix();
        let manifest_path = manifest_path_for(primary_output);
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(&manifest_path, json)?;
        Ok(manifest_path)
    }

    pub fn load(path: &Path) -> Result<PipelineManifest, ManifestError> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| ManifestError::Invalid {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// `<out>.manifest.json` for a stage output path.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(".manifest.json");
    output.with_file_name(name)
}

/// Fail fast when an earlier manifest for the same output pinned a different
/// template or corpus digest.
pub fn check_drift(
    output: &Path,
    template_digest: Option<&str>,
    corpus_digest: Option<&str>,
    allow_drift: bool,
) -> Result<(), ManifestError> {
    if allow_drift {
        return Ok(());
    }
    let path = manifest_path_for(output);
    if !path.exists() {
        return Ok(());
    }
    let Ok(previous) = PipelineManifest::load(&path) else {
        return Ok(());
    };
    if let (Some(previous), Some(current)) = (previous.template_digest.as_deref(), template_digest)
    {
        if previous != current {
            return Err(ManifestError::Drift {
                what: "template".to_string(),
                previous: previous.to_string(),
                current: current.to_string(),
            });
        }
    }
    if let (Some(previous), Some(current)) = (previous.corpus_digest.as_deref(), corpus_digest) {
        if previous != current {
            return Err(ManifestError::Drift {
                what: "corpus".to_string(),
                previous: previous.to_string(),
                current: current.to_string(),
            });
        }
    }
    Ok(())
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
