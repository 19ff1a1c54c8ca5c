pub mod cv;
pub mod errors;
pub mod predict;
pub mod prepare;
pub mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use defx_core::corpus::SentenceRecord;
use defx_core::encoder::load_feature_store;
use defx_core::harness::Resources;
use defx_core::text::load_embeddings;
use defx_core::{Error, ModelConfig};
use serde::Serialize;

use crate::config::Effective;
use crate::{CliError, ModelFlags};

impl ModelFlags {
    /// Resolves the effective configuration from every source, lowest
    /// precedence first.
    pub fn effective(&self) -> Result<Effective, CliError> {
        let mut eff = Effective::default();
        eff.apply_env()?;
        if let Some(path) = &self.config {
            eff.apply_file(path)?;
        }
        for pair in &self.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("--set expects key=value, found {pair:?}"))
            })?;
            eff.apply(k.trim(), v.trim())?;
        }
        if let Some(v) = &self.model {
            eff.apply("model", v)?;
        }
        if let Some(v) = &self.encoder {
            eff.apply("encoder", v)?;
        }
        if let Some(v) = self.epochs {
            eff.apply("epochs", &v.to_string())?;
        }
        if let Some(v) = self.lr {
            eff.apply("lr", &v.to_string())?;
        }
        if let Some(v) = self.batch_size {
            eff.apply("batch_size", &v.to_string())?;
        }
        if let Some(v) = self.weight_decay {
            eff.apply("weight_decay", &v.to_string())?;
        }
        if let Some(v) = self.seed {
            eff.apply("seed", &v.to_string())?;
        }
        if let Some(v) = self.window {
            eff.apply("window", &v.to_string())?;
        }
        Ok(eff)
    }

    /// Checks flag/model consistency and loads embeddings and features.
    pub fn resources(&self, model: &ModelConfig) -> Result<Resources, CliError> {
        if model.uses_encoder()
            && model.encoder_source == defx_core::EncoderSource::Precomputed
            && self.features.is_none()
        {
            return Err(CliError::Usage(
                "--encoder precomputed requires --features".into(),
            ));
        }
        let pretrained = match &self.embeddings {
            Some(path) if model.uses_gcn() => Some(load_embeddings(path, model.emb_dim)?),
            _ => None,
        };
        let features = match &self.features {
            Some(path) => Some(load_feature_store(path)?),
            None => None,
        };
        Ok(Resources {
            pretrained,
            features,
        })
    }
}

/// Audit sidecar written next to TSV artifacts (the TSV formats themselves
/// have no room for metadata).
#[derive(Serialize)]
struct MetaSidecar<'a> {
    command: &'a str,
    config: &'a BTreeMap<String, String>,
}

pub fn write_meta(
    artifact: &Path,
    command: &str,
    config: &BTreeMap<String, String>,
) -> Result<(), CliError> {
    let mut path = artifact.as_os_str().to_owned();
    path.push(".meta.json");
    let path = PathBuf::from(path);
    let body = serde_json::to_string_pretty(&MetaSidecar { command, config })
        .map_err(|e| CliError::Usage(format!("serializing metadata: {e}")))?;
    std::fs::write(&path, body + "\n").map_err(|e| CliError::Core(Error::io(&path, e)))?;
    Ok(())
}

/// Reads sentences for prediction: `sentence<TAB>label` lines keep their
/// label, bare sentences get label 0 (unused for prediction).
pub fn load_sentences_lenient(path: &Path) -> Result<Vec<SentenceRecord>, CliError> {
    let body = std::fs::read_to_string(path).map_err(|e| CliError::Core(Error::io(path, e)))?;
    let filename = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut records = Vec::new();
    for (idx, raw) in body.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let (text, label) = match line.rsplit_once('\t') {
            Some((sentence, "0")) => (sentence, 0),
            Some((sentence, "1")) => (sentence, 1),
            _ => (line, 0),
        };
        records.push(SentenceRecord {
            id: format!("{filename}#{}", idx + 1),
            raw_text: text.to_string(),
            text: text.to_string(),
            subject: None,
            label,
        });
    }
    Ok(records)
}
