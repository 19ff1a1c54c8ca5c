//! Effective run configuration: defaults, then the `DEFX_SEED` environment
//! fallback, then the flat `key = value` config file, then command-line
//! flags. Later sources win; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use defx_core::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct Effective {
    pub train: TrainConfig,
    pub folds: usize,
    pub jobs: usize,
}

impl Default for Effective {
    fn default() -> Self {
        Effective {
            train: TrainConfig::default(),
            folds: 10,
            jobs: 1,
        }
    }
}

impl Effective {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |what: &str| CliError::Usage(format!("config key {key}: invalid {what} {value:?}"));
        match key {
            "model" => self.train.model.kind = value.parse().map_err(|_| bad("model kind"))?,
            "encoder" => {
                self.train.model.encoder_source = value.parse().map_err(|_| bad("encoder"))?
            }
            "epochs" => self.train.epochs = value.parse().map_err(|_| bad("integer"))?,
            "lr" => self.train.lr = value.parse().map_err(|_| bad("number"))?,
            "batch_size" => self.train.batch_size = value.parse().map_err(|_| bad("integer"))?,
            "weight_decay" => self.train.weight_decay = value.parse().map_err(|_| bad("number"))?,
            "seed" => self.train.seed = value.parse().map_err(|_| bad("integer"))?,
            "window" => self.train.model.window = value.parse().map_err(|_| bad("integer"))?,
            "folds" => self.folds = value.parse().map_err(|_| bad("integer"))?,
            "jobs" => self.jobs = value.parse().map_err(|_| bad("integer"))?,
            "emb.dim" => self.train.model.emb_dim = value.parse().map_err(|_| bad("integer"))?,
            "emb.freeze" => {
                self.train.model.freeze_embeddings = value.parse().map_err(|_| bad("bool"))?
            }
            "gcn.rounds" => self.train.model.gcn.rounds = value.parse().map_err(|_| bad("integer"))?,
            "gcn.d_gcn" => self.train.model.gcn.d_gcn = value.parse().map_err(|_| bad("integer"))?,
            "gcn.aggregation" => {
                self.train.model.gcn.aggregation = value.parse().map_err(|_| bad("aggregation"))?
            }
            "enc.d_model" => {
                self.train.model.enc.d_model = value.parse().map_err(|_| bad("integer"))?
            }
            "enc.layers" => self.train.model.enc.layers = value.parse().map_err(|_| bad("integer"))?,
            "enc.heads" => self.train.model.enc.heads = value.parse().map_err(|_| bad("integer"))?,
            "enc.ffn_dim" => {
                self.train.model.enc.ffn_dim = value.parse().map_err(|_| bad("integer"))?
            }
            "enc.max_len" => {
                self.train.model.enc.max_len = value.parse().map_err(|_| bad("integer"))?
            }
            other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
        for (idx, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected `key = value`, found {raw:?}",
                    path.display(),
                    idx + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), CliError> {
        if let Ok(seed) = std::env::var("DEFX_SEED") {
            self.apply("seed", &seed)?;
        }
        Ok(())
    }

    /// One flat, sorted key-value view of the whole effective configuration;
    /// embedded in every output artifact.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let m = &t.model;
        let mut map = BTreeMap::new();
        map.insert("model".into(), m.kind.to_string());
        map.insert("encoder".into(), m.encoder_source.to_string());
        map.insert("epochs".into(), t.epochs.to_string());
        map.insert("lr".into(), t.lr.to_string());
        map.insert("batch_size".into(), t.batch_size.to_string());
        map.insert("weight_decay".into(), t.weight_decay.to_string());
        map.insert("seed".into(), t.seed.to_string());
        map.insert("window".into(), m.window.to_string());
        map.insert("folds".into(), self.folds.to_string());
        map.insert("jobs".into(), self.jobs.to_string());
        map.insert("emb.dim".into(), m.emb_dim.to_string());
        map.insert("emb.freeze".into(), m.freeze_embeddings.to_string());
        map.insert("gcn.rounds".into(), m.gcn.rounds.to_string());
        map.insert("gcn.d_gcn".into(), m.gcn.d_gcn.to_string());
        map.insert(
            "gcn.aggregation".into(),
            match m.gcn.aggregation {
                defx_core::gcn::Aggregation::Mean => "mean".into(),
                defx_core::gcn::Aggregation::Max => "max".into(),
            },
        );
        map.insert("enc.d_model".into(), m.enc.d_model.to_string());
        map.insert("enc.layers".into(), m.enc.layers.to_string());
        map.insert("enc.heads".into(), m.enc.heads.to_string());
        map.insert("enc.ffn_dim".into(), m.enc.ffn_dim.to_string());
        map.insert("enc.max_len".into(), m.enc.max_len.to_string());
        map
    }
}
