//! Assembly of the three model kinds over the shared parameter store.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SentenceRecord;
use crate::encoder::{
    classify_encoder_only, classify_joint, transformer_encode, EncoderConfig, EncoderHead,
    EncoderParams, FeatureStore, JointHead,
};
use crate::error::{Error, Result};
use crate::gcn::{gcn_encode, GcnConfig, GcnParams};
use crate::graph::{
    build_store, read_store_pairs, save_store, EdgeWeightStore, EDGE_WEIGHTS_PARAM,
};
use crate::nn::{self, checkpoint, softmax, Init, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::text::{ids_of, tokenize, EmbeddingTable, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GcnOnly,
    EncoderOnly,
    Joint,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn_only" => Ok(ModelKind::GcnOnly),
            "encoder_only" => Ok(ModelKind::EncoderOnly),
            "joint" => Ok(ModelKind::Joint),
            other => Err(Error::invalid(format!(
                "unknown model kind {other:?} (expected gcn_only, encoder_only, or joint)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::GcnOnly => "gcn_only",
            ModelKind::EncoderOnly => "encoder_only",
            ModelKind::Joint => "joint",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSource {
    /// The built-in toy transformer.
    Toy,
    /// CLS vectors looked up in a feature file by sentence id.
    Precomputed,
}

impl std::str::FromStr for EncoderSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(EncoderSource::Toy),
            "precomputed" => Ok(EncoderSource::Precomputed),
            other => Err(Error::invalid(format!(
                "unknown encoder {other:?} (expected toy or precomputed)"
            ))),
        }
    }
}

impl std::fmt::Display for EncoderSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderSource::Toy => "toy",
            EncoderSource::Precomputed => "precomputed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder_source: EncoderSource,
    /// Graph window size n.
    pub window: usize,
    /// Word-vector width d_w for the GCN branch.
    pub emb_dim: usize,
    pub freeze_embeddings: bool,
    pub gcn: GcnConfig,
    pub enc: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Joint,
            encoder_source: EncoderSource::Toy,
            window: 5,
            emb_dim: 50,
            freeze_embeddings: false,
            gcn: GcnConfig::default(),
            enc: EncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn uses_gcn(&self) -> bool {
        matches!(self.kind, ModelKind::GcnOnly | ModelKind::Joint)
    }

    pub fn uses_encoder(&self) -> bool {
        matches!(self.kind, ModelKind::EncoderOnly | ModelKind::Joint)
    }
}

/// A ready-to-train (or ready-to-predict) model: parameters, vocabulary,
/// edge-weight store, and optional precomputed features.
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub vocab: Vocab,
    pub edge_store: Option<EdgeWeightStore>,
    pub features: Option<FeatureStore>,
    /// Encoder feature width: `enc.d_model` for the toy path, the feature
    /// file's dim for the precomputed path.
    pub d_enc: usize,
    /// Seed the parameters were initialized with.
    pub seed: u64,
    embedding: Option<ParamId>,
    gcn_params: Option<GcnParams>,
    enc_params: Option<EncoderParams>,
    enc_head: Option<EncoderHead>,
    joint_head: Option<JointHead>,
    gcn_head: Option<(ParamId, ParamId)>,
}

impl Model {
    /// Builds a fresh model. The edge-weight store is enumerated from
    /// `train_records` only; unseen pairs at evaluation time resolve to the
    /// public weight.
    pub fn build(
        config: ModelConfig,
        train_records: &[SentenceRecord],
        pretrained: Option<(Vocab, EmbeddingTable)>,
        features: Option<FeatureStore>,
        seed: u64,
    ) -> Result<Model> {
        if config.uses_encoder()
            && config.encoder_source == EncoderSource::Precomputed
            && features.is_none()
        {
            return Err(Error::invalid(
                "precomputed encoder requires a feature file",
            ));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        let (vocab, table) = match pretrained {
            Some((v, t)) => {
                if config.uses_gcn() && t.dim != config.emb_dim {
                    return Err(Error::invalid(format!(
                        "embedding file dim {} != configured emb_dim {}",
                        t.dim, config.emb_dim
                    )));
                }
                (v, Some(t))
            }
            None => {
                let (v, t) = crate::text::random_embeddings(
                    train_records.iter().map(|r| r.text.clone()),
                    config.emb_dim,
                    seed,
                );
                (v, Some(t))
            }
        };

        let mut embedding = None;
        let mut edge_store = None;
        let mut gcn_params = None;
        if config.uses_gcn() {
            let table = table.expect("embedding table always constructed above");
            let frozen = config.freeze_embeddings;
            let id = params.add_tensor("emb.table", table.vectors);
            params.set_trainable(id, !frozen);
            embedding = Some(id);
            edge_store = Some(build_store(train_records, &vocab, config.window, &mut params));
            gcn_params = Some(GcnParams::init(
                &mut params,
                vocab.len(),
                config.emb_dim,
                config.gcn.d_gcn,
                &mut rng,
            ));
        }

        let mut enc_params = None;
        let d_enc = if config.uses_encoder() {
            match config.encoder_source {
                EncoderSource::Toy => {
                    enc_params = Some(EncoderParams::init(
                        &mut params,
                        vocab.len(),
                        &config.enc,
                        &mut rng,
                    )?);
                    config.enc.d_model
                }
                EncoderSource::Precomputed => features.as_ref().map(|f| f.dim).unwrap_or(0),
            }
        } else {
            0
        };

        let mut enc_head = None;
        let mut joint_head = None;
        let mut gcn_head = None;
        match config.kind {
            ModelKind::GcnOnly => {
                let w = params.add(
                    "head.gcn.w",
                    vec![2, config.gcn.d_gcn],
                    Init::FanIn(config.gcn.d_gcn),
                    &mut rng,
                );
                let b = params.add("head.gcn.b", vec![2], Init::Const(0.0), &mut rng);
                gcn_head = Some((w, b));
            }
            ModelKind::EncoderOnly => {
                enc_head = Some(EncoderHead::init(&mut params, d_enc, &mut rng));
            }
            ModelKind::Joint => {
                joint_head = Some(JointHead::init(&mut params, d_enc, config.gcn.d_gcn, &mut rng));
            }
        }

        Ok(Model {
            config,
            params,
            vocab,
            edge_store,
            features,
            d_enc,
            seed,
            embedding,
            gcn_params,
            enc_params,
            enc_head,
            joint_head,
            gcn_head,
        })
    }

    fn word_ids(&self, record: &SentenceRecord) -> Vec<usize> {
        ids_of(&tokenize(&record.text), &self.vocab)
    }

    /// Builds the forward pass up to the two class logits.
    pub fn logits(&self, tape: &mut Tape, record: &SentenceRecord) -> Result<NodeId> {
        self.logits_in(&self.params, tape, record)
    }

    /// Same forward pass against an external parameter store with this
    /// model's layout (gradient checking perturbs a taken-out store).
    pub fn logits_in(
        &self,
        params: &ParamStore,
        tape: &mut Tape,
        record: &SentenceRecord,
    ) -> Result<NodeId> {
        let gcn_vec = if self.config.uses_gcn() {
            let ids = self.word_ids(record);
            if ids.is_empty() {
                return Err(Error::invalid(format!("empty sentence in record {}", record.id)));
            }
            Some(gcn_encode(
                tape,
                params,
                &ids,
                self.config.window,
                self.edge_store.as_ref().expect("gcn model has a store"),
                self.embedding.expect("gcn model has embeddings"),
                self.gcn_params.as_ref().expect("gcn model has params"),
                &self.config.gcn,
            )?)
        } else {
            None
        };

        let cls_vec = if self.config.uses_encoder() {
            Some(match self.config.encoder_source {
                EncoderSource::Toy => {
                    let ids = self.word_ids(record);
                    transformer_encode(
                        tape,
                        params,
                        &ids,
                        self.enc_params.as_ref().expect("toy encoder has params"),
                        &self.config.enc,
                    )?
                }
                EncoderSource::Precomputed => {
                    let features = self
                        .features
                        .as_ref()
                        .ok_or_else(|| Error::invalid("precomputed encoder has no feature file"))?;
                    let v = features.get(&record.id)?;
                    tape.input(Tensor::vector(v.to_vec()))
                }
            })
        } else {
            None
        };

        match self.config.kind {
            ModelKind::GcnOnly => {
                let (w, b) = self.gcn_head.expect("gcn_only has a head");
                nn::linear(tape, params, w, b, gcn_vec.expect("gcn branch present"))
            }
            ModelKind::EncoderOnly => classify_encoder_only(
                tape,
                params,
                self.enc_head.as_ref().expect("encoder_only has a head"),
                cls_vec.expect("encoder branch present"),
            ),
            ModelKind::Joint => classify_joint(
                tape,
                params,
                self.joint_head.as_ref().expect("joint has a head"),
                cls_vec.expect("encoder branch present"),
                gcn_vec.expect("gcn branch present"),
            ),
        }
    }

    /// Forward pass plus cross-entropy against the record's label.
    pub fn loss(&self, tape: &mut Tape, record: &SentenceRecord) -> Result<(NodeId, NodeId)> {
        self.loss_in(&self.params, tape, record)
    }

    /// [`Model::loss`] against an external parameter store.
    pub fn loss_in(
        &self,
        params: &ParamStore,
        tape: &mut Tape,
        record: &SentenceRecord,
    ) -> Result<(NodeId, NodeId)> {
        if record.label > 1 {
            return Err(Error::invalid(format!(
                "label {} out of range in record {}",
                record.label, record.id
            )));
        }
        let logits = self.logits_in(params, tape, record)?;
        let loss = tape.cross_entropy(logits, record.label as usize);
        Ok((loss, logits))
    }

    /// Takes the parameter store out of the model (leaving an empty one) so
    /// gradient checking can mutate it; restore with [`Model::put_params`].
    pub fn take_params(&mut self) -> ParamStore {
        std::mem::take(&mut self.params)
    }

    pub fn put_params(&mut self, params: ParamStore) {
        self.params = params;
    }

    pub fn logit_values(&self, record: &SentenceRecord) -> Result<[f64; 2]> {
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, record)?;
        let v = tape.value(logits);
        Ok([v.data[0], v.data[1]])
    }

    pub fn probabilities(&self, record: &SentenceRecord) -> Result<[f64; 2]> {
        let l = self.logit_values(record)?;
        let p = softmax(&l);
        Ok([p[0], p[1]])
    }

    /// Argmax prediction; an exact tie goes to the negative class.
    pub fn predict(&self, record: &SentenceRecord) -> Result<u8> {
        let l = self.logit_values(record)?;
        Ok(u8::from(l[1] > l[0]))
    }

    // ---- persistence ------------------------------------------------------

    /// Writes `params.ckpt`, `vocab.txt`, `store.txt` (when the GCN branch
    /// exists), and `config.json` into a directory.
    pub fn save_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&self.params, &dir.join("params.ckpt"))?;
        let vocab_body: String = self
            .vocab
            .tokens()
            .map(|t| format!("{t}\n"))
            .collect();
        std::fs::write(dir.join("vocab.txt"), vocab_body)
            .map_err(|e| Error::io(&dir.join("vocab.txt"), e))?;
        if let Some(store) = &self.edge_store {
            save_store(store, &self.params, &dir.join("store.txt"))?;
        }
        let meta = serde_json::to_string_pretty(&BundleMeta {
            config: self.config.clone(),
            d_enc: self.d_enc,
            seed: self.seed,
        })
        .map_err(|e| Error::invalid(format!("serializing bundle config: {e}")))?;
        std::fs::write(dir.join("config.json"), meta)
            .map_err(|e| Error::io(&dir.join("config.json"), e))?;
        Ok(())
    }

    /// Restores a bundle saved by [`Model::save_bundle`]. `features` must be
    /// supplied when the bundle uses the precomputed encoder path.
    pub fn load_bundle(dir: &Path, features: Option<FeatureStore>) -> Result<Model> {
        let meta_path = dir.join("config.json");
        let meta_body =
            std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: BundleMeta = serde_json::from_str(&meta_body)
            .map_err(|e| Error::invalid(format!("{}: {e}", meta_path.display())))?;
        let config = meta.config;

        if config.uses_encoder()
            && config.encoder_source == EncoderSource::Precomputed
            && features.is_none()
        {
            return Err(Error::invalid(
                "model bundle uses precomputed features; supply a feature file",
            ));
        }

        let params = checkpoint::load(&dir.join("params.ckpt"))?;

        let vocab_path = dir.join("vocab.txt");
        let vocab_body =
            std::fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
        let vocab = Vocab::from_tokens(vocab_body.lines().map(str::to_string));

        let mut edge_store = None;
        let mut embedding = None;
        let mut gcn_params = None;
        if config.uses_gcn() {
            let param = params
                .by_name(EDGE_WEIGHTS_PARAM)
                .ok_or_else(|| Error::invalid(format!("missing parameter {EDGE_WEIGHTS_PARAM}")))?;
            let pairs = read_store_pairs(&dir.join("store.txt"))?;
            if params.get(param).value.len() != pairs.len() + 1 {
                return Err(Error::invalid(format!(
                    "edge store has {} pairs but checkpoint holds {} weights",
                    pairs.len(),
                    params.get(param).value.len()
                )));
            }
            edge_store = Some(EdgeWeightStore::from_pairs(pairs, param));
            embedding = Some(
                params
                    .by_name("emb.table")
                    .ok_or_else(|| Error::invalid("missing parameter emb.table"))?,
            );
            gcn_params = Some(GcnParams::resolve(&params)?);
        }

        let mut enc_params = None;
        if config.uses_encoder() && config.encoder_source == EncoderSource::Toy {
            enc_params = Some(EncoderParams::resolve(&params, &config.enc)?);
        }

        let mut enc_head = None;
        let mut joint_head = None;
        let mut gcn_head = None;
        match config.kind {
            ModelKind::GcnOnly => {
                let find = |name: &str| {
                    params
                        .by_name(name)
                        .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
                };
                gcn_head = Some((find("head.gcn.w")?, find("head.gcn.b")?));
            }
            ModelKind::EncoderOnly => enc_head = Some(EncoderHead::resolve(&params)?),
            ModelKind::Joint => joint_head = Some(JointHead::resolve(&params)?),
        }

        Ok(Model {
            config,
            params,
            vocab,
            edge_store,
            features,
            d_enc: meta.d_enc,
            seed: meta.seed,
            embedding,
            gcn_params,
            enc_params,
            enc_head,
            joint_head,
            gcn_head,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    config: ModelConfig,
    d_enc: usize,
    #[serde(default)]
    seed: u64,
}
