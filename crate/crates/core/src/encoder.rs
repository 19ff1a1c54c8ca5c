//! The sentence-encoder role: a small transformer producing a CLS vector, an
//! ingestion path for externally exported CLS features, and the classifier
//! heads.
//!
//! The transformer here is a desk-scale stand-in for a pretrained encoder.
//! Real experiments export per-sentence CLS vectors from whatever external
//! model they like and feed them in through [`FeatureStore`]; training then
//! touches only the heads (and the GCN branch, for the joint model).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    self_attention, AttentionParams, Init, NodeId, ParamId, ParamStore, Tape,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Maximum sequence length including the CLS slot.
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            layers: 2,
            heads: 2,
            ffn_dim: 128,
            max_len: 128,
        }
    }
}

#[derive(Debug, Clone)]
struct BlockParams {
    attn: AttentionParams,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// All trainable tensors of the toy encoder.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub embed: ParamId,
    pub cls: ParamId,
    pub pos: ParamId,
    blocks: Vec<BlockParams>,
}

impl EncoderParams {
    pub fn init(
        store: &mut ParamStore,
        vocab_size: usize,
        config: &EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if config.d_model == 0 || config.heads == 0 || !config.d_model.is_multiple_of(config.heads) {
            return Err(Error::invalid(format!(
                "d_model {} must be divisible by heads {}",
                config.d_model, config.heads
            )));
        }
        let d = config.d_model;
        let embed = store.add("enc.embed", vec![vocab_size, d], Init::Normal(0.1), rng);
        let cls = store.add("enc.cls", vec![d], Init::Normal(0.1), rng);
        let pos = store.add("enc.pos", vec![config.max_len, d], Init::Normal(0.1), rng);
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("enc.l{l}");
            let attn = AttentionParams::init(store, &format!("{p}.attn"), d, config.heads, rng)?;
            blocks.push(BlockParams {
                attn,
                ln1_g: store.add(&format!("{p}.ln1.g"), vec![d], Init::Const(1.0), rng),
                ln1_b: store.add(&format!("{p}.ln1.b"), vec![d], Init::Const(0.0), rng),
                ffn_w1: store.add(
                    &format!("{p}.ffn.w1"),
                    vec![config.ffn_dim, d],
                    Init::FanIn(d),
                    rng,
                ),
                ffn_b1: store.add(&format!("{p}.ffn.b1"), vec![config.ffn_dim], Init::Const(0.0), rng),
                ffn_w2: store.add(
                    &format!("{p}.ffn.w2"),
                    vec![d, config.ffn_dim],
                    Init::FanIn(config.ffn_dim),
                    rng,
                ),
                ffn_b2: store.add(&format!("{p}.ffn.b2"), vec![d], Init::Const(0.0), rng),
                ln2_g: store.add(&format!("{p}.ln2.g"), vec![d], Init::Const(1.0), rng),
                ln2_b: store.add(&format!("{p}.ln2.b"), vec![d], Init::Const(0.0), rng),
            });
        }
        Ok(EncoderParams {
            embed,
            cls,
            pos,
            blocks,
        })
    }

    /// Re-binds parameter ids by name after loading a checkpoint.
    pub fn resolve(store: &ParamStore, config: &EncoderConfig) -> Result<Self> {
        let find = |name: String| {
            store
                .by_name(&name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
        };
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("enc.l{l}");
            let head_dim = config.d_model / config.heads;
            let mut wq = Vec::new();
            let mut bq = Vec::new();
            let mut wk = Vec::new();
            let mut bk = Vec::new();
            let mut wv = Vec::new();
            let mut bv = Vec::new();
            for h in 0..config.heads {
                wq.push(find(format!("{p}.attn.h{h}.wq"))?);
                bq.push(find(format!("{p}.attn.h{h}.bq"))?);
                wk.push(find(format!("{p}.attn.h{h}.wk"))?);
                bk.push(find(format!("{p}.attn.h{h}.bk"))?);
                wv.push(find(format!("{p}.attn.h{h}.wv"))?);
                bv.push(find(format!("{p}.attn.h{h}.bv"))?);
            }
            blocks.push(BlockParams {
                attn: AttentionParams {
                    wq,
                    bq,
                    wk,
                    bk,
                    wv,
                    bv,
                    wo: find(format!("{p}.attn.wo"))?,
                    bo: find(format!("{p}.attn.bo"))?,
                    heads: config.heads,
                    head_dim,
                },
                ln1_g: find(format!("{p}.ln1.g"))?,
                ln1_b: find(format!("{p}.ln1.b"))?,
                ffn_w1: find(format!("{p}.ffn.w1"))?,
                ffn_b1: find(format!("{p}.ffn.b1"))?,
                ffn_w2: find(format!("{p}.ffn.w2"))?,
                ffn_b2: find(format!("{p}.ffn.b2"))?,
                ln2_g: find(format!("{p}.ln2.g"))?,
                ln2_b: find(format!("{p}.ln2.b"))?,
            });
        }
        Ok(EncoderParams {
            embed: find("enc.embed".into())?,
            cls: find("enc.cls".into())?,
            pos: find("enc.pos".into())?,
            blocks,
        })
    }
}

/// Runs the toy encoder over a word-id sequence and returns the CLS row.
///
/// A CLS embedding is prepended, learned positional embeddings are added,
/// then each block applies post-norm self-attention and a feed-forward
/// sublayer, both with residuals.
pub fn transformer_encode(
    tape: &mut Tape,
    store: &ParamStore,
    word_ids: &[usize],
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<NodeId> {
    let len = word_ids.len() + 1;
    if len > config.max_len {
        return Err(Error::invalid(format!(
            "sequence of {} tokens exceeds max_len {} (including CLS)",
            word_ids.len(),
            config.max_len
        )));
    }
    let cls = tape.param(store, params.cls);
    let mut rows = vec![cls];
    if !word_ids.is_empty() {
        let gathered = tape.gather_rows(store, params.embed, word_ids);
        rows.extend((0..word_ids.len()).map(|i| tape.row(gathered, i)));
    }
    let tokens = tape.stack_rows(&rows);
    let positions: Vec<usize> = (0..len).collect();
    let pos = tape.gather_rows(store, params.pos, &positions);
    let mut x = tape.add(tokens, pos);

    for block in &params.blocks {
        let attended = self_attention(tape, store, &block.attn, x)?;
        let res1 = tape.add(x, attended);
        let g1 = tape.param(store, block.ln1_g);
        let b1 = tape.param(store, block.ln1_b);
        x = tape.layer_norm(res1, g1, b1);

        let w1 = tape.param(store, block.ffn_w1);
        let b1f = tape.param(store, block.ffn_b1);
        let h0 = tape.matmul_nt(x, w1);
        let h1 = tape.add_row_broadcast(h0, b1f);
        let h2 = tape.gelu(h1);
        let w2 = tape.param(store, block.ffn_w2);
        let b2f = tape.param(store, block.ffn_b2);
        let h3 = tape.matmul_nt(h2, w2);
        let h4 = tape.add_row_broadcast(h3, b2f);
        let res2 = tape.add(x, h4);
        let g2 = tape.param(store, block.ln2_g);
        let b2 = tape.param(store, block.ln2_b);
        x = tape.layer_norm(res2, g2, b2);
    }
    Ok(tape.row(x, 0))
}

// ---------------------------------------------------------------------------
// Precomputed CLS features
// ---------------------------------------------------------------------------

/// Immutable map from sentence id to an externally produced feature vector.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    pub dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl FeatureStore {
    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.map
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("no feature for id {id}")))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Reads a feature file: a `dim=<d>` header, then one
/// `sentence_id<TAB>v1 v2 ... vd` line per sentence.
pub fn load_feature_store(path: &Path) -> Result<FeatureStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing dim header"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let dim: usize = header
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, format!("expected `dim=<d>`, found {header:?}")))?;

    let mut map = HashMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "missing tab separator"))?;
        let vector: Vec<f64> = values
            .split(' ')
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("unparsable value {v:?}")))
            })
            .collect::<Result<_>>()?;
        if vector.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} values, found {}", vector.len()),
            ));
        }
        if map.insert(id.to_string(), vector).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate id {id:?}")));
        }
    }
    Ok(FeatureStore { dim, map })
}

// ---------------------------------------------------------------------------
// Classifier heads
// ---------------------------------------------------------------------------

/// Two feed-forward layers over the CLS vector: `linear -> tanh -> linear`.
#[derive(Debug, Clone)]
pub struct EncoderHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl EncoderHead {
    pub fn init(store: &mut ParamStore, d_enc: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderHead {
            w1: store.add("head.enc.w1", vec![d_enc, d_enc], Init::FanIn(d_enc), rng),
            b1: store.add("head.enc.b1", vec![d_enc], Init::Const(0.0), rng),
            w2: store.add("head.enc.w2", vec![2, d_enc], Init::FanIn(d_enc), rng),
            b2: store.add("head.enc.b2", vec![2], Init::Const(0.0), rng),
        }
    }

    pub fn resolve(store: &ParamStore) -> Result<Self> {
        let find = |name: &str| {
            store
                .by_name(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
        };
        Ok(EncoderHead {
            w1: find("head.enc.w1")?,
            b1: find("head.enc.b1")?,
            w2: find("head.enc.w2")?,
            b2: find("head.enc.b2")?,
        })
    }
}

pub fn classify_encoder_only(
    tape: &mut Tape,
    store: &ParamStore,
    head: &EncoderHead,
    cls: NodeId,
) -> Result<NodeId> {
    let d_enc = store.get(head.w1).value.cols();
    if tape.value(cls).len() != d_enc {
        return Err(Error::shape(format!(
            "encoder head expects width {d_enc}, got {}",
            tape.value(cls).len()
        )));
    }
    let h = crate::nn::linear(tape, store, head.w1, head.b1, cls)?;
    let a = tape.tanh(h);
    crate::nn::linear(tape, store, head.w2, head.b2, a)
}

/// Single linear layer over the concatenated encoder and GCN features.
#[derive(Debug, Clone)]
pub struct JointHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl JointHead {
    pub fn init(store: &mut ParamStore, d_enc: usize, d_gcn: usize, rng: &mut ChaCha8Rng) -> Self {
        JointHead {
            w: store.add(
                "head.joint.w",
                vec![2, d_enc + d_gcn],
                Init::FanIn(d_enc + d_gcn),
                rng,
            ),
            b: store.add("head.joint.b", vec![2], Init::Const(0.0), rng),
        }
    }

    pub fn resolve(store: &ParamStore) -> Result<Self> {
        let find = |name: &str| {
            store
                .by_name(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
        };
        Ok(JointHead {
            w: find("head.joint.w")?,
            b: find("head.joint.b")?,
        })
    }
}

pub fn classify_joint(
    tape: &mut Tape,
    store: &ParamStore,
    head: &JointHead,
    cls: NodeId,
    gcn: NodeId,
) -> Result<NodeId> {
    let expect = store.get(head.w).value.cols();
    let got = tape.value(cls).len() + tape.value(gcn).len();
    if got != expect {
        return Err(Error::shape(format!(
            "joint head expects concatenated width {expect}, got {got}"
        )));
    }
    let both = tape.concat(&[cls, gcn]);
    crate::nn::linear(tape, store, head.w, head.b, both)
}
