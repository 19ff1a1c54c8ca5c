//! Shape-validated building blocks used by the encoder and the heads.

use super::params::{Init, ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// `y = Wx + b` for a vector activation.
pub fn linear(
    tape: &mut Tape,
    store: &ParamStore,
    w: ParamId,
    b: ParamId,
    x: NodeId,
) -> Result<NodeId> {
    let wv = &store.get(w).value;
    let bv = &store.get(b).value;
    let xv = tape.value(x);
    if wv.shape.len() != 2 || wv.cols() != xv.len() || bv.len() != wv.rows() {
        return Err(Error::shape(format!(
            "linear: W {:?}, b {:?}, x {:?}",
            wv.shape, bv.shape, xv.shape
        )));
    }
    let wn = tape.param(store, w);
    let bn = tape.param(store, b);
    let y = tape.matvec(wn, x);
    Ok(tape.add(y, bn))
}

/// Per-head projection parameters plus the shared output projection.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: Vec<ParamId>,
    pub bq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub bk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub bv: Vec<ParamId>,
    pub wo: ParamId,
    pub bo: ParamId,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::invalid(format!(
                "d_model {d_model} not divisible by heads {heads}"
            )));
        }
        let head_dim = d_model / heads;
        let mut wq = Vec::new();
        let mut bq = Vec::new();
        let mut wk = Vec::new();
        let mut bk = Vec::new();
        let mut wv = Vec::new();
        let mut bv = Vec::new();
        for h in 0..heads {
            wq.push(store.add(
                &format!("{prefix}.h{h}.wq"),
                vec![head_dim, d_model],
                Init::FanIn(d_model),
                rng,
            ));
            bq.push(store.add(&format!("{prefix}.h{h}.bq"), vec![head_dim], Init::Const(0.0), rng));
            wk.push(store.add(
                &format!("{prefix}.h{h}.wk"),
                vec![head_dim, d_model],
                Init::FanIn(d_model),
                rng,
            ));
            bk.push(store.add(&format!("{prefix}.h{h}.bk"), vec![head_dim], Init::Const(0.0), rng));
            wv.push(store.add(
                &format!("{prefix}.h{h}.wv"),
                vec![head_dim, d_model],
                Init::FanIn(d_model),
                rng,
            ));
            bv.push(store.add(&format!("{prefix}.h{h}.bv"), vec![head_dim], Init::Const(0.0), rng));
        }
        let wo = store.add(
            &format!("{prefix}.wo"),
            vec![d_model, d_model],
            Init::FanIn(d_model),
            rng,
        );
        let bo = store.add(&format!("{prefix}.bo"), vec![d_model], Init::Const(0.0), rng);
        Ok(AttentionParams {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            heads,
            head_dim,
        })
    }
}

/// Multi-head scaled dot-product self-attention over `x: [L, d_model]`.
pub fn self_attention(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    x: NodeId,
) -> Result<NodeId> {
    let d_model = params.heads * params.head_dim;
    let xv = tape.value(x);
    if xv.cols() != d_model {
        return Err(Error::shape(format!(
            "self_attention: input width {} != d_model {}",
            xv.cols(),
            d_model
        )));
    }
    let scale = 1.0 / (params.head_dim as f64).sqrt();
    let mut contexts = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let wq = tape.param(store, params.wq[h]);
        let bq = tape.param(store, params.bq[h]);
        let wk = tape.param(store, params.wk[h]);
        let bk = tape.param(store, params.bk[h]);
        let wv = tape.param(store, params.wv[h]);
        let bv = tape.param(store, params.bv[h]);
        let q0 = tape.matmul_nt(x, wq);
        let q = tape.add_row_broadcast(q0, bq);
        let k0 = tape.matmul_nt(x, wk);
        let k = tape.add_row_broadcast(k0, bk);
        let v0 = tape.matmul_nt(x, wv);
        let v = tape.add_row_broadcast(v0, bv);
        let scores = tape.matmul_nt(q, k);
        let scaled = tape.scale_const(scores, scale);
        let attn = tape.softmax_rows(scaled);
        contexts.push(tape.matmul(attn, v));
    }
    let ctx = if contexts.len() == 1 {
        contexts[0]
    } else {
        tape.concat_cols(&contexts)
    };
    let wo = tape.param(store, params.wo);
    let bo = tape.param(store, params.bo);
    let out = tape.matmul_nt(ctx, wo);
    Ok(tape.add_row_broadcast(out, bo))
}

/// Attention weights of head 0 for inspection (row-stochastic by
/// construction; tested, not trusted).
pub fn attention_rows(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    x: NodeId,
) -> NodeId {
    let scale = 1.0 / (params.head_dim as f64).sqrt();
    let wq = tape.param(store, params.wq[0]);
    let bq = tape.param(store, params.bq[0]);
    let wk = tape.param(store, params.wk[0]);
    let bk = tape.param(store, params.bk[0]);
    let q0 = tape.matmul_nt(x, wq);
    let q = tape.add_row_broadcast(q0, bq);
    let k0 = tape.matmul_nt(x, wk);
    let k = tape.add_row_broadcast(k0, bk);
    let scores = tape.matmul_nt(q, k);
    let scaled = tape.scale_const(scores, scale);
    tape.softmax_rows(scaled)
}
