//! Text-level GCN forward pass: weighted neighbor messages over the sentence
//! graph, a gated self/neighbor update, and a fixed-width readout.
//!
//! One round sends each node's representation, scaled by the learned edge
//! weight, to its neighbors; the receiving node averages the incoming
//! messages M and updates itself to `r' = g*r + (1-g)*M` with a per-word
//! gate `g = sigmoid(gate_raw)`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, EdgeWeightStore, TextGraph};
use crate::nn::{Init, NodeId, ParamId, ParamStore, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::invalid(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    /// Message-passing rounds.
    pub rounds: usize,
    /// Output feature width.
    pub d_gcn: usize,
    pub aggregation: Aggregation,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            rounds: 1,
            d_gcn: 64,
            aggregation: Aggregation::Mean,
        }
    }
}

/// Parameter handles for the GCN branch.
#[derive(Debug, Clone)]
pub struct GcnParams {
    /// Per-word pre-sigmoid gate, `[vocab]`. Initialized to 0 so every gate
    /// starts at 0.5.
    pub gate_raw: ParamId,
    pub readout_w: ParamId,
    pub readout_b: ParamId,
}

impl GcnParams {
    pub fn init(
        store: &mut ParamStore,
        vocab_size: usize,
        d_w: usize,
        d_gcn: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let gate_raw = store.add("gcn.gate_raw", vec![vocab_size], Init::Const(0.0), rng);
        let readout_w = store.add("gcn.readout_w", vec![d_gcn, d_w], Init::FanIn(d_w), rng);
        let readout_b = store.add("gcn.readout_b", vec![d_gcn], Init::Const(0.0), rng);
        GcnParams {
            gate_raw,
            readout_w,
            readout_b,
        }
    }

    pub fn resolve(store: &ParamStore) -> Result<Self> {
        let find = |name: &str| {
            store
                .by_name(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
        };
        Ok(GcnParams {
            gate_raw: find("gcn.gate_raw")?,
            readout_w: find("gcn.readout_w")?,
            readout_b: find("gcn.readout_b")?,
        })
    }
}

/// One message-passing round over the graph. `reps` holds one node per token
/// position; the result has the same arity. Nodes without neighbors receive
/// a zero message.
pub fn message_pass(
    tape: &mut Tape,
    store: &ParamStore,
    graph: &TextGraph,
    reps: &[NodeId],
    weights: &EdgeWeightStore,
    params: &GcnParams,
    aggregation: Aggregation,
) -> Vec<NodeId> {
    debug_assert_eq!(reps.len(), graph.node_count());
    let d = tape.value(reps[0]).len();
    let mut out = Vec::with_capacity(reps.len());
    for i in 0..graph.node_count() {
        let message = if graph.in_edges[i].is_empty() {
            tape.input(Tensor::vector(vec![0.0; d]))
        } else {
            let incoming: Vec<NodeId> = graph.in_edges[i]
                .iter()
                .map(|e| {
                    let w = tape.gather_scalar(store, weights.param, e.weight_index);
                    tape.scale_by(reps[e.src], w)
                })
                .collect();
            match aggregation {
                Aggregation::Mean => tape.mean_vecs(&incoming),
                Aggregation::Max => tape.max_vecs(&incoming),
            }
        };
        let raw = tape.gather_scalar(store, params.gate_raw, graph.node_word_ids[i]);
        let gate = tape.sigmoid(raw);
        let own = tape.scale_by(reps[i], gate);
        let inv_gate = tape.affine(gate, -1.0, 1.0);
        let neigh = tape.scale_by(message, inv_gate);
        out.push(tape.add(own, neigh));
    }
    out
}

/// Per-node representations after `rounds` of message passing, starting from
/// the embedding rows. Exposed separately so locality can be probed.
#[allow(clippy::too_many_arguments)]
pub fn node_representations(
    tape: &mut Tape,
    store: &ParamStore,
    word_ids: &[usize],
    window: usize,
    weights: &EdgeWeightStore,
    embeddings: ParamId,
    params: &GcnParams,
    config: &GcnConfig,
) -> Result<Vec<NodeId>> {
    let graph = build_graph(word_ids, window, weights)?;
    let table = tape.gather_rows(store, embeddings, word_ids);
    let mut reps: Vec<NodeId> = (0..word_ids.len()).map(|i| tape.row(table, i)).collect();
    for _ in 0..config.rounds {
        reps = message_pass(tape, store, &graph, &reps, weights, params, config.aggregation);
    }
    Ok(reps)
}

/// Full GCN branch: graph, `rounds` message passes, mean-pool, then a ReLU
/// readout to width `d_gcn`.
#[allow(clippy::too_many_arguments)]
pub fn gcn_encode(
    tape: &mut Tape,
    store: &ParamStore,
    word_ids: &[usize],
    window: usize,
    weights: &EdgeWeightStore,
    embeddings: ParamId,
    params: &GcnParams,
    config: &GcnConfig,
) -> Result<NodeId> {
    let reps = node_representations(
        tape, store, word_ids, window, weights, embeddings, params, config,
    )?;
    let pooled = tape.mean_vecs(&reps);
    let w = tape.param(store, params.readout_w);
    let b = tape.param(store, params.readout_b);
    let projected = tape.matvec(w, pooled);
    let biased = tape.add(projected, b);
    Ok(tape.relu(biased))
}
