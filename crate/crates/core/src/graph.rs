//! Per-sentence word graphs: positional nodes, window-`n` edges, and a
//! shared store of trainable edge weights keyed by ordered word-id pairs.
//!
//! Nodes are token positions, so a repeated word gets separate nodes, while
//! edge weights are shared globally by word-id pair; a pair never seen at
//! store-build time falls back to a single trainable public weight.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::SentenceRecord;
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Tensor};
use crate::text::{ids_of, tokenize, Vocab};

/// A directed in-edge `src -> dst` with its weight slot in the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InEdge {
    pub src: usize,
    pub weight_index: usize,
}

#[derive(Debug, Clone)]
pub struct TextGraph {
    pub node_word_ids: Vec<usize>,
    pub window: usize,
    /// `neighbors[i]` = node indices `j` with `0 < |i-j| <= window`, ascending.
    pub neighbors: Vec<Vec<usize>>,
    /// `in_edges[i]` = one entry per neighbor, same order as `neighbors[i]`.
    pub in_edges: Vec<Vec<InEdge>>,
}

impl TextGraph {
    pub fn node_count(&self) -> usize {
        self.node_word_ids.len()
    }

    pub fn directed_edge_count(&self) -> usize {
        self.in_edges.iter().map(Vec::len).sum()
    }
}

/// Shared edge-weight parameters: one scalar per distinct ordered word-id
/// pair observed in training data, plus the public fallback weight stored in
/// the final slot.
#[derive(Debug, Clone)]
pub struct EdgeWeightStore {
    pair_index: HashMap<(usize, usize), usize>,
    /// Insertion-ordered pairs, parallel to the weight slots.
    pairs: Vec<(usize, usize)>,
    pub param: ParamId,
}

pub const EDGE_WEIGHTS_PARAM: &str = "graph.edge_weights";

impl EdgeWeightStore {
    /// Rebinds a pair list to an already-loaded weight parameter (e.g. from
    /// a checkpoint). The parameter must hold one slot per pair plus the
    /// public weight.
    pub fn from_pairs(pairs: Vec<(usize, usize)>, param: ParamId) -> Self {
        let pair_index = pairs
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i))
            .collect();
        EdgeWeightStore {
            pair_index,
            pairs,
            param,
        }
    }

    /// Index of the public fallback weight.
    pub fn public_index(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Weight slot for an ordered pair; total by falling back to the public
    /// weight.
    pub fn weight_index(&self, src_word: usize, dst_word: usize) -> usize {
        self.pair_index
            .get(&(src_word, dst_word))
            .copied()
            .unwrap_or_else(|| self.public_index())
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Enumerates every ordered word-id pair co-occurring within the window
/// anywhere in the training data and allocates one weight per pair, all
/// initialized to 1.0 so the first message pass is an unweighted average.
pub fn build_store(
    records: &[SentenceRecord],
    vocab: &Vocab,
    window: usize,
    params: &mut ParamStore,
) -> EdgeWeightStore {
    let mut pair_index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for r in records {
        let ids = ids_of(&tokenize(&r.text), vocab);
        for i in 0..ids.len() {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(ids.len().saturating_sub(1));
            for j in lo..=hi {
                if j == i {
                    continue;
                }
                let key = (ids[j], ids[i]);
                pair_index.entry(key).or_insert_with(|| {
                    pairs.push(key);
                    pairs.len() - 1
                });
            }
        }
    }
    let n = pairs.len() + 1; // + public weight
    let param = params.add_tensor(EDGE_WEIGHTS_PARAM, Tensor::vector(vec![1.0; n]));
    EdgeWeightStore {
        pair_index,
        pairs,
        param,
    }
}

/// Builds the positional graph for one sentence and resolves every in-edge
/// against the store.
pub fn build_graph(
    word_ids: &[usize],
    window: usize,
    store: &EdgeWeightStore,
) -> Result<TextGraph> {
    if word_ids.is_empty() {
        return Err(Error::invalid("empty graph"));
    }
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let n = word_ids.len();
    let mut neighbors = Vec::with_capacity(n);
    let mut in_edges = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(n - 1);
        let ns: Vec<usize> = (lo..=hi).filter(|&j| j != i).collect();
        let es = ns
            .iter()
            .map(|&j| InEdge {
                src: j,
                weight_index: store.weight_index(word_ids[j], word_ids[i]),
            })
            .collect();
        neighbors.push(ns);
        in_edges.push(es);
    }
    Ok(TextGraph {
        node_word_ids: word_ids.to_vec(),
        window,
        neighbors,
        in_edges,
    })
}

/// Dumps the store as `src_word_id dst_word_id weight` lines plus a final
/// `public <weight>` line.
pub fn save_store(store: &EdgeWeightStore, params: &ParamStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let weights = &params.get(store.param).value.data;
    for (k, &(src, dst)) in store.pairs.iter().enumerate() {
        writeln!(w, "{} {} {}", src, dst, weights[k]).map_err(|e| Error::io(path, e))?;
    }
    writeln!(w, "public {}", weights[store.public_index()]).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads just the pair list from a dump, in slot order (for re-attaching to
/// checkpointed weights).
pub fn read_store_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || line.starts_with("public ") {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if let [src, dst, _w] = fields.as_slice() {
            let src = src
                .parse::<usize>()
                .map_err(|_| Error::parse(path, lineno, "bad source word id"))?;
            let dst = dst
                .parse::<usize>()
                .map_err(|_| Error::parse(path, lineno, "bad destination word id"))?;
            pairs.push((src, dst));
        } else {
            return Err(Error::parse(path, lineno, "expected `src dst weight`"));
        }
    }
    Ok(pairs)
}

/// Rebuilds a store (and its weight parameter) from a dump.
pub fn load_store(path: &Path, params: &mut ParamStore) -> Result<EdgeWeightStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut pair_index = HashMap::new();
    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    let mut public = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        match fields.as_slice() {
            ["public", w] => {
                let w = w
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, "bad public weight"))?;
                public = Some(w);
            }
            [src, dst, w] => {
                let src = src
                    .parse::<usize>()
                    .map_err(|_| Error::parse(path, lineno, "bad source word id"))?;
                let dst = dst
                    .parse::<usize>()
                    .map_err(|_| Error::parse(path, lineno, "bad destination word id"))?;
                let w = w
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, "bad weight"))?;
                if pair_index.insert((src, dst), pairs.len()).is_some() {
                    return Err(Error::parse(path, lineno, format!("duplicate pair {src} {dst}")));
                }
                pairs.push((src, dst));
                weights.push(w);
            }
            _ => return Err(Error::parse(path, lineno, "expected `src dst weight` or `public weight`")),
        }
    }
    let public = public.ok_or_else(|| Error::invalid(format!("{}: missing public line", path.display())))?;
    weights.push(public);
    let param = params.add_tensor(EDGE_WEIGHTS_PARAM, Tensor::vector(weights));
    Ok(EdgeWeightStore {
        pair_index,
        pairs,
        param,
    })
}
