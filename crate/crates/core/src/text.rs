//! Tokenization, vocabulary, and pretrained word-vector loading.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore, Tensor};

pub const UNK_TOKEN: &str = "<unk>";

/// Token <-> id bijection with a dedicated unknown-word id.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    pub unk_id: usize,
}

impl Vocab {
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut token_to_id = HashMap::new();
        let mut id_to_token = Vec::new();
        for t in tokens {
            if !token_to_id.contains_key(&t) {
                token_to_id.insert(t.clone(), id_to_token.len());
                id_to_token.push(t);
            }
        }
        let unk_id = match token_to_id.get(UNK_TOKEN) {
            Some(&id) => id,
            None => {
                token_to_id.insert(UNK_TOKEN.to_string(), id_to_token.len());
                id_to_token.push(UNK_TOKEN.to_string());
                id_to_token.len() - 1
            }
        };
        Vocab {
            token_to_id,
            id_to_token,
            unk_id,
        }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_token.iter().map(String::as_str)
    }
}

/// Per-word vectors, one row per vocabulary entry.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// Row-major `[vocab x dim]`.
    pub vectors: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Moves the table into a parameter store (as `emb.table`) so training
    /// can update it. Returns the parameter id.
    pub fn register(self, store: &mut ParamStore) -> crate::nn::ParamId {
        let id = store.add_tensor("emb.table", self.vectors);
        store.set_trainable(id, self.trainable);
        id
    }
}

/// Lowercase whitespace tokenization. The corpus text is pre-tokenized
/// (punctuation is space-separated), so nothing smarter is needed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Known tokens map to their ids; everything else maps to `unk_id`.
pub fn ids_of(tokens: &[String], vocab: &Vocab) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| vocab.id(t).unwrap_or(vocab.unk_id))
        .collect()
}

/// Reads word vectors in the standard text layout, `token v1 v2 ... vd` per
/// line, and appends an unknown-word row initialized to the mean of all
/// loaded vectors.
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<(Vocab, EmbeddingTable)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut tokens: Vec<String> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut data: Vec<f64> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "empty line"))?;
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("unparsable value {f:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != expected_dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {expected_dim} values, found {}", values.len()),
            ));
        }
        if seen.insert(token.to_string(), lineno).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate token {token:?}")));
        }
        tokens.push(token.to_string());
        data.extend(values);
    }

    let word_rows = tokens.len();
    let has_unk = seen.contains_key(UNK_TOKEN);
    if !has_unk {
        // Mean vector keeps the unknown word in-distribution.
        let mut mean = vec![0.0; expected_dim];
        if word_rows > 0 {
            for r in 0..word_rows {
                for (m, v) in mean.iter_mut().zip(&data[r * expected_dim..(r + 1) * expected_dim]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= word_rows as f64);
        }
        tokens.push(UNK_TOKEN.to_string());
        data.extend(mean);
    }

    let vocab = Vocab::from_tokens(tokens.clone());
    let table = EmbeddingTable {
        dim: expected_dim,
        vectors: Tensor::matrix(tokens.len(), expected_dim, data),
        trainable: true,
    };
    Ok((vocab, table))
}

/// Builds a vocabulary from corpus tokens and a randomly initialized table,
/// for runs without a pretrained vector file.
pub fn random_embeddings(
    texts: impl IntoIterator<Item = String>,
    dim: usize,
    seed: u64,
) -> (Vocab, EmbeddingTable) {
    let mut tokens = Vec::new();
    for text in texts {
        tokens.extend(tokenize(&text));
    }
    let vocab = Vocab::from_tokens(tokens);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let id = store.add("tmp", vec![vocab.len(), dim], Init::Normal(0.1), &mut rng);
    let vectors = store.get(id).value.clone();
    (
        vocab.clone(),
        EmbeddingTable {
            dim,
            vectors,
            trainable: true,
        },
    )
}
