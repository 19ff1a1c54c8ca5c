//! Training loop, evaluation metrics, k-fold cross-validation, and the
//! descending-loss error report.

pub mod model;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_folds, Fold, SentenceRecord};
use crate::encoder::FeatureStore;
use crate::error::{Error, Result};
use crate::nn::{AdamWConfig, OptState, Tape};
use crate::text::{EmbeddingTable, Vocab};

pub use model::{EncoderSource, Model, ModelConfig, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            lr: 2e-5,
            batch_size: 16,
            weight_decay: 0.01,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainStats {
    /// Mean per-example loss, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Seeded-shuffle epochs with per-example backward passes; gradients
/// accumulate across a logical batch (graphs vary per sentence, so there is
/// no tensor batching) and one optimizer step consumes them.
pub fn train(model: &mut Model, config: &TrainConfig, records: &[SentenceRecord]) -> Result<TrainStats> {
    if records.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::invalid("epochs and batch_size must be at least 1"));
    }
    let positives = records.iter().filter(|r| r.label == 1).count();
    if positives == 0 || positives == records.len() {
        return Err(Error::invalid(
            "training set must contain both labels",
        ));
    }

    let mut opt = OptState::new(
        &model.params,
        AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    model.params.zero_grads();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut pending = 0usize;
        for &i in &order {
            let record = &records[i];
            let mut tape = Tape::new();
            let (loss_node, _) = model.loss(&mut tape, record)?;
            let loss = tape.scalar_value(loss_node);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    context: format!("epoch {epoch}, example {}", record.id),
                });
            }
            tape.backward(loss_node, &mut model.params);
            loss_sum += loss;
            pending += 1;
            if pending == config.batch_size {
                opt.step(&mut model.params)?;
                model.params.zero_grads();
                pending = 0;
            }
        }
        if pending > 0 {
            opt.step(&mut model.params)?;
            model.params.zero_grads();
        }
        epoch_losses.push(loss_sum / records.len() as f64);
    }
    Ok(TrainStats { epoch_losses })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Confusion counts and the derived scores, with "contains a definition" as
/// the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1_positive: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Metrics {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1_positive = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let total = tp + fp + fn_ + tn;
        let accuracy = if total == 0 {
            0.0
        } else {
            (tp + tn) as f64 / total as f64
        };
        Metrics {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1_positive,
            accuracy,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Confusion counts for paired predictions and gold labels.
pub fn confusion(predictions: &[u8], golds: &[u8]) -> Metrics {
    assert_eq!(predictions.len(), golds.len());
    let mut counts = (0usize, 0usize, 0usize, 0usize);
    for (&pred, &gold) in predictions.iter().zip(golds) {
        match (pred, gold) {
            (1, 1) => counts.0 += 1,
            (1, 0) => counts.1 += 1,
            (0, 1) => counts.2 += 1,
            _ => counts.3 += 1,
        }
    }
    Metrics::from_counts(counts.0, counts.1, counts.2, counts.3)
}

/// Argmax predictions against gold labels. Ties predict the negative class.
pub fn evaluate(model: &Model, records: &[SentenceRecord]) -> Result<Metrics> {
    let mut predictions = Vec::with_capacity(records.len());
    let mut golds = Vec::with_capacity(records.len());
    for r in records {
        predictions.push(model.predict(r)?);
        golds.push(r.label);
    }
    Ok(confusion(&predictions, &golds))
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Shared read-only inputs for building fold models.
#[derive(Default)]
pub struct Resources {
    pub pretrained: Option<(Vocab, EmbeddingTable)>,
    pub features: Option<FeatureStore>,
}

impl Resources {
    fn clone_parts(&self) -> (Option<(Vocab, EmbeddingTable)>, Option<FeatureStore>) {
        (self.pretrained.clone(), self.features.clone())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1_positive: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvOutcome {
    pub per_fold: Vec<Metrics>,
    pub mean: MetricsSummary,
    /// Population standard deviation over folds.
    pub std: MetricsSummary,
    /// Present when a test set was supplied: the probability-mean ensemble
    /// prediction per test record, in input order.
    #[serde(skip)]
    pub test_predictions: Option<Vec<u8>>,
}

fn summarize(per_fold: &[Metrics]) -> (MetricsSummary, MetricsSummary) {
    let k = per_fold.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| per_fold.iter().map(f).sum::<f64>() / k;
    let std = |f: fn(&Metrics) -> f64, m: f64| {
        (per_fold.iter().map(|x| (f(x) - m).powi(2)).sum::<f64>() / k).sqrt()
    };
    let mp = mean(|m| m.precision);
    let mr = mean(|m| m.recall);
    let mf = mean(|m| m.f1_positive);
    let ma = mean(|m| m.accuracy);
    (
        MetricsSummary {
            precision: mp,
            recall: mr,
            f1_positive: mf,
            accuracy: ma,
        },
        MetricsSummary {
            precision: std(|m| m.precision, mp),
            recall: std(|m| m.recall, mr),
            f1_positive: std(|m| m.f1_positive, mf),
            accuracy: std(|m| m.accuracy, ma),
        },
    )
}

fn fold_records<'a>(
    records: &'a [SentenceRecord],
    fold: &Fold,
) -> (Vec<SentenceRecord>, Vec<SentenceRecord>) {
    let by_id: HashMap<&str, &'a SentenceRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let train = fold.train_ids.iter().map(|id| by_id[id.as_str()].clone()).collect();
    let val = fold.val_ids.iter().map(|id| by_id[id.as_str()].clone()).collect();
    (train, val)
}

fn run_fold(
    config: &TrainConfig,
    records: &[SentenceRecord],
    fold: &Fold,
    fold_index: usize,
    resources: &Resources,
    test: Option<&[SentenceRecord]>,
) -> Result<(Metrics, Option<Vec<[f64; 2]>>)> {
    let (train_records, val_records) = fold_records(records, fold);
    let (pretrained, features) = resources.clone_parts();
    let mut model = Model::build(
        config.model.clone(),
        &train_records,
        pretrained,
        features,
        config.seed.wrapping_add(fold_index as u64),
    )
    .map_err(|e| Error::invalid(format!("fold {fold_index}: {e}")))?;
    train(&mut model, config, &train_records)
        .map_err(|e| Error::invalid(format!("fold {fold_index}: {e}")))?;
    let metrics = evaluate(&model, &val_records)
        .map_err(|e| Error::invalid(format!("fold {fold_index}: {e}")))?;
    let probs = match test {
        Some(test) => Some(
            test.iter()
                .map(|r| model.probabilities(r))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::invalid(format!("fold {fold_index}: {e}")))?,
        ),
        None => None,
    };
    Ok((metrics, probs))
}

/// Trains one model per fold and evaluates it on the held-out split. With a
/// test set, the final prediction per test record is the argmax of the mean
/// of the k softmax probability vectors.
///
/// `jobs <= 1` runs folds serially; higher values train folds in parallel.
/// Either way the result is a pure function of (records, config, k).
pub fn cross_validate(
    config: &TrainConfig,
    records: &[SentenceRecord],
    k: usize,
    resources: &Resources,
    test: Option<&[SentenceRecord]>,
    jobs: usize,
) -> Result<CvOutcome> {
    let folds = make_folds(records, k, config.seed)?;
    let results: Vec<(Metrics, Option<Vec<[f64; 2]>>)> = if jobs <= 1 {
        folds
            .iter()
            .enumerate()
            .map(|(i, fold)| run_fold(config, records, fold, i, resources, test))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            folds
                .par_iter()
                .enumerate()
                .map(|(i, fold)| run_fold(config, records, fold, i, resources, test))
                .collect::<Result<Vec<_>>>()
        })?
    };

    let per_fold: Vec<Metrics> = results.iter().map(|(m, _)| *m).collect();
    let (mean, std) = summarize(&per_fold);

    let test_predictions = test.map(|test_records| {
        let mut mean_probs = vec![[0.0f64; 2]; test_records.len()];
        for (_, probs) in &results {
            let probs = probs.as_ref().expect("test probabilities present");
            for (acc, p) in mean_probs.iter_mut().zip(probs) {
                acc[0] += p[0];
                acc[1] += p[1];
            }
        }
        mean_probs
            .iter()
            .map(|p| u8::from(p[1] > p[0]))
            .collect()
    });

    Ok(CvOutcome {
        per_fold,
        mean,
        std,
        test_predictions,
    })
}

// ---------------------------------------------------------------------------
// Error analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReportRow {
    /// 1-based, contiguous.
    pub rank: usize,
    pub loss: f64,
    pub predicted: u8,
    pub gold: u8,
    pub text: String,
}

/// Per-example cross-entropy, sorted by descending loss and truncated to
/// `top_n` rows. Equal losses keep input order.
pub fn error_analysis(
    model: &Model,
    records: &[SentenceRecord],
    top_n: usize,
) -> Result<Vec<ErrorReportRow>> {
    if top_n == 0 {
        return Err(Error::invalid("top_n must be at least 1"));
    }
    let mut rows: Vec<(f64, u8, &SentenceRecord)> = Vec::with_capacity(records.len());
    for r in records {
        let mut tape = Tape::new();
        let (loss_node, logits_node) = model.loss(&mut tape, r)?;
        let loss = tape.scalar_value(loss_node);
        let l = tape.value(logits_node);
        let pred = u8::from(l.data[1] > l.data[0]);
        rows.push((loss, pred, r));
    }
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| {
        rows[b].0.partial_cmp(&rows[a].0).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    Ok(idx
        .into_iter()
        .take(top_n)
        .enumerate()
        .map(|(i, j)| ErrorReportRow {
            rank: i + 1,
            loss: rows[j].0,
            predicted: rows[j].1,
            gold: rows[j].2.label,
            text: rows[j].2.text.clone(),
        })
        .collect())
}
