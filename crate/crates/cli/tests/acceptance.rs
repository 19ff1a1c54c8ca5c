//! Acceptance suite: one test per release criterion, each ending with a
//! `criterion N (<name>): PASS` line (run with `-- --nocapture` to see them
//! on success).

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use defx_core::corpus::{make_folds, SentenceRecord};
use defx_core::encoder::EncoderConfig;
use defx_core::gcn::{Aggregation, GcnConfig};
use defx_core::graph::{build_graph, build_store};
use defx_core::harness::{confusion, error_analysis, evaluate, train, Model, TrainConfig};
use defx_core::nn::{grad_check, AdamWConfig, OptState, ParamStore, Tensor};
use defx_core::text::Vocab;
use defx_core::{EncoderSource, ModelConfig, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Dataset generators
// ---------------------------------------------------------------------------

const DEFINITORS: [&str; 4] = ["is defined as", "refers to", "is known as", "means"];

fn content_words() -> Vec<String> {
    // 43 content words + 7 distinct definitor tokens = a 50-word vocabulary.
    (0..43).map(|i| format!("w{i}")).collect()
}

fn record(id: usize, text: String, label: u8) -> SentenceRecord {
    SentenceRecord {
        id: format!("gen#{id}"),
        raw_text: text.clone(),
        text,
        subject: None,
        label,
    }
}

/// Sentences over a 50-word vocabulary; label 1 iff a definitor phrase was
/// inserted. Separable by construction.
fn definitor_dataset(n: usize, seed: u64) -> Vec<SentenceRecord> {
    let words = content_words();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(4..12);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| words[rng.gen_range(0..words.len())].clone())
                .collect();
            let positive = i % 2 == 0;
            if positive {
                let at = rng.gen_range(0..=tokens.len());
                let phrase = DEFINITORS[rng.gen_range(0..DEFINITORS.len())];
                tokens.splice(at..at, phrase.split(' ').map(String::from));
            }
            tokens.push(".".to_string());
            record(i, tokens.join(" "), u8::from(positive))
        })
        .collect()
}

fn tiny_model_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        encoder_source: EncoderSource::Toy,
        window: 2,
        emb_dim: 8,
        freeze_embeddings: false,
        gcn: GcnConfig {
            rounds: 1,
            d_gcn: 4,
            aggregation: Aggregation::Mean,
        },
        enc: EncoderConfig {
            d_model: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 12,
            max_len: 8,
        },
    }
}

fn overfit_fixture() -> (Vec<SentenceRecord>, TrainConfig) {
    let records = definitor_dataset(20, 55);
    let config = TrainConfig {
        epochs: 200,
        lr: 0.01,
        batch_size: 4,
        weight_decay: 0.0,
        seed: 5,
        model: ModelConfig {
            kind: ModelKind::Joint,
            encoder_source: EncoderSource::Toy,
            window: 5,
            emb_dim: 8,
            freeze_embeddings: false,
            gcn: GcnConfig {
                rounds: 1,
                d_gcn: 8,
                aggregation: Aggregation::Mean,
            },
            enc: EncoderConfig {
                d_model: 16,
                layers: 1,
                heads: 2,
                ffn_dim: 32,
                max_len: 32,
            },
        },
    };
    (records, config)
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let train_set = vec![
        record(0, "water is defined as a liquid".into(), 1),
        record(1, "cats sit on the mat".into(), 0),
    ];
    let probe = record(2, "ice is a solid".into(), 1);
    assert!(probe.text.split(' ').count() <= 6);

    for kind in [ModelKind::GcnOnly, ModelKind::EncoderOnly, ModelKind::Joint] {
        let mut model =
            Model::build(tiny_model_config(kind), &train_set, None, None, 1234).unwrap();
        let mut params = model.take_params();
        let report = grad_check(
            &mut params,
            |store, tape| {
                let (loss, _) = model.loss_in(store, tape, &probe)?;
                Ok(loss)
            },
            1e-4,
        )
        .unwrap();
        model.put_params(params);
        assert!(
            report.all_passed(),
            "{kind}: gradient failures {:?}",
            report.failures().collect::<Vec<_>>()
        );
        println!(
            "  {kind}: {} parameters, max relative error {:.3e}",
            report.checks.len(),
            report.max_rel_err()
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget is 1 minute");
    println!("criterion 1 (gradient fidelity): PASS in {elapsed:?}");
}

// ---------------------------------------------------------------------------
// 2. Graph oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_graph_oracle() {
    let mut params = ParamStore::new();
    let vocab = Vocab::from_tokens(std::iter::empty());
    let store = build_store(&[], &vocab, 1, &mut params);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let len = rng.gen_range(1..=50);
        let window = rng.gen_range(1..=6);
        let word_ids: Vec<usize> = (0..len).collect();
        let g = build_graph(&word_ids, window, &store).unwrap();
        for i in 0..len {
            let expected: Vec<usize> = (0..len)
                .filter(|&j| {
                    let d = i.abs_diff(j);
                    d > 0 && d <= window
                })
                .collect();
            assert_eq!(
                g.neighbors[i], expected,
                "case {case}: len {len}, window {window}, node {i}"
            );
        }
    }

    // Figure case: 4 tokens, window 2, N(T2) = {T1, T3, T4}.
    let g = build_graph(&[0, 1, 2, 3], 2, &store).unwrap();
    assert_eq!(g.neighbors[1], vec![0, 2, 3]);
    println!("criterion 2 (graph oracle equivalence): PASS");
}

// ---------------------------------------------------------------------------
// 3. Metric oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let preds: Vec<u8> = (0..1000).map(|_| rng.gen_range(0..=1)).collect();
    let golds: Vec<u8> = (0..1000).map(|_| rng.gen_range(0..=1)).collect();

    // Brute-force recomputation, independent of the harness.
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..1000 {
        match (preds[i], golds[i]) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let m = confusion(&preds, &golds);
    assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fn_, tn));
    assert_eq!(m.precision, tp as f64 / (tp + fp) as f64);
    assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64);
    assert_eq!(
        m.f1_positive,
        2.0 * m.precision * m.recall / (m.precision + m.recall)
    );

    // tp=2, fp=1, fn=1 -> precision = recall = f1 = 2/3.
    let hand = confusion(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0]);
    assert_eq!((hand.tp, hand.fp, hand.fn_), (2, 1, 1));
    assert!((hand.f1_positive - 2.0 / 3.0).abs() < 1e-15);
    println!("criterion 3 (metric oracle equivalence): PASS");
}

// ---------------------------------------------------------------------------
// 4. Optimizer correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_optimizer() {
    // Hand-computed first step: theta=1, g=0.5, lr=0.01, wd=0 -> theta'=0.99.
    // The hand arithmetic drops eps; run it in that regime (see also the
    // eps=1e-8 bound, which differs from 0.99 by 2e-10).
    let step_with = |eps: f64, grad: f64, wd: f64| {
        let mut store = ParamStore::new();
        let id = store.add_tensor("theta", Tensor::scalar(1.0));
        store.accumulate_grad(id, &[grad]);
        let mut opt = OptState::new(
            &store,
            AdamWConfig {
                lr: 0.01,
                weight_decay: wd,
                eps,
                ..AdamWConfig::default()
            },
        );
        opt.step(&mut store).unwrap();
        store.get(id).value.data[0]
    };
    assert!((step_with(0.0, 0.5, 0.0) - 0.99).abs() < 1e-12);
    assert!((step_with(1e-8, 0.5, 0.0) - 0.99).abs() < 1e-9);

    // Zero gradient, zero decay: exact identity.
    assert_eq!(step_with(1e-8, 0.0, 0.0), 1.0);
    println!("criterion 4 (optimizer correctness): PASS");
}

// ---------------------------------------------------------------------------
// 5. Overfit capacity
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_overfit_capacity() {
    let started = Instant::now();
    let (records, config) = overfit_fixture();
    let mut model =
        Model::build(config.model.clone(), &records, None, None, config.seed).unwrap();
    let stats = train(&mut model, &config, &records).unwrap();
    let metrics = evaluate(&model, &records).unwrap();

    let final_loss = *stats.epoch_losses.last().unwrap();
    assert!(
        final_loss < 0.01,
        "mean training loss {final_loss} after {} epochs",
        config.epochs
    );
    assert_eq!(metrics.f1_positive, 1.0, "training F1 {:?}", metrics);
    // Loss history is eventually decreasing.
    assert!(final_loss < stats.epoch_losses[0]);

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}, budget is 2 minutes");
    println!(
        "criterion 5 (overfit capacity): PASS in {elapsed:?} (final loss {final_loss:.2e})"
    );
}

// ---------------------------------------------------------------------------
// 6. Synthetic separable task
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_synthetic_separable() {
    let train_set = definitor_dataset(500, 66);
    let held_out = definitor_dataset(100, 67);
    let config = TrainConfig {
        epochs: 30,
        lr: 0.02,
        batch_size: 16,
        weight_decay: 0.0,
        seed: 6,
        model: ModelConfig {
            kind: ModelKind::GcnOnly,
            encoder_source: EncoderSource::Toy,
            window: 5,
            emb_dim: 16,
            freeze_embeddings: false,
            gcn: GcnConfig {
                rounds: 1,
                d_gcn: 8,
                aggregation: Aggregation::Mean,
            },
            enc: EncoderConfig::default(),
        },
    };
    assert!(config.epochs <= 50);
    let mut model =
        Model::build(config.model.clone(), &train_set, None, None, config.seed).unwrap();
    train(&mut model, &config, &train_set).unwrap();
    let metrics = evaluate(&model, &held_out).unwrap();
    assert!(
        metrics.f1_positive >= 0.95,
        "held-out F1 {} below 0.95",
        metrics.f1_positive
    );
    println!(
        "criterion 6 (synthetic separable task): PASS (held-out F1 {:.4})",
        metrics.f1_positive
    );
}

// ---------------------------------------------------------------------------
// 7. Joint advantage probe
// ---------------------------------------------------------------------------

/// Half the examples carry the label only in the precomputed features, half
/// only in the token pattern; neither branch alone can solve both groups.
fn mixed_signal_dataset(
    n: usize,
    seed: u64,
    dir: &Path,
) -> (Vec<SentenceRecord>, std::path::PathBuf) {
    let words = content_words();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 4;
    let mut records = Vec::with_capacity(n);
    let mut feature_lines = vec![format!("dim={dim}")];
    for i in 0..n {
        let positive = rng.gen_bool(0.5);
        let token_group = i % 2 == 0;
        let len = rng.gen_range(4..10);
        let mut tokens: Vec<String> = (0..len)
            .map(|_| words[rng.gen_range(0..words.len())].clone())
            .collect();
        if token_group && positive {
            let at = rng.gen_range(0..=tokens.len());
            let phrase = DEFINITORS[rng.gen_range(0..DEFINITORS.len())];
            tokens.splice(at..at, phrase.split(' ').map(String::from));
        }
        let r = record(i, tokens.join(" "), u8::from(positive));
        let feature: Vec<f64> = (0..dim)
            .map(|_| {
                let noise: f64 = rng.gen_range(-0.5..0.5);
                if token_group {
                    noise
                } else if positive {
                    1.5 + noise
                } else {
                    -1.5 + noise
                }
            })
            .collect();
        feature_lines.push(format!(
            "{}\t{}",
            r.id,
            feature
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(" ")
        ));
        records.push(r);
    }
    let path = dir.join("features.tsv");
    std::fs::write(&path, feature_lines.join("\n") + "\n").unwrap();
    (records, path)
}

#[test]
fn criterion_7_joint_advantage() {
    let dir = tempfile::tempdir().unwrap();
    let (all, feature_path) = mixed_signal_dataset(600, 77, dir.path());
    let (train_set, held_out) = all.split_at(500);

    let base_model = ModelConfig {
        kind: ModelKind::Joint,
        encoder_source: EncoderSource::Precomputed,
        window: 5,
        emb_dim: 16,
        freeze_embeddings: false,
        gcn: GcnConfig {
            rounds: 1,
            d_gcn: 8,
            aggregation: Aggregation::Mean,
        },
        enc: EncoderConfig::default(),
    };

    let f1_for = |kind: ModelKind| {
        let features = defx_core::encoder::load_feature_store(&feature_path).unwrap();
        let mut model_cfg = base_model.clone();
        model_cfg.kind = kind;
        model_cfg.encoder_source = if kind == ModelKind::GcnOnly {
            EncoderSource::Toy // unused branch; keeps the toy encoder out entirely
        } else {
            EncoderSource::Precomputed
        };
        let config = TrainConfig {
            epochs: 30,
            lr: 0.02,
            batch_size: 8,
            weight_decay: 0.0,
            seed: 7,
            model: model_cfg,
        };
        let needs_features = config.model.uses_encoder();
        let mut model = Model::build(
            config.model.clone(),
            train_set,
            None,
            needs_features.then_some(features),
            config.seed,
        )
        .unwrap();
        train(&mut model, &config, train_set).unwrap();
        evaluate(&model, held_out).unwrap().f1_positive
    };

    let joint = f1_for(ModelKind::Joint);
    let gcn_only = f1_for(ModelKind::GcnOnly);
    let encoder_only = f1_for(ModelKind::EncoderOnly);

    assert!(
        joint >= gcn_only + 0.03,
        "joint {joint:.4} vs gcn_only {gcn_only:.4}"
    );
    assert!(
        joint >= encoder_only + 0.03,
        "joint {joint:.4} vs encoder_only {encoder_only:.4}"
    );
    println!(
        "criterion 7 (joint advantage probe): PASS (joint {joint:.4}, gcn {gcn_only:.4}, encoder {encoder_only:.4})"
    );
}

// ---------------------------------------------------------------------------
// 8. Determinism of the CLI cross-validation artifact
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.tsv");
    let body: String = definitor_dataset(120, 88)
        .iter()
        .map(|r| format!("{}\t{}\n", r.text, r.label))
        .collect();
    std::fs::write(&data_path, body).unwrap();

    let run = |metrics_name: &str| {
        let metrics_path = dir.path().join(metrics_name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_defx"))
            .args([
                "cv",
                "--input",
                data_path.to_str().unwrap(),
                "--model",
                "gcn_only",
                "--folds",
                "10",
                "--seed",
                "42",
                "--jobs",
                "1",
                "--epochs",
                "2",
                "--lr",
                "0.01",
                "--set",
                "emb.dim=8",
                "--set",
                "gcn.d_gcn=4",
                "--metrics",
                metrics_path.to_str().unwrap(),
            ])
            .status()
            .expect("run defx cv");
        assert!(status.success(), "cv exited with {status}");
        std::fs::read(metrics_path).unwrap()
    };

    let first = run("m1.json");
    let second = run("m2.json");
    assert_eq!(first, second, "metrics JSON differs between identical runs");
    println!("criterion 8 (determinism): PASS ({} bytes, byte-identical)", first.len());
}

// ---------------------------------------------------------------------------
// 9. Fold properties
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_fold_properties() {
    for (n, positives) in [(97usize, 10usize), (1000, 317)] {
        let records: Vec<SentenceRecord> = (0..n)
            .map(|i| record(i, format!("sentence {i}"), u8::from(i < positives)))
            .collect();
        let folds = make_folds(&records, 10, 99).unwrap();
        let global = positives as f64 / n as f64;

        let mut seen = std::collections::HashSet::new();
        let mut sizes = Vec::new();
        let labels: HashMap<&str, u8> = records.iter().map(|r| (r.id.as_str(), r.label)).collect();
        for f in &folds {
            for id in &f.val_ids {
                assert!(seen.insert(id.clone()), "{id} in two folds");
            }
            sizes.push(f.val_ids.len());
            let p = f.val_ids.iter().filter(|id| labels[id.as_str()] == 1).count();
            let rate = p as f64 / f.val_ids.len() as f64;
            assert!(
                (rate - global).abs() <= 0.02 + 1e-12,
                "n={n}: fold rate {rate:.4} vs global {global:.4}"
            );
        }
        assert_eq!(seen.len(), n, "folds must partition the dataset");
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(max - min <= 1, "n={n}: sizes {sizes:?}");
    }
    println!("criterion 9 (fold properties): PASS");
}

// ---------------------------------------------------------------------------
// 10. Error-analysis contract
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_error_analysis() {
    let (records, mut config) = overfit_fixture();
    config.epochs = 60; // enough to spread losses; the contract is about ordering
    let mut model =
        Model::build(config.model.clone(), &records, None, None, config.seed).unwrap();
    train(&mut model, &config, &records).unwrap();

    let rows = error_analysis(&model, &records, records.len()).unwrap();
    assert_eq!(rows.len(), records.len());
    for w in rows.windows(2) {
        assert!(w[0].loss >= w[1].loss, "rows out of order");
    }
    assert_eq!(
        rows.iter().map(|r| r.rank).collect::<Vec<_>>(),
        (1..=records.len()).collect::<Vec<_>>()
    );

    // Independent recomputation: -log softmax(logits)[gold] per example,
    // sorted by descending loss with input order on ties.
    let mut expected: Vec<(f64, String)> = records
        .iter()
        .map(|r| {
            let l = model.logit_values(r).unwrap();
            let m = l[0].max(l[1]);
            let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
            (lse - l[r.label as usize], r.text.clone())
        })
        .collect();
    let mut order: Vec<usize> = (0..expected.len()).collect();
    order.sort_by(|&a, &b| {
        expected[b]
            .0
            .partial_cmp(&expected[a].0)
            .unwrap()
            .then(a.cmp(&b))
    });
    expected = order.into_iter().map(|i| expected[i].clone()).collect();

    for (row, (loss, text)) in rows.iter().zip(&expected) {
        assert!(
            (row.loss - loss).abs() <= 1e-12,
            "loss {} vs recomputed {}",
            row.loss,
            loss
        );
        assert_eq!(&row.text, text);
    }
    println!("criterion 10 (error-analysis contract): PASS");
}
