//! Corpus invariants: fold structure, preprocessing idempotence, TSV
//! round-tripping.

use std::collections::{HashMap, HashSet};

use defx_core::corpus::{
    load_dataset, make_folds, save_dataset, strip_line_number, SentenceRecord,
};
use defx_core::text::{ids_of, tokenize, Vocab};
use proptest::prelude::*;

fn records(n: usize, positives: usize) -> Vec<SentenceRecord> {
    (0..n)
        .map(|i| SentenceRecord {
            id: format!("d#{i}"),
            raw_text: format!("record {i}"),
            text: format!("record {i}"),
            subject: None,
            label: u8::from(i < positives),
        })
        .collect()
}

proptest! {
    #[test]
    fn folds_partition_with_balanced_sizes(
        n in 20usize..260,
        pos_frac in 0.1f64..0.9,
        k in 2usize..10,
        seed in 0u64..1000,
    ) {
        let positives = ((n as f64 * pos_frac) as usize).clamp(1, n - 1);
        let data = records(n, positives);
        let folds = make_folds(&data, k, seed).unwrap();

        // Validation sets partition the dataset.
        let mut seen = HashSet::new();
        for f in &folds {
            for id in &f.val_ids {
                prop_assert!(seen.insert(id.clone()));
                prop_assert!(!f.train_ids.contains(id));
            }
            prop_assert_eq!(f.train_ids.len() + f.val_ids.len(), n);
        }
        prop_assert_eq!(seen.len(), n);

        // Sizes differ by at most one.
        let sizes: Vec<usize> = folds.iter().map(|f| f.val_ids.len()).collect();
        let (min, max) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(max - min <= 1);

        // Per-class counts are floor or ceil of count/k: as even as possible.
        let by_id: HashMap<&str, u8> = data.iter().map(|r| (r.id.as_str(), r.label)).collect();
        for f in &folds {
            let p = f.val_ids.iter().filter(|id| by_id[id.as_str()] == 1).count();
            prop_assert!(p == positives / k || p == positives / k + 1, "{} positives", p);
        }
    }

    #[test]
    fn stratification_within_two_points_at_scale(
        n in 1000usize..2000,
        pos_frac in 0.15f64..0.85,
        seed in 0u64..100,
    ) {
        let positives = ((n as f64 * pos_frac) as usize).clamp(1, n - 1);
        let data = records(n, positives);
        let global = positives as f64 / n as f64;
        for f in make_folds(&data, 10, seed).unwrap() {
            let by_id: HashMap<&str, u8> = data.iter().map(|r| (r.id.as_str(), r.label)).collect();
            let p = f.val_ids.iter().filter(|id| by_id[id.as_str()] == 1).count();
            let rate = p as f64 / f.val_ids.len() as f64;
            prop_assert!((rate - global).abs() <= 0.02, "fold rate {rate} vs global {global}");
        }
    }
}

/// Corpus-line generator in the shape the dataset actually has: an optional
/// leading line-number marker, then a sentence that does not start with a
/// bare numeral.
fn corpus_line(seed: u64) -> String {
    let words = [
        "photosynthesis", "is", "the", "process", "monomers", "release", "water",
        "molecules", "as", "byproducts", ",", ".", "cells", "are", "small",
    ];
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let len = 3 + (next() % 10) as usize;
    let body: Vec<&str> = (0..len).map(|_| words[(next() % words.len() as u64) as usize]).collect();
    let body = body.join(" ");
    match next() % 3 {
        0 => format!("{} . {}", next() % 10000, body),
        1 => format!("{} {}", next() % 10000, body),
        _ => body,
    }
}

#[test]
fn strip_is_idempotent_on_corpus_lines() {
    for seed in 0..1000u64 {
        let line = corpus_line(seed);
        let once = strip_line_number(&line);
        let twice = strip_line_number(&once);
        assert_eq!(once, twice, "line {line:?}");
        // After stripping, no leading line-number marker remains.
        assert!(
            !once
                .chars()
                .next()
                .map(|c| c.is_ascii_digit())
                .unwrap_or(false),
            "leftover marker in {once:?}"
        );
    }
}

proptest! {
    #[test]
    fn tsv_round_trip_preserves_text(lines in proptest::collection::vec("[a-z ,.]{1,40}", 1..30)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.tsv");
        let body: String = lines
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}x\t{}\n", s, i % 2)) // "x" guards nonempty sentences
            .collect();
        std::fs::write(&path, &body).unwrap();
        let records = load_dataset(&path).unwrap();
        let out = dir.path().join("out.tsv");
        save_dataset(&records, &out).unwrap();
        prop_assert_eq!(std::fs::read_to_string(&out).unwrap(), body);
    }

    #[test]
    fn ids_stay_in_vocab_range(tokens in proptest::collection::vec("[a-z]{1,6}", 0..30)) {
        let vocab = Vocab::from_tokens(["known", "words"].map(String::from));
        let ids = ids_of(&tokens, &vocab);
        prop_assert_eq!(ids.len(), tokens.len());
        for id in ids {
            prop_assert!(id < vocab.len());
        }
    }

    #[test]
    fn tokenize_casing_idempotence(text in "[a-zA-Z .,]{0,60}") {
        prop_assert_eq!(tokenize(&text.to_lowercase()), tokenize(&text));
    }
}
