//! Shared fixtures for the pipeline benchmarks.

use defx_core::corpus::SentenceRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic sentences over a small vocabulary; label 1 iff a definitor
/// phrase is present.
pub fn synthetic_dataset(n: usize, seed: u64) -> Vec<SentenceRecord> {
    let words: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
    let definitors = ["is defined as", "refers to", "is known as", "means"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(6..20);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| words[rng.gen_range(0..words.len())].clone())
                .collect();
            let positive = i % 2 == 0;
            if positive {
                let at = rng.gen_range(0..=tokens.len());
                let phrase = definitors[rng.gen_range(0..definitors.len())];
                tokens.splice(at..at, phrase.split(' ').map(String::from));
            }
            tokens.push(".".into());
            let text = tokens.join(" ");
            SentenceRecord {
                id: format!("bench#{i}"),
                raw_text: text.clone(),
                text,
                subject: None,
                label: u8::from(positive),
            }
        })
        .collect()
}
