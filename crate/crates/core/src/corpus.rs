//! Dataset loading, preprocessing, and stratified fold construction.
//!
//! The on-disk shape is one `sentence<TAB>label` pair per line, UTF-8. The
//! sentence is everything before the *last* tab, so embedded tabs survive a
//! round trip; the label is the final field and must be `0` or `1`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One labeled sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    /// Stable unique key, `<filename>#<line-number>`.
    pub id: String,
    /// Text exactly as read from the file.
    pub raw_text: String,
    /// Text after preprocessing; equals `raw_text` until preprocessing runs.
    pub text: String,
    /// Source textbook subject, when known.
    pub subject: Option<String>,
    /// 1 iff the sentence contains a definition.
    pub label: u8,
}

/// One cross-validation fold. Validation sets over all folds partition the
/// dataset.
#[derive(Debug, Clone)]
pub struct Fold {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

pub fn load_dataset(path: &Path) -> Result<Vec<SentenceRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let filename = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let mut line = line.map_err(|e| Error::io(path, e))?;
        if line.ends_with('\r') {
            line.pop();
        }
        if line.is_empty() {
            continue;
        }
        let tab = line
            .rfind('\t')
            .ok_or_else(|| Error::parse(path, lineno, "missing tab separator"))?;
        let sentence = &line[..tab];
        let label_field = &line[tab + 1..];
        let label = match label_field {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("invalid label {other:?} at line {lineno}"),
                ))
            }
        };
        if sentence.is_empty() {
            return Err(Error::parse(path, lineno, "empty sentence"));
        }
        records.push(SentenceRecord {
            id: format!("{filename}#{lineno}"),
            raw_text: sentence.to_string(),
            text: sentence.to_string(),
            subject: None,
            label,
        });
    }
    Ok(records)
}

/// Writes records back out as `text<TAB>label`; inverse of [`load_dataset`]
/// on the text field.
pub fn save_dataset(records: &[SentenceRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}\t{}", r.text, r.label).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Removes a leading line number: optional whitespace, digits, optional
/// period, then at least one whitespace. Applied once — a sentence that
/// happens to begin with a bare number after the marker is left alone.
pub fn strip_line_number(text: &str) -> String {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let skip_ws = |mut i: usize| {
        while i < n && chars[i].1.is_whitespace() {
            i += 1;
        }
        i
    };

    let start = skip_ws(0);
    let mut d = start;
    while d < n && chars[d].1.is_ascii_digit() {
        d += 1;
    }
    if d == start {
        return text.to_string(); // no digits
    }
    let after_ws = skip_ws(d);
    // Branch with a period: digits, ws*, '.', ws+
    if after_ws < n && chars[after_ws].1 == '.' {
        let m = skip_ws(after_ws + 1);
        if m > after_ws + 1 {
            return match chars.get(m) {
                Some(&(byte, _)) => text[byte..].to_string(),
                None => String::new(),
            };
        }
    }
    // Plain branch: digits, ws+
    if after_ws > d {
        return match chars.get(after_ws) {
            Some(&(byte, _)) => text[byte..].to_string(),
            None => String::new(),
        };
    }
    text.to_string()
}

/// Puts the subject in front of the sentence as its first token.
pub fn prepend_subject(text: &str, subject: &str) -> Result<String> {
    if subject.is_empty() {
        return Err(Error::invalid("empty subject"));
    }
    Ok(format!("{subject} {text}"))
}

/// Outcome of preprocessing a loaded dataset.
pub struct PreprocessOutcome {
    pub records: Vec<SentenceRecord>,
    /// Records dropped because stripping left them empty.
    pub skipped_empty: usize,
}

/// Applies line-number stripping to every record and, when requested,
/// prepends the subject token. Records left empty are dropped and counted.
pub fn preprocess(
    records: Vec<SentenceRecord>,
    subject: Option<&str>,
    add_subject: bool,
) -> Result<PreprocessOutcome> {
    if add_subject && subject.is_none_or(str::is_empty) {
        return Err(Error::invalid(
            "subject token requested but no subject is available",
        ));
    }
    let mut out = Vec::with_capacity(records.len());
    let mut skipped_empty = 0;
    for mut r in records {
        let stripped = strip_line_number(&r.raw_text);
        if stripped.trim().is_empty() {
            skipped_empty += 1;
            continue;
        }
        r.text = if add_subject {
            prepend_subject(&stripped, subject.unwrap())?
        } else {
            stripped
        };
        r.subject = subject.map(str::to_string);
        out.push(r);
    }
    Ok(PreprocessOutcome {
        records: out,
        skipped_empty,
    })
}

/// Loads a `filename<TAB>subject` sidecar.
pub fn load_subject_sidecar(path: &Path) -> Result<HashMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut map = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (name, subject) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "missing tab separator"))?;
        map.insert(name.to_string(), subject.to_string());
    }
    Ok(map)
}

/// Stratified k-fold split, deterministic in (record order, k, seed).
///
/// Each label class is shuffled and dealt so every fold receives
/// `floor(count/k)` or `ceil(count/k)` members of that class; the folds
/// taking the extra members of one class follow directly after the folds
/// taking the extras of the other, which keeps total validation sizes within
/// one of each other.
pub fn make_folds(records: &[SentenceRecord], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if records.len() < k {
        return Err(Error::invalid(format!(
            "k = {k} exceeds dataset size {}",
            records.len()
        )));
    }
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match r.label {
            1 => pos.push(i),
            _ => neg.push(i),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("both labels must be present to stratify"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let offset = rng.gen_range(0..k);

    let mut counts = vec![(0usize, 0usize); k];
    for t in 0..pos.len() % k {
        counts[(offset + t) % k].0 += 1;
    }
    for t in 0..neg.len() % k {
        counts[(offset + pos.len() % k + t) % k].1 += 1;
    }
    for c in counts.iter_mut() {
        c.0 += pos.len() / k;
        c.1 += neg.len() / k;
    }

    let mut pos_iter = pos.into_iter();
    let mut neg_iter = neg.into_iter();
    let mut folds = Vec::with_capacity(k);
    for &(np, nn) in &counts {
        let mut val_idx: Vec<usize> = Vec::with_capacity(np + nn);
        val_idx.extend(pos_iter.by_ref().take(np));
        val_idx.extend(neg_iter.by_ref().take(nn));
        let val_set: HashSet<usize> = val_idx.iter().copied().collect();
        let val_ids = val_idx.iter().map(|&i| records[i].id.clone()).collect();
        let train_ids = records
            .iter()
            .enumerate()
            .filter(|(i, _)| !val_set.contains(i))
            .map(|(_, r)| r.id.clone())
            .collect();
        folds.push(Fold { train_ids, val_ids });
    }
    Ok(folds)
}

/// Audit dump: `fold_index<TAB>val_id,val_id,...` per line.
pub fn write_fold_dump(folds: &[Fold], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, fold) in folds.iter().enumerate() {
        writeln!(w, "{}\t{}", i, fold.val_ids.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
