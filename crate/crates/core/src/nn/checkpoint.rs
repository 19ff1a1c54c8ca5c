//! Parameter checkpoints: a versioned text table of named tensors.
//!
//! Format:
//! ```text
//! defx-checkpoint v1
//! <name>\t<d1,d2,...>\t<v1> <v2> ...
//! ```
//! Values use Rust's shortest round-trip float formatting, so save/load is
//! bit-exact. Parameters are written sorted by name.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "defx-checkpoint v1";

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut params: Vec<_> = store.iter().collect();
    params.sort_by(|a, b| a.name.cmp(&b.name));
    writeln!(w, "{CHECKPOINT_MAGIC}").map_err(|e| Error::io(path, e))?;
    for p in params {
        let shape = p
            .value
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let values = p
            .value
            .data
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(w, "{}\t{}\t{}", p.name, shape, values).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint into a fresh store. Parameter ids are assigned in file
/// order (sorted by name), so callers re-resolve ids by name.
pub fn load(path: &Path) -> Result<ParamStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut store = ParamStore::new();
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty checkpoint"))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    if first != CHECKPOINT_MAGIC {
        return Err(Error::parse(
            path,
            1,
            format!("bad magic {first:?}, expected {CHECKPOINT_MAGIC:?}"),
        ));
    }

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let name = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "missing name"))?;
        let shape_str = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "missing shape"))?;
        let values_str = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "missing values"))?;

        let shape: Vec<usize> = if shape_str.is_empty() {
            vec![]
        } else {
            shape_str
                .split(',')
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| Error::parse(path, lineno, format!("bad dimension {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        let data: Vec<f64> = if values_str.is_empty() {
            vec![]
        } else {
            values_str
                .split(' ')
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::parse(path, lineno, format!("bad value {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::parse(
                path,
                lineno,
                format!("shape {shape:?} expects {expected} values, got {}", data.len()),
            ));
        }
        store.add_tensor(name, Tensor::new(shape, data));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        store.add("enc.w", vec![3, 2], Init::Normal(0.33), &mut rng);
        store.add("gcn.gate_raw", vec![5], Init::Normal(1.7), &mut rng);
        store.add("head.b", vec![], Init::Const(0.125), &mut rng);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save(&store, &path).unwrap();
        let loaded = load(&path).unwrap();

        for p in store.iter() {
            let id = loaded.by_name(&p.name).unwrap();
            assert_eq!(loaded.get(id).value, p.value, "{}", p.name);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(load(&path).is_err());
    }
}
