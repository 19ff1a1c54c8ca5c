use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};

use defx_core::encoder::load_feature_store;
use defx_core::harness::Model;

use super::{load_sentences_lenient, write_meta};
use crate::{CliError, PredictArgs};

pub fn run(args: PredictArgs) -> Result<(), CliError> {
    let features = match &args.features {
        Some(path) => Some(load_feature_store(path)?),
        None => None,
    };
    let model = Model::load_bundle(&args.model, features)?;
    let records = load_sentences_lenient(&args.input)?;

    let file =
        File::create(&args.output).map_err(|e| CliError::Core(defx_core::Error::io(&args.output, e)))?;
    let mut w = BufWriter::new(file);
    for record in &records {
        let label = model.predict(record)?;
        writeln!(w, "{}\t{}", record.text, label)
            .map_err(|e| CliError::Core(defx_core::Error::io(&args.output, e)))?;
    }
    w.flush()
        .map_err(|e| CliError::Core(defx_core::Error::io(&args.output, e)))?;

    let mut config: BTreeMap<String, String> = BTreeMap::new();
    config.insert("model".to_string(), args.model.display().to_string());
    config.insert("model_kind".to_string(), model.config.kind.to_string());
    config.insert("input".to_string(), args.input.display().to_string());
    config.insert("seed".to_string(), model.seed.to_string());
    if let Some(p) = &args.features {
        config.insert("features".to_string(), p.display().to_string());
    }
    write_meta(&args.output, "predict", &config)?;

    println!("predicted {} sentence(s) -> {}", records.len(), args.output.display());
    Ok(())
}
