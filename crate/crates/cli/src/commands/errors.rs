use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};

use defx_core::corpus::load_dataset;
use defx_core::encoder::load_feature_store;
use defx_core::harness::{error_analysis, Model};

use super::write_meta;
use crate::{CliError, ErrorsArgs};

pub fn run(args: ErrorsArgs) -> Result<(), CliError> {
    let features = match &args.features {
        Some(path) => Some(load_feature_store(path)?),
        None => None,
    };
    let model = Model::load_bundle(&args.model, features)?;
    let records = load_dataset(&args.input)?;
    let rows = error_analysis(&model, &records, args.top)?;

    let file = File::create(&args.output)
        .map_err(|e| CliError::Core(defx_core::Error::io(&args.output, e)))?;
    let mut w = BufWriter::new(file);
    for row in &rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            row.rank, row.loss, row.predicted, row.gold, row.text
        )
        .map_err(|e| CliError::Core(defx_core::Error::io(&args.output, e)))?;
    }
    w.flush()
        .map_err(|e| CliError::Core(defx_core::Error::io(&args.output, e)))?;

    let mut config: BTreeMap<String, String> = BTreeMap::new();
    config.insert("model".to_string(), args.model.display().to_string());
    config.insert("model_kind".to_string(), model.config.kind.to_string());
    config.insert("input".to_string(), args.input.display().to_string());
    config.insert("top".to_string(), args.top.to_string());
    config.insert("seed".to_string(), model.seed.to_string());
    write_meta(&args.output, "errors", &config)?;

    println!("wrote top {} rows by loss -> {}", rows.len(), args.output.display());
    Ok(())
}
