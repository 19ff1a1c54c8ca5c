use std::collections::BTreeMap;

use defx_core::corpus::load_dataset;
use defx_core::harness::{evaluate, train, Metrics, Model};
use serde::Serialize;

use super::write_meta;
use crate::{CliError, TrainArgs};

#[derive(Serialize)]
struct TrainMetricsFile<'a> {
    command: &'a str,
    config: &'a BTreeMap<String, String>,
    seed: u64,
    epoch_losses: &'a [f64],
    train_metrics: &'a Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    val_metrics: Option<&'a Metrics>,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let eff = args.flags.effective()?;
    let resources = args.flags.resources(&eff.train.model)?;
    let records = load_dataset(&args.input)?;

    let mut model = Model::build(
        eff.train.model.clone(),
        &records,
        resources.pretrained,
        resources.features,
        eff.train.seed,
    )?;
    let stats = train(&mut model, &eff.train, &records)?;
    let train_metrics = evaluate(&model, &records)?;

    let val_metrics = match &args.val {
        Some(path) => Some(evaluate(&model, &load_dataset(path)?)?),
        None => None,
    };

    if let Some(dir) = &args.model_out {
        model.save_bundle(dir)?;
    }

    let mut config = eff.echo();
    config.insert("input".to_string(), args.input.display().to_string());
    if let Some(p) = &args.flags.embeddings {
        config.insert("embeddings".to_string(), p.display().to_string());
    }
    if let Some(p) = &args.flags.features {
        config.insert("features".to_string(), p.display().to_string());
    }

    if let Some(path) = &args.metrics {
        let file = TrainMetricsFile {
            command: "train",
            config: &config,
            seed: eff.train.seed,
            epoch_losses: &stats.epoch_losses,
            train_metrics: &train_metrics,
            val_metrics: val_metrics.as_ref(),
        };
        let body = serde_json::to_string_pretty(&file)
            .map_err(|e| CliError::Usage(format!("serializing metrics: {e}")))?;
        std::fs::write(path, body + "\n")
            .map_err(|e| CliError::Core(defx_core::Error::io(path, e)))?;
    }

    println!(
        "trained {} on {} record(s): final epoch loss {:.6}, train F1 {:.4}{}",
        eff.train.model.kind,
        records.len(),
        stats.epoch_losses.last().copied().unwrap_or(f64::NAN),
        train_metrics.f1_positive,
        match &val_metrics {
            Some(m) => format!(", val F1 {:.4}", m.f1_positive),
            None => String::new(),
        }
    );
    if let Some(dir) = &args.model_out {
        write_meta(&dir.join("train"), "train", &config)?;
        println!("model bundle written to {}", dir.display());
    }
    Ok(())
}
