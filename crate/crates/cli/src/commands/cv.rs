use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};

use defx_core::corpus::{load_dataset, make_folds, write_fold_dump};
use defx_core::harness::{cross_validate, Metrics, MetricsSummary};
use serde::Serialize;

use super::{load_sentences_lenient, write_meta};
use crate::{CliError, CvArgs};

#[derive(Serialize)]
struct CvMetricsFile<'a> {
    command: &'a str,
    config: &'a BTreeMap<String, String>,
    seed: u64,
    folds: usize,
    per_fold: &'a [Metrics],
    mean: &'a MetricsSummary,
    std: &'a MetricsSummary,
}

pub fn run(args: CvArgs) -> Result<(), CliError> {
    let mut eff = args.flags.effective()?;
    if let Some(folds) = args.folds {
        eff.apply("folds", &folds.to_string())?;
    }
    if let Some(jobs) = args.jobs {
        eff.apply("jobs", &jobs.to_string())?;
    }
    if args.predictions.is_some() && args.test.is_none() {
        return Err(CliError::Usage("--predictions requires --test".into()));
    }
    let resources = args.flags.resources(&eff.train.model)?;
    let records = load_dataset(&args.input)?;
    let test = match &args.test {
        Some(path) => Some(load_sentences_lenient(path)?),
        None => None,
    };

    let outcome = cross_validate(
        &eff.train,
        &records,
        eff.folds,
        &resources,
        test.as_deref(),
        eff.jobs,
    )?;

    let mut config = eff.echo();
    config.insert("input".to_string(), args.input.display().to_string());
    if let Some(p) = &args.flags.embeddings {
        config.insert("embeddings".to_string(), p.display().to_string());
    }
    if let Some(p) = &args.flags.features {
        config.insert("features".to_string(), p.display().to_string());
    }
    if let Some(p) = &args.test {
        config.insert("test".to_string(), p.display().to_string());
    }

    if let Some(path) = &args.metrics {
        let file = CvMetricsFile {
            command: "cv",
            config: &config,
            seed: eff.train.seed,
            folds: eff.folds,
            per_fold: &outcome.per_fold,
            mean: &outcome.mean,
            std: &outcome.std,
        };
        let body = serde_json::to_string_pretty(&file)
            .map_err(|e| CliError::Usage(format!("serializing metrics: {e}")))?;
        std::fs::write(path, body + "\n")
            .map_err(|e| CliError::Core(defx_core::Error::io(path, e)))?;
    }

    if let Some(path) = &args.fold_dump {
        let folds = make_folds(&records, eff.folds, eff.train.seed)?;
        write_fold_dump(&folds, path)?;
    }

    if let (Some(path), Some(test), Some(preds)) =
        (&args.predictions, &test, &outcome.test_predictions)
    {
        let file = File::create(path).map_err(|e| CliError::Core(defx_core::Error::io(path, e)))?;
        let mut w = BufWriter::new(file);
        for (record, label) in test.iter().zip(preds) {
            writeln!(w, "{}\t{}", record.text, label)
                .map_err(|e| CliError::Core(defx_core::Error::io(path, e)))?;
        }
        w.flush()
            .map_err(|e| CliError::Core(defx_core::Error::io(path, e)))?;
        write_meta(path, "cv", &config)?;
    }

    for (i, m) in outcome.per_fold.iter().enumerate() {
        println!(
            "fold {i}: P {:.4} R {:.4} F1 {:.4} acc {:.4}",
            m.precision, m.recall, m.f1_positive, m.accuracy
        );
    }
    println!(
        "mean over {} folds: F1 {:.4} (std {:.4})",
        eff.folds, outcome.mean.f1_positive, outcome.std.f1_positive
    );
    Ok(())
}
