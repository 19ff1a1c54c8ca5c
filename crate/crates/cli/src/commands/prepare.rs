use std::collections::BTreeMap;

use defx_core::corpus::{load_dataset, load_subject_sidecar, preprocess, save_dataset};

use super::write_meta;
use crate::{CliError, PrepareArgs};

pub fn run(args: PrepareArgs) -> Result<(), CliError> {
    let records = load_dataset(&args.input)?;

    let subject: Option<String> = match (&args.subject, &args.subjects) {
        (Some(s), _) => Some(s.clone()),
        (None, Some(sidecar_path)) => {
            let sidecar = load_subject_sidecar(sidecar_path)?;
            let filename = args
                .input
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let found = sidecar.get(&filename).cloned();
            if args.add_subject && found.is_none() {
                return Err(CliError::Core(defx_core::Error::invalid(format!(
                    "sidecar {} has no subject for {filename}",
                    sidecar_path.display()
                ))));
            }
            found
        }
        (None, None) => {
            if args.add_subject {
                return Err(CliError::Usage(
                    "--add-subject needs --subject or --subjects".into(),
                ));
            }
            None
        }
    };

    let outcome = preprocess(records, subject.as_deref(), args.add_subject)?;
    if outcome.skipped_empty > 0 {
        eprintln!(
            "warning: skipped {} record(s) left empty by preprocessing",
            outcome.skipped_empty
        );
    }
    save_dataset(&outcome.records, &args.output)?;

    let mut config = BTreeMap::new();
    config.insert("input".to_string(), args.input.display().to_string());
    config.insert("output".to_string(), args.output.display().to_string());
    config.insert("add_subject".to_string(), args.add_subject.to_string());
    if let Some(s) = &subject {
        config.insert("subject".to_string(), s.clone());
    }
    config.insert(
        "skipped_empty".to_string(),
        outcome.skipped_empty.to_string(),
    );
    write_meta(&args.output, "prepare", &config)?;

    println!(
        "prepared {} record(s) -> {}",
        outcome.records.len(),
        args.output.display()
    );
    Ok(())
}
