use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::{CliError, ModelConfig};
use crate::ops::{Experiment, Output, Table, Warning};

pub const SCHEMA: &str = "centerlab.run-report/1";

/// Echo of the inputs that determine the output. Worker count and output path are
/// left out so reports compare byte-for-byte across them.
#[derive(Serialize)]
struct ConfigEcho<'a> {
    model: &'a ModelConfig,
    experiment: &'a Experiment,
    execution: ExecutionEcho,
}

#[derive(Serialize)]
struct ExecutionEcho {
    seed: u64,
}

#[derive(Serialize)]
struct RunReport<'a> {
    schema: &'static str,
    operation: &'a str,
    config: ConfigEcho<'a>,
    warnings: Vec<Warning>,
    /// CSV written next to the report, if any.
    table: Option<String>,
    result: Value,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_table(path: &Path, t: &Table) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(&t.header).map_err(|e| io_err(path, e))?;
    for r in &t.rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes `<op>.json` and, for data series, `<op>.csv` into `dir`.
pub fn write(
    dir: &Path,
    experiment: &Experiment,
    model: &ModelConfig,
    seed: u64,
    output: Output,
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let op = experiment.name();
    let mut written = Vec::new();
    let table = match &output.table {
        Some(t) => {
            let name = format!("{op}.csv");
            let path = dir.join(&name);
            write_table(&path, t)?;
            written.push(path);
            Some(name)
        }
        None => None,
    };
    let report = RunReport {
        schema: SCHEMA,
        operation: op,
        config: ConfigEcho { model, experiment, execution: ExecutionEcho { seed } },
        warnings: output.warnings,
        table,
        result: output.result,
    };
    let path = dir.join(format!("{op}.json"));
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    written.push(path);
    Ok(written)
}
