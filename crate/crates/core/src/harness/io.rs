use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use crate::error::{Error, Result};
use crate::meta::{InnerConfig, MetaState};
use crate::model::MlpSpec;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Where the training task stream stood when the checkpoint was taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_task_index: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub method: Method,
    pub train_dist: String,
    pub lambda_pen: f64,
    /// Meta-iterations completed when this state was reached.
    pub iteration: usize,
    pub spec: MlpSpec,
    pub inner: InnerConfig,
    pub state: MetaState<f64>,
    pub rng: RngState,
    /// Validation metric that selected this checkpoint.
    pub validation_metric: Option<f64>,
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    write_json(path, ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let ckpt: Checkpoint = read_json(path)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported checkpoint version {}", ckpt.version)));
    }
    ckpt.spec.validate()?;
    if ckpt.state.params.layout() != ckpt.spec.layout().as_slice() {
        return Err(format_err(path, "parameter layout does not match the model spec"));
    }
    Ok(ckpt)
}

/// One evaluated cell of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: Method,
    pub train_dist: String,
    pub eval_dist: String,
    pub seed: u64,
    pub lambda_pen: f64,
    pub mean_metric: f64,
    pub ci95_halfwidth: f64,
    pub n_tasks: usize,
    pub wall_time_s: f64,
}

pub const METRICS_COLUMNS: [&str; 9] = [
    "method",
    "train_dist",
    "eval_dist",
    "seed",
    "lambda_pen",
    "mean_metric",
    "ci95_halfwidth",
    "n_tasks",
    "wall_time_s",
];

pub fn metrics_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Format {
        path: "metrics.csv".into(),
        msg: e.to_string(),
    };
    w.write_record(METRICS_COLUMNS).map_err(fail)?;
    for r in records {
        w.serialize(r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Format {
        path: "metrics.csv".into(),
        msg: e.to_string(),
    })
}

pub fn emit_csv(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &metrics_csv(records)?)
}

pub fn emit_json(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    write_json(path, &records)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| format_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != METRICS_COLUMNS {
        return Err(format_err(path, format!("unexpected columns {header:?}")));
    }
    r.deserialize()
        .map(|row| {
            row.map_err(|e| {
                let at = e.position().map(|p| format!(" (byte {})", p.byte())).unwrap_or_default();
                format_err(path, format!("{e}{at}"))
            })
        })
        .collect()
}
