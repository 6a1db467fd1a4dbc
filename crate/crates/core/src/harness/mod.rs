//! Experiment harness: configs, meta-training with validation-based
//! selection, episodic evaluation with 95% intervals, sweeps over methods,
//! penalty weights, seeds and distribution pairs, and the `iml` CLI.

pub mod cli;
mod config;
mod eval;
mod io;
mod matrix;
mod train;

pub use config::{DistEntry, DistributionPair, ExperimentConfig, Method, ShiftedDist};
pub use eval::{
    ci95_halfwidth, evaluate, mean, sample_sd, score, summarize, EvalSummary, MetaPredictor, Metric, Predictor,
    QueryPredictions, TaskScore, EVAL_STREAM,
};
pub use io::{
    emit_csv, emit_json, load_checkpoint, metrics_csv, read_csv, read_json, save_checkpoint, write_json, Checkpoint,
    MetricsRecord, RngState, CHECKPOINT_VERSION, METRICS_COLUMNS,
};
pub use matrix::{
    cell_tag, cells, evaluate_checkpoint, run_cell, run_matrix, score_file_name, summarize_records, Cell, CellEval,
    CellFailure, CellResult, ColumnEntry, ColumnSummary, MatrixReport, MatrixSummary, ScoreFile, SweepRow,
};
pub use train::{run_train, TrainLogEntry, TrainOutcome, TrainSpec, ValidationEntry, TRAIN_STREAM, VALIDATION_STREAM};
