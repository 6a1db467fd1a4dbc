use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::eval::{evaluate, EvalSummary, MetaPredictor, Metric, EVAL_STREAM};
use super::io::{emit_csv, emit_json, save_checkpoint, write_json, Checkpoint, MetricsRecord};
use super::train::{run_train, TrainOutcome, TrainSpec};
use crate::error::{Error, Result};
use crate::meta::InnerConfig;
use crate::tasks::TaskDistribution;

/// One training run of the matrix and the distributions it is scored on.
#[derive(Clone, Debug)]
pub struct Cell {
    pub train: TrainSpec,
    pub evals: Vec<(String, TaskDistribution)>,
}

impl Cell {
    /// File-name stem shared by this cell's outputs.
    pub fn tag(&self) -> String {
        cell_tag(self.train.method, self.train.lambda_pen, self.train.seed, &self.train.train_name)
    }
}

pub fn cell_tag(method: Method, lambda_pen: f64, seed: u64, train: &str) -> String {
    sanitize(&format!("{method}_lambda{lambda_pen}_seed{seed}_{train}"))
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

/// Every (method, lambda, seed, training distribution) run the config asks
/// for, in canonical order.
pub fn cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    cfg.validate()?;
    let dists = cfg.resolve_distributions()?;
    let groups = cfg.train_groups();
    let mut out = Vec::new();
    for method in cfg.methods() {
        for lambda_pen in cfg.lambdas(method) {
            for &seed in &cfg.seeds {
                for (train_name, evals) in &groups {
                    let train = dists[train_name].clone();
                    out.push(Cell {
                        train: TrainSpec {
                            method,
                            lambda_pen,
                            spec: cfg.model_for(&train),
                            train_name: train_name.clone(),
                            train,
                            inner: cfg.inner.clone(),
                            outer: cfg.outer.clone(),
                            eval_steps: cfg.eval_inner().steps,
                            iterations: cfg.train_iterations,
                            seed,
                            validation_every: cfg.validation_every,
                            validation_tasks: cfg.validation_tasks,
                        },
                        evals: evals.iter().map(|e| (e.clone(), dists[e].clone())).collect(),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Scores a checkpoint on `n_tasks` evaluation tasks of `dist`, drawn from
/// the evaluation stream of `seed`.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    eval_steps: usize,
    dist: &TaskDistribution,
    dist_name: &str,
    n_tasks: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let inner = InnerConfig {
        steps: eval_steps,
        ..ckpt.inner.clone()
    };
    let predictor = MetaPredictor::new(ckpt.spec.clone(), ckpt.state.clone(), inner);
    evaluate(&predictor, dist, dist_name, n_tasks, seed, EVAL_STREAM)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellEval {
    pub eval_dist: String,
    pub summary: EvalSummary,
    pub record: MetricsRecord,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub tag: String,
    pub train: TrainOutcome,
    pub evals: Vec<CellEval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub lambda_pen: f64,
    pub seed: u64,
    pub train_dist: String,
    pub error: String,
}

pub fn run_cell(cell: &Cell, eval_tasks: usize, timing: bool) -> Result<CellResult> {
    let start = Instant::now();
    let train = run_train(&cell.train)?;
    let mut evals = Vec::with_capacity(cell.evals.len());
    for (name, dist) in &cell.evals {
        let summary = evaluate_checkpoint(&train.best, cell.train.eval_steps, dist, name, eval_tasks, cell.train.seed)?;
        let t = &cell.train;
        let record = MetricsRecord {
            method: t.method,
            train_dist: t.train_name.clone(),
            eval_dist: name.clone(),
            seed: t.seed,
            lambda_pen: t.lambda_pen,
            mean_metric: summary.mean,
            ci95_halfwidth: summary.ci95_halfwidth,
            n_tasks: summary.n_tasks,
            wall_time_s: 0.0,
        };
        evals.push(CellEval {
            eval_dist: name.clone(),
            summary,
            record,
        });
    }
    if timing {
        let secs = start.elapsed().as_secs_f64();
        for e in &mut evals {
            e.record.wall_time_s = secs;
        }
    }
    Ok(CellResult {
        tag: cell.tag(),
        train,
        evals,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnEntry {
    pub method: Method,
    pub lambda_pen: f64,
    pub mean_over_seeds: f64,
    pub n_seeds: usize,
    /// Best entry of its column; ties are all flagged.
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub train_dist: String,
    pub eval_dist: String,
    pub metric: Metric,
    pub entries: Vec<ColumnEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub train_dist: String,
    pub eval_dist: String,
    pub lambda_pen: f64,
    pub mean_over_seeds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub columns: Vec<ColumnSummary>,
    /// Penalized runs by penalty weight, for every column.
    pub lambda_sweep: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

impl MatrixSummary {
    pub fn column(&self, train: &str, eval: &str) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.train_dist == train && c.eval_dist == eval)
    }
}

#[derive(Clone, Debug)]
pub struct MatrixReport {
    pub results: Vec<CellResult>,
    pub records: Vec<MetricsRecord>,
    pub failures: Vec<CellFailure>,
    pub summary: MatrixSummary,
}

/// Groups records by column, then by (method, lambda) in first-appearance
/// order, averaging over seeds.
pub fn summarize_records(records: &[MetricsRecord], metrics: &BTreeMap<String, Metric>, failures: Vec<CellFailure>) -> MatrixSummary {
    let mut columns: Vec<ColumnSummary> = Vec::new();
    let mut sums: Vec<Vec<(f64, usize)>> = Vec::new();
    for r in records {
        let ci = match columns.iter().position(|c| c.train_dist == r.train_dist && c.eval_dist == r.eval_dist) {
            Some(i) => i,
            None => {
                columns.push(ColumnSummary {
                    train_dist: r.train_dist.clone(),
                    eval_dist: r.eval_dist.clone(),
                    metric: metrics.get(&r.eval_dist).copied().unwrap_or(Metric::Accuracy),
                    entries: Vec::new(),
                });
                sums.push(Vec::new());
                columns.len() - 1
            }
        };
        let col = &mut columns[ci];
        let ei = match col
            .entries
            .iter()
            .position(|e| e.method == r.method && e.lambda_pen.to_bits() == r.lambda_pen.to_bits())
        {
            Some(i) => i,
            None => {
                col.entries.push(ColumnEntry {
                    method: r.method,
                    lambda_pen: r.lambda_pen,
                    mean_over_seeds: 0.0,
                    n_seeds: 0,
                    best: false,
                });
                sums[ci].push((0.0, 0));
                col.entries.len() - 1
            }
        };
        sums[ci][ei].0 += r.mean_metric;
        sums[ci][ei].1 += 1;
    }
    let mut lambda_sweep = Vec::new();
    for (col, s) in columns.iter_mut().zip(&sums) {
        for (e, &(total, n)) in col.entries.iter_mut().zip(s) {
            e.mean_over_seeds = total / n as f64;
            e.n_seeds = n;
        }
        let best = col
            .entries
            .iter()
            .map(|e| e.mean_over_seeds)
            .reduce(|a, b| if col.metric.better(b, a) { b } else { a });
        for e in &mut col.entries {
            e.best = Some(e.mean_over_seeds) == best;
            if e.method == Method::Iml {
                lambda_sweep.push(SweepRow {
                    train_dist: col.train_dist.clone(),
                    eval_dist: col.eval_dist.clone(),
                    lambda_pen: e.lambda_pen,
                    mean_over_seeds: e.mean_over_seeds,
                });
            }
        }
    }
    MatrixSummary {
        columns,
        lambda_sweep,
        failures,
    }
}

/// Trains every cell (in parallel) and evaluates it on its paired
/// distributions. A failing cell is recorded and the rest carry on.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<MatrixReport> {
    let cells = cells(cfg)?;
    let outcomes: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|c| run_cell(c, cfg.eval_tasks, cfg.timing))
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(CellFailure {
                method: cell.train.method,
                lambda_pen: cell.train.lambda_pen,
                seed: cell.train.seed,
                train_dist: cell.train.train_name.clone(),
                error: e.to_string(),
            }),
        }
    }
    let records: Vec<MetricsRecord> = results.iter().flat_map(|r| r.evals.iter().map(|e| e.record.clone())).collect();
    let metrics: BTreeMap<String, Metric> = cfg
        .resolve_distributions()?
        .into_iter()
        .map(|(k, d)| (k, Metric::for_kind(d.kind())))
        .collect();
    let summary = summarize_records(&records, &metrics, failures.clone());
    Ok(MatrixReport {
        results,
        records,
        failures,
        summary,
    })
}

/// Per-task scores as persisted under `scores/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub method: Method,
    pub train_dist: String,
    pub eval_dist: String,
    pub seed: u64,
    pub lambda_pen: f64,
    pub summary: EvalSummary,
}

pub fn score_file_name(tag: &str, eval_dist: &str) -> String {
    format!("{tag}__{}.json", sanitize(eval_dist))
}

impl MatrixReport {
    /// Writes metrics.csv, metrics.json, summary.json, scores/,
    /// checkpoints/ and log.txt under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        emit_csv(&self.records, dir.join("metrics.csv"))?;
        emit_json(&self.records, dir.join("metrics.json"))?;
        write_json(dir.join("summary.json"), &self.summary)?;
        let mut log = String::new();
        for r in &self.results {
            save_checkpoint(dir.join("checkpoints").join(format!("{}.ckpt", r.tag)), &r.train.best)?;
            for e in &r.evals {
                let file = ScoreFile {
                    method: e.record.method,
                    train_dist: e.record.train_dist.clone(),
                    eval_dist: e.eval_dist.clone(),
                    seed: e.record.seed,
                    lambda_pen: e.record.lambda_pen,
                    summary: e.summary.clone(),
                };
                write_json(dir.join("scores").join(score_file_name(&r.tag, &e.eval_dist)), &file)?;
            }
            log.push_str(&r.train.render_log());
            for e in &r.evals {
                log.push_str(&format!(
                    "eval {}: mean {} ci95 {} over {} tasks\n",
                    e.eval_dist, e.summary.mean, e.summary.ci95_halfwidth, e.summary.n_tasks
                ));
            }
        }
        for f in &self.failures {
            log.push_str(&format!(
                "# FAILED {} lambda={} seed={} train={}: {}\n",
                f.method, f.lambda_pen, f.seed, f.train_dist, f.error
            ));
        }
        std::fs::write(dir.join("log.txt"), log).map_err(|e| Error::io(dir.join("log.txt"), e))
    }
}
