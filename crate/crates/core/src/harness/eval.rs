use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::meta::{adapt, InnerConfig, MetaState, MlpObjective, StepSize};
use crate::model::MlpSpec;
use crate::tasks::{Targets, Task, TaskDistribution, TaskKind};

/// Task stream used for evaluation draws.
pub const EVAL_STREAM: u64 = 3;

/// Predictions on a task's query set.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPredictions {
    /// Before adaptation, when the predictor has such a notion.
    pub before: Option<Targets>,
    pub after: Targets,
}

/// Anything that can adapt to a support set and label a query set.
pub trait Predictor: Sync {
    fn predict(&self, task: &Task) -> Result<QueryPredictions>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Fraction of query labels predicted correctly; higher is better.
    Accuracy,
    /// Mean squared query error; lower is better.
    Mse,
}

impl Metric {
    pub fn for_kind(kind: TaskKind) -> Metric {
        match kind {
            TaskKind::Classification => Metric::Accuracy,
            TaskKind::Regression => Metric::Mse,
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Accuracy
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

/// Scores `pred` against `truth` with the metric matching their type.
pub fn score(pred: &Targets, truth: &Targets) -> Result<f64> {
    match (pred, truth) {
        (Targets::Labels(p), Targets::Labels(t)) if p.len() == t.len() && !t.is_empty() => {
            let hits = p.iter().zip(t).filter(|(a, b)| a == b).count();
            Ok(hits as f64 / t.len() as f64)
        }
        (Targets::Values(p), Targets::Values(t)) if p.shape() == t.shape() && !t.is_empty() => {
            let sse: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(sse / t.len() as f64)
        }
        _ => Err(Error::Config(format!(
            "predictions ({} rows) do not match targets ({} rows)",
            pred.rows(),
            truth.rows()
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub index: u64,
    /// Metric before adaptation, when available.
    pub before: Option<f64>,
    pub after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metric: Metric,
    pub mean: f64,
    pub ci95_halfwidth: f64,
    pub n_tasks: usize,
    /// Mean of the pre-adaptation metric, when every task has one.
    pub mean_before: Option<f64>,
    pub scores: Vec<TaskScore>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 divisor); 0 for fewer than two values.
/// Deviations are taken after shifting by the first value, so identical
/// scores give exactly 0.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let shifted: Vec<f64> = xs.iter().map(|x| x - xs[0]).collect();
    let m = mean(&shifted);
    let ss: f64 = shifted.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Normal-approximation 95% half-width `1.96 * sd / sqrt(n)`.
pub fn ci95_halfwidth(xs: &[f64]) -> f64 {
    1.96 * sample_sd(xs) / (xs.len() as f64).sqrt()
}

/// Scores `predictor` on `n_tasks` tasks `0..n_tasks` of `stream` under
/// `base_seed`. Tasks run in parallel; results are gathered in index order.
pub fn evaluate<P: Predictor>(
    predictor: &P,
    dist: &TaskDistribution,
    origin: &str,
    n_tasks: usize,
    base_seed: u64,
    stream: u64,
) -> Result<EvalSummary> {
    if n_tasks < 2 {
        return Err(Error::Config(format!("evaluation needs at least 2 tasks, got {n_tasks}")));
    }
    let scores = (0..n_tasks as u64)
        .into_par_iter()
        .map(|index| {
            let task = dist.sample_indexed(base_seed, stream, index, origin);
            let pred = predictor.predict(&task)?;
            let before = pred.before.as_ref().map(|b| score(b, &task.query_y)).transpose()?;
            Ok(TaskScore {
                index,
                before,
                after: score(&pred.after, &task.query_y)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(Metric::for_kind(dist.kind()), scores))
}

pub fn summarize(metric: Metric, scores: Vec<TaskScore>) -> EvalSummary {
    let after: Vec<f64> = scores.iter().map(|s| s.after).collect();
    let before: Option<Vec<f64>> = scores.iter().map(|s| s.before).collect();
    EvalSummary {
        metric,
        mean: mean(&after),
        ci95_halfwidth: ci95_halfwidth(&after),
        n_tasks: scores.len(),
        mean_before: before.map(|b| mean(&b)),
        scores,
    }
}

fn to_targets(kind: TaskKind, out: &Tensor<f64>) -> Targets {
    match kind {
        TaskKind::Regression => Targets::Values(out.clone()),
        TaskKind::Classification => {
            let cols = out.cols();
            let labels = out
                .data()
                .chunks(cols)
                .map(|row| {
                    // first maximum wins
                    let mut best = 0;
                    for (j, v) in row.iter().enumerate() {
                        if *v > row[best] {
                            best = j;
                        }
                    }
                    best as u32
                })
                .collect();
            Targets::Labels(labels)
        }
    }
}

/// A meta-learned initialization that adapts with the inner loop.
pub struct MetaPredictor {
    pub objective: MlpObjective<f64>,
    pub state: MetaState<f64>,
    pub inner: InnerConfig,
}

impl MetaPredictor {
    pub fn new(spec: MlpSpec, state: MetaState<f64>, inner: InnerConfig) -> Self {
        MetaPredictor {
            objective: MlpObjective::new(spec),
            state,
            inner,
        }
    }
}

impl Predictor for MetaPredictor {
    fn predict(&self, task: &Task) -> Result<QueryPredictions> {
        let mut g = Graph::new();
        let theta = self.state.params.to_constants(&mut g)?;
        let rate = match &self.state.alpha {
            Some(a) => StepSize::PerParam(a.to_constants(&mut g)?),
            None => match self.inner.alpha {
                crate::meta::InnerRate::Uniform(a) => StepSize::Uniform(a),
                crate::meta::InnerRate::PerParam(_) => {
                    return Err(Error::Config("per-parameter rate missing from the state".into()))
                }
            },
        };
        // Evaluation only needs values, so the inner loop runs first-order.
        let inner = InnerConfig {
            first_order: true,
            ..self.inner.clone()
        };
        let before = self.objective.predict(&mut g, &theta, &task.query_x)?;
        let adapted = adapt(&mut g, &self.objective, &theta, &rate, task, &inner)?;
        let after = self.objective.predict(&mut g, &adapted.adapted, &task.query_x)?;
        Ok(QueryPredictions {
            before: Some(to_targets(task.kind, g.eval(before)?)),
            after: to_targets(task.kind, g.eval(after)?),
        })
    }
}
