use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::eval::{evaluate, Metric, MetaPredictor};
use super::io::{Checkpoint, RngState, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::meta::{iml_step, maml_step, meta_sgd_update, InnerConfig, MetaState, MlpObjective, OuterConfig};
use crate::model::{init_params, MlpSpec};
use crate::tasks::TaskDistribution;

pub const TRAIN_STREAM: u64 = 1;
pub const VALIDATION_STREAM: u64 = 2;

/// One training run: a method at one penalty weight and seed on one
/// training distribution.
#[derive(Clone, Debug)]
pub struct TrainSpec {
    pub method: Method,
    pub lambda_pen: f64,
    pub spec: MlpSpec,
    pub train_name: String,
    pub train: TaskDistribution,
    /// Shared settings; [`Method::configure`] is applied on top.
    pub inner: InnerConfig,
    pub outer: OuterConfig,
    /// Inner steps used when scoring validation tasks.
    pub eval_steps: usize,
    pub iterations: usize,
    pub seed: u64,
    pub validation_every: usize,
    pub validation_tasks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub loss: f64,
    pub penalty: Option<f64>,
    pub grad_norm: f64,
    /// Learned inner rates at or below zero after the step (Meta-SGD).
    pub nonpositive_alpha: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    /// Meta-iterations completed.
    pub iteration: usize,
    pub metric: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Best-validation state.
    pub best: Checkpoint,
    /// State after the last iteration.
    pub last: Checkpoint,
    pub steps: Vec<TrainLogEntry>,
    pub validations: Vec<ValidationEntry>,
}

impl TrainOutcome {
    /// Plain-text training log. Contains no timings, so it is identical
    /// across reruns.
    pub fn render_log(&self) -> String {
        let b = &self.best;
        let mut out = format!(
            "# {} lambda={} seed={} train={}\n",
            b.method, b.lambda_pen, b.rng.seed, b.train_dist
        );
        for s in &self.steps {
            let _ = write!(out, "iter {} loss {} grad_norm {}", s.iteration, s.loss, s.grad_norm);
            if let Some(p) = s.penalty {
                let _ = write!(out, " penalty {p}");
            }
            if s.nonpositive_alpha > 0 {
                let _ = write!(out, " nonpositive_alpha {}", s.nonpositive_alpha);
            }
            out.push('\n');
        }
        for v in &self.validations {
            let _ = writeln!(
                out,
                "validation after {} iterations: {}{}",
                v.iteration,
                v.metric,
                if v.improved { " (best)" } else { "" }
            );
        }
        let _ = writeln!(out, "selected iteration {}", b.iteration);
        out
    }
}

impl TrainSpec {
    pub fn method_configs(&self) -> (InnerConfig, OuterConfig) {
        self.method.configure(&self.inner, &self.outer, self.lambda_pen)
    }

    fn checkpoint(&self, inner: &InnerConfig, state: &MetaState<f64>, iteration: usize, metric: Option<f64>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            method: self.method,
            train_dist: self.train_name.clone(),
            lambda_pen: self.lambda_pen,
            iteration,
            spec: self.spec.clone(),
            inner: inner.clone(),
            state: state.clone(),
            rng: RngState {
                seed: self.seed,
                next_task_index: (iteration * self.outer.meta_batch) as u64,
            },
            validation_metric: metric,
        }
    }
}

fn validation_metric(spec: &TrainSpec, inner: &InnerConfig, state: &MetaState<f64>) -> Result<f64> {
    let predictor = MetaPredictor::new(
        spec.spec.clone(),
        state.clone(),
        InnerConfig {
            steps: spec.eval_steps,
            ..inner.clone()
        },
    );
    let s = evaluate(
        &predictor,
        &spec.train,
        &spec.train_name,
        spec.validation_tasks,
        spec.seed,
        VALIDATION_STREAM,
    )?;
    Ok(s.mean)
}

/// Meta-trains from `init_params(spec, seed)`, validating on held-out tasks
/// before the first step, every `validation_every` iterations and after the
/// last one, and keeps the best-validation state.
pub fn run_train(spec: &TrainSpec) -> Result<TrainOutcome> {
    if spec.validation_every == 0 {
        return Err(Error::Config("validation_every must be positive".into()));
    }
    let (inner, outer) = spec.method_configs();
    outer.validate()?;
    let metric = Metric::for_kind(spec.train.kind());
    let objective = MlpObjective::<f64>::new(spec.spec.clone());
    let mut state = MetaState::new(init_params(&spec.spec, spec.seed), &inner, &outer)?;

    let v0 = validation_metric(spec, &inner, &state).map_err(|e| Error::Training {
        iteration: 0,
        task_seed: spec.seed,
        source: Box::new(e),
    })?;
    let mut best = spec.checkpoint(&inner, &state, 0, Some(v0));
    let mut validations = vec![ValidationEntry {
        iteration: 0,
        metric: v0,
        improved: true,
    }];
    let mut steps = Vec::with_capacity(spec.iterations);

    let mb = outer.meta_batch as u64;
    for it in 0..spec.iterations {
        let first = it as u64 * mb;
        let batch: Vec<_> = (first..first + mb)
            .map(|i| spec.train.sample_indexed(spec.seed, TRAIN_STREAM, i, &spec.train_name))
            .collect();
        let step = match spec.method {
            Method::Metasgd => meta_sgd_update(&objective, &state, &batch, &inner, &outer),
            Method::Iml => iml_step(&objective, &state, &batch, &inner, &outer),
            Method::Maml | Method::Fomaml => maml_step(&objective, &state, &batch, &inner, &outer),
        };
        let (next, report) = step.map_err(|e| Error::Training {
            iteration: it,
            task_seed: spec.seed.wrapping_add(first),
            source: Box::new(e),
        })?;
        state = next;
        steps.push(TrainLogEntry {
            iteration: it,
            loss: report.loss,
            penalty: report.penalty,
            grad_norm: report.grad_norm,
            nonpositive_alpha: report.nonpositive_alpha,
        });

        let done = it + 1;
        if done % spec.validation_every == 0 || done == spec.iterations {
            let v = validation_metric(spec, &inner, &state).map_err(|e| Error::Training {
                iteration: it,
                task_seed: spec.seed,
                source: Box::new(e),
            })?;
            let improved = metric.better(v, best.validation_metric.expect("set at start"));
            if improved {
                best = spec.checkpoint(&inner, &state, done, Some(v));
            }
            validations.push(ValidationEntry {
                iteration: done,
                metric: v,
                improved,
            });
        }
    }
    let last_metric = validations.last().map(|v| v.metric);
    Ok(TrainOutcome {
        last: spec.checkpoint(&inner, &state, spec.iterations, last_metric),
        best,
        steps,
        validations,
    })
}
