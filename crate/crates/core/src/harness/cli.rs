use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use super::io::{emit_csv, emit_json, load_checkpoint, save_checkpoint, write_json, MetricsRecord};
use super::matrix::{cells, evaluate_checkpoint, run_matrix, score_file_name, ScoreFile};
use super::train::run_train;
use crate::autodiff::{check_grad, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::meta::{grad_variance_penalty, outer_objective, InnerConfig, MlpObjective, Pairing, StepSize};
use crate::model::{forward, init_params, Activation, MlpSpec, OutputKind};
use crate::tasks::{write_tasks, SinusoidConfig, SpuriousClassConfig, TaskDistribution};

#[derive(Debug, Parser)]
#[command(name = "iml", version, about = "Meta-learning with an invariant gradient-variance penalty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run with this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Run this method only (maml, fomaml, metasgd, iml).
    #[arg(long)]
    method: Option<String>,
    /// Penalty weight for iml, replacing the grid.
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of evaluation tasks.
    #[arg(long = "eval-tasks")]
    eval_tasks: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Meta-train and save best-validation checkpoints.
    Train(Common),
    /// Evaluate saved checkpoints on the configured evaluation distributions.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; repeat to evaluate several.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Train and evaluate every (method, lambda, seed, distribution pair).
    Matrix(Common),
    /// Compare analytic gradients with finite differences on random instances.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Exit with status 2 if the max relative error reaches this.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Sample tasks into an episode file.
    GenTasks {
        /// `sinusoid`, `spurious`, or a distribution named in --config.
        #[arg(long)]
        dist: String,
        /// Number of tasks.
        #[arg(long)]
        n: usize,
        /// Episode file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = &c.method {
        cfg.methods = vec![Method::parse(m)?];
    }
    if let Some(l) = c.lambda {
        cfg.lambda_grid = vec![l];
        cfg.outer.lambda_pen = l;
    }
    if let Some(n) = c.eval_tasks {
        cfg.eval_tasks = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(c: &Common, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(c)?;
    let cells = cells(&cfg)?;
    let outcomes: Vec<_> = cells.par_iter().map(|cell| run_train(&cell.train)).collect();
    let dir = &cfg.output_dir;
    let mut log = String::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        let o = outcome?;
        let path = dir.join("checkpoints").join(format!("{}.ckpt", cell.tag()));
        save_checkpoint(&path, &o.best)?;
        log.push_str(&o.render_log());
        let _ = writeln!(
            out,
            "{}: best validation {} at iteration {} -> {}",
            cell.tag(),
            o.best.validation_metric.unwrap_or(f64::NAN),
            o.best.iteration,
            path.display()
        );
    }
    write_text(&dir.join("log.txt"), &log)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn eval(c: &Common, checkpoints: &[PathBuf], out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(c)?;
    let dists = cfg.resolve_distributions()?;
    let steps = cfg.eval_inner().steps;
    let dir = &cfg.output_dir;
    let mut records = Vec::new();
    let mut log = String::new();
    for path in checkpoints {
        let ckpt = load_checkpoint(path)?;
        let paired: Vec<String> = cfg
            .train_groups()
            .into_iter()
            .find(|(t, _)| *t == ckpt.train_dist)
            .map(|(_, e)| e)
            .unwrap_or_else(|| {
                let mut all: Vec<String> = Vec::new();
                for p in &cfg.pairs {
                    if !all.contains(&p.eval_dist) {
                        all.push(p.eval_dist.clone());
                    }
                }
                all
            });
        let seed = c.seed.unwrap_or(ckpt.rng.seed);
        let tag = super::matrix::cell_tag(ckpt.method, ckpt.lambda_pen, seed, &ckpt.train_dist);
        for name in paired {
            let summary = evaluate_checkpoint(&ckpt, steps, &dists[&name], &name, cfg.eval_tasks, seed)?;
            let record = MetricsRecord {
                method: ckpt.method,
                train_dist: ckpt.train_dist.clone(),
                eval_dist: name.clone(),
                seed,
                lambda_pen: ckpt.lambda_pen,
                mean_metric: summary.mean,
                ci95_halfwidth: summary.ci95_halfwidth,
                n_tasks: summary.n_tasks,
                wall_time_s: 0.0,
            };
            let line = format!(
                "{} on {}: {:?} {} +- {} ({} tasks)",
                path.display(),
                name,
                summary.metric,
                summary.mean,
                summary.ci95_halfwidth,
                summary.n_tasks
            );
            let _ = writeln!(out, "{line}");
            log.push_str(&line);
            log.push('\n');
            write_json(
                dir.join("scores").join(score_file_name(&tag, &name)),
                &ScoreFile {
                    method: ckpt.method,
                    train_dist: ckpt.train_dist.clone(),
                    eval_dist: name.clone(),
                    seed,
                    lambda_pen: ckpt.lambda_pen,
                    summary,
                },
            )?;
            records.push(record);
        }
    }
    emit_csv(&records, dir.join("metrics.csv"))?;
    emit_json(&records, dir.join("metrics.json"))?;
    write_text(&dir.join("log.txt"), &log)
}

fn matrix(c: &Common, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(c)?;
    let report = run_matrix(&cfg)?;
    report.write(&cfg.output_dir)?;
    for col in &report.summary.columns {
        let _ = writeln!(out, "{} -> {} ({:?})", col.train_dist, col.eval_dist, col.metric);
        for e in &col.entries {
            let _ = writeln!(
                out,
                "  {:<8} lambda {:<6} {:.4}{}",
                e.method.name(),
                e.lambda_pen,
                e.mean_over_seeds,
                if e.best { "  *" } else { "" }
            );
        }
    }
    for f in &report.failures {
        let _ = writeln!(out, "FAILED {} lambda {} seed {}: {}", f.method, f.lambda_pen, f.seed, f.error);
    }
    Ok(())
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_f64(&[rows, cols], &(0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>())
        .expect("extent matches")
}

/// Random regression, classification and penalized meta instances; returns
/// the largest relative error seen.
fn gradcheck(seed: u64, eps: f64, out: &mut dyn Write) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let note = |name: &str, r: crate::autodiff::GradCheckReport, out: &mut dyn Write| -> f64 {
        let e = if r.non_finite.is_empty() { r.max_rel_err } else { f64::INFINITY };
        let _ = writeln!(out, "{name}: {} coordinates, max rel err {e:e}", r.entries.len());
        e
    };

    let reg = MlpSpec::new(vec![1, 16, 16, 1], Activation::Tanh, OutputKind::Regression)?;
    let (x, y) = (random_tensor(&mut rng, 6, 1), random_tensor(&mut rng, 6, 1));
    let r = check_grad(
        |g, p| {
            let (xn, yn) = (g.constant(x.clone())?, g.constant(y.clone())?);
            let o = forward(&reg, g, p, xn)?;
            g.mse(o, yn)
        },
        &init_params::<f64>(&reg, seed).unflatten(),
        eps,
    )?;
    worst = worst.max(note("mlp mse", r, out));

    let cls = MlpSpec::new(vec![6, 12, 12, 4], Activation::Relu, OutputKind::NWayLogits)?;
    let x = random_tensor(&mut rng, 8, 6);
    let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..4)).collect();
    let r = check_grad(
        |g, p| {
            let xn = g.constant(x.clone())?;
            let o = forward(&cls, g, p, xn)?;
            g.softmax_xent(o, &labels)
        },
        &init_params::<f64>(&cls, seed).unflatten(),
        eps,
    )?;
    worst = worst.max(note("mlp softmax cross-entropy", r, out));

    let small = MlpSpec::new(vec![1, 6, 1], Activation::Tanh, OutputKind::Regression)?;
    let d = TaskDistribution::Sinusoid(SinusoidConfig::default());
    let batch: Vec<_> = (0..3).map(|i| d.sample_indexed(seed, 0, i, "gradcheck")).collect();
    let obj = MlpObjective::<f64>::new(small.clone());
    let inner = InnerConfig::default();
    let r = check_grad(
        |g: &mut Graph<f64>, p: &[NodeId]| {
            let o = outer_objective(g, &obj, p, &StepSize::Uniform(0.01), &batch, &inner, Pairing::Matched)?;
            let pen = grad_variance_penalty(g, &o.per_task_grads)?;
            let pen = g.scale(pen, 0.5)?;
            g.add(o.loss, pen)
        },
        &init_params::<f64>(&small, seed).unflatten(),
        eps,
    )?;
    worst = worst.max(note("meta objective with penalty", r, out));
    Ok(worst)
}

fn gen_tasks(dist: &str, n: usize, path: &Path, seed: u64, config: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let d = match (dist, config) {
        (name, Some(cfg)) => ExperimentConfig::load(cfg)?
            .resolve_distributions()?
            .remove(name)
            .ok_or_else(|| Error::Config(format!("no distribution named `{name}` in the config")))?,
        ("sinusoid", None) => TaskDistribution::Sinusoid(SinusoidConfig::default()),
        ("spurious", None) => TaskDistribution::Spurious(SpuriousClassConfig::default()),
        (other, None) => return Err(Error::Config(format!("unknown distribution `{other}`"))),
    };
    let tasks: Vec<_> = (0..n as u64).map(|i| d.sample_indexed(seed, 0, i, dist)).collect();
    write_tasks(path, &tasks)?;
    let _ = writeln!(out, "wrote {n} tasks to {}", path.display());
    Ok(())
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code: 0 on success, 1 for usage, configuration and IO errors, 2 for
/// numeric failures.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(c) => train(c, out),
        Command::Eval { common, checkpoint } => eval(common, checkpoint, out),
        Command::Matrix(c) => matrix(c, out),
        Command::Gradcheck { seed, eps, tol } => match gradcheck(*seed, *eps, out) {
            Ok(worst) => {
                let _ = writeln!(out, "max rel err {worst:e}");
                if worst < *tol {
                    Ok(())
                } else {
                    let _ = writeln!(err, "gradient check failed: {worst:e} >= {tol:e}");
                    return 2;
                }
            }
            Err(e) => Err(e),
        },
        Command::GenTasks {
            dist,
            n,
            out: path,
            seed,
            config,
        } => gen_tasks(dist, *n, path, *seed, config.as_deref(), out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numeric() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
