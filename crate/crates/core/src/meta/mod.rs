//! Bi-level meta-optimizers.
//!
//! Inner loop: `theta' = theta - alpha * grad L_support(theta)`, repeated
//! `steps` times, kept differentiable in `theta` unless `first_order`.
//! Outer loop: descend `sum_i L_query_i(theta'_i)`, optionally plus
//! `lambda_pen * trace(Var_i[grad_theta L_query_i(theta'_i)])`, the
//! across-task variance of per-task outer gradients. With `lambda_pen = 0`
//! the update is MAML; with a learned per-parameter `alpha` it is Meta-SGD.

mod config;
mod objective;
mod optim;

use serde::{Deserialize, Serialize};

pub use config::{AdamConfig, InnerConfig, InnerRate, OptimizerKind, OuterConfig, Pairing, VarianceGrad};
pub use objective::{MlpObjective, Objective};
pub use optim::OptimizerState;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::scalar::Scalar;

/// Inner-loop step size as it appears in a graph.
#[derive(Clone, Debug)]
pub enum StepSize<T> {
    Uniform(T),
    /// One node per parameter tensor, same shapes as the parameters.
    PerParam(Vec<NodeId>),
}

#[derive(Clone, Debug)]
pub struct AdaptResult {
    /// Adapted parameters, one node per parameter tensor.
    pub adapted: Vec<NodeId>,
    /// Support loss before each inner step.
    pub inner_losses: Vec<f64>,
}

/// Runs `cfg.steps` inner gradient steps from `theta` on `task`'s support set.
///
/// The step size is not validated here, so `alpha = 0` can be used to check
/// that adaptation is then the identity.
pub fn adapt<T, O>(
    graph: &mut Graph<T>,
    objective: &O,
    theta: &[NodeId],
    rate: &StepSize<T>,
    task: &O::Task,
    cfg: &InnerConfig,
) -> Result<AdaptResult>
where
    T: Scalar,
    O: Objective<T>,
{
    if let StepSize::PerParam(r) = rate {
        if r.len() != theta.len() {
            return Err(Error::Layout(format!("{} step sizes for {} parameter tensors", r.len(), theta.len())));
        }
    }
    let mut params = theta.to_vec();
    let mut inner_losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let loss = objective.support_loss(graph, &params, task)?;
        inner_losses.push(graph.eval_scalar(loss)?.as_f64());
        let grads = graph.grad(loss, &params)?;
        let mut next = Vec::with_capacity(params.len());
        for (k, (&p, &gk)) in params.iter().zip(&grads).enumerate() {
            let gk = if cfg.first_order { graph.stop_grad(gk)? } else { gk };
            let step = match rate {
                StepSize::Uniform(a) => graph.scale(gk, *a)?,
                StepSize::PerParam(r) => graph.mul(r[k], gk)?,
            };
            next.push(graph.sub(p, step)?);
        }
        params = next;
    }
    Ok(AdaptResult {
        adapted: params,
        inner_losses,
    })
}

/// Query loss of adapted parameters.
pub fn task_query_loss<T, O>(graph: &mut Graph<T>, objective: &O, adapted: &AdaptResult, task: &O::Task) -> Result<NodeId>
where
    T: Scalar,
    O: Objective<T>,
{
    objective.query_loss(graph, &adapted.adapted, task)
}

#[derive(Clone, Debug)]
pub struct OuterObjective {
    /// Sum of all query-loss terms.
    pub loss: NodeId,
    /// Matched: one term per task. Cross: `terms[i * n + j]` scores task
    /// i's adapted parameters on task j's query set.
    pub terms: Vec<NodeId>,
    /// Gradient of each term with respect to `theta`, one node per
    /// parameter tensor. Empty when not requested.
    pub per_task_grads: Vec<Vec<NodeId>>,
    pub adaptations: Vec<AdaptResult>,
}

/// Builds the outer objective and its per-term gradients over `batch`.
pub fn outer_objective<T, O>(
    graph: &mut Graph<T>,
    objective: &O,
    theta: &[NodeId],
    rate: &StepSize<T>,
    batch: &[O::Task],
    inner: &InnerConfig,
    pairing: Pairing,
) -> Result<OuterObjective>
where
    T: Scalar,
    O: Objective<T>,
{
    build_outer(graph, objective, theta, rate, batch, inner, pairing, true)
}

#[allow(clippy::too_many_arguments)]
fn build_outer<T, O>(
    graph: &mut Graph<T>,
    objective: &O,
    theta: &[NodeId],
    rate: &StepSize<T>,
    batch: &[O::Task],
    inner: &InnerConfig,
    pairing: Pairing,
    with_grads: bool,
) -> Result<OuterObjective>
where
    T: Scalar,
    O: Objective<T>,
{
    if batch.is_empty() {
        return Err(Error::Config("meta-batch is empty".into()));
    }
    if pairing == Pairing::Cross {
        objective.check_cross_pairing(batch)?;
    }
    let adaptations = batch
        .iter()
        .map(|task| adapt(graph, objective, theta, rate, task, inner))
        .collect::<Result<Vec<_>>>()?;

    let mut terms = Vec::new();
    for (i, a) in adaptations.iter().enumerate() {
        match pairing {
            Pairing::Matched => terms.push(task_query_loss(graph, objective, a, &batch[i])?),
            Pairing::Cross => {
                for task in batch {
                    terms.push(task_query_loss(graph, objective, a, task)?);
                }
            }
        }
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = graph.add(loss, t)?;
    }
    let per_task_grads = if with_grads {
        terms.iter().map(|&t| graph.grad(t, theta)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(OuterObjective {
        loss,
        terms,
        per_task_grads,
        adaptations,
    })
}

/// `sum_p (1/M) sum_m (g_m[p] - mean_m g[p])^2`: the trace of the population
/// covariance of `M` gradient vectors, each given as one node per parameter
/// tensor.
pub fn grad_variance_penalty<T: Scalar>(graph: &mut Graph<T>, grads: &[Vec<NodeId>]) -> Result<NodeId> {
    let Some(first) = grads.first() else {
        return Err(Error::shape("grad_variance_penalty", &[0], &[1]));
    };
    for g in grads {
        if g.len() != first.len() {
            return Err(Error::shape("grad_variance_penalty", &[first.len()], &[g.len()]));
        }
        for (&a, &b) in first.iter().zip(g) {
            if graph.shape(a)? != graph.shape(b)? {
                let (sa, sb) = (graph.shape(a)?.to_vec(), graph.shape(b)?.to_vec());
                return Err(Error::shape("grad_variance_penalty", &sa, &sb));
            }
        }
    }
    let inv_m = T::one() / T::of_usize(grads.len());
    let mut total: Option<NodeId> = None;
    for p in 0..first.len() {
        let mut acc = grads[0][p];
        for g in &grads[1..] {
            acc = graph.add(acc, g[p])?;
        }
        let mean = graph.scale(acc, inv_m)?;
        for g in grads {
            let d = graph.sub(g[p], mean)?;
            let sq = graph.square(d)?;
            let s = graph.sum(sq)?;
            total = Some(match total {
                Some(t) => graph.add(t, s)?,
                None => s,
            });
        }
    }
    let total = match total {
        Some(t) => t,
        None => graph.scalar_constant(T::zero())?,
    };
    graph.scale(total, inv_m)
}

/// Everything the outer loop owns between steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaState<T> {
    pub params: ParamVector<T>,
    /// Per-parameter inner rate, when the configuration has one.
    pub alpha: Option<ParamVector<T>>,
    pub optimizer: OptimizerState<T>,
}

impl<T: Scalar> MetaState<T> {
    pub fn new(params: ParamVector<T>, inner: &InnerConfig, outer: &OuterConfig) -> Result<Self> {
        inner.validate(params.len())?;
        let layout = params.layout().to_vec();
        let alpha = match (&inner.alpha, inner.learn_alpha) {
            (InnerRate::PerParam(v), _) => Some(ParamVector::new(v.iter().map(|&a| T::of(a)).collect(), layout)?),
            (InnerRate::Uniform(a), true) => Some(ParamVector::filled(layout, T::of(*a))),
            (InnerRate::Uniform(_), false) => None,
        };
        let mut len = params.len();
        if inner.learn_alpha {
            len += params.len();
        }
        Ok(MetaState {
            params,
            alpha,
            optimizer: OptimizerState::new(outer.optimizer, len),
        })
    }

    /// Adds the parameters as leaves and returns them with the step size.
    /// The second list holds the rate leaves when `learn_alpha` is set.
    pub fn to_graph(&self, graph: &mut Graph<T>, inner: &InnerConfig) -> Result<(Vec<NodeId>, StepSize<T>, Vec<NodeId>)> {
        let theta = self.params.to_leaves(graph)?;
        let (rate, learned) = match (&self.alpha, &inner.alpha) {
            (Some(a), _) if inner.learn_alpha => {
                let nodes = a.to_leaves(graph)?;
                (StepSize::PerParam(nodes.clone()), nodes)
            }
            (Some(a), _) => (StepSize::PerParam(a.to_constants(graph)?), Vec::new()),
            (None, InnerRate::Uniform(a)) => (StepSize::Uniform(T::of(*a)), Vec::new()),
            (None, InnerRate::PerParam(_)) => {
                return Err(Error::Config("state has no per-parameter rate for a per-parameter config".into()))
            }
        };
        Ok((theta, rate, learned))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Outer query loss before the update.
    pub loss: f64,
    /// Gradient-variance penalty, when it was part of the objective.
    pub penalty: Option<f64>,
    pub grad_norm: f64,
    /// Learned inner rates at or below zero after the update.
    pub nonpositive_alpha: usize,
}

/// One outer update: the general form behind [`maml_step`], [`iml_step`]
/// and [`meta_sgd_update`]. Returns the new state; `state` is untouched.
///
/// The penalty graph is only built when `lambda_pen > 0`.
pub fn outer_step<T, O>(
    objective: &O,
    state: &MetaState<T>,
    batch: &[O::Task],
    inner: &InnerConfig,
    outer: &OuterConfig,
) -> Result<(MetaState<T>, StepReport)>
where
    T: Scalar,
    O: Objective<T>,
{
    let mut graph = Graph::new();
    let (theta, rate, alpha_leaves) = state.to_graph(&mut graph, inner)?;
    let penalized = outer.lambda_pen > 0.0;
    let obj = build_outer(&mut graph, objective, &theta, &rate, batch, inner, outer.pairing, penalized)?;

    let mut total = obj.loss;
    let mut penalty = None;
    if penalized {
        let grads = match outer.variance_grad {
            VarianceGrad::Exact => obj.per_task_grads.clone(),
            VarianceGrad::StopGrad => obj
                .per_task_grads
                .iter()
                .map(|g| g.iter().map(|&n| graph.stop_grad(n)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?,
        };
        let pen = grad_variance_penalty(&mut graph, &grads)?;
        let weighted = graph.scale(pen, T::of(outer.lambda_pen))?;
        total = graph.add(total, weighted)?;
        penalty = Some(pen);
    }

    let mut wrt = theta;
    wrt.extend_from_slice(&alpha_leaves);
    let grads = graph.grad(total, &wrt)?;

    let loss = graph.eval_scalar(obj.loss)?.as_f64();
    let penalty = match penalty {
        Some(p) => Some(graph.eval_scalar(p)?.as_f64()),
        None => None,
    };
    let mut flat_grad = Vec::with_capacity(state.params.len() + alpha_leaves.len());
    for g in grads {
        flat_grad.extend_from_slice(graph.eval(g)?.data());
    }
    let grad_norm = flat_grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();

    let mut next = state.clone();
    let n = next.params.len();
    let mut flat: Vec<T> = next.params.values().to_vec();
    let learn = !alpha_leaves.is_empty();
    if learn {
        flat.extend_from_slice(next.alpha.as_ref().expect("learned rate").values());
    }
    next.optimizer.apply(&mut flat, &flat_grad, outer)?;
    next.params.values_mut().copy_from_slice(&flat[..n]);
    let mut nonpositive_alpha = 0;
    if learn {
        let alpha = next.alpha.as_mut().expect("learned rate");
        alpha.values_mut().copy_from_slice(&flat[n..]);
        nonpositive_alpha = alpha.values().iter().filter(|&&a| a <= T::zero()).count();
    }
    Ok((
        next,
        StepReport {
            loss,
            penalty,
            grad_norm,
            nonpositive_alpha,
        },
    ))
}

/// MAML update: the outer step with no penalty, whatever `outer.lambda_pen` says.
pub fn maml_step<T, O>(
    objective: &O,
    state: &MetaState<T>,
    batch: &[O::Task],
    inner: &InnerConfig,
    outer: &OuterConfig,
) -> Result<(MetaState<T>, StepReport)>
where
    T: Scalar,
    O: Objective<T>,
{
    let outer = OuterConfig {
        lambda_pen: 0.0,
        ..outer.clone()
    };
    outer_step(objective, state, batch, inner, &outer)
}

/// Invariant update: query loss plus `lambda_pen` times the trace of the
/// across-task variance of per-task outer gradients.
pub fn iml_step<T, O>(
    objective: &O,
    state: &MetaState<T>,
    batch: &[O::Task],
    inner: &InnerConfig,
    outer: &OuterConfig,
) -> Result<(MetaState<T>, StepReport)>
where
    T: Scalar,
    O: Objective<T>,
{
    outer_step(objective, state, batch, inner, outer)
}

/// Meta-SGD update: initialization and per-parameter inner rate descend the
/// same objective together.
pub fn meta_sgd_update<T, O>(
    objective: &O,
    state: &MetaState<T>,
    batch: &[O::Task],
    inner: &InnerConfig,
    outer: &OuterConfig,
) -> Result<(MetaState<T>, StepReport)>
where
    T: Scalar,
    O: Objective<T>,
{
    if !inner.learn_alpha || state.alpha.is_none() {
        return Err(Error::Config("Meta-SGD needs learn_alpha and a per-parameter rate".into()));
    }
    outer_step(objective, state, batch, inner, outer)
}
