use std::marker::PhantomData;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::model::{forward, MlpSpec, OutputKind};
use crate::scalar::Scalar;
use crate::tasks::{Targets, Task, TaskKind};

/// Per-task losses the bi-level optimizers differentiate.
///
/// The MLP objective is the one used for real work; the trait exists so the
/// meta updates can also be driven by closed-form objectives with known
/// derivatives.
pub trait Objective<T: Scalar> {
    type Task;

    /// Inner-loop (support set) loss of `params` on `task`.
    fn support_loss(&self, graph: &mut Graph<T>, params: &[NodeId], task: &Self::Task) -> Result<NodeId>;

    /// Outer-loop (query set) loss of `params` on `task`.
    fn query_loss(&self, graph: &mut Graph<T>, params: &[NodeId], task: &Self::Task) -> Result<NodeId>;

    /// Whether query sets of different tasks in `batch` can score each
    /// other's adapted parameters.
    fn check_cross_pairing(&self, _batch: &[Self::Task]) -> Result<()> {
        Ok(())
    }
}

/// MSE for regression specs, mean softmax cross-entropy for N-way specs.
#[derive(Clone, Debug)]
pub struct MlpObjective<T> {
    pub spec: MlpSpec,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> MlpObjective<T> {
    pub fn new(spec: MlpSpec) -> Self {
        MlpObjective {
            spec,
            _scalar: PhantomData,
        }
    }

    /// Model output for the rows of `x`.
    pub fn predict(&self, graph: &mut Graph<T>, params: &[NodeId], x: &Tensor<f64>) -> Result<NodeId> {
        let xt = Tensor::<T>::from_f64(x.shape(), x.data())?;
        let xn = graph.constant(xt)?;
        forward(&self.spec, graph, params, xn)
    }

    pub fn loss(&self, graph: &mut Graph<T>, params: &[NodeId], x: &Tensor<f64>, y: &Targets) -> Result<NodeId> {
        if x.rows() == 0 {
            return Err(Error::shape("loss", x.shape(), &[]));
        }
        let out = self.predict(graph, params, x)?;
        match (self.spec.output_kind, y) {
            (OutputKind::Regression, Targets::Values(t)) => {
                let target = graph.constant(Tensor::<T>::from_f64(t.shape(), t.data())?)?;
                graph.mse(out, target)
            }
            (OutputKind::NWayLogits, Targets::Labels(l)) => {
                let labels: Vec<usize> = l.iter().map(|&c| c as usize).collect();
                graph.softmax_xent(out, &labels)
            }
            (kind, _) => Err(Error::Config(format!("{kind:?} model given mismatched targets"))),
        }
    }
}

impl<T: Scalar> Objective<T> for MlpObjective<T> {
    type Task = Task;

    fn support_loss(&self, graph: &mut Graph<T>, params: &[NodeId], task: &Task) -> Result<NodeId> {
        self.loss(graph, params, &task.support_x, &task.support_y)
    }

    fn query_loss(&self, graph: &mut Graph<T>, params: &[NodeId], task: &Task) -> Result<NodeId> {
        self.loss(graph, params, &task.query_x, &task.query_y)
    }

    // Episode labels are assigned per task, so a classifier adapted on one
    // episode has no meaning on another episode's labels.
    fn check_cross_pairing(&self, batch: &[Task]) -> Result<()> {
        if batch.iter().any(|t| t.kind == TaskKind::Classification) {
            return Err(Error::Pairing("classification episodes with per-episode labels".into()));
        }
        Ok(())
    }
}
