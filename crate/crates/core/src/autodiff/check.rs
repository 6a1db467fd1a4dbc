use crate::autodiff::graph::{Graph, NodeId};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Below this magnitude the relative error is measured against the floor
/// instead of the gradient itself. Central differences at `eps = 1e-5`
/// carry roughly `1e-11 * |f|` of roundoff, which would otherwise dominate
/// near-zero coordinates.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    /// Which input tensor.
    pub input: usize,
    /// Flat index inside that tensor.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    /// Coordinates whose analytic or numeric value came out non-finite.
    pub non_finite: Vec<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares reverse-mode gradients of `f` at `point` with central
/// differences of step `eps`.
///
/// `f` receives a fresh graph and one leaf per input tensor and must return
/// a one-element node. Each coordinate is perturbed on a fresh graph, so
/// the check never shares state with the analytic pass.
pub fn check_grad<T, F>(f: F, point: &[Tensor<T>], eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!("gradient check step must be positive, got {eps}")));
    }

    let value_at = |inputs: &[Tensor<T>]| -> Result<Option<f64>> {
        let mut g = Graph::new();
        let leaves = inputs.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &leaves)?;
        match g.eval_scalar(out) {
            Ok(v) => Ok(Some(v.as_f64())),
            Err(Error::NonFiniteValue { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let analytic: Vec<Option<Vec<f64>>> = {
        let mut g = Graph::new();
        let leaves = point.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &leaves)?;
        let grads = g.grad(out, &leaves)?;
        grads
            .into_iter()
            .map(|d| match g.eval(d) {
                Ok(t) => Ok(Some(t.to_f64_vec())),
                Err(Error::NonFiniteValue { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?
    };

    let mut report = GradCheckReport::default();
    let mut inputs = point.to_vec();
    for (input, tensor) in point.iter().enumerate() {
        for index in 0..tensor.len() {
            let x0 = tensor.data()[index];
            inputs[input].data_mut()[index] = x0 + T::of(eps);
            let plus = value_at(&inputs)?;
            inputs[input].data_mut()[index] = x0 - T::of(eps);
            let minus = value_at(&inputs)?;
            inputs[input].data_mut()[index] = x0;

            let a = analytic[input].as_ref().map(|v| v[index]);
            let numeric = match (plus, minus) {
                (Some(p), Some(m)) => Some((p - m) / (2.0 * eps)),
                _ => None,
            };
            match (a, numeric) {
                (Some(a), Some(n)) if a.is_finite() && n.is_finite() => {
                    let rel_err = relative_error(a, n);
                    report.max_rel_err = report.max_rel_err.max(rel_err);
                    report.entries.push(GradCheckEntry {
                        input,
                        index,
                        analytic: a,
                        numeric: n,
                        rel_err,
                    });
                }
                (a, n) => {
                    report.non_finite.push((input, index));
                    report.entries.push(GradCheckEntry {
                        input,
                        index,
                        analytic: a.unwrap_or(f64::NAN),
                        numeric: n.unwrap_or(f64::NAN),
                        rel_err: f64::INFINITY,
                    });
                }
            }
        }
    }
    Ok(report)
}
