//! Fully-connected predictors over a flat parameter vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Regression,
    NWayLogits,
}

/// Layer widths from input to output. The activation applies to every
/// hidden layer; the output layer is affine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_kind: OutputKind,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, output_kind: OutputKind) -> Result<Self> {
        let spec = MlpSpec {
            layer_widths,
            activation,
            output_kind,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `[1, 40, 40, 1]` tanh regressor.
    pub fn sinusoid_default() -> Self {
        MlpSpec {
            layer_widths: vec![1, 40, 40, 1],
            activation: Activation::Tanh,
            output_kind: OutputKind::Regression,
        }
    }

    /// `[input, 64, 64, n_way]` ReLU classifier.
    pub fn classifier_default(input: usize, n_way: usize) -> Self {
        MlpSpec {
            layer_widths: vec![input, 64, 64, n_way],
            activation: Activation::Relu,
            output_kind: OutputKind::NWayLogits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Layout(format!(
                "an MLP needs at least input and output widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Layout(format!("zero-width layer in {:?}", self.layer_widths)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `layer{i}.weight` is `[fan_in, fan_out]`, `layer{i}.bias` is `[1, fan_out]`.
    pub fn layout(&self) -> Vec<ParamEntry> {
        let mut entries = Vec::with_capacity(2 * self.num_layers());
        let mut offset = 0;
        for (i, w) in self.layer_widths.windows(2).enumerate() {
            for (name, shape) in [("weight", vec![w[0], w[1]]), ("bias", vec![1, w[1]])] {
                let len: usize = shape.iter().product();
                entries.push(ParamEntry {
                    name: format!("layer{i}.{name}"),
                    shape,
                    offset,
                });
                offset += len;
            }
        }
        entries
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter values plus the layout that slices them into tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: Vec<ParamEntry>,
}

fn check_layout(layout: &[ParamEntry], len: usize) -> Result<()> {
    let mut expected = 0;
    for e in layout {
        if e.offset != expected {
            return Err(Error::Layout(format!(
                "entry `{}` starts at {} but the previous entry ends at {expected}",
                e.name, e.offset
            )));
        }
        expected += e.len();
    }
    if expected != len {
        return Err(Error::Layout(format!("layout covers {expected} values, vector has {len}")));
    }
    Ok(())
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>, layout: Vec<ParamEntry>) -> Result<Self> {
        check_layout(&layout, values.len())?;
        Ok(ParamVector { values, layout })
    }

    pub fn filled(layout: Vec<ParamEntry>, value: T) -> Self {
        let n = layout.iter().map(ParamEntry::len).sum();
        ParamVector {
            values: vec![value; n],
            layout,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One tensor per layout entry.
    pub fn unflatten(&self) -> Vec<Tensor<T>> {
        self.layout
            .iter()
            .map(|e| Tensor::new(e.shape.clone(), self.values[e.offset..e.offset + e.len()].to_vec()).expect("checked layout"))
            .collect()
    }

    /// Inverse of [`ParamVector::unflatten`].
    pub fn flatten(layout: Vec<ParamEntry>, tensors: &[Tensor<T>]) -> Result<Self> {
        if tensors.len() != layout.len() {
            return Err(Error::Layout(format!(
                "{} tensors for {} layout entries",
                tensors.len(),
                layout.len()
            )));
        }
        let mut values = Vec::new();
        for (e, t) in layout.iter().zip(tensors) {
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Layout(format!(
                    "`{}` expects shape {:?}, got {:?}",
                    e.name,
                    e.shape,
                    t.shape()
                )));
            }
            values.extend_from_slice(t.data());
        }
        ParamVector::new(values, layout)
    }

    /// Adds every tensor to `graph` as a differentiable leaf.
    pub fn to_leaves(&self, graph: &mut Graph<T>) -> Result<Vec<NodeId>> {
        self.unflatten().into_iter().map(|t| graph.leaf(t)).collect()
    }

    pub fn to_constants(&self, graph: &mut Graph<T>) -> Result<Vec<NodeId>> {
        self.unflatten().into_iter().map(|t| graph.constant(t)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamVector<U> {
        ParamVector {
            values: self.values.iter().map(|&x| U::of(x.as_f64())).collect(),
            layout: self.layout.clone(),
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<T: Scalar>(spec: &MlpSpec, seed: u64) -> ParamVector<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = spec.layout();
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        values.extend((0..fan_in * fan_out).map(|_| T::of(rng.random_range(-r..=r))));
        values.extend(std::iter::repeat_n(T::zero(), fan_out));
    }
    ParamVector::new(values, layout).expect("layout from spec")
}

/// Builds `f_params(x)` for a batch `x` of shape `[rows, input_width]`.
///
/// `params` holds one node per layout entry, in layout order. Bias rows are
/// added through a ones column so that only scalar broadcasting is needed.
pub fn forward<T: Scalar>(spec: &MlpSpec, graph: &mut Graph<T>, params: &[NodeId], x: NodeId) -> Result<NodeId> {
    if params.len() != 2 * spec.num_layers() {
        return Err(Error::Layout(format!(
            "{} parameter tensors for a {}-layer MLP",
            params.len(),
            spec.num_layers()
        )));
    }
    let xs = graph.shape(x)?.to_vec();
    if xs.len() != 2 || xs[1] != spec.input_width() {
        return Err(Error::shape("forward", &xs, &[xs.first().copied().unwrap_or(0), spec.input_width()]));
    }
    let ones = graph.constant(Tensor::ones(&[xs[0], 1]))?;
    let mut h = x;
    for layer in 0..spec.num_layers() {
        let z = graph.matmul(h, params[2 * layer])?;
        let b = graph.matmul(ones, params[2 * layer + 1])?;
        let pre = graph.add(z, b)?;
        h = if layer + 1 == spec.num_layers() {
            pre
        } else {
            match spec.activation {
                Activation::Tanh => graph.tanh(pre)?,
                Activation::Relu => graph.relu(pre)?,
            }
        };
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_net_param_count() {
        // 1*40+40 + 40*40+40 + 40*1+1
        let expected = 80 + 1640 + 41;
        assert_eq!(expected, 1761);
        let spec = MlpSpec::sinusoid_default();
        assert_eq!(spec.param_count(), expected);
        let p = init_params::<f64>(&spec, 0);
        assert_eq!(p.len(), expected);
        assert_eq!(spec.layout().iter().map(ParamEntry::len).sum::<usize>(), expected);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = MlpSpec::classifier_default(16, 5);
        let a = init_params::<f64>(&spec, 7);
        let b = init_params::<f64>(&spec, 7);
        assert_eq!(
            a.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, init_params::<f64>(&spec, 8));
        for (e, t) in a.layout().iter().zip(a.unflatten()) {
            if e.name.ends_with("bias") {
                assert!(t.data().iter().all(|&x| x == 0.0));
            } else {
                let r = (6.0 / (e.shape[0] + e.shape[1]) as f64).sqrt();
                assert!(t.data().iter().all(|x| x.abs() <= r));
            }
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(MlpSpec::new(vec![3], Activation::Relu, OutputKind::NWayLogits).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2], Activation::Relu, OutputKind::NWayLogits).is_err());
    }

    #[test]
    fn affine_single_layer() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Tanh, OutputKind::Regression).unwrap();
        let p = ParamVector::<f64>::new(vec![2.0, 1.0], spec.layout()).unwrap();
        let mut g = Graph::new();
        let nodes = p.to_leaves(&mut g).unwrap();
        let x = g.constant(Tensor::matrix(1, 1, vec![3.0]).unwrap()).unwrap();
        let y = forward(&spec, &mut g, &nodes, x).unwrap();
        assert_eq!(g.eval(y).unwrap().data(), &[7.0]);
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = MlpSpec::classifier_default(4, 5);
        let p = ParamVector::<f64>::filled(spec.layout(), 0.0);
        let mut g = Graph::new();
        let nodes = p.to_leaves(&mut g).unwrap();
        let x = g.constant(Tensor::matrix(2, 4, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0, 1.0, -1.0]).unwrap()).unwrap();
        let y = forward(&spec, &mut g, &nodes, x).unwrap();
        let v = g.eval(y).unwrap();
        assert_eq!(v.shape(), &[2, 5]);
        assert!(v.data().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let spec = MlpSpec::sinusoid_default();
        let p = init_params::<f64>(&spec, 0);
        let mut g = Graph::new();
        let nodes = p.to_leaves(&mut g).unwrap();
        let x = g.constant(Tensor::zeros(&[3, 2])).unwrap();
        assert!(matches!(forward(&spec, &mut g, &nodes, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn flatten_errors_and_single_coordinate() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Tanh, OutputKind::Regression).unwrap();
        let p = init_params::<f64>(&spec, 3);
        let mut q = p.clone();
        q.values_mut()[4] += 1.0;
        let (a, b) = (p.unflatten(), q.unflatten());
        let changed: usize = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x.data().iter().zip(y.data()).filter(|(u, v)| u != v).count())
            .sum();
        assert_eq!(changed, 1);

        assert!(ParamVector::<f64>::new(vec![0.0; 3], spec.layout()).is_err());
        let mut tensors = p.unflatten();
        tensors.pop();
        assert!(matches!(ParamVector::flatten(spec.layout(), &tensors), Err(Error::Layout(_))));
        let mut bad = spec.layout();
        bad[1].offset += 1;
        assert!(ParamVector::<f64>::new(p.values().to_vec(), bad).is_err());
    }

    #[test]
    fn f32_instantiation() {
        let spec = MlpSpec::sinusoid_default();
        let p = init_params::<f32>(&spec, 1);
        let mut g = Graph::<f32>::new();
        let nodes = p.to_leaves(&mut g).unwrap();
        let x = g.constant(Tensor::from_f64(&[2, 1], &[0.5, -0.5]).unwrap()).unwrap();
        let y = forward(&spec, &mut g, &nodes, x).unwrap();
        assert!(g.eval(y).unwrap().is_finite());
    }
}
