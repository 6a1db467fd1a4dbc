use std::sync::Arc;

use crate::autodiff::tensor::{self, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node inside one [`Graph`]. Ids are dense insertion indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation computed by a node.
///
/// `Add`, `Sub` and `Mul` broadcast a one-element operand against a tensor;
/// no other broadcasting exists. `Step` is the Heaviside function used for
/// the ReLU derivative and carries no gradient, as does `StopGrad`.
#[derive(Clone, Debug, PartialEq)]
pub enum Op<T> {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    ScalarMul(T),
    MatMul,
    Transpose,
    Tanh,
    Relu,
    Step,
    Square,
    Sum,
    Mean,
    Expand(Vec<usize>),
    Reshape(Vec<usize>),
    /// Row-wise softmax of a 2-D tensor.
    Softmax,
    /// Mean squared error between two equally shaped operands.
    Mse,
    /// Mean softmax cross-entropy of 2-D logits against fixed labels.
    SoftmaxXent(Arc<[usize]>),
    StopGrad,
}

impl<T> Op<T> {
    pub fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::ScalarMul(_) => "scalar-mul",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Step => "step",
            Op::Square => "square",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Expand(_) => "expand",
            Op::Reshape(_) => "reshape",
            Op::Softmax => "softmax",
            Op::Mse => "mse",
            Op::SoftmaxXent(_) => "softmax-xent",
            Op::StopGrad => "stop-grad",
        }
    }

    /// Parses the tag of an operand-only op (no attached parameter).
    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "add" => Op::Add,
            "sub" => Op::Sub,
            "mul" => Op::Mul,
            "matmul" => Op::MatMul,
            "transpose" => Op::Transpose,
            "tanh" => Op::Tanh,
            "relu" => Op::Relu,
            "step" => Op::Step,
            "square" => Op::Square,
            "sum" => Op::Sum,
            "mean" => Op::Mean,
            "softmax" => Op::Softmax,
            "mse" => Op::Mse,
            "stop-grad" => Op::StopGrad,
            other => return Err(Error::UnsupportedOp(other.to_string())),
        })
    }

    fn arity(&self) -> usize {
        match self {
            Op::Leaf | Op::Constant => 0,
            Op::Add | Op::Sub | Op::Mul | Op::MatMul | Op::Mse => 2,
            _ => 1,
        }
    }

    /// Whether gradient flows from this node into its parents.
    fn passes_gradient(&self) -> bool {
        !matches!(self, Op::Step | Op::StopGrad | Op::Leaf | Op::Constant)
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    parents: Vec<NodeId>,
    shape: Vec<usize>,
    value: Option<Tensor<T>>,
}

/// Append-only computation graph.
///
/// Values are computed lazily by [`Graph::eval`] and cached per node.
/// [`Graph::grad`] appends the backward pass as ordinary nodes, so gradients
/// can themselves be differentiated.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    variables: Vec<NodeId>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            variables: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes created with [`Graph::leaf`], in insertion order.
    pub fn variables(&self) -> &[NodeId] {
        &self.variables
    }

    pub fn op(&self, id: NodeId) -> Result<&Op<T>> {
        self.node(id).map(|n| &n.op)
    }

    pub fn parents(&self, id: NodeId) -> Result<&[NodeId]> {
        self.node(id).map(|n| n.parents.as_slice())
    }

    pub fn shape(&self, id: NodeId) -> Result<&[usize]> {
        self.node(id).map(|n| n.shape.as_slice())
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    fn push(&mut self, op: Op<T>, parents: Vec<NodeId>, shape: Vec<usize>, value: Option<Tensor<T>>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            parents,
            shape,
            value,
        });
        id
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<NodeId> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NonFiniteInput { index });
        }
        let shape = value.shape().to_vec();
        let id = self.push(Op::Leaf, Vec::new(), shape, Some(value));
        self.variables.push(id);
        Ok(id)
    }

    /// A fixed input (data, labels, masks).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NonFiniteInput { index });
        }
        let shape = value.shape().to_vec();
        Ok(self.push(Op::Constant, Vec::new(), shape, Some(value)))
    }

    pub fn scalar_constant(&mut self, x: T) -> Result<NodeId> {
        self.constant(Tensor::scalar(x))
    }

    /// Appends a node computing `op` over `operands`, checking shapes.
    pub fn apply(&mut self, op: Op<T>, operands: &[NodeId]) -> Result<NodeId> {
        let tag = op.tag();
        if matches!(op, Op::Leaf | Op::Constant) {
            return Err(Error::UnsupportedOp(format!("{tag} via apply")));
        }
        if operands.len() != op.arity() {
            return Err(Error::Arity {
                op: tag,
                expected: op.arity(),
                got: operands.len(),
            });
        }
        for &p in operands {
            self.node(p)?;
        }
        let a = self.nodes[operands[0].0].shape.clone();
        let shape = match &op {
            Op::Add | Op::Sub | Op::Mul => {
                let b = &self.nodes[operands[1].0].shape;
                if &a == b || numel(b) == 1 {
                    a
                } else if numel(&a) == 1 {
                    b.clone()
                } else {
                    return Err(Error::shape(tag, &a, b));
                }
            }
            Op::Mse => {
                let b = &self.nodes[operands[1].0].shape;
                if &a != b || numel(&a) == 0 {
                    return Err(Error::shape(tag, &a, b));
                }
                Vec::new()
            }
            Op::MatMul => {
                let b = &self.nodes[operands[1].0].shape;
                if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                    return Err(Error::shape(tag, &a, b));
                }
                vec![a[0], b[1]]
            }
            Op::Transpose => {
                if a.len() != 2 {
                    return Err(Error::shape(tag, &a, &[]));
                }
                vec![a[1], a[0]]
            }
            Op::Softmax => {
                if a.len() != 2 {
                    return Err(Error::shape(tag, &a, &[]));
                }
                a
            }
            Op::SoftmaxXent(labels) => {
                if a.len() != 2 || a[0] == 0 || labels.len() != a[0] {
                    return Err(Error::shape(tag, &a, &[labels.len()]));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= a[1]) {
                    return Err(Error::shape(tag, &a, &[bad]));
                }
                Vec::new()
            }
            Op::Sum => Vec::new(),
            Op::Mean => {
                if numel(&a) == 0 {
                    return Err(Error::shape(tag, &a, &[]));
                }
                Vec::new()
            }
            Op::Expand(target) => {
                if numel(&a) != 1 {
                    return Err(Error::shape(tag, &a, target));
                }
                target.clone()
            }
            Op::Reshape(target) => {
                if numel(&a) != numel(target) {
                    return Err(Error::shape(tag, &a, target));
                }
                target.clone()
            }
            Op::ScalarMul(_) | Op::Tanh | Op::Relu | Op::Step | Op::Square | Op::StopGrad => a,
            Op::Leaf | Op::Constant => unreachable!(),
        };
        Ok(self.push(op, operands.to_vec(), shape, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        self.apply(Op::ScalarMul(c), &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -T::one())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean, &[a])
    }

    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.apply(Op::Mse, &[pred, target])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Softmax, &[a])
    }

    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.apply(Op::SoftmaxXent(labels.into()), &[logits])
    }

    pub fn stop_grad(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::StopGrad, &[a])
    }

    pub fn expand(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Expand(shape.to_vec()), &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }

    /// Forward value of `id`, computing and caching any missing ancestors.
    pub fn eval(&mut self, id: NodeId) -> Result<&Tensor<T>> {
        self.node(id)?;
        if self.nodes[id.0].value.is_none() {
            let mut pending = vec![false; id.0 + 1];
            let mut stack = vec![id.0];
            while let Some(i) = stack.pop() {
                if pending[i] || self.nodes[i].value.is_some() {
                    continue;
                }
                pending[i] = true;
                stack.extend(self.nodes[i].parents.iter().map(|p| p.0));
            }
            for i in (0..=id.0).filter(|&i| pending[i]) {
                let value = self.compute(i);
                if value.first_non_finite().is_some() {
                    return Err(Error::NonFiniteValue {
                        node: i,
                        op: self.nodes[i].op.tag(),
                    });
                }
                self.nodes[i].value = Some(value);
            }
        }
        Ok(self.nodes[id.0].value.as_ref().expect("evaluated"))
    }

    /// Value of a one-element node.
    pub fn eval_scalar(&mut self, id: NodeId) -> Result<T> {
        let t = self.eval(id)?;
        t.item().ok_or_else(|| Error::shape("eval_scalar", t.shape(), &[]))
    }

    fn compute(&self, i: usize) -> Tensor<T> {
        let node = &self.nodes[i];
        let arg = |k: usize| -> &Tensor<T> {
            self.nodes[node.parents[k].0]
                .value
                .as_ref()
                .expect("parents are evaluated first")
        };
        let shape = node.shape.clone();
        match &node.op {
            Op::Leaf | Op::Constant => unreachable!("inputs carry their value"),
            Op::Add => tensor::zip_broadcast(arg(0), arg(1), |x, y| x + y),
            Op::Sub => tensor::zip_broadcast(arg(0), arg(1), |x, y| x - y),
            Op::Mul => tensor::zip_broadcast(arg(0), arg(1), |x, y| x * y),
            Op::ScalarMul(c) => {
                let c = *c;
                arg(0).map(|x| c * x)
            }
            Op::MatMul => tensor::matmul(arg(0), arg(1)),
            Op::Transpose => tensor::transpose(arg(0)),
            Op::Tanh => arg(0).map(|x| x.tanh()),
            Op::Relu => arg(0).map(|x| if x > T::zero() { x } else { T::zero() }),
            Op::Step => arg(0).map(|x| if x > T::zero() { T::one() } else { T::zero() }),
            Op::Square => arg(0).map(|x| x * x),
            Op::Sum => Tensor::scalar(tensor::sum(arg(0))),
            Op::Mean => {
                let a = arg(0);
                Tensor::scalar(tensor::sum(a) / T::of_usize(a.len()))
            }
            Op::Expand(_) => Tensor::full(&shape, arg(0).data()[0]),
            Op::Reshape(_) => arg(0).reshaped(&shape),
            Op::Softmax => tensor::softmax_rows(arg(0)),
            Op::Mse => {
                let (a, b) = (arg(0), arg(1));
                let s = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
                Tensor::scalar(s / T::of_usize(a.len()))
            }
            Op::SoftmaxXent(labels) => Tensor::scalar(tensor::softmax_xent(arg(0), labels)),
            Op::StopGrad => arg(0).clone(),
        }
    }

    /// Gradients of the one-element `output` with respect to each of `wrt`,
    /// returned as new graph nodes.
    ///
    /// A `wrt` node that `output` does not depend on gets a zero constant of
    /// its own shape.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let out_shape = self.node(output)?.shape.clone();
        if numel(&out_shape) != 1 {
            return Err(Error::shape("grad", &out_shape, &[]));
        }
        for &w in wrt {
            self.node(w)?;
        }
        let n = output.0 + 1;

        // Nodes on a gradient-carrying path from some wrt node to the output.
        let mut depends = vec![false; n];
        for &w in wrt {
            if w.0 < n {
                depends[w.0] = true;
            }
        }
        for i in 0..n {
            if !depends[i] && self.nodes[i].op.passes_gradient() {
                depends[i] = self.nodes[i].parents.iter().any(|p| depends[p.0]);
            }
        }
        let mut feeds = vec![false; n];
        feeds[output.0] = true;
        for i in (0..n).rev() {
            if feeds[i] && self.nodes[i].op.passes_gradient() {
                for p in &self.nodes[i].parents {
                    feeds[p.0] = true;
                }
            }
        }
        let relevant: Vec<bool> = depends.iter().zip(&feeds).map(|(&d, &f)| d && f).collect();

        let mut adjoint: Vec<Option<NodeId>> = vec![None; n];
        if relevant[output.0] {
            adjoint[output.0] = Some(self.constant(Tensor::ones(&out_shape))?);
        }
        for i in (0..n).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let want: Vec<bool> = self.nodes[i].parents.iter().map(|p| relevant[p.0]).collect();
            if !want.iter().any(|&w| w) {
                continue;
            }
            for (parent, contrib) in self.vjp(NodeId(i), g, &want)? {
                adjoint[parent.0] = Some(match adjoint[parent.0] {
                    Some(acc) => self.add(acc, contrib)?,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.nodes[w.0].shape.clone();
                    self.constant(Tensor::zeros(&shape))
                }
            })
            .collect()
    }

    /// Reduces an adjoint of the broadcast output back to an operand's shape.
    fn unbroadcast(&mut self, g: NodeId, operand: NodeId) -> Result<NodeId> {
        let target = self.nodes[operand.0].shape.clone();
        if self.nodes[g.0].shape == target {
            return Ok(g);
        }
        let s = self.sum(g)?;
        self.reshape(s, &target)
    }

    /// Vector-Jacobian products of node `id` given its output adjoint `g`.
    fn vjp(&mut self, id: NodeId, g: NodeId, want: &[bool]) -> Result<Vec<(NodeId, NodeId)>> {
        let node = &self.nodes[id.0];
        let op = node.op.clone();
        let parents = node.parents.clone();
        let a = parents[0];
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf | Op::Constant | Op::Step | Op::StopGrad => {}
            Op::Add | Op::Sub => {
                if want[0] {
                    out.push((a, self.unbroadcast(g, a)?));
                }
                if want[1] {
                    let b = parents[1];
                    let gb = if matches!(op, Op::Sub) { self.neg(g)? } else { g };
                    out.push((b, self.unbroadcast(gb, b)?));
                }
            }
            Op::Mul => {
                let b = parents[1];
                if want[0] {
                    let ga = self.mul(g, b)?;
                    out.push((a, self.unbroadcast(ga, a)?));
                }
                if want[1] {
                    let gb = self.mul(g, a)?;
                    out.push((b, self.unbroadcast(gb, b)?));
                }
            }
            Op::ScalarMul(c) => out.push((a, self.scale(g, c)?)),
            Op::MatMul => {
                let b = parents[1];
                if want[0] {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if want[1] {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose => out.push((a, self.transpose(g)?)),
            Op::Tanh => {
                // d tanh = 1 - y^2, written with y itself so it stays differentiable
                let y2 = self.square(id)?;
                let one = self.scalar_constant(T::one())?;
                let d = self.sub(one, y2)?;
                out.push((a, self.mul(g, d)?));
            }
            Op::Relu => {
                let mask = self.apply(Op::Step, &[a])?;
                out.push((a, self.mul(g, mask)?));
            }
            Op::Square => {
                let ga = self.mul(g, a)?;
                out.push((a, self.scale(ga, T::of(2.0))?));
            }
            Op::Sum => {
                let shape = self.nodes[a.0].shape.clone();
                out.push((a, self.expand(g, &shape)?));
            }
            Op::Mean => {
                let shape = self.nodes[a.0].shape.clone();
                let e = self.expand(g, &shape)?;
                out.push((a, self.scale(e, T::one() / T::of_usize(numel(&shape)))?));
            }
            Op::Expand(_) => {
                let shape = self.nodes[a.0].shape.clone();
                let s = self.sum(g)?;
                out.push((a, self.reshape(s, &shape)?));
            }
            Op::Reshape(_) => {
                let shape = self.nodes[a.0].shape.clone();
                out.push((a, self.reshape(g, &shape)?));
            }
            Op::Softmax => {
                // s * (g - rowsum(s * g)), row sums via products with ones
                let shape = self.nodes[a.0].shape.clone();
                let (_, c) = (shape[0], shape[1]);
                let sg = self.mul(id, g)?;
                let col = self.constant(Tensor::ones(&[c, 1]))?;
                let row = self.constant(Tensor::ones(&[1, c]))?;
                let r = self.matmul(sg, col)?;
                let rb = self.matmul(r, row)?;
                let centered = self.sub(g, rb)?;
                out.push((a, self.mul(id, centered)?));
            }
            Op::Mse => {
                let b = parents[1];
                let n = numel(&self.nodes[a.0].shape);
                let diff = self.sub(a, b)?;
                let gd = self.mul(g, diff)?;
                let ga = self.scale(gd, T::of(2.0) / T::of_usize(n))?;
                if want[0] {
                    out.push((a, ga));
                }
                if want[1] {
                    out.push((b, self.neg(ga)?));
                }
            }
            Op::SoftmaxXent(labels) => {
                let shape = self.nodes[a.0].shape.clone();
                let (rows, c) = (shape[0], shape[1]);
                let mut onehot = Tensor::zeros(&shape);
                for (r, &l) in labels.iter().enumerate() {
                    onehot.data_mut()[r * c + l] = T::one();
                }
                let s = self.softmax(a)?;
                let y = self.constant(onehot)?;
                let d = self.sub(s, y)?;
                let gd = self.mul(g, d)?;
                out.push((a, self.scale(gd, T::one() / T::of_usize(rows))?));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> Tensor<f64> {
        Tensor::vector(vec![x])
    }

    #[test]
    fn leaf_round_trip_and_nan() {
        let mut g = Graph::new();
        let x = g.leaf(s(3.0)).unwrap();
        assert_eq!(g.eval(x).unwrap().data(), &[3.0]);
        let eye = Tensor::identity(2);
        let i = g.leaf(eye.clone()).unwrap();
        assert_eq!(g.eval(i).unwrap(), &eye);
        assert!(matches!(g.leaf(s(f64::NAN)), Err(Error::NonFiniteInput { index: 0 })));
    }

    #[test]
    fn forward_examples() {
        let mut g = Graph::new();
        let a = g.leaf(s(3.0)).unwrap();
        let b = g.leaf(s(4.0)).unwrap();
        let m = g.mul(a, b).unwrap();
        assert_eq!(g.eval(m).unwrap().data(), &[12.0]);

        let z = g.constant(Tensor::zeros(&[1, 5])).unwrap();
        let l = g.softmax_xent(z, &[2]).unwrap();
        assert!((g.eval_scalar(l).unwrap() - 5f64.ln()).abs() < 1e-15);

        let p = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let q = g.leaf(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
        let pq = g.matmul(p, q).unwrap();
        let v = g.eval(pq).unwrap();
        assert_eq!(v.shape(), &[2, 1]);
        assert_eq!(v.data(), &[3.0, 7.0]);

        let n = g.leaf(s(-2.0)).unwrap();
        let sq = g.square(n).unwrap();
        assert_eq!(g.eval(sq).unwrap().data(), &[4.0]);

        let v = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 6.0])).unwrap();
        let mu = g.mean(v).unwrap();
        assert_eq!(g.eval_scalar(mu).unwrap(), 3.0);
    }

    #[test]
    fn shape_and_tag_errors() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.leaf(Tensor::zeros(&[2, 3])).unwrap();
        match g.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("{other:?}"),
        }
        let c = g.leaf(Tensor::zeros(&[3])).unwrap();
        assert!(matches!(g.add(a, c), Err(Error::Shape { .. })));
        assert!(matches!(Op::<f64>::from_tag("conv2d"), Err(Error::UnsupportedOp(_))));
        assert!(matches!(g.apply(Op::Add, &[a]), Err(Error::Arity { .. })));
        assert!(matches!(g.grad(a, &[a]), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_value_names_node() {
        let mut g = Graph::new();
        let x = g.leaf(s(1e200)).unwrap();
        let y = g.square(x).unwrap();
        let z = g.sum(y).unwrap();
        match g.eval(z) {
            Err(Error::NonFiniteValue { node, op }) => {
                assert_eq!(node, y.index());
                assert_eq!(op, "square");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn first_and_second_derivatives() {
        let mut g = Graph::new();
        let x = g.leaf(s(3.0)).unwrap();
        let f = g.square(x).unwrap();
        let dx = g.grad(f, &[x]).unwrap()[0];
        assert_eq!(g.eval(dx).unwrap().data(), &[6.0]);

        let mut g = Graph::new();
        let x = g.leaf(s(2.0)).unwrap();
        let x2 = g.square(x).unwrap();
        let x3 = g.mul(x2, x).unwrap();
        let d1 = g.grad(x3, &[x]).unwrap()[0];
        let d2 = g.grad(d1, &[x]).unwrap()[0];
        assert_eq!(g.eval_scalar(d1).unwrap(), 12.0);
        assert_eq!(g.eval_scalar(d2).unwrap(), 12.0);
        let d3 = g.grad(d2, &[x]).unwrap()[0];
        assert_eq!(g.eval_scalar(d3).unwrap(), 6.0);
    }

    #[test]
    fn unreachable_wrt_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(s(3.0)).unwrap();
        let y = g.leaf(Tensor::zeros(&[2, 2])).unwrap();
        let f = g.square(x).unwrap();
        let dy = g.grad(f, &[y]).unwrap()[0];
        assert_eq!(g.eval(dy).unwrap(), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut g = Graph::new();
        let x = g.leaf(s(3.0)).unwrap();
        let sx = g.stop_grad(x).unwrap();
        let f = g.mul(sx, x).unwrap();
        let d = g.grad(f, &[x]).unwrap()[0];
        assert_eq!(g.eval_scalar(d).unwrap(), 3.0);
    }

    #[test]
    fn scalar_broadcast_gradients() {
        let mut g = Graph::new();
        let c = g.leaf(Tensor::scalar(2.0)).unwrap();
        let v = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let p = g.mul(c, v).unwrap();
        let f = g.sum(p).unwrap();
        let d = g.grad(f, &[c, v]).unwrap();
        assert_eq!(g.eval(d[0]).unwrap().data(), &[6.0]);
        assert_eq!(g.eval(d[0]).unwrap().shape(), &[] as &[usize]);
        assert_eq!(g.eval(d[1]).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn repeated_eval_is_bit_identical() {
        let build = || {
            let mut g = Graph::new();
            let w = g.leaf(Tensor::matrix(2, 2, vec![0.3, -1.1, 0.7, 0.2]).unwrap()).unwrap();
            let x = g.constant(Tensor::matrix(3, 2, vec![1.0, -0.5, 0.25, 2.0, -1.5, 0.1]).unwrap()).unwrap();
            let h = g.matmul(x, w).unwrap();
            let t = g.tanh(h).unwrap();
            let l = g.softmax_xent(t, &[0, 1, 1]).unwrap();
            let d = g.grad(l, &[w]).unwrap()[0];
            g.eval(d).unwrap().clone()
        };
        let a = build();
        let b = build();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
