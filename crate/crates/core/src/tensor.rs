//! Dense tensors and a tape-based reverse-mode differentiation graph.
//!
//! A [`Graph`] records primitive operations during the forward pass and
//! replays them in reverse to accumulate gradients. The op set is the
//! minimum needed to express the surrogate victims and attack losses:
//! matrix-vector products, elementwise add/tanh/sigmoid/softplus,
//! concatenation, scalar sum/negation/scale, and a clamped binary
//! cross-entropy.

use thiserror::Error;

/// Probabilities entering the BCE logarithms are clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`; the loss is undefined at 0 and 1.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor data length {len} does not match shape {shape:?}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { value: f64, index: usize },
    #[error("{op}: incompatible shapes {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("backward already ran on this graph")]
    BackwardAlreadyRan,
    #[error("gradients are only defined after a backward pass")]
    NoGradients,
    #[error("bce target must be 0 or 1, got {0}")]
    InvalidBceTarget(f64),
}

/// Immutable dense array of 64-bit floats, row-major.
///
/// Construction rejects NaN and infinities, so every tensor in a graph
/// is finite by invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                len: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() {
                return Err(TensorError::NonFinite { value, index });
            }
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Self::new(vec![], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, TensorError> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// A tensor is scalar-like when it holds exactly one value.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar-like tensor.
    ///
    /// Panics if the tensor holds more than one value; callers check
    /// [`Tensor::is_scalar`] or construct via [`Tensor::scalar`].
    pub fn item(&self) -> f64 {
        assert!(
            self.is_scalar(),
            "item() on non-scalar tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }
}

/// Index of a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    /// y = W x with W of shape [m, n] and x of shape [n].
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    /// Vector concatenation, [a] ++ [b].
    Concat(NodeId, NodeId),
    /// Sum of all elements, yielding a scalar.
    Sum(NodeId),
    Neg(NodeId),
    /// Elementwise multiplication by a fixed constant.
    Scale(NodeId, f64),
    /// Clamped binary cross-entropy against a fixed target in {0, 1}.
    Bce { pred: NodeId, target: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded forward computation, topologically ordered by construction.
///
/// A graph is single-threaded and supports exactly one backward pass;
/// build a fresh graph per forward evaluation.
///
/// Gradients live in one flat arena indexed by per-node offsets; a
/// recurrent forward records tens of thousands of nodes and per-node
/// allocations dominate the backward cost otherwise.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<f64>,
    grad_offsets: Vec<usize>,
    backward_ran: bool,
}

pub(crate) fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_value(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn bce_value(p: f64, target: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Records an input tensor as a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// y = W x for W of shape [m, n] and x holding n values.
    pub fn matvec(&mut self, weight: NodeId, x: NodeId) -> Result<NodeId, TensorError> {
        let w = self.value(weight);
        let v = self.value(x);
        let ok = w.shape().len() == 2 && w.shape()[1] == v.len();
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                left: w.shape().to_vec(),
                right: v.shape().to_vec(),
            });
        }
        let (m, n) = (w.shape()[0], w.shape()[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &w.data()[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v.data()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        let value = Tensor::vector(out)?;
        Ok(self.push(Op::MatVec(weight, x), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    fn unary(
        &mut self,
        parent: NodeId,
        op: impl FnOnce(NodeId) -> Op,
        f: impl Fn(f64) -> f64,
    ) -> NodeId {
        let t = self.value(parent);
        let data = t.data().iter().copied().map(f).collect();
        let value = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        self.push(op(parent), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid, sigmoid_value)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus, softplus_value)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Neg, |x| -x)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        assert!(k.is_finite(), "scale factor must be finite");
        self.unary(a, |p| Op::Scale(p, k), |x| k * x)
    }

    /// Concatenates two vectors (scalar-like inputs are treated as
    /// length-1 vectors).
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() > 1 || tb.shape().len() > 1 {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let value = Tensor::vector(data)?;
        Ok(self.push(Op::Concat(a, b), value))
    }

    /// Sum of all elements, producing a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data().iter().sum();
        let value = Tensor {
            shape: vec![],
            data: vec![total],
        };
        self.push(Op::Sum(a), value)
    }

    /// Binary cross-entropy of a scalar probability against target 0 or 1.
    pub fn bce(&mut self, pred: NodeId, target: f64) -> Result<NodeId, TensorError> {
        if target != 0.0 && target != 1.0 {
            return Err(TensorError::InvalidBceTarget(target));
        }
        let p = self.value(pred);
        if !p.is_scalar() {
            return Err(TensorError::NotScalar {
                op: "bce",
                shape: p.shape().to_vec(),
            });
        }
        let loss = bce_value(p.item(), target);
        let value = Tensor {
            shape: vec![],
            data: vec![loss],
        };
        Ok(self.push(Op::Bce { pred, target }, value))
    }

    /// Propagates gradients from a scalar root back to every reachable
    /// node. Leaves not reachable from the root keep an exact zero
    /// gradient. A graph supports one backward pass.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TensorError> {
        if self.backward_ran {
            return Err(TensorError::BackwardAlreadyRan);
        }
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: root_value.shape().to_vec(),
            });
        }
        let mut offsets = Vec::with_capacity(self.nodes.len() + 1);
        let mut total = 0;
        for node in &self.nodes {
            offsets.push(total);
            total += node.value.len();
        }
        offsets.push(total);
        self.grad_offsets = offsets;
        self.grads = vec![0.0; total];
        self.grads[self.grad_offsets[root.0]] = 1.0;

        // The output gradient is copied into a reusable scratch buffer
        // so parent slices can be borrowed mutably one at a time.
        let mut go: Vec<f64> = Vec::new();
        for idx in (0..=root.0).rev() {
            let op = self.nodes[idx].op;
            if matches!(op, Op::Leaf) {
                continue;
            }
            go.clear();
            go.extend_from_slice(
                &self.grads[self.grad_offsets[idx]..self.grad_offsets[idx + 1]],
            );
            match op {
                Op::Leaf => unreachable!(),
                Op::MatVec(w, x) => {
                    let (m, n) = {
                        let ws = self.nodes[w.0].value.shape();
                        (ws[0], ws[1])
                    };
                    {
                        let x_vals = self.nodes[x.0].value.data();
                        let gw = &mut self.grads
                            [self.grad_offsets[w.0]..self.grad_offsets[w.0 + 1]];
                        for i in 0..m {
                            let gi = go[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for (slot, xj) in gw[i * n..(i + 1) * n].iter_mut().zip(x_vals) {
                                *slot += gi * xj;
                            }
                        }
                    }
                    {
                        let w_vals = self.nodes[w.0].value.data();
                        let gx = &mut self.grads
                            [self.grad_offsets[x.0]..self.grad_offsets[x.0 + 1]];
                        for i in 0..m {
                            let gi = go[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for (slot, wij) in gx.iter_mut().zip(&w_vals[i * n..(i + 1) * n]) {
                                *slot += gi * wij;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for parent in [a, b] {
                        let gp = &mut self.grads
                            [self.grad_offsets[parent.0]..self.grad_offsets[parent.0 + 1]];
                        for (slot, g) in gp.iter_mut().zip(&go) {
                            *slot += g;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = self.nodes[idx].value.data();
                    let ga =
                        &mut self.grads[self.grad_offsets[a.0]..self.grad_offsets[a.0 + 1]];
                    for ((slot, g), y) in ga.iter_mut().zip(&go).zip(y) {
                        *slot += g * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[idx].value.data();
                    let ga =
                        &mut self.grads[self.grad_offsets[a.0]..self.grad_offsets[a.0 + 1]];
                    for ((slot, g), y) in ga.iter_mut().zip(&go).zip(y) {
                        *slot += g * y * (1.0 - y);
                    }
                }
                Op::Softplus(a) => {
                    let x = self.nodes[a.0].value.data();
                    let ga =
                        &mut self.grads[self.grad_offsets[a.0]..self.grad_offsets[a.0 + 1]];
                    for ((slot, g), x) in ga.iter_mut().zip(&go).zip(x) {
                        *slot += g * sigmoid_value(*x);
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[a.0].value.len();
                    {
                        let ga = &mut self.grads
                            [self.grad_offsets[a.0]..self.grad_offsets[a.0 + 1]];
                        for (slot, g) in ga.iter_mut().zip(&go[..na]) {
                            *slot += g;
                        }
                    }
                    let gb =
                        &mut self.grads[self.grad_offsets[b.0]..self.grad_offsets[b.0 + 1]];
                    for (slot, g) in gb.iter_mut().zip(&go[na..]) {
                        *slot += g;
                    }
                }
                Op::Sum(a) => {
                    let g = go[0];
                    let ga =
                        &mut self.grads[self.grad_offsets[a.0]..self.grad_offsets[a.0 + 1]];
                    for slot in ga {
                        *slot += g;
                    }
                }
                Op::Neg(a) => {
                    let ga =
                        &mut self.grads[self.grad_offsets[a.0]..self.grad_offsets[a.0 + 1]];
                    for (slot, g) in ga.iter_mut().zip(&go) {
                        *slot -= g;
                    }
                }
                Op::Scale(a, c) => {
                    let ga =
                        &mut self.grads[self.grad_offsets[a.0]..self.grad_offsets[a.0 + 1]];
                    for (slot, g) in ga.iter_mut().zip(&go) {
                        *slot += c * g;
                    }
                }
                Op::Bce { pred, target } => {
                    let p = self.nodes[pred.0].value.item();
                    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    let dp = -target / p + (1.0 - target) / (1.0 - p);
                    self.grads[self.grad_offsets[pred.0]] += go[0] * dp;
                }
            }
        }
        self.backward_ran = true;
        Ok(())
    }

    /// Gradient of the most recent backward root with respect to `id`.
    pub fn gradient(&self, id: NodeId) -> Result<Tensor, TensorError> {
        if !self.backward_ran {
            return Err(TensorError::NoGradients);
        }
        let shape = self.nodes[id.0].value.shape().to_vec();
        let data = self.grads[self.grad_offsets[id.0]..self.grad_offsets[id.0 + 1]].to_vec();
        Ok(Tensor { shape, data })
    }
}

/// Compares the analytic gradient of a scalar-valued build against
/// central finite differences with step `h`.
///
/// `build` must construct the same computation whenever it is given the
/// same leaf values; it is re-run twice per leaf coordinate. Returns the
/// maximum over all coordinates of
/// `|analytic - central_difference| / max(1, |analytic|)`.
pub fn grad_check<F>(build: F, leaves: &[Tensor], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");

    let mut graph = Graph::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| graph.leaf(t.clone())).collect();
    let root = build(&mut graph, &ids)?;
    graph.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| graph.gradient(id))
        .collect::<Result<_, _>>()?;

    let eval = |leaves: &[Tensor]| -> Result<f64, TensorError> {
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = leaves.iter().map(|t| graph.leaf(t.clone())).collect();
        let root = build(&mut graph, &ids)?;
        Ok(graph.value(root).item())
    };

    let mut max_rel = 0.0_f64;
    for (li, leaf) in leaves.iter().enumerate() {
        for j in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            let mut minus = leaves.to_vec();
            let mut plus_data = leaf.data().to_vec();
            let mut minus_data = leaf.data().to_vec();
            plus_data[j] += h;
            minus_data[j] -= h;
            plus[li] = Tensor::new(leaf.shape().to_vec(), plus_data)?;
            minus[li] = Tensor::new(leaf.shape().to_vec(), minus_data)?;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic[li].data()[j];
            let rel = (a - fd).abs() / a.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2: f64 = std::f64::consts::LN_2;

    #[test]
    fn rejects_shape_data_mismatch() {
        let err = Tensor::new(vec![2, 2], vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeDataMismatch { .. }));
    }

    #[test]
    fn rejects_non_finite_values() {
        assert!(Tensor::vector(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::vector(vec![f64::INFINITY]).is_err());
        assert!(Tensor::scalar(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0).unwrap());
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0).unwrap());
        let y = g.softplus(x);
        assert!((g.value(y).item() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_of_half_against_zero_is_ln_two() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::scalar(0.5).unwrap());
        let loss = g.bce(p, 0.0).unwrap();
        assert!((g.value(loss).item() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_rejects_fractional_target() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::scalar(0.5).unwrap());
        assert!(matches!(
            g.bce(p, 0.25),
            Err(TensorError::InvalidBceTarget(_))
        ));
    }

    #[test]
    fn matvec_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        match g.matvec(w, x) {
            Err(TensorError::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0).unwrap());
        let y = g.sigmoid(x);
        g.backward(y).unwrap();
        assert_eq!(g.gradient(x).unwrap().item(), 0.25);
    }

    #[test]
    fn sum_of_tanh_gradient_at_origin() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let t = g.tanh(x);
        let s = g.sum(t);
        g.backward(s).unwrap();
        assert_eq!(g.gradient(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = g.tanh(x);
        assert!(matches!(
            g.backward(y),
            Err(TensorError::NotScalar { .. })
        ));
    }

    #[test]
    fn backward_rejects_second_pass() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.0).unwrap());
        let y = g.tanh(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(matches!(
            g.backward(s),
            Err(TensorError::BackwardAlreadyRan)
        ));
    }

    #[test]
    fn gradient_before_backward_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.0).unwrap());
        assert!(matches!(g.gradient(x), Err(TensorError::NoGradients)));
    }

    #[test]
    fn unreachable_leaf_gets_exact_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0).unwrap());
        let orphan = g.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = g.tanh(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.gradient(orphan).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = g.leaf(Tensor::vector(vec![3.0]).unwrap());
        let c = g.concat(a, b).unwrap();
        let scaled = g.scale(c, 2.0);
        let s = g.sum(scaled);
        g.backward(s).unwrap();
        assert_eq!(g.gradient(a).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(g.gradient(b).unwrap().data(), &[2.0]);
    }

    #[test]
    fn grad_check_is_exact_for_linear_maps() {
        let w = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let x = Tensor::vector(vec![0.3, -0.2, 0.9]).unwrap();
        let err = grad_check(
            |g, ids| {
                let y = g.matvec(ids[0], ids[1])?;
                Ok(g.sum(y))
            },
            &[w, x],
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-10, "linear map rel err {err}");
    }

    #[test]
    fn grad_check_bce_of_sigmoid_dot() {
        let w = Tensor::matrix(1, 4, vec![0.37, -0.81, 0.22, 0.54]).unwrap();
        let x = Tensor::vector(vec![-0.12, 0.33, 0.91, -0.47]).unwrap();
        let err = grad_check(
            |g, ids| {
                let dot = g.matvec(ids[0], ids[1])?;
                let p = g.sigmoid(dot);
                let sp = g.sum(p);
                g.bce(sp, 0.0)
            },
            &[w, x],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "bce chain rel err {err}");
    }

    #[test]
    fn grad_check_softplus_chain() {
        let x = Tensor::vector(vec![0.4, -1.3, 0.05]).unwrap();
        let err = grad_check(
            |g, ids| {
                let a = g.softplus(ids[0]);
                let b = g.tanh(a);
                let c = g.softplus(b);
                Ok(g.sum(c))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "softplus chain rel err {err}");
    }
}
