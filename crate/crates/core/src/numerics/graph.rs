//! Reverse-mode autodiff over a fixed op set.
//!
//! A [`Graph`] is an ordered tape of nodes. Leaves are declared up front with
//! a shape and a trainable flag; interior nodes are appended through builder
//! methods that validate shapes immediately, so a mismatch fails at build
//! time naming the offending node. `forward` caches every intermediate value;
//! `backward` replays the tape in reverse and returns gradients for the
//! trainable leaves only. The last node appended is the root.
//!
//! All node values are matrices. Rank-1 leaves are accepted and viewed as a
//! single row; their gradients come back in the declared rank-1 shape.
//! A graph is cheap to build and owns per-pass state, so callers construct a
//! fresh one per step; a single instance must not be shared mid-pass.

use std::collections::BTreeMap;

use super::ops::{self, ConvGeom, PoolGeom};
use super::{NumericsError, Tensor};

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed set of differentiable operations.
///
/// Scalars, axes, geometries and labels ride along as op parameters rather
/// than input tensors, which keeps every graph input an honest matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    MulElementwise,
    ScaleByScalar(f64),
    Relu,
    SoftmaxRows,
    L2NormalizeRows,
    MeanOverAxis(usize),
    ConcatRows,
    Conv2dValid(ConvGeom),
    AvgPool2x2(PoolGeom),
    CrossEntropy(Vec<usize>),
    Transpose,
}

impl OpKind {
    fn tag(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::MulElementwise => "mul",
            OpKind::ScaleByScalar(_) => "scale",
            OpKind::Relu => "relu",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::L2NormalizeRows => "l2_normalize_rows",
            OpKind::MeanOverAxis(_) => "mean_over_axis",
            OpKind::ConcatRows => "concat_rows",
            OpKind::Conv2dValid(_) => "conv2d_valid",
            OpKind::AvgPool2x2(_) => "avgpool2x2",
            OpKind::CrossEntropy(_) => "cross_entropy",
            OpKind::Transpose => "transpose",
        }
    }
}

struct Node {
    label: String,
    op: OpKind,
    inputs: Vec<NodeId>,
    dims: (usize, usize),
    declared: Vec<usize>,
    trainable: bool,
    needs_grad: bool,
    value: Option<Tensor>,
}

/// Values for the graph's leaves, keyed by node id.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    map: BTreeMap<usize, Tensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, id: NodeId, value: Tensor) -> &mut Self {
        self.map.insert(id.0, value);
        self
    }

    pub fn bind_all(&mut self, pairs: impl IntoIterator<Item = (NodeId, Tensor)>) -> &mut Self {
        for (id, t) in pairs {
            self.bind(id, t);
        }
        self
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.map.get(&id.0)
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut Tensor> {
        self.map.get_mut(&id.0)
    }
}

/// Gradients for trainable leaves, shaped exactly like the leaf declarations.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.map.get(&id.0)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Id of the root (last-appended) node.
    pub fn root(&self) -> Option<NodeId> {
        if self.nodes.is_empty() {
            None
        } else {
            Some(NodeId(self.nodes.len() - 1))
        }
    }

    pub fn op(&self, id: NodeId) -> &OpKind {
        &self.nodes[id.0].op
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].dims
    }

    /// Cached value from the latest `forward`.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].value.as_ref()
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        self.nodes[id.0].trainable
    }

    /// Trainable leaves in declaration order.
    pub fn trainable_leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.trainable)
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Ids of nodes with a given op tag; used by diagnostics and kink checks.
    pub(crate) fn nodes_where(&self, pred: impl Fn(&OpKind) -> bool) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| pred(&n.op))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    pub(crate) fn input_ids(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    fn leaf(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        trainable: bool,
    ) -> Result<NodeId, NumericsError> {
        let name = name.into();
        let dims = match shape.len() {
            1 if shape[0] > 0 => (1, shape[0]),
            2 if shape[0] > 0 && shape[1] > 0 => (shape[0], shape[1]),
            _ => {
                return Err(NumericsError::ShapeMismatch {
                    node: name,
                    details: format!("leaf shape {shape:?} must be a non-empty vector or matrix"),
                })
            }
        };
        self.nodes.push(Node {
            label: name,
            op: OpKind::Leaf,
            inputs: vec![],
            dims,
            declared: shape,
            trainable,
            needs_grad: trainable,
            value: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Leaf whose gradient is computed and reported.
    pub fn trainable(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
    ) -> Result<NodeId, NumericsError> {
        self.leaf(name, shape, true)
    }

    /// Leaf treated as data: no gradient is propagated into it.
    pub fn constant(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
    ) -> Result<NodeId, NumericsError> {
        self.leaf(name, shape, false)
    }

    fn push_op(
        &mut self,
        op: OpKind,
        inputs: Vec<NodeId>,
        dims: (usize, usize),
    ) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        let label = format!("{}#{}", op.tag(), self.nodes.len());
        self.nodes.push(Node {
            label,
            op,
            inputs,
            dims,
            declared: vec![dims.0, dims.1],
            trainable: false,
            needs_grad,
            value: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId, ctx: &str) -> Result<(), NumericsError> {
        if id.0 >= self.nodes.len() {
            return Err(NumericsError::InvalidArg(format!(
                "{ctx}: node id {} does not exist in this graph",
                id.0
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.check_id(a, "matmul")?;
        self.check_id(b, "matmul")?;
        let (m, k) = self.nodes[a.0].dims;
        let (k2, n) = self.nodes[b.0].dims;
        if k != k2 {
            return Err(NumericsError::ShapeMismatch {
                node: format!("matmul#{}", self.nodes.len()),
                details: format!(
                    "inner dimensions disagree: {:?} x {:?} (from `{}` and `{}`)",
                    (m, k),
                    (k2, n),
                    self.nodes[a.0].label,
                    self.nodes[b.0].label
                ),
            });
        }
        Ok(self.push_op(OpKind::MatMul, vec![a, b], (m, n)))
    }

    fn same_dims(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize), NumericsError> {
        let da = self.nodes[a.0].dims;
        let db = self.nodes[b.0].dims;
        if da != db {
            return Err(NumericsError::ShapeMismatch {
                node: format!("{what}#{}", self.nodes.len()),
                details: format!(
                    "`{}` is {:?} but `{}` is {:?}",
                    self.nodes[a.0].label, da, self.nodes[b.0].label, db
                ),
            });
        }
        Ok(da)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.check_id(a, "add")?;
        self.check_id(b, "add")?;
        let dims = self.same_dims(a, b, "add")?;
        Ok(self.push_op(OpKind::Add, vec![a, b], dims))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.check_id(a, "mul")?;
        self.check_id(b, "mul")?;
        let dims = self.same_dims(a, b, "mul")?;
        Ok(self.push_op(OpKind::MulElementwise, vec![a, b], dims))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, NumericsError> {
        self.check_id(a, "scale")?;
        if !factor.is_finite() {
            return Err(NumericsError::InvalidArg(format!(
                "scale factor {factor} is not finite"
            )));
        }
        let dims = self.nodes[a.0].dims;
        Ok(self.push_op(OpKind::ScaleByScalar(factor), vec![a], dims))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.check_id(a, "relu")?;
        let dims = self.nodes[a.0].dims;
        Ok(self.push_op(OpKind::Relu, vec![a], dims))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.check_id(a, "softmax_rows")?;
        let dims = self.nodes[a.0].dims;
        Ok(self.push_op(OpKind::SoftmaxRows, vec![a], dims))
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.check_id(a, "l2_normalize_rows")?;
        let dims = self.nodes[a.0].dims;
        Ok(self.push_op(OpKind::L2NormalizeRows, vec![a], dims))
    }

    /// Mean along `axis` (0 = down columns, 1 = across rows), keeping the
    /// reduced axis at size one so results stay matmul-compatible.
    pub fn mean_over_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, NumericsError> {
        self.check_id(a, "mean_over_axis")?;
        let (r, c) = self.nodes[a.0].dims;
        let dims = match axis {
            0 => (1, c),
            1 => (r, 1),
            _ => {
                return Err(NumericsError::InvalidArg(format!(
                    "mean_over_axis: axis {axis} out of range for a matrix"
                )))
            }
        };
        Ok(self.push_op(OpKind::MeanOverAxis(axis), vec![a], dims))
    }

    /// Stack inputs vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::InvalidArg(
                "concat_rows needs at least one input".into(),
            ));
        }
        for &p in parts {
            self.check_id(p, "concat_rows")?;
        }
        let cols = self.nodes[parts[0].0].dims.1;
        let mut rows = 0;
        for &p in parts {
            let d = self.nodes[p.0].dims;
            if d.1 != cols {
                return Err(NumericsError::ShapeMismatch {
                    node: format!("concat_rows#{}", self.nodes.len()),
                    details: format!(
                        "`{}` has {} columns, expected {cols}",
                        self.nodes[p.0].label, d.1
                    ),
                });
            }
            rows += d.0;
        }
        Ok(self.push_op(OpKind::ConcatRows, parts.to_vec(), (rows, cols)))
    }

    /// Valid 2-d convolution of channel-planar rows (see [`ConvGeom`]).
    pub fn conv2d_valid(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        geom: ConvGeom,
    ) -> Result<NodeId, NumericsError> {
        self.check_id(input, "conv2d_valid")?;
        self.check_id(kernel, "conv2d_valid")?;
        if geom.k_h == 0 || geom.k_w == 0 || geom.k_h > geom.in_h || geom.k_w > geom.in_w {
            return Err(NumericsError::InvalidArg(format!(
                "conv2d_valid: kernel {}x{} does not fit input {}x{}",
                geom.k_h, geom.k_w, geom.in_h, geom.in_w
            )));
        }
        let (batch, in_cols) = self.nodes[input.0].dims;
        let kd = self.nodes[kernel.0].dims;
        if in_cols != geom.in_cols() || kd != (geom.out_channels, geom.kernel_cols()) {
            return Err(NumericsError::ShapeMismatch {
                node: format!("conv2d_valid#{}", self.nodes.len()),
                details: format!(
                    "geometry wants input columns {} and kernel {:?}; got {} and {:?}",
                    geom.in_cols(),
                    (geom.out_channels, geom.kernel_cols()),
                    in_cols,
                    kd
                ),
            });
        }
        Ok(self.push_op(
            OpKind::Conv2dValid(geom),
            vec![input, kernel],
            (batch, geom.out_cols()),
        ))
    }

    /// Non-overlapping 2x2 average pool; odd trailing rows/cols are dropped.
    pub fn avgpool2x2(&mut self, input: NodeId, geom: PoolGeom) -> Result<NodeId, NumericsError> {
        self.check_id(input, "avgpool2x2")?;
        if geom.in_h < 2 || geom.in_w < 2 {
            return Err(NumericsError::InvalidArg(format!(
                "avgpool2x2: input {}x{} is too small",
                geom.in_h, geom.in_w
            )));
        }
        let (batch, in_cols) = self.nodes[input.0].dims;
        if in_cols != geom.in_cols() {
            return Err(NumericsError::ShapeMismatch {
                node: format!("avgpool2x2#{}", self.nodes.len()),
                details: format!(
                    "geometry wants {} input columns, got {in_cols}",
                    geom.in_cols()
                ),
            });
        }
        Ok(self.push_op(
            OpKind::AvgPool2x2(geom),
            vec![input],
            (batch, geom.out_cols()),
        ))
    }

    /// Mean cross-entropy of `labels` (one class index per row) against row
    /// logits. Produces the scalar `[1, 1]` loss.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        labels: Vec<usize>,
    ) -> Result<NodeId, NumericsError> {
        self.check_id(logits, "cross_entropy")?;
        let (r, c) = self.nodes[logits.0].dims;
        if labels.len() != r {
            return Err(NumericsError::ShapeMismatch {
                node: format!("cross_entropy#{}", self.nodes.len()),
                details: format!("{} labels for {r} logit rows", labels.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(NumericsError::InvalidArg(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        Ok(self.push_op(OpKind::CrossEntropy(labels), vec![logits], (1, 1)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.check_id(a, "transpose")?;
        let (r, c) = self.nodes[a.0].dims;
        Ok(self.push_op(OpKind::Transpose, vec![a], (c, r)))
    }

    fn store(&mut self, idx: usize, data: Vec<f64>) -> Result<(), NumericsError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite {
                node: self.nodes[idx].label.clone(),
            });
        }
        let (r, c) = self.nodes[idx].dims;
        self.nodes[idx].value = Some(Tensor::new(vec![r, c], data).expect("validated"));
        Ok(())
    }

    fn input_data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("tape order guarantees inputs are computed")
            .data()
    }

    /// Evaluate the whole tape and return the root value. Every intermediate
    /// value is cached for `backward` and for inspection via [`Graph::value`].
    pub fn forward(&mut self, bindings: &Bindings) -> Result<Tensor, NumericsError> {
        if self.nodes.is_empty() {
            return Err(NumericsError::InvalidArg("forward on an empty graph".into()));
        }
        for idx in 0..self.nodes.len() {
            let op = self.nodes[idx].op.clone();
            let inputs = self.nodes[idx].inputs.clone();
            let (r, c) = self.nodes[idx].dims;
            let data: Vec<f64> = match &op {
                OpKind::Leaf => {
                    let bound = bindings.get(NodeId(idx)).ok_or_else(|| {
                        NumericsError::UnboundLeaf(self.nodes[idx].label.clone())
                    })?;
                    if bound.shape() != self.nodes[idx].declared.as_slice() {
                        return Err(NumericsError::ShapeMismatch {
                            node: self.nodes[idx].label.clone(),
                            details: format!(
                                "bound value has shape {:?}, leaf declared {:?}",
                                bound.shape(),
                                self.nodes[idx].declared
                            ),
                        });
                    }
                    bound.data().to_vec()
                }
                OpKind::MatMul => {
                    let (m, k) = self.nodes[inputs[0].0].dims;
                    let n = self.nodes[inputs[1].0].dims.1;
                    ops::matmul(self.input_data(inputs[0]), self.input_data(inputs[1]), m, k, n)
                }
                OpKind::Add => {
                    let a = self.input_data(inputs[0]);
                    let b = self.input_data(inputs[1]);
                    a.iter().zip(b).map(|(x, y)| x + y).collect()
                }
                OpKind::MulElementwise => {
                    let a = self.input_data(inputs[0]);
                    let b = self.input_data(inputs[1]);
                    a.iter().zip(b).map(|(x, y)| x * y).collect()
                }
                OpKind::ScaleByScalar(f) => {
                    self.input_data(inputs[0]).iter().map(|x| x * f).collect()
                }
                OpKind::Relu => self
                    .input_data(inputs[0])
                    .iter()
                    .map(|x| x.max(0.0))
                    .collect(),
                OpKind::SoftmaxRows => {
                    let (ir, ic) = self.nodes[inputs[0].0].dims;
                    ops::softmax_rows(self.input_data(inputs[0]), ir, ic)
                }
                OpKind::L2NormalizeRows => {
                    let (ir, ic) = self.nodes[inputs[0].0].dims;
                    ops::l2_normalize_rows(self.input_data(inputs[0]), ir, ic)
                }
                OpKind::MeanOverAxis(axis) => {
                    let (ir, ic) = self.nodes[inputs[0].0].dims;
                    let x = self.input_data(inputs[0]);
                    let mut out = vec![0.0; r * c];
                    if *axis == 0 {
                        for j in 0..ic {
                            let mut acc = 0.0;
                            for i in 0..ir {
                                acc += x[i * ic + j];
                            }
                            out[j] = acc / ir as f64;
                        }
                    } else {
                        for i in 0..ir {
                            let mut acc = 0.0;
                            for j in 0..ic {
                                acc += x[i * ic + j];
                            }
                            out[i] = acc / ic as f64;
                        }
                    }
                    out
                }
                OpKind::ConcatRows => {
                    let mut out = Vec::with_capacity(r * c);
                    for &p in &inputs {
                        out.extend_from_slice(self.input_data(p));
                    }
                    out
                }
                OpKind::Conv2dValid(g) => {
                    let batch = self.nodes[inputs[0].0].dims.0;
                    ops::conv2d_valid(
                        self.input_data(inputs[0]),
                        self.input_data(inputs[1]),
                        batch,
                        g,
                    )
                }
                OpKind::AvgPool2x2(g) => {
                    let batch = self.nodes[inputs[0].0].dims.0;
                    ops::avgpool2x2(self.input_data(inputs[0]), batch, g)
                }
                OpKind::CrossEntropy(labels) => {
                    let (ir, ic) = self.nodes[inputs[0].0].dims;
                    vec![ops::cross_entropy(self.input_data(inputs[0]), ir, ic, labels)]
                }
                OpKind::Transpose => {
                    let (ir, ic) = self.nodes[inputs[0].0].dims;
                    ops::transpose(self.input_data(inputs[0]), ir, ic)
                }
            };
            self.store(idx, data)?;
        }
        Ok(self
            .nodes
            .last()
            .and_then(|n| n.value.clone())
            .expect("just computed"))
    }

    /// Forward, then reverse-sweep the tape. Requires a scalar root. Returns
    /// the loss and gradients for every trainable leaf the root depends on.
    pub fn backward(&mut self, bindings: &Bindings) -> Result<(f64, Gradients), NumericsError> {
        let root_value = self.forward(bindings)?;
        if root_value.numel() != 1 {
            return Err(NumericsError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let loss = root_value.data()[0];

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[n - 1] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            // Put it back for leaves so it can be harvested afterwards.
            if matches!(self.nodes[idx].op, OpKind::Leaf) {
                grads[idx] = Some(gout);
                continue;
            }
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let inputs = self.nodes[idx].inputs.clone();
            let mut contribs: Vec<(NodeId, Vec<f64>)> = Vec::with_capacity(inputs.len());
            match &op {
                OpKind::Leaf => unreachable!(),
                OpKind::MatMul => {
                    let (m, k) = self.nodes[inputs[0].0].dims;
                    let nn = self.nodes[inputs[1].0].dims.1;
                    let a = self.input_data(inputs[0]);
                    let b = self.input_data(inputs[1]);
                    if self.nodes[inputs[0].0].needs_grad {
                        // dA = dC . B^T
                        let bt = ops::transpose(b, k, nn);
                        contribs.push((inputs[0], ops::matmul(&gout, &bt, m, nn, k)));
                    }
                    if self.nodes[inputs[1].0].needs_grad {
                        // dB = A^T . dC
                        let at = ops::transpose(a, m, k);
                        contribs.push((inputs[1], ops::matmul(&at, &gout, k, m, nn)));
                    }
                }
                OpKind::Add => {
                    for &p in &inputs {
                        if self.nodes[p.0].needs_grad {
                            contribs.push((p, gout.clone()));
                        }
                    }
                }
                OpKind::MulElementwise => {
                    let a = self.input_data(inputs[0]);
                    let b = self.input_data(inputs[1]);
                    if self.nodes[inputs[0].0].needs_grad {
                        contribs.push((inputs[0], gout.iter().zip(b).map(|(g, y)| g * y).collect()));
                    }
                    if self.nodes[inputs[1].0].needs_grad {
                        contribs.push((inputs[1], gout.iter().zip(a).map(|(g, x)| g * x).collect()));
                    }
                }
                OpKind::ScaleByScalar(f) => {
                    if self.nodes[inputs[0].0].needs_grad {
                        contribs.push((inputs[0], gout.iter().map(|g| g * f).collect()));
                    }
                }
                OpKind::Relu => {
                    if self.nodes[inputs[0].0].needs_grad {
                        let x = self.input_data(inputs[0]);
                        // Subgradient 0 at the kink.
                        contribs.push((
                            inputs[0],
                            gout.iter()
                                .zip(x)
                                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                                .collect(),
                        ));
                    }
                }
                OpKind::SoftmaxRows => {
                    if self.nodes[inputs[0].0].needs_grad {
                        let (r, c) = self.nodes[inputs[0].0].dims;
                        let y = self.nodes[idx].value.as_ref().expect("cached").data();
                        contribs.push((inputs[0], ops::softmax_rows_backward(y, &gout, r, c)));
                    }
                }
                OpKind::L2NormalizeRows => {
                    if self.nodes[inputs[0].0].needs_grad {
                        let (r, c) = self.nodes[inputs[0].0].dims;
                        let x = self.input_data(inputs[0]);
                        contribs.push((inputs[0], ops::l2_normalize_rows_backward(x, &gout, r, c)));
                    }
                }
                OpKind::MeanOverAxis(axis) => {
                    if self.nodes[inputs[0].0].needs_grad {
                        let (r, c) = self.nodes[inputs[0].0].dims;
                        let mut dx = vec![0.0; r * c];
                        if *axis == 0 {
                            for i in 0..r {
                                for j in 0..c {
                                    dx[i * c + j] = gout[j] / r as f64;
                                }
                            }
                        } else {
                            for i in 0..r {
                                for j in 0..c {
                                    dx[i * c + j] = gout[i] / c as f64;
                                }
                            }
                        }
                        contribs.push((inputs[0], dx));
                    }
                }
                OpKind::ConcatRows => {
                    let cols = self.nodes[idx].dims.1;
                    let mut offset = 0;
                    for &p in &inputs {
                        let rows = self.nodes[p.0].dims.0;
                        if self.nodes[p.0].needs_grad {
                            contribs
                                .push((p, gout[offset * cols..(offset + rows) * cols].to_vec()));
                        }
                        offset += rows;
                    }
                }
                OpKind::Conv2dValid(g) => {
                    let batch = self.nodes[inputs[0].0].dims.0;
                    let (din, dk) = ops::conv2d_valid_backward(
                        self.input_data(inputs[0]),
                        self.input_data(inputs[1]),
                        &gout,
                        batch,
                        g,
                    );
                    if self.nodes[inputs[0].0].needs_grad {
                        contribs.push((inputs[0], din));
                    }
                    if self.nodes[inputs[1].0].needs_grad {
                        contribs.push((inputs[1], dk));
                    }
                }
                OpKind::AvgPool2x2(g) => {
                    if self.nodes[inputs[0].0].needs_grad {
                        let batch = self.nodes[inputs[0].0].dims.0;
                        contribs.push((inputs[0], ops::avgpool2x2_backward(&gout, batch, g)));
                    }
                }
                OpKind::CrossEntropy(labels) => {
                    if self.nodes[inputs[0].0].needs_grad {
                        let (r, c) = self.nodes[inputs[0].0].dims;
                        contribs.push((
                            inputs[0],
                            ops::cross_entropy_backward(
                                self.input_data(inputs[0]),
                                r,
                                c,
                                labels,
                                gout[0],
                            ),
                        ));
                    }
                }
                OpKind::Transpose => {
                    if self.nodes[inputs[0].0].needs_grad {
                        let (r, c) = self.nodes[idx].dims;
                        contribs.push((inputs[0], ops::transpose(&gout, r, c)));
                    }
                }
            }
            for (target, grad) in contribs {
                match &mut grads[target.0] {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grad) {
                            *a += g;
                        }
                    }
                    slot => *slot = Some(grad),
                }
            }
        }

        let mut out = Gradients::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.trainable {
                continue;
            }
            if let Some(g) = grads[idx].take() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NumericsError::NonFinite {
                        node: node.label.clone(),
                    });
                }
                out.map.insert(
                    idx,
                    Tensor::new(node.declared.clone(), g).expect("grad matches leaf shape"),
                );
            }
        }
        Ok((loss, out))
    }
}
