use std::collections::HashMap;

use rand::Rng;

use super::ops::{self, Op};
use super::{NumError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run expression DAG over dense tensors.
///
/// Every builder method evaluates its node immediately, so the graph always
/// holds forward values. Nodes are appended in topological order: a node only
/// references nodes created before it. [`Graph::evaluate`] replays the
/// recorded operations with new leaf values.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

/// Adjoints of the parameter nodes reached by a backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn remove(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.remove(&id)
    }
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

    /// Parameter nodes in registration order.
    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Inputs of a node; every id is strictly lower than `id`.
    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    fn push_leaf(&mut self, op: Op, value: Tensor) -> NodeId {
        let requires_grad = matches!(op, Op::Param);
        self.nodes.push(Node {
            op,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Op::Input, value)
    }

    /// Trainable leaf; receives an adjoint from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.push_leaf(Op::Param, value);
        self.params.push(id);
        id
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> Result<NodeId, NumError> {
        let value = {
            let ins: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            ops::forward(&op, &ins)?
        };
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::MatMul, vec![a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::Mul, vec![a, b])
    }

    /// `x + y` where `y` is a single value or matches the trailing axes of `x`.
    pub fn add_broadcast(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::AddBroadcast, vec![x, y])
    }

    /// `x ⊙ y` where `y` is a single value or matches the trailing axes of `x`.
    pub fn mul_broadcast(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::MulBroadcast, vec![x, y])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, NumError> {
        self.push(Op::Scale(c), vec![x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::Relu, vec![x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::Sigmoid, vec![x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::Softmax, vec![x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::SumAll, vec![x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::MeanAll, vec![x])
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, NumError> {
        self.push(Op::SumAxis(axis), vec![x])
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::Square, vec![x])
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::Sqrt, vec![x])
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId, NumError> {
        if xs.is_empty() {
            return Err(NumError::Shape {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        self.push(Op::Concat, xs.to_vec())
    }

    /// Elementwise product with a constant mask.
    pub fn mask_mul(&mut self, x: NodeId, mask: Tensor) -> Result<NodeId, NumError> {
        self.push(Op::MaskMul(mask), vec![x])
    }

    /// Inverted dropout. In eval mode (or with `rate == 0`) this is the
    /// identity and no node is added.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: NodeId,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<NodeId, NumError> {
        if !train || rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let shape = self.value(x).shape().to_vec();
        let mask = Tensor::from_fn(&shape, || {
            if keep > 0.0 && rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.push(Op::Dropout(mask), vec![x])
    }

    /// Row gather from a rank-2 table; the adjoint scatter-adds into the table.
    pub fn gather(&mut self, table: NodeId, indices: Vec<usize>) -> Result<NodeId, NumError> {
        self.push(Op::Gather(indices), vec![table])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, NumError> {
        self.push(Op::Reshape(shape.to_vec()), vec![x])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::TransposeLast2, vec![x])
    }

    /// Sums consecutive groups of rows: `[n, d] -> [segments, d]`.
    pub fn segment_sum(&mut self, x: NodeId, lengths: Vec<usize>) -> Result<NodeId, NumError> {
        self.push(Op::SegmentSum(lengths), vec![x])
    }

    /// Scales each row to unit L2 norm; near-zero rows map to zero.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        self.push(Op::L2NormalizeRows, vec![x])
    }

    /// Normalization over the last axis without affine parameters.
    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId, NumError> {
        self.push(Op::LayerNorm(eps), vec![x])
    }

    /// Mean binary cross entropy of logits against fixed labels.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: Vec<f64>) -> Result<NodeId, NumError> {
        self.push(Op::BceWithLogits(labels), vec![logits])
    }

    /// `x · W + b` for `W: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let xw = self.matmul(x, w)?;
        self.add_broadcast(xw, b)
    }

    /// Replays the graph with new values for some leaves.
    pub fn evaluate(&mut self, bindings: &[(NodeId, Tensor)]) -> Result<(), NumError> {
        for (id, t) in bindings {
            let node = self.nodes.get_mut(id.0).ok_or(NumError::UnknownNode(id.0))?;
            if !node.op.is_leaf() {
                return Err(NumError::NotLeaf(id.0));
            }
            if node.value.shape() != t.shape() {
                return Err(NumError::Shape {
                    op: "bind",
                    detail: format!("node {} expects {:?}, got {:?}", id.0, node.value.shape(), t.shape()),
                });
            }
            node.value = t.clone();
        }
        for i in 0..self.nodes.len() {
            if self.nodes[i].op.is_leaf() {
                continue;
            }
            let (before, after) = self.nodes.split_at_mut(i);
            let node = &mut after[0];
            let ins: Vec<&Tensor> = node.inputs.iter().map(|j| &before[j.0].value).collect();
            node.value = ops::forward(&node.op, &ins)?;
        }
        Ok(())
    }

    /// Reverse-mode pass from a scalar node. Every registered parameter gets an
    /// adjoint; parameters the loss does not depend on get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumError> {
        let loss_node = self.nodes.get(loss.0).ok_or(NumError::UnknownNode(loss.0))?;
        if loss_node.value.len() != 1 {
            return Err(NumError::NotScalar(loss_node.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::ones(loss_node.value.shape()));
        let mut grads = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Param) {
                grads.grads.insert(NodeId(i), g);
                continue;
            }
            if !node.requires_grad || node.op.is_leaf() {
                continue;
            }
            let ins: Vec<&Tensor> = node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
            let need: Vec<bool> = node.inputs.iter().map(|j| self.nodes[j.0].requires_grad).collect();
            let input_grads = ops::backward(&node.op, &ins, &node.value, &g, &need);
            for (j, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut adj[j.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(ig.data())
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        for &p in &self.params {
            grads
                .grads
                .entry(p)
                .or_insert_with(|| Tensor::zeros(self.nodes[p.0].value.shape()));
        }
        Ok(grads)
    }

    /// Smallest |input| over all ReLU nodes, used to keep finite-difference
    /// probes away from the kink.
    pub fn min_relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu))
            .flat_map(|n| self.nodes[n.inputs[0].0].value.data().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}
