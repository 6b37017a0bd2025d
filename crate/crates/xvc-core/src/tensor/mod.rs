//! Dense-tensor reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Graph`] owns every tensor created through it: each operation appends a
//! node holding the forward value and a backward rule, so node ids are already
//! in topological order. [`Graph::backward`] walks the tape once in reverse,
//! accumulating gradients into per-node buffers. A graph is single-use: after
//! one backward pass it refuses a second (build a fresh graph per forward
//! pass instead).
//!
//! All storage is `f64`, row-major. Tensors are immutable once created; a
//! graph is confined to one thread, but independent graphs are `Send` and may
//! run in parallel.

mod fd;
pub mod fixtures;
mod ops;

pub use fd::{finite_difference_check, finite_difference_check_against};

use std::sync::Arc;

use crate::error::{Error, Result};

/// Handle to a value on a [`Graph`]'s tape. Only meaningful together with the
/// graph that produced it.
#[derive(Debug, Clone)]
pub struct Tensor {
    id: usize,
    shape: Vec<usize>,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub(crate) fn id(&self) -> usize {
        self.id
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>) + Send + Sync>;

struct Node {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Gradient accumulator handed to backward rules. Contributions to nodes that
/// are off the differentiation path are silently dropped.
pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    sizes: &'a [usize],
    on_path: &'a [bool],
}

impl GradSink<'_> {
    fn buf(&mut self, target: usize) -> Option<&mut Vec<f64>> {
        if !self.on_path[target] {
            return None;
        }
        let size = self.sizes[target];
        Some(self.grads[target].get_or_insert_with(|| vec![0.0; size]))
    }

    pub fn add(&mut self, target: usize, index: usize, value: f64) {
        if let Some(buf) = self.buf(target) {
            buf[index] += value;
        }
    }

    pub fn add_slice(&mut self, target: usize, contribution: &[f64]) {
        if let Some(buf) = self.buf(target) {
            debug_assert_eq!(buf.len(), contribution.len());
            for (g, c) in buf.iter_mut().zip(contribution) {
                *g += c;
            }
        }
    }
}

/// Tape of operation records plus, after [`Graph::backward`], the gradient
/// buffers of every node on the differentiation path.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Create a leaf tensor. Leaves are the only nodes that may require
    /// gradients directly; everything else inherits the flag from its inputs.
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if data.len() != numel_of(shape) {
            return Err(Error::contract(
                "leaf",
                format!(
                    "data length {} does not match shape {:?} (numel {})",
                    data.len(),
                    shape,
                    numel_of(shape)
                ),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(
                "leaf",
                format!("non-finite value {} at index {}", data[i], i),
            ));
        }
        Ok(self.push(Node {
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad,
            backward: None,
        }))
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(data, shape, false)
    }

    /// Rank-0 constant.
    pub fn scalar(&mut self, value: f64) -> Tensor {
        self.leaf(vec![value], &[], false)
            .expect("scalar leaf cannot fail")
    }

    pub fn value(&self, t: &Tensor) -> &[f64] {
        &self.nodes[t.id].data
    }

    /// Forward value of a rank-0 or single-element tensor.
    pub fn scalar_value(&self, t: &Tensor) -> f64 {
        debug_assert_eq!(t.numel(), 1);
        self.nodes[t.id].data[0]
    }

    pub fn requires_grad(&self, t: &Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Gradient buffer accumulated by [`Graph::backward`], if this node was on
    /// the differentiation path.
    pub fn grad(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }

    pub(crate) fn data_arc(&self, t: &Tensor) -> Arc<Vec<f64>> {
        Arc::clone(&self.nodes[t.id].data)
    }

    fn push(&mut self, node: Node) -> Tensor {
        let id = self.nodes.len();
        let shape = node.shape.clone();
        self.nodes.push(node);
        Tensor { id, shape }
    }

    /// Append an operation record. `backward` receives the upstream gradient
    /// and a sink to accumulate into the inputs; it is dropped when no input
    /// requires gradients.
    pub(crate) fn record(
        &mut self,
        name: &'static str,
        inputs: &[&Tensor],
        shape: Vec<usize>,
        data: Vec<f64>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(data.len(), numel_of(&shape), "{name}: bad output buffer");
        let requires_grad = inputs.iter().any(|t| self.nodes[t.id].requires_grad);
        self.push(Node {
            shape,
            data: Arc::new(data),
            requires_grad,
            backward: if requires_grad { Some(backward) } else { None },
        })
    }

    /// Reverse sweep from `loss` (which must hold exactly one element).
    ///
    /// Each node is visited once, in reverse topological (= reverse insertion)
    /// order. After the call every leaf with `requires_grad` owns a gradient
    /// buffer, zero-filled if the loss does not depend on it. A second call
    /// without building a new graph is rejected.
    pub fn backward(&mut self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss.shape),
            ));
        }
        if self.backward_done {
            return Err(Error::contract(
                "backward",
                "backward already ran on this graph; build a new graph per forward pass",
            ));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let sizes: Vec<usize> = self.nodes.iter().map(|n| n.data.len()).collect();
        let on_path: Vec<bool> = self.nodes.iter().map(|n| n.requires_grad).collect();

        if self.nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
            for id in (0..=loss.id).rev() {
                let Some(upstream) = grads[id].take() else {
                    continue;
                };
                if let Some(rule) = self.nodes[id].backward.as_ref() {
                    let (before, after) = grads.split_at_mut(id);
                    // Inputs always precede their consumer on the tape.
                    let mut sink = GradSink {
                        grads: before,
                        sizes: &sizes[..id],
                        on_path: &on_path[..id],
                    };
                    rule(&upstream, &mut sink);
                    let _ = after;
                }
                grads[id] = Some(upstream);
            }
        }

        // Every requires_grad leaf gets a buffer, zeros when unreachable.
        for (id, node) in self.nodes.iter().enumerate() {
            if node.backward.is_none() && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![0.0; node.data.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }
}
