use std::cell::RefCell;
use std::sync::Arc;

use crate::{Float, Tensor};

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &mut Grads<T>)>;

struct Node<T: Float> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Define-by-run tape. Every op appends a node; [`Graph::backward`] walks it in reverse.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Float> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives gradients.
    pub fn variable(&self, value: impl Into<Arc<Tensor<T>>>) -> Var<'_, T> {
        self.leaf(value.into(), true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: impl Into<Arc<Tensor<T>>>) -> Var<'_, T> {
        self.leaf(value.into(), false)
    }

    fn leaf(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            backward: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends an op result. `backward` is dropped when no parent needs a gradient.
    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Var<'_, T> {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Grads<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.id].value.numel(),
            1,
            "backward() needs a scalar loss"
        );
        let mut grads = Grads {
            slots: (0..nodes.len()).map(|_| None).collect(),
        };
        grads.slots[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), T::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads.slots[id] = None;
                continue;
            }
            let Some(g) = grads.slots[id].take() else {
                continue;
            };
            match &node.backward {
                Some(bw) => bw(&g, &mut grads),
                None => grads.slots[id] = Some(g),
            }
        }
        grads
    }
}

impl<T: Float> Grads<T> {
    /// Gradient of a leaf variable, if it was reached.
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.slots.get(v.id).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.slots.get_mut(v.id).and_then(|s| s.take())
    }

    /// Accumulate into the gradient slot of node `id`, allocating zeros of `shape` on first use.
    pub(crate) fn slot(&mut self, id: usize, shape: &[usize]) -> &mut [T] {
        self.slots[id]
            .get_or_insert_with(|| Tensor::zeros(shape))
            .data_mut()
    }
}

impl<'g, T: Float> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad_of(self.id)
    }
}
