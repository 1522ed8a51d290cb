use std::cell::RefCell;
use std::sync::Arc;

use crate::{Float, Grads, Graph, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v.as_ref()))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.all_finite())
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Arc::new(v.cast())).collect(),
        }
    }
}

/// Binds a [`ParamStore`] into a [`Graph`], creating one leaf per parameter on first use.
pub struct Scope<'g, 's, T: Float> {
    graph: &'g Graph<T>,
    store: &'s ParamStore<T>,
    trainable: bool,
    bound: RefCell<Vec<Option<usize>>>,
}

impl<'g, 's, T: Float> Scope<'g, 's, T> {
    /// Parameters become differentiable leaves.
    pub fn trainable(graph: &'g Graph<T>, store: &'s ParamStore<T>) -> Self {
        Self::with_mode(graph, store, true)
    }

    /// Parameters become constants; nothing upstream of them is differentiated.
    pub fn frozen(graph: &'g Graph<T>, store: &'s ParamStore<T>) -> Self {
        Self::with_mode(graph, store, false)
    }

    fn with_mode(graph: &'g Graph<T>, store: &'s ParamStore<T>, trainable: bool) -> Self {
        Self {
            graph,
            store,
            trainable,
            bound: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn param(&self, id: ParamId) -> Var<'g, T> {
        if let Some(node) = self.bound.borrow()[id.0] {
            return Var {
                graph: self.graph,
                id: node,
            };
        }
        let value = self.store.values[id.0].clone();
        let var = if self.trainable {
            self.graph.variable(value)
        } else {
            self.graph.constant(value)
        };
        self.bound.borrow_mut()[id.0] = Some(var.id);
        var
    }

    /// Gradients in store order; `None` for parameters the loss never touched.
    pub fn param_grads(&self, grads: &mut Grads<T>) -> Vec<Option<Tensor<T>>> {
        self.bound
            .borrow()
            .iter()
            .map(|b| {
                b.and_then(|id| {
                    grads.take(Var {
                        graph: self.graph,
                        id,
                    })
                })
            })
            .collect()
    }
}
