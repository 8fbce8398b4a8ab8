//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its forward value. Nodes that
//! depend on a gradient-tracking leaf also keep an [`Op`] that knows how to
//! push the node's gradient back to its inputs. [`Tape::backward`] walks the
//! nodes in reverse insertion order, which is a valid topological order
//! because inputs always precede their consumers.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of one recorded operation.
pub trait Op {
    /// Adds the contribution of `grad_out` (gradient of the root with
    /// respect to this node's output `out`) to the gradients of the inputs.
    fn backward(&self, out: &Tensor, grad_out: &[f64], grads: &mut Grads<'_>);
}

/// Gradient sink handed to [`Op::backward`].
pub struct Grads<'a> {
    slots: &'a mut [Option<Vec<f64>>],
    values: &'a [Tensor],
    tracked: &'a [bool],
}

impl<'a> Grads<'a> {
    pub fn value(&self, v: Var) -> &'a Tensor {
        let values: &'a [Tensor] = self.values;
        &values[v.0]
    }

    /// Whether `v` needs a gradient at all; ops skip work for constants.
    pub fn wants(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    /// Zero-initialised on first access.
    pub fn slot(&mut self, v: Var) -> &mut [f64] {
        let len = self.values[v.0].numel();
        self.slots[v.0].get_or_insert_with(|| vec![0.0; len])
    }
}

/// Pending running-statistics update recorded by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub momentum: f64,
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Option<Box<dyn Op>>>,
    tracked: Vec<bool>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    param_nodes: Vec<(ParamId, Var)>,
    stat_updates: Vec<StatUpdate>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn insert(&mut self, value: Tensor, op: Option<Box<dyn Op>>, tracked: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.tracked.push(tracked);
        self.leaf_grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.insert(value, None, false)
    }

    /// Gradient-tracking input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.insert(value, None, true)
    }

    /// Places a parameter on the tape, reusing the node if it is already there.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, var)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return var;
        }
        let param = store.get(id);
        let var = self.insert(param.value.clone(), None, param.trainable);
        self.param_nodes.push((id, var));
        var
    }

    /// Records the result of a differentiable operation on `inputs`.
    pub fn push(&mut self, value: Tensor, inputs: &[Var], op: impl Op + 'static) -> Var {
        let tracked = inputs.iter().any(|v| self.tracked[v.0]);
        let op: Option<Box<dyn Op>> = if tracked { Some(Box::new(op)) } else { None };
        self.insert(value, op, tracked)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    /// Accumulated gradient of a leaf after one or more backward passes.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn param_nodes(&self) -> &[(ParamId, Var)] {
        &self.param_nodes
    }

    pub fn record_stat_update(&mut self, update: StatUpdate) {
        self.stat_updates.push(update);
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Back-propagates from a shape-`()` root. Leaf gradients accumulate
    /// across calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.values[root.0].shape();
        if !shape.is_empty() {
            return Err(Error::NonScalarRoot(shape.to_vec()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Some(op) => {
                    let (inputs, _) = grads.split_at_mut(i);
                    let mut sink =
                        Grads { slots: inputs, values: &self.values, tracked: &self.tracked };
                    op.backward(&self.values[i], &g, &mut sink);
                }
                None if self.tracked[i] => match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                },
                None => {}
            }
        }
        Ok(())
    }
}
