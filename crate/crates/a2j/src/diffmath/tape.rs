//! Define-by-run reverse-mode differentiation tape.
//!
//! A fresh tape is built per forward pass. Operations push nodes holding the
//! forward value, parent indices and a backward rule; [`Tape::backward`]
//! replays the tape in reverse, accumulating gradients. Parameters from a
//! [`ParamStore`] are registered as tagged leaves so their gradients can be
//! copied back out after the pass.

use super::ndarray::{NdArray, Real};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Backward rule: `(out_grad, out_value, parent_values) -> parent_grads`,
/// one gradient per parent in parent order.
pub(crate) type BackwardFn<R> =
    Box<dyn Fn(&NdArray<R>, &NdArray<R>, &[&NdArray<R>]) -> Vec<NdArray<R>>>;

struct Node<R> {
    value: NdArray<R>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<R>>,
    param: Option<ParamId>,
}

pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf holding a non-learnable value (inputs, coordinates, targets).
    pub fn constant(&mut self, value: NdArray<R>) -> Var {
        self.push_node(value, Vec::new(), None, None)
    }

    /// Leaf holding a parameter value; tagged so its gradient can be
    /// extracted after `backward`.
    pub fn param(&mut self, store: &ParamStore<R>, id: ParamId) -> Var {
        self.push_node(store.value(id).clone(), Vec::new(), None, Some(id))
    }

    pub fn value(&self, v: Var) -> &NdArray<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn push_op(
        &mut self,
        value: NdArray<R>,
        parents: Vec<Var>,
        backward: BackwardFn<R>,
    ) -> Var {
        let parents = parents.into_iter().map(|v| v.0).collect();
        self.push_node(value, parents, Some(backward), None)
    }

    fn push_node(
        &mut self,
        value: NdArray<R>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<R>>,
        param: Option<ParamId>,
    ) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            parents,
            backward,
            param,
        });
        Var(id)
    }

    /// Reverse sweep seeding `root` (a scalar) with gradient one.
    pub fn backward(&self, root: Var) -> Result<Gradients<R>> {
        let root_val = &self.nodes[root.0].value;
        if root_val.len() != 1 {
            return Err(Error::shapes(root_val.shape(), &[1]));
        }
        if !root_val.all_finite() {
            return Err(Error::NonFiniteObjective);
        }
        let mut grads: Vec<Option<NdArray<R>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(NdArray::scalar(R::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(backward) = &node.backward {
                let parent_values: Vec<&NdArray<R>> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let parent_grads = backward(&g, &node.value, &parent_values);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg)?,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Add this tape's parameter-leaf gradients into the store.
    pub fn accumulate_param_grads(
        &self,
        grads: &Gradients<R>,
        store: &mut ParamStore<R>,
    ) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, &grads.grads[i]) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    /// Gradients per parameter id, summed over all leaves of that parameter.
    pub fn param_grads(&self, grads: &Gradients<R>) -> Vec<(ParamId, NdArray<R>)> {
        let mut out: Vec<(ParamId, NdArray<R>)> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(id) = node.param else { continue };
            let Some(g) = &grads.grads[i] else { continue };
            if let Some((_, acc)) = out.iter_mut().find(|(pid, _)| *pid == id) {
                acc.add_assign(g).expect("param leaf shapes agree");
            } else {
                out.push((id, g.clone()));
            }
        }
        out
    }
}

/// Gradient per tape node, produced by [`Tape::backward`].
pub struct Gradients<R> {
    grads: Vec<Option<NdArray<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&NdArray<R>> {
        self.grads[v.0].as_ref()
    }
}
