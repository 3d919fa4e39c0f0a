use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::{Node, Tensor, TensorId};

/// Gradients of a scalar with respect to every tracked leaf it depends on.
#[derive(Debug, Clone)]
pub struct GradientMap<T: Real> {
    grads: HashMap<TensorId, Tensor<T>>,
}

impl<T: Real> Default for GradientMap<T> {
    fn default() -> Self {
        Self {
            grads: HashMap::new(),
        }
    }
}

impl<T: Real> GradientMap<T> {
    /// Gradient for a tracked leaf, `None` if the leaf was unreachable.
    pub fn get(&self, leaf: &Tensor<T>) -> Option<&Tensor<T>> {
        leaf.id().and_then(|id| self.grads.get(&id))
    }

    /// Like [`get`](Self::get) but an unreachable or untracked tensor
    /// yields an all-zero gradient of the right shape.
    pub fn get_or_zeros(&self, leaf: &Tensor<T>) -> Tensor<T> {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }

    pub fn contains(&self, id: TensorId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = TensorId> + '_ {
        self.grads.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn topo_order<T: Real>(root: &Arc<Node<T>>) -> Vec<Arc<Node<T>>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (node, children pushed yet)
    let mut stack = vec![(Arc::clone(root), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !seen.insert(node.id) {
            continue;
        }
        stack.push((Arc::clone(&node), true));
        for input in node.inputs.iter().flatten() {
            if !seen.contains(&input.id) {
                stack.push((Arc::clone(input), false));
            }
        }
    }
    order
}

impl<T: Real> Tensor<T> {
    /// Reverse sweep from a rank-0 tensor. Gradients accumulate additively
    /// over fan-out. An untracked scalar yields an empty map.
    pub fn backward(&self) -> Result<GradientMap<T>> {
        if !self.shape().is_empty() {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        let Some(root) = self.node.as_ref() else {
            return Ok(GradientMap::default());
        };

        let order = topo_order(root);
        let mut pending: HashMap<TensorId, Vec<T>> = HashMap::new();
        pending.insert(root.id, vec![T::one()]);
        let mut out = GradientMap::default();

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id) else {
                continue;
            };
            let Some(backward) = node.backward.as_ref() else {
                out.grads.insert(node.id, Tensor::from_parts(node.shape.clone(), grad));
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let (Some(input), Some(g)) = (input, g) else {
                    continue;
                };
                debug_assert_eq!(g.len(), input.len());
                match pending.get_mut(&input.id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                    None => {
                        pending.insert(input.id, g);
                    }
                }
            }
        }
        Ok(out)
    }
}
