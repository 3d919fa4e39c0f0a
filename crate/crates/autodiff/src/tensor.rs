use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::real::Real;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> TensorId {
    TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

/// Identity of a node in a recorded graph. Leaves keep their id for life,
/// so it doubles as the key of a [`GradientMap`](crate::GradientMap).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

/// Computes input gradients from the output gradient. The flags say which
/// inputs are tracked; entries for untracked inputs may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct Node<T: Real> {
    pub(crate) id: TensorId,
    pub(crate) shape: Vec<usize>,
    pub(crate) inputs: Vec<Option<Arc<Node<T>>>>,
    pub(crate) backward: Option<BackwardFn<T>>,
}

impl<T: Real> Node<T> {
    pub(crate) fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Dense row-major n-dimensional array.
///
/// A tensor carries a graph node iff gradient tracking is on for it. Values
/// are immutable once built, so clones share storage.
#[derive(Clone)]
pub struct Tensor<T: Real> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    pub(crate) node: Option<Arc<Node<T>>>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("dtype", &T::NAME)
            .field("shape", &self.shape)
            .field("tracked", &self.is_tracked())
            .field("data", &preview)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        if shape.contains(&0) {
            return Err(TensorError::Invalid {
                op: "new",
                reason: format!("dimensions must be positive, got {shape:?}"),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self::from_parts(vec![n, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.to_vec()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Graph id, present iff tracked.
    pub fn id(&self) -> Option<TensorId> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Returns a fresh tracked leaf holding the same values. Each call mints
    /// a new identity.
    pub fn requires_grad(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: Some(Arc::new(Node {
                id: fresh_id(),
                shape: self.shape.clone(),
                inputs: Vec::new(),
                backward: None,
            })),
        }
    }

    /// Same values, no graph node. Gradients never flow through the result.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Builds the output of a differentiable op. The graph edge is recorded
    /// only when at least one input is tracked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: &[&Tensor<T>],
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let mut out = Self::from_parts(shape, data);
        if inputs.iter().any(|t| t.is_tracked()) {
            out.node = Some(Arc::new(Node {
                id: fresh_id(),
                shape: out.shape.clone(),
                inputs: inputs.iter().map(|t| t.node.clone()).collect(),
                backward: Some(Box::new(backward)),
            }));
        }
        out
    }

    /// Shares storage with `self` under a new shape; used by view-like ops.
    pub(crate) fn with_shape_of_data(&self, shape: Vec<usize>) -> Self {
        Self {
            shape,
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }
}

impl<T: Real> PartialEq for Tensor<T> {
    /// Value equality; graph state is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}
