use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Σ|x|
    L1Norm,
    /// Σx²
    L2NormSq,
}

/// Maps each input flat index to its output flat index under a reduction.
struct ReductionPlan {
    out_shape: Vec<usize>,
    out_index: Vec<usize>,
    group: usize,
}

fn plan(shape: &[usize], axes: Option<&[usize]>) -> Result<ReductionPlan> {
    let rank = shape.len();
    let mut reduced = vec![axes.is_none(); rank];
    if let Some(axes) = axes {
        for &ax in axes {
            if ax >= rank {
                return Err(TensorError::InvalidAxis { op: "reduce", axis: ax, rank });
            }
            reduced[ax] = true;
        }
    }
    let out_shape: Vec<usize> = (0..rank).filter(|&d| !reduced[d]).map(|d| shape[d]).collect();
    let group: usize = (0..rank).filter(|&d| reduced[d]).map(|d| shape[d]).product();

    // Output stride for each input dim (0 for reduced dims).
    let mut out_strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        if !reduced[d] {
            out_strides[d] = acc;
            acc *= shape[d];
        }
    }
    let n: usize = shape.iter().product();
    let mut out_index = vec![0usize; n];
    let mut counter = vec![0usize; rank];
    for slot in out_index.iter_mut() {
        *slot = counter.iter().zip(&out_strides).map(|(c, s)| c * s).sum();
        for d in (0..rank).rev() {
            counter[d] += 1;
            if counter[d] < shape[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    Ok(ReductionPlan {
        out_shape,
        out_index,
        group,
    })
}

pub fn reduce<T: Real>(kind: ReduceKind, a: &Tensor<T>, axes: Option<&[usize]>) -> Result<Tensor<T>> {
    let plan = plan(a.shape(), axes)?;
    let out_len: usize = plan.out_shape.iter().product();
    let mut out = vec![T::zero(); out_len];
    for (&x, &o) in a.data().iter().zip(&plan.out_index) {
        out[o] = out[o]
            + match kind {
                ReduceKind::Sum | ReduceKind::Mean => x,
                ReduceKind::L1Norm => x.abs(),
                ReduceKind::L2NormSq => x * x,
            };
    }
    let inv_group = T::one() / T::from_f64(plan.group as f64);
    if kind == ReduceKind::Mean {
        out.iter_mut().for_each(|v| *v = *v * inv_group);
    }

    let x_arc = a.data_arc();
    let out_index = plan.out_index;
    Ok(Tensor::from_op(plan.out_shape, out, &[a], move |g, _| {
        let two = T::one() + T::one();
        let gx = out_index
            .iter()
            .zip(x_arc.iter())
            .map(|(&o, &x)| match kind {
                ReduceKind::Sum => g[o],
                ReduceKind::Mean => g[o] * inv_group,
                ReduceKind::L1Norm => {
                    if x == T::zero() {
                        T::zero()
                    } else {
                        g[o] * x.signum()
                    }
                }
                ReduceKind::L2NormSq => g[o] * two * x,
            })
            .collect();
        vec![Some(gx)]
    }))
}

impl<T: Real> Tensor<T> {
    pub fn sum(&self) -> Self {
        reduce(ReduceKind::Sum, self, None).expect("full reduction is always valid")
    }

    pub fn mean(&self) -> Self {
        reduce(ReduceKind::Mean, self, None).expect("full reduction is always valid")
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Self> {
        reduce(ReduceKind::Sum, self, Some(axes))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Self> {
        reduce(ReduceKind::Mean, self, Some(axes))
    }

    pub fn l1norm(&self, axes: Option<&[usize]>) -> Result<Self> {
        reduce(ReduceKind::L1Norm, self, axes)
    }

    pub fn l2norm_sq(&self, axes: Option<&[usize]>) -> Result<Self> {
        reduce(ReduceKind::L2NormSq, self, axes)
    }
}
