use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.with_shape_of_data(shape.to_vec());
        Ok(Tensor::from_op(out.shape().to_vec(), out.to_vec(), &[self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Concatenates along axis 0. All trailing dims must agree.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat_rows",
            reason: "no tensors given".into(),
        })?;
        if first.rank() == 0 {
            return Err(TensorError::Invalid {
                op: "concat_rows",
                reason: "cannot concatenate scalars".into(),
            });
        }
        let tail = &first.shape()[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() == 0 || &p.shape()[1..] != tail {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let mut shape = first.shape().to_vec();
        shape[0] = rows;
        let lens: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        Ok(Tensor::from_op(shape, data, parts, move |g, needs| {
            let mut offset = 0;
            lens.iter()
                .zip(needs)
                .map(|(&len, &need)| {
                    let part = need.then(|| g[offset..offset + len].to_vec());
                    offset += len;
                    part
                })
                .collect()
        }))
    }

    /// Rows `start..end` along axis 0.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let indices: Vec<usize> = (start..end).collect();
        self.select_rows(&indices)
    }

    /// Gathers rows along axis 0; indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if self.rank() == 0 || indices.is_empty() {
            return Err(TensorError::Invalid {
                op: "select_rows",
                reason: format!("need a non-scalar input and at least one index, shape {:?}", self.shape()),
            });
        }
        let rows = self.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Invalid {
                op: "select_rows",
                reason: format!("row {bad} out of range for {rows} rows"),
            });
        }
        let width = self.len() / rows;
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * width..(i + 1) * width]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let indices = indices.to_vec();
        let total = self.len();
        Ok(Tensor::from_op(shape, data, &[self], move |g, _| {
            let mut gx = vec![T::zero(); total];
            for (k, &i) in indices.iter().enumerate() {
                for c in 0..width {
                    gx[i * width + c] = gx[i * width + c] + g[k * width + c];
                }
            }
            vec![Some(gx)]
        }))
    }

    /// `[N] → [count, N]`, each row a copy of `self`.
    pub fn repeat_rows(&self, count: usize) -> Result<Self> {
        let &[n] = self.shape() else {
            return Err(TensorError::Invalid {
                op: "repeat_rows",
                reason: format!("expected rank 1, got {:?}", self.shape()),
            });
        };
        let data: Vec<T> = (0..count).flat_map(|_| self.data().iter().copied()).collect();
        Ok(Tensor::from_op(vec![count, n], data, &[self], move |g, _| {
            let mut gx = vec![T::zero(); n];
            for row in g.chunks(n) {
                gx.iter_mut().zip(row).for_each(|(a, b)| *a = *a + *b);
            }
            vec![Some(gx)]
        }))
    }

    /// `[M] → [M, count]`, each column a copy of `self`.
    pub fn repeat_cols(&self, count: usize) -> Result<Self> {
        let &[m] = self.shape() else {
            return Err(TensorError::Invalid {
                op: "repeat_cols",
                reason: format!("expected rank 1, got {:?}", self.shape()),
            });
        };
        let data: Vec<T> = self
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, count))
            .collect();
        Ok(Tensor::from_op(vec![m, count], data, &[self], move |g, _| {
            vec![Some(g.chunks(count).map(|row| row.iter().copied().sum()).collect())]
        }))
    }

    /// Row-wise `log Σ_j w_ij·exp(x_ij)` of an `[N,M]` tensor against
    /// constant nonnegative weights. Zero-weight entries are excluded; a row
    /// with no positive weight is an error.
    pub fn weighted_logsumexp_rows(&self, weights: &[T]) -> Result<Self> {
        let &[n, m] = self.shape() else {
            return Err(TensorError::Invalid {
                op: "weighted_logsumexp_rows",
                reason: format!("expected rank 2, got {:?}", self.shape()),
            });
        };
        if weights.len() != n * m {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_logsumexp_rows",
                lhs: self.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        if let Some(index) = weights.iter().position(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(TensorError::Domain {
                op: "weighted_logsumexp_rows",
                index,
                value: weights[index].as_f64(),
            });
        }
        let x = self.data();
        let mut out = Vec::with_capacity(n);
        // softmax-style responsibilities, reused by the backward pass
        let mut resp = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &x[i * m..(i + 1) * m];
            let w = &weights[i * m..(i + 1) * m];
            let max = row
                .iter()
                .zip(w)
                .filter(|(_, &w)| w > T::zero())
                .map(|(&v, _)| v)
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                return Err(TensorError::Invalid {
                    op: "weighted_logsumexp_rows",
                    reason: format!("row {i} has no positive weight"),
                });
            }
            let mut total = T::zero();
            for j in 0..m {
                let e = if w[j] > T::zero() { w[j] * (row[j] - max).exp() } else { T::zero() };
                resp[i * m + j] = e;
                total = total + e;
            }
            resp[i * m..(i + 1) * m].iter_mut().for_each(|r| *r = *r / total);
            out.push(max + total.ln());
        }
        let resp = Arc::new(resp);
        Ok(Tensor::from_op(vec![n], out, &[self], move |g, _| {
            let gx = (0..n * m).map(|idx| g[idx / m] * resp[idx]).collect();
            vec![Some(gx)]
        }))
    }
}
