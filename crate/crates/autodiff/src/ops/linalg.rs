use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// `c[m×n] = a[m×k] · b[k×n]`, all row-major contiguous.
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], beta: T) {
    T::gemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), beta, c, n as isize);
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], beta: T) {
    T::gemm(m, k, n, a, (k as isize, 1), b, (1, k as isize), beta, c, n as isize);
}

/// `c[m×n] = a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], beta: T) {
    T::gemm(m, k, n, a, (1, m as isize), b, (n as isize, 1), beta, c, n as isize);
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_factor<T: Real>(a: &[T], n: usize) -> Result<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    let max_diag = (0..n).map(|i| a[i * n + i].as_f64()).fold(0.0, f64::max);
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d = d - l[j * n + k] * l[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(TensorError::NotPositiveDefinite {
                pivot: j,
                value: d.as_f64(),
                max_diag,
                condition: max_diag / min_pivot.min(d.as_f64().abs()).max(f64::MIN_POSITIVE),
            });
        }
        min_pivot = min_pivot.min(d.as_f64());
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `X · Lᵀ = B` for `X` (rows of `B` are independent), i.e. each row
/// solves `L · xᵀ = bᵀ` by forward substitution.
fn solve_rows_lower_t<T: Real>(l: &[T], n: usize, b: &[T], rows: usize) -> Vec<T> {
    let mut x = b.to_vec();
    for r in 0..rows {
        let row = &mut x[r * n..(r + 1) * n];
        for i in 0..n {
            let mut s = row[i];
            for k in 0..i {
                s = s - l[i * n + k] * row[k];
            }
            row[i] = s / l[i * n + i];
        }
    }
    x
}

/// Solves `Lᵀ · Y = B` (back substitution) for an `n×cols` right side.
fn solve_upper_from_lower<T: Real>(l: &[T], n: usize, b: &[T], cols: usize) -> Vec<T> {
    let mut y = b.to_vec();
    for c in 0..cols {
        for i in (0..n).rev() {
            let mut s = y[i * cols + c];
            for k in (i + 1)..n {
                s = s - l[k * n + i] * y[k * cols + c];
            }
            y[i * cols + c] = s / l[i * n + i];
        }
    }
    y
}

fn transpose_square<T: Real>(a: &[T], n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

impl<T: Real> Tensor<T> {
    /// `…×M×K · K×N → …×M×N`; leading dims of `self` are batched.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        if self.rank() < 2 || other.rank() != 2 {
            return Err(mismatch());
        }
        let k = *self.shape().last().unwrap();
        if other.shape()[0] != k {
            return Err(mismatch());
        }
        let n = other.shape()[1];
        let rows = self.len() / k;
        let mut out = vec![T::zero(); rows * n];
        gemm_nn(rows, k, n, self.data(), other.data(), &mut out, T::zero());
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;

        let (a, b) = (self.data_arc(), other.data_arc());
        Ok(Tensor::from_op(shape, out, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| {
                let mut ga = vec![T::zero(); rows * k];
                gemm_nt(rows, n, k, g, &b, &mut ga, T::zero());
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![T::zero(); k * n];
                gemm_tn(k, rows, n, &a, g, &mut gb, T::zero());
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                reason: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        Ok(Tensor::from_op(vec![c, r], out, &[self], move |g, _| {
            let mut gx = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Lower-triangular `L` with `L·Lᵀ = self` for a symmetric positive-definite
    /// input. The gradient is returned symmetrized, matching an input that is
    /// itself built as a symmetric matrix.
    pub fn cholesky(&self) -> Result<Self> {
        let n = square_dim(self, "cholesky")?;
        let l = Arc::new(cholesky_factor(self.data(), n)?);
        let l_out = l.to_vec();
        Ok(Tensor::from_op(vec![n, n], l_out, &[self], move |g, _| {
            // Φ(Lᵀ·Ḡ): lower triangle with halved diagonal.
            let mut p = vec![T::zero(); n * n];
            gemm_tn(n, n, n, &l, g, &mut p, T::zero());
            let half = T::from_f64(0.5);
            for i in 0..n {
                for j in 0..n {
                    if j > i {
                        p[i * n + j] = T::zero();
                    } else if i == j {
                        p[i * n + j] = p[i * n + j] * half;
                    }
                }
            }
            // S = L⁻ᵀ · P · L⁻¹
            let y = solve_upper_from_lower(&l, n, &p, n); // Y = L⁻ᵀ·P
            let z = solve_upper_from_lower(&l, n, &transpose_square(&y, n), n); // (Y·L⁻¹)ᵀ
            let s = transpose_square(&z, n);
            let mut sym = vec![T::zero(); n * n];
            for i in 0..n {
                for j in 0..n {
                    sym[i * n + j] = half * (s[i * n + j] + s[j * n + i]);
                }
            }
            vec![Some(sym)]
        }))
    }

    /// Solves `X·Lᵀ = self` for `X`, given lower-triangular `l`; equivalently
    /// `X = self · L⁻ᵀ`.
    pub fn solve_lower_transposed(&self, l: &Self) -> Result<Self> {
        let n = square_dim(l, "solve_lower_transposed")?;
        if self.rank() != 2 || self.shape()[1] != n {
            return Err(TensorError::ShapeMismatch {
                op: "solve_lower_transposed",
                lhs: self.shape().to_vec(),
                rhs: l.shape().to_vec(),
            });
        }
        if let Some(i) = (0..n).find(|&i| l.data()[i * n + i] == T::zero()) {
            return Err(TensorError::DivisionByZero {
                op: "solve_lower_transposed",
                index: i * n + i,
            });
        }
        let rows = self.shape()[0];
        let x = Arc::new(solve_rows_lower_t(l.data(), n, self.data(), rows));
        let l_arc = l.data_arc();
        let x_out = x.to_vec();
        Ok(Tensor::from_op(vec![rows, n], x_out, &[self, l], move |g, needs| {
            // dB = dX·L⁻¹ = (L⁻ᵀ·dXᵀ)ᵀ
            let gt = {
                let mut t = vec![T::zero(); n * rows];
                for r in 0..rows {
                    for c in 0..n {
                        t[c * rows + r] = g[r * n + c];
                    }
                }
                t
            };
            let solved = solve_upper_from_lower(&l_arc, n, &gt, rows); // L⁻ᵀ dXᵀ, n×rows
            let gb = needs[0].then(|| {
                let mut gb = vec![T::zero(); rows * n];
                for r in 0..rows {
                    for c in 0..n {
                        gb[r * n + c] = solved[c * rows + r];
                    }
                }
                gb
            });
            // dL = −tril(L⁻ᵀ·dXᵀ·X)
            let gl = needs[1].then(|| {
                let mut m = vec![T::zero(); n * n];
                gemm_nn(n, rows, n, &solved, &x, &mut m, T::zero());
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] = if j > i { T::zero() } else { -m[i * n + j] };
                    }
                }
                m
            });
            vec![gb, gl]
        }))
    }
}

fn square_dim<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<usize> {
    match t.shape() {
        [r, c] if r == c => Ok(*r),
        s => Err(TensorError::Invalid {
            op,
            reason: format!("expected a square matrix, got {s:?}"),
        }),
    }
}
