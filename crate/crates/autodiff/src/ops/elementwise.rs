use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Neg,
    Relu,
    Exp,
    Log,
    Sqrt,
    Abs,
}

/// How the two operands line up: equal shapes, or one side rank-0.
#[derive(Clone, Copy)]
enum Layout {
    Same,
    LhsScalar,
    RhsScalar,
}

impl Layout {
    fn of<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Self, Vec<usize>)> {
        if a.shape() == b.shape() {
            Ok((Layout::Same, a.shape().to_vec()))
        } else if a.rank() == 0 {
            Ok((Layout::LhsScalar, b.shape().to_vec()))
        } else if b.rank() == 0 {
            Ok((Layout::RhsScalar, a.shape().to_vec()))
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    }

    #[inline]
    fn index(self, i: usize) -> (usize, usize) {
        match self {
            Layout::Same => (i, i),
            Layout::LhsScalar => (0, i),
            Layout::RhsScalar => (i, 0),
        }
    }
}

/// Folds a full-size gradient down to an operand's size (sums for a
/// broadcast scalar).
fn fold<T: Real>(g: Vec<T>, scalar: bool) -> Vec<T> {
    if scalar {
        vec![g.into_iter().sum()]
    } else {
        g
    }
}

pub fn elementwise_binary<T: Real>(kind: BinaryKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let name = match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
    };
    let (layout, shape) = Layout::of(name, a, b)?;
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    if kind == BinaryKind::Div {
        if let Some(index) = bd.iter().position(|v| *v == T::zero()) {
            return Err(TensorError::DivisionByZero { op: name, index });
        }
    }
    let f = |x: T, y: T| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
    };
    let data: Vec<T> = (0..n)
        .map(|i| {
            let (ia, ib) = layout.index(i);
            f(ad[ia], bd[ib])
        })
        .collect();

    let (a_arc, b_arc) = (a.data_arc(), b.data_arc());
    let a_scalar = matches!(layout, Layout::LhsScalar);
    let b_scalar = matches!(layout, Layout::RhsScalar);
    Ok(Tensor::from_op(shape, data, &[a, b], move |g, needs| {
        let ga = needs[0].then(|| {
            let full: Vec<T> = match kind {
                BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                BinaryKind::Mul => (0..g.len()).map(|i| g[i] * b_arc[layout.index(i).1]).collect(),
                BinaryKind::Div => (0..g.len()).map(|i| g[i] / b_arc[layout.index(i).1]).collect(),
            };
            fold(full, a_scalar)
        });
        let gb = needs[1].then(|| {
            let full: Vec<T> = match kind {
                BinaryKind::Add => g.to_vec(),
                BinaryKind::Sub => g.iter().map(|v| -*v).collect(),
                BinaryKind::Mul => (0..g.len()).map(|i| g[i] * a_arc[layout.index(i).0]).collect(),
                BinaryKind::Div => (0..g.len())
                    .map(|i| {
                        let (ia, ib) = layout.index(i);
                        let y = b_arc[ib];
                        -g[i] * a_arc[ia] / (y * y)
                    })
                    .collect(),
            };
            fold(full, b_scalar)
        });
        vec![ga, gb]
    }))
}

pub fn elementwise_unary<T: Real>(kind: UnaryKind, a: &Tensor<T>) -> Result<Tensor<T>> {
    let x = a.data();
    match kind {
        UnaryKind::Log => {
            if let Some(index) = x.iter().position(|v| *v <= T::zero()) {
                return Err(TensorError::Domain {
                    op: "log",
                    index,
                    value: x[index].as_f64(),
                });
            }
        }
        UnaryKind::Sqrt => {
            if let Some(index) = x.iter().position(|v| *v < T::zero()) {
                return Err(TensorError::Domain {
                    op: "sqrt",
                    index,
                    value: x[index].as_f64(),
                });
            }
        }
        _ => {}
    }
    let y: Vec<T> = x
        .iter()
        .map(|&v| match kind {
            UnaryKind::Neg => -v,
            UnaryKind::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            UnaryKind::Exp => v.exp(),
            UnaryKind::Log => v.ln(),
            UnaryKind::Sqrt => v.sqrt(),
            UnaryKind::Abs => v.abs(),
        })
        .collect();
    let x_arc = a.data_arc();
    let y_out = std::sync::Arc::new(y.clone());
    Ok(Tensor::from_op(a.shape().to_vec(), y, &[a], move |g, _| {
        let two = T::one() + T::one();
        let gx = g
            .iter()
            .zip(x_arc.iter().zip(y_out.iter()))
            .map(|(&g, (&x, &y))| match kind {
                UnaryKind::Neg => -g,
                // relu'(0) = 0
                UnaryKind::Relu => {
                    if x > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }
                UnaryKind::Exp => g * y,
                UnaryKind::Log => g / x,
                UnaryKind::Sqrt => g / (two * y),
                UnaryKind::Abs => g * x.signum() * if x == T::zero() { T::zero() } else { T::one() },
            })
            .collect();
        vec![Some(gx)]
    }))
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Self) -> Result<Self> {
        elementwise_binary(BinaryKind::Add, self, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        elementwise_binary(BinaryKind::Sub, self, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        elementwise_binary(BinaryKind::Mul, self, other)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        elementwise_binary(BinaryKind::Div, self, other)
    }

    pub fn neg(&self) -> Self {
        elementwise_unary(UnaryKind::Neg, self).expect("neg is total")
    }

    pub fn relu(&self) -> Self {
        elementwise_unary(UnaryKind::Relu, self).expect("relu is total")
    }

    pub fn exp(&self) -> Self {
        elementwise_unary(UnaryKind::Exp, self).expect("exp is total")
    }

    pub fn log(&self) -> Result<Self> {
        elementwise_unary(UnaryKind::Log, self)
    }

    pub fn sqrt(&self) -> Result<Self> {
        elementwise_unary(UnaryKind::Sqrt, self)
    }

    pub fn abs(&self) -> Self {
        elementwise_unary(UnaryKind::Abs, self).expect("abs is total")
    }

    /// Multiplies by a constant.
    pub fn scale(&self, c: f64) -> Self {
        self.mul(&Tensor::scalar(T::from_f64(c))).expect("scalar operand always broadcasts")
    }

    /// Adds a constant.
    pub fn shift(&self, c: f64) -> Self {
        self.add(&Tensor::scalar(T::from_f64(c))).expect("scalar operand always broadcasts")
    }

    pub fn square(&self) -> Self {
        self.mul(self).expect("same shape")
    }
}
