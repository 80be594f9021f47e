use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major n-dimensional array.
///
/// Batched images use the `N x C x H x W` convention. Gradient buffers live on
/// the differentiable wrappers ([`Var`](super::Var) and network parameters),
/// not on the plain value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Pointwise binary operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Pointwise unary operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Log,
    Exp,
    Clamp { lo: f64, hi: f64 },
}

/// Right-hand side of a binary elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a, T: Scalar> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                detail: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a rank-0 (or single element) tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    /// `(N, C, H, W)` extents of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::InvalidShape {
                op,
                detail: format!("expected N x C x H x W, got {:?}", self.shape),
            }),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                detail: format!("cannot view {:?} as {shape:?}", self.shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.ensure_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len().max(1) as f64)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Slice along the leading axis: items `[start, start + count)`.
    pub fn narrow_batch(&self, start: usize, count: usize) -> Result<Self> {
        let n = *self.shape.first().ok_or(Error::InvalidShape {
            op: "narrow_batch",
            detail: "rank-0 tensor".into(),
        })?;
        if start + count > n {
            return Err(Error::InvalidArgument(format!(
                "batch slice {start}..{} out of range for {n}",
                start + count
            )));
        }
        let item: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Self {
            shape,
            data: self.data[start * item..(start + count) * item].to_vec(),
        })
    }

    /// Concatenate along the leading (batch) axis.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or(Error::InvalidArgument(
            "concat_batch needs at least one tensor".into(),
        ))?;
        let tail = &first.shape[1..];
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape.len() != first.shape.len() || &p.shape[1..] != tail {
                return Err(Error::ShapeMismatch {
                    op: "concat_batch",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Self { shape, data })
    }

    /// Pointwise binary operation against a same-shape tensor or a scalar.
    pub fn binary(&self, op: BinaryOp, rhs: Operand<'_, T>) -> Result<Self> {
        let f = |a: T, b: T| match op {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        };
        let out = match rhs {
            Operand::Tensor(b) => {
                if op == BinaryOp::Div && b.data.iter().any(|v| v.is_zero()) {
                    return Err(Error::Domain {
                        op: "div",
                        detail: "division by zero".into(),
                    });
                }
                self.zip_map(b, "elementwise", f)?
            }
            Operand::Scalar(b) => {
                if op == BinaryOp::Div && b.is_zero() {
                    return Err(Error::Domain {
                        op: "div",
                        detail: "division by zero".into(),
                    });
                }
                self.map(|a| f(a, b))
            }
        };
        out.ensure_finite("elementwise")
    }

    /// Pointwise unary operation.
    pub fn unary(&self, op: UnaryOp) -> Result<Self> {
        match op {
            UnaryOp::Log => {
                if self.data.iter().any(|&v| v <= T::zero()) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: "log of non-positive value".into(),
                    });
                }
                Ok(self.map(T::ln))
            }
            UnaryOp::Exp => self.map(T::exp).ensure_finite("exp"),
            UnaryOp::Clamp { lo, hi } => {
                if lo > hi {
                    return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
                }
                let (lo, hi) = (T::of(lo), T::of(hi));
                // NaN must survive: `max`/`min` would silently replace it.
                Ok(self.map(|v| if v.is_nan() { v } else { v.max(lo).min(hi) }))
            }
        }
    }
}
