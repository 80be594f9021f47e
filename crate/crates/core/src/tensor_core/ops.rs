//! Differentiable elementwise operations and reductions on [`Var`].

use super::tensor::{BinaryOp, Operand, UnaryOp};
use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Scalar> Var<T> {
    /// Pointwise `self (op) rhs` for same-shape operands.
    pub fn binary(&self, op: BinaryOp, rhs: &Var<T>) -> Result<Var<T>> {
        let value = self.value().binary(op, Operand::Tensor(rhs.value()))?;
        Ok(Var::from_op(
            value,
            &[self, rhs],
            Box::new(move |g, parents, _| {
                let (a, b) = (parents[0].value(), parents[1].value());
                let (ga, gb) = match op {
                    BinaryOp::Add => (g.clone(), g.clone()),
                    BinaryOp::Sub => (g.clone(), g.scale(-T::one())),
                    BinaryOp::Mul => (
                        g.zip_map(b, "mul_backward", |g, b| g * b)?,
                        g.zip_map(a, "mul_backward", |g, a| g * a)?,
                    ),
                    BinaryOp::Div => {
                        let ga = g.zip_map(b, "div_backward", |g, b| g / b)?;
                        let mut gb = g.clone();
                        for ((o, &av), &bv) in gb.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                            *o = -*o * av / (bv * bv);
                        }
                        (ga, gb)
                    }
                };
                Ok(vec![Some(ga), Some(gb)])
            }),
        ))
    }

    /// Pointwise `self (op) s` for a scalar constant `s`.
    pub fn binary_scalar(&self, op: BinaryOp, s: f64) -> Result<Var<T>> {
        let s = T::of(s);
        let value = self.value().binary(op, Operand::Scalar(s))?;
        Ok(Var::from_op(
            value,
            &[self],
            Box::new(move |g, _, _| {
                let ga = match op {
                    BinaryOp::Add | BinaryOp::Sub => g.clone(),
                    BinaryOp::Mul => g.scale(s),
                    BinaryOp::Div => g.scale(T::one() / s),
                };
                Ok(vec![Some(ga)])
            }),
        ))
    }

    pub fn unary(&self, op: UnaryOp) -> Result<Var<T>> {
        let value = self.value().unary(op)?;
        Ok(Var::from_op(
            value,
            &[self],
            Box::new(move |g, parents, out| {
                let x = parents[0].value();
                let ga = match op {
                    UnaryOp::Log => g.zip_map(x, "log_backward", |g, x| g / x)?,
                    UnaryOp::Exp => g.zip_map(out, "exp_backward", |g, y| g * y)?,
                    UnaryOp::Clamp { lo, hi } => {
                        let (lo, hi) = (T::of(lo), T::of(hi));
                        g.zip_map(x, "clamp_backward", |g, x| {
                            if x < lo || x > hi {
                                T::zero()
                            } else {
                                g
                            }
                        })?
                    }
                };
                Ok(vec![Some(ga)])
            }),
        ))
    }

    pub fn add(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary(BinaryOp::Add, rhs)
    }

    pub fn sub(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary(BinaryOp::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary(BinaryOp::Mul, rhs)
    }

    pub fn div(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary(BinaryOp::Div, rhs)
    }

    pub fn add_scalar(&self, s: f64) -> Var<T> {
        self.binary_scalar(BinaryOp::Add, s)
            .expect("adding a finite scalar")
    }

    pub fn mul_scalar(&self, s: f64) -> Var<T> {
        self.binary_scalar(BinaryOp::Mul, s)
            .expect("scaling by a finite scalar")
    }

    /// `1 - self`
    pub fn one_minus(&self) -> Var<T> {
        self.mul_scalar(-1.0).add_scalar(1.0)
    }

    pub fn log(&self) -> Result<Var<T>> {
        self.unary(UnaryOp::Log)
    }

    pub fn exp(&self) -> Result<Var<T>> {
        self.unary(UnaryOp::Exp)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<T>> {
        self.unary(UnaryOp::Clamp { lo, hi })
    }

    pub fn square(&self) -> Var<T> {
        let value = self.value().map(|v| v * v);
        Var::from_op(
            value,
            &[self],
            Box::new(|g, parents, _| {
                let two = T::of(2.0);
                Ok(vec![Some(g.zip_map(parents[0].value(), "square_backward", |g, x| g * two * x)?)])
            }),
        )
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Var<T> {
        let value = Tensor::scalar(self.value().sum());
        Var::from_op(
            value,
            &[self],
            Box::new(|g, parents, _| Ok(vec![Some(Tensor::full(parents[0].shape(), g.item()))])),
        )
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value().len().max(1) as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Per-item sums over every axis but the leading one: `[N, ...] -> [N]`.
    pub fn sum_per_sample(&self) -> Result<Var<T>> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(Error::InvalidShape {
                op: "sum_per_sample",
                detail: "rank-0 input".into(),
            });
        }
        let n = shape[0];
        let item = if n == 0 { 0 } else { self.value().len() / n };
        let data: Vec<T> = if item == 0 {
            vec![T::zero(); n]
        } else {
            self.value().data().chunks(item).map(|c| c.iter().copied().sum()).collect()
        };
        Ok(Var::from_op(
            Tensor::from_vec(&[n], data)?,
            &[self],
            Box::new(move |g, parents, _| {
                let mut out = Tensor::zeros(parents[0].shape());
                if item > 0 {
                    for (chunk, &gv) in out.data_mut().chunks_mut(item).zip(g.data()) {
                        chunk.fill(gv);
                    }
                }
                Ok(vec![Some(out)])
            }),
        ))
    }
}
