//! Elementwise operations. Binary operations broadcast by the trailing
//! dimension rule and reduce gradients back over stretched axes.

use super::shape::{broadcast_shapes, for_each_broadcast, padded_strides};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Silu,
    Gelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 8] = [
        UnaryOp::Neg,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Tanh,
        UnaryOp::Silu,
        UnaryOp::Gelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Silu => "silu",
            UnaryOp::Gelu => "gelu",
        }
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

// tanh approximation of GELU
#[inline]
fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let c = T::of(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = T::of(0.044_715);
    let inner = c * (x + k * x * x * x);
    // (1 + tanh(u)) / 2 == sigmoid(2u); one exp instead of a tanh
    let s = T::one() / (T::one() + (-(inner + inner)).exp());
    let dinner = c * (T::one() + T::of(3.0) * k * x * x);
    let y = x * s;
    let dy = s + T::of(2.0) * x * s * (T::one() - s) * dinner;
    (y, dy)
}

impl<T: Scalar> Tensor<T> {
    fn map_unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        deriv: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            op,
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| {
                let x = ctx.parents[0].data();
                let g = ctx
                    .grad
                    .iter()
                    .zip(x.iter().zip(ctx.out))
                    .map(|(&g, (&x, &y))| g * deriv(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn unary(&self, op: UnaryOp) -> Tensor<T> {
        match op {
            UnaryOp::Neg => self.map_unary("neg", |x| -x, |_, _| -T::one()),
            UnaryOp::Sin => self.map_unary("sin", |x| x.sin(), |x, _| x.cos()),
            UnaryOp::Cos => self.map_unary("cos", |x| x.cos(), |x, _| -x.sin()),
            UnaryOp::Exp => self.map_unary("exp", |x| x.exp(), |_, y| y),
            UnaryOp::Log => self.map_unary("log", |x| x.ln(), |x, _| T::one() / x),
            UnaryOp::Tanh => self.map_unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y),
            UnaryOp::Silu => self.map_unary(
                "silu",
                |x| x * sigmoid(x),
                |x, _| {
                    let s = sigmoid(x);
                    s * (T::one() + x * (T::one() - s))
                },
            ),
            UnaryOp::Gelu => self.map_unary("gelu", |x| gelu_parts(x).0, |x, _| gelu_parts(x).1),
        }
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(UnaryOp::Neg)
    }
    pub fn sin(&self) -> Tensor<T> {
        self.unary(UnaryOp::Sin)
    }
    pub fn cos(&self) -> Tensor<T> {
        self.unary(UnaryOp::Cos)
    }
    pub fn exp(&self) -> Tensor<T> {
        self.unary(UnaryOp::Exp)
    }
    pub fn log(&self) -> Tensor<T> {
        self.unary(UnaryOp::Log)
    }
    pub fn tanh(&self) -> Tensor<T> {
        self.unary(UnaryOp::Tanh)
    }
    pub fn silu(&self) -> Tensor<T> {
        self.unary(UnaryOp::Silu)
    }
    pub fn gelu(&self) -> Tensor<T> {
        self.unary(UnaryOp::Gelu)
    }

    pub fn square(&self) -> Tensor<T> {
        self.map_unary("square", |x| x * x, |x, _| T::of(2.0) * x)
    }

    pub fn powf(&self, p: T) -> Tensor<T> {
        self.map_unary("pow_scalar", move |x| x.powf(p), move |x, _| p * x.powf(p - T::one()))
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        self.map_unary("add_scalar", move |x| x + s, |_, _| T::one())
    }

    pub fn mul_scalar(&self, s: T) -> Tensor<T> {
        self.map_unary("mul_scalar", move |x| x * s, move |_, _| s)
    }

    /// Broadcasting binary operation.
    pub fn binary(&self, op: BinaryOp, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        match op {
            BinaryOp::Add => self.zip_with("add", rhs, |a, b| a + b, |_, _| T::one(), |_, _| T::one()),
            BinaryOp::Sub => self.zip_with("sub", rhs, |a, b| a - b, |_, _| T::one(), |_, _| -T::one()),
            BinaryOp::Mul => self.zip_with("mul", rhs, |a, b| a * b, |_, b| b, |a, _| a),
            BinaryOp::Div => self.zip_with(
                "div",
                rhs,
                |a, b| a / b,
                |_, b| T::one() / b,
                |a, b| -a / (b * b),
            ),
        }
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Add, rhs)
    }
    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Sub, rhs)
    }
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Mul, rhs)
    }
    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryOp::Div, rhs)
    }

    fn zip_with(
        &self,
        op: &'static str,
        rhs: &Tensor<T>,
        f: impl Fn(T, T) -> T,
        da: impl Fn(T, T) -> T + 'static,
        db: impl Fn(T, T) -> T + 'static,
    ) -> Result<Tensor<T>> {
        let out_shape = broadcast_shapes(self.shape(), rhs.shape()).ok_or_else(|| Error::ShapeMismatch {
            op,
            lhs: self.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        })?;
        let sa = padded_strides(self.shape(), &out_shape);
        let sb = padded_strides(rhs.shape(), &out_shape);
        let data = {
            let a = self.data();
            let b = rhs.data();
            if self.shape() == rhs.shape() {
                a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
            } else {
                let mut out = vec![T::zero(); super::numel(&out_shape)];
                for_each_broadcast(&out_shape, sa, sb, |o, i, j| out[o] = f(a[i], b[j]));
                out
            }
        };
        let shape_for_bw = out_shape.clone();
        Ok(Tensor::from_op(
            op,
            data,
            out_shape,
            vec![self.clone(), rhs.clone()],
            Box::new(move |ctx| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let a = pa.data();
                let b = pb.data();
                let mut ga = pa.requires_grad().then(|| vec![T::zero(); a.len()]);
                let mut gb = pb.requires_grad().then(|| vec![T::zero(); b.len()]);
                for_each_broadcast(&shape_for_bw, sa, sb, |o, i, j| {
                    let g = ctx.grad[o];
                    if let Some(ga) = ga.as_mut() {
                        ga[i] = ga[i] + g * da(a[i], b[j]);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] = gb[j] + g * db(a[i], b[j]);
                    }
                });
                vec![ga, gb]
            }),
        ))
    }
}
