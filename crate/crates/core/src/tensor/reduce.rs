//! Reductions and normalizing maps along one axis.
//!
//! All sums run sequentially in index order so repeated evaluations are
//! bit-identical.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// (outer, axis length, inner) decomposition of a shape around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(Error::AxisOutOfRange { op, axis, rank })
    } else {
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Result<Tensor<T>> {
        self.reduce(ReduceOp::Sum, None, false)
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        self.reduce(ReduceOp::Mean, None, false)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.reduce(ReduceOp::Sum, Some(axis), keepdim)
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.reduce(ReduceOp::Mean, Some(axis), keepdim)
    }

    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.reduce(ReduceOp::Max, Some(axis), keepdim)
    }

    /// Reduces over `axis`, or over every element when `axis` is `None`.
    /// `Max` routes its gradient to the first maximal index.
    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>, keepdim: bool) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        let (outer, len, inner, out_shape) = match axis {
            Some(ax) => {
                check_axis("reduce", ax, shape.len())?;
                let (o, l, i) = split_at_axis(&shape, ax);
                let mut out_shape = shape.clone();
                if keepdim {
                    out_shape[ax] = 1;
                } else {
                    out_shape.remove(ax);
                    if out_shape.is_empty() {
                        out_shape.push(1);
                    }
                }
                (o, l, i, out_shape)
            }
            None => (1, self.numel(), 1, vec![1]),
        };
        let src = self.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = if op == ReduceOp::Max { vec![0usize; outer * inner] } else { Vec::new() };
        let scale = T::one() / T::of(len as f64);
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| src[(o * len + k) * inner + i];
                let slot = o * inner + i;
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let mut acc = T::zero();
                        for k in 0..len {
                            acc = acc + at(k);
                        }
                        out[slot] = if op == ReduceOp::Mean { acc * scale } else { acc };
                    }
                    ReduceOp::Max => {
                        let mut best = 0;
                        for k in 1..len {
                            // strict comparison keeps the first index on ties
                            if at(k) > at(best) {
                                best = k;
                            }
                        }
                        argmax[slot] = best;
                        out[slot] = at(best);
                    }
                }
            }
        }
        drop(src);
        let name = match op {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
            ReduceOp::Max => "max",
        };
        let n = self.numel();
        Ok(Tensor::from_op(
            name,
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); n];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        let up = ctx.grad[slot];
                        match op {
                            ReduceOp::Sum | ReduceOp::Mean => {
                                let v = if op == ReduceOp::Mean { up * scale } else { up };
                                for k in 0..len {
                                    g[(o * len + k) * inner + i] = v;
                                }
                            }
                            ReduceOp::Max => g[(o * len + argmax[slot]) * inner + i] = up,
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Softmax along `axis`, stabilized by subtracting the running maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("softmax", axis, self.rank())?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        if inner == 1 {
            for (row, dst) in src.chunks(len).zip(out.chunks_mut(len)) {
                let m = row.iter().fold(row[0], |a, &v| a.max(v));
                let mut z = T::zero();
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = (v - m).exp();
                    z = z + *d;
                }
                let inv = T::one() / z;
                for d in dst.iter_mut() {
                    *d = *d * inv;
                }
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let mut m = src[idx(0)];
                    for k in 1..len {
                        m = m.max(src[idx(k)]);
                    }
                    let mut z = T::zero();
                    for k in 0..len {
                        let e = (src[idx(k)] - m).exp();
                        out[idx(k)] = e;
                        z = z + e;
                    }
                    let inv = T::one() / z;
                    for k in 0..len {
                        out[idx(k)] = out[idx(k)] * inv;
                    }
                }
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            "softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| {
                // dx = y * (g - <g, y>)
                let y = ctx.out;
                let mut g = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let mut dot = T::zero();
                        for k in 0..len {
                            dot = dot + ctx.grad[idx(k)] * y[idx(k)];
                        }
                        for k in 0..len {
                            g[idx(k)] = y[idx(k)] * (ctx.grad[idx(k)] - dot);
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// `x - logsumexp(x)` along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("log_softmax", axis, self.rank())?;
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let mut m = src[idx(0)];
                for k in 1..len {
                    m = m.max(src[idx(k)]);
                }
                let mut z = T::zero();
                for k in 0..len {
                    z = z + (src[idx(k)] - m).exp();
                }
                let lse = m + z.ln();
                for k in 0..len {
                    out[idx(k)] = src[idx(k)] - lse;
                }
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            "log_softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| {
                // dx = g - softmax * sum(g)
                let y = ctx.out;
                let mut g = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let mut total = T::zero();
                        for k in 0..len {
                            total = total + ctx.grad[idx(k)];
                        }
                        for k in 0..len {
                            g[idx(k)] = ctx.grad[idx(k)] - y[idx(k)].exp() * total;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Picks `x[i, index[i]]` from a rank-2 tensor, giving shape `[n]`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::Rank {
                op: "gather_rows",
                expected: 2,
                shape: self.shape().to_vec(),
            });
        }
        let (n, c) = (self.shape()[0], self.shape()[1]);
        if index.len() != n || index.iter().any(|&k| k >= c) {
            return Err(Error::InvalidTensor(format!(
                "gather_rows: {} indices for shape {:?}",
                index.len(),
                self.shape()
            )));
        }
        let src = self.data();
        let out: Vec<T> = index.iter().enumerate().map(|(i, &k)| src[i * c + k]).collect();
        drop(src);
        let index = index.to_vec();
        Ok(Tensor::from_op(
            "gather_rows",
            out,
            vec![n],
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); n * c];
                for (i, &k) in index.iter().enumerate() {
                    g[i * c + k] = ctx.grad[i];
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], s: &[usize]) -> Tensor<f64> {
        Tensor::from_f64(v, s).unwrap()
    }

    #[test]
    fn simple_reductions() {
        assert_eq!(t(&[1.0, 2.0, 3.0], &[3]).sum().unwrap().to_vec(), vec![6.0]);
        let m = Tensor::<f64>::ones(&[4, 5]).unwrap().mean_axis(1, false).unwrap();
        assert_eq!(m.shape(), &[4]);
        assert_eq!(m.to_vec(), vec![1.0; 4]);
        let k = Tensor::<f64>::ones(&[4, 5]).unwrap().sum_axis(0, true).unwrap();
        assert_eq!(k.shape(), &[1, 5]);
    }

    #[test]
    fn axis_out_of_range() {
        let e = t(&[1.0, 2.0], &[2]).sum_axis(1, false).unwrap_err();
        assert!(matches!(e, Error::AxisOutOfRange { axis: 1, rank: 1, .. }));
    }

    #[test]
    fn max_tie_routes_to_first_index() {
        let x = Tensor::param(vec![3.0, 3.0], &[2]).unwrap();
        x.max_axis(0, false).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        let u = t(&[2.0, 2.0, 2.0], &[3]).softmax(0).unwrap().to_vec();
        for v in u {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = t(&[0.0, 3f64.ln()], &[2]).softmax(0).unwrap().to_vec();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let x = t(&[0.3, -1.2, 4.0, 0.0, 2.0, 2.5], &[2, 3]);
        let shifted = x.add_scalar(100.0).softmax(1).unwrap().to_vec();
        for (a, b) in x.softmax(1).unwrap().to_vec().iter().zip(shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = t(&[0.3, -1.2, 4.0, 0.0, 2.0, 2.5], &[3, 2]);
        let a = x.log_softmax(0).unwrap().to_vec();
        let b = x.softmax(0).unwrap().log().to_vec();
        for (a, b) in a.iter().zip(b) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_rows_picks_and_scatters() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let y = x.gather_rows(&[1, 0]).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 3.0]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
        assert!(x.gather_rows(&[2, 0]).is_err());
    }
}
