use super::shape::{broadcast_shapes, for_each_broadcast, numel, padded_strides, sum_to_shape};
use super::{check_shape, Tensor, MAX_RANK};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        check_shape(shape, self.numel())?;
        Ok(Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidTensor(format!(
                "narrow: range {start}..{} outside extent {} of axis {axis}",
                start + len,
                shape[axis]
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let mut out_shape = shape;
        out_shape[axis] = len;
        let n = self.numel();
        Ok(Tensor::from_op(
            "narrow",
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); n];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    g[base..base + len * inner]
                        .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat of zero tensors".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::AxisOutOfRange { op: "concat", axis, rank });
        }
        for p in parts {
            let compatible = p.rank() == rank
                && (0..rank).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        {
            let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (d, &l) in datas.iter().zip(&lens) {
                    out.extend_from_slice(&d[o * l * inner..(o + 1) * l * inner]);
                }
            }
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        Ok(Tensor::from_op(
            "concat",
            out,
            out_shape,
            parts.to_vec(),
            Box::new(move |ctx| {
                let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (g, &l) in grads.iter_mut().zip(&lens) {
                        g.extend_from_slice(&ctx.grad[pos..pos + l * inner]);
                        pos += l * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Broadcasts to `shape` (trailing-dimension rule), materializing copies.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let ok = shape.len() <= MAX_RANK
            && broadcast_shapes(self.shape(), shape).as_deref() == Some(shape);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "expand",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let strides = padded_strides(self.shape(), shape);
        let src = self.data();
        let mut out = vec![T::zero(); numel(shape)];
        for_each_broadcast(shape, strides, [0; MAX_RANK], |o, i, _| out[o] = src[i]);
        drop(src);
        let in_shape = self.shape().to_vec();
        let out_shape = shape.to_vec();
        Ok(Tensor::from_op(
            "expand",
            out,
            shape.to_vec(),
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(sum_to_shape(ctx.grad, &out_shape, &in_shape))]),
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
    fn narrow_and_concat_are_inverse() {
        let x = t(&(0..12).map(f64::from).collect::<Vec<_>>(), &[2, 3, 2]);
        let a = x.narrow(1, 0, 1).unwrap();
        let b = x.narrow(1, 1, 2).unwrap();
        assert_eq!(a.to_vec(), vec![0.0, 1.0, 6.0, 7.0]);
        let y = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        assert!(x.narrow(1, 2, 2).is_err());
    }

    #[test]
    fn expand_gradient_sums_copies() {
        let c = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let e = c.expand(&[3, 1, 2]).unwrap();
        assert_eq!(e.to_vec(), vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        e.sum().unwrap().backward().unwrap();
        assert_eq!(c.grad().unwrap(), vec![3.0, 3.0]);
        assert!(c.expand(&[3]).is_err());
    }

    #[test]
    fn reshape_checks_count() {
        let x = t(&[1.0; 6], &[2, 3]);
        assert_eq!(x.reshape(&[3, 2]).unwrap().shape(), &[3, 2]);
        assert!(x.reshape(&[4, 2]).is_err());
    }
}
