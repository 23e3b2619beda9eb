use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// out[m,n] += a[m,k] * b[k,n]
#[inline]
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    for (arow, orow) in a[..m * k].chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, brow) in arow.iter().zip(b.chunks_exact(n)) {
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out[m,k] += g[m,n] * b[k,n]^T
#[inline]
pub(crate) fn gemm_nt<T: Scalar>(g: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    for (grow, orow) in g[..m * n].chunks_exact(n).zip(out.chunks_exact_mut(k)) {
        for (o, brow) in orow.iter_mut().zip(b.chunks_exact(n)) {
            let mut acc = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                acc = acc + x * y;
            }
            *o = *o + acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * g[m,n]
#[inline]
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    for (arow, grow) in a[..m * k].chunks_exact(k).zip(g.chunks_exact(n)) {
        for (&av, orow) in arow.iter().zip(out.chunks_exact_mut(n)) {
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// Affine map `x·Wᵀ + b` for `x: [n, in]`, `W: [out, in]`, `b: [out]`,
    /// as one tape node.
    pub fn linear(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, k, o) = match (self.shape(), weight.shape(), bias.shape()) {
            (&[n, k], &[o, k2], &[o2]) if k == k2 && o == o2 => (n, k, o),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    lhs: self.shape().to_vec(),
                    rhs: weight.shape().to_vec(),
                })
            }
        };
        let mut wt = vec![T::zero(); k * o];
        {
            let w = weight.data();
            for r in 0..o {
                for c in 0..k {
                    wt[c * o + r] = w[r * k + c];
                }
            }
        }
        let mut out = vec![T::zero(); n * o];
        gemm_nn(&self.data(), &wt, &mut out, n, k, o);
        {
            let b = bias.data();
            for row in out.chunks_mut(o) {
                for (y, &bv) in row.iter_mut().zip(b.iter()) {
                    *y = *y + bv;
                }
            }
        }
        Ok(Tensor::from_op(
            "linear",
            out,
            vec![n, o],
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |ctx| {
                let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
                let g = ctx.grad;
                let gx = x.requires_grad().then(|| {
                    let mut gx = vec![T::zero(); n * k];
                    gemm_nn(g, &w.data(), &mut gx, n, o, k);
                    gx
                });
                let gw = w.requires_grad().then(|| {
                    let mut gw = vec![T::zero(); o * k];
                    gemm_tn(g, &x.data(), &mut gw, n, o, k);
                    gw
                });
                let gb = ctx.parents[2].requires_grad().then(|| {
                    let mut gb = vec![T::zero(); o];
                    for row in g.chunks(o) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    gb
                });
                vec![gx, gw, gb]
            }),
        ))
    }

    /// Rank-2 matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(&self.data(), &rhs.data(), &mut out, m, k, n);
        Ok(Tensor::from_op(
            "matmul",
            out,
            vec![m, n],
            vec![self.clone(), rhs.clone()],
            Box::new(move |ctx| {
                let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm_nt(ctx.grad, &b.data(), &mut ga, m, n, k);
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm_tn(&a.data(), ctx.grad, &mut gb, m, k, n);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Batched product `[b,m,k] x [b,k,n] -> [b,m,n]`, looping over the
    /// leading axis.
    pub fn bmm(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let mismatch = || Error::ShapeMismatch {
            op: "bmm",
            lhs: self.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        };
        if self.rank() != 3 || rhs.rank() != 3 {
            return Err(mismatch());
        }
        let (bs, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (bs2, k2, n) = (rhs.shape()[0], rhs.shape()[1], rhs.shape()[2]);
        if bs != bs2 || k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![T::zero(); bs * m * n];
        {
            let a = self.data();
            let b = rhs.data();
            for s in 0..bs {
                gemm_nn(
                    &a[s * m * k..(s + 1) * m * k],
                    &b[s * k * n..(s + 1) * k * n],
                    &mut out[s * m * n..(s + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        Ok(Tensor::from_op(
            "bmm",
            out,
            vec![bs, m, n],
            vec![self.clone(), rhs.clone()],
            Box::new(move |ctx| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let a = pa.data();
                let b = pb.data();
                let g = ctx.grad;
                let ga = pa.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); bs * m * k];
                    for s in 0..bs {
                        gemm_nt(
                            &g[s * m * n..(s + 1) * m * n],
                            &b[s * k * n..(s + 1) * k * n],
                            &mut ga[s * m * k..(s + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    ga
                });
                let gb = pb.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); bs * k * n];
                    for s in 0..bs {
                        gemm_tn(
                            &a[s * m * k..(s + 1) * m * k],
                            &g[s * m * n..(s + 1) * m * n],
                            &mut gb[s * k * n..(s + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::Rank {
                op: "transpose",
                expected: 2,
                shape: self.shape().to_vec(),
            });
        }
        self.permute(&[1, 0])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = [false; super::MAX_RANK];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidTensor(format!(
                "permute: {axes:?} is not a permutation of {rank} axes"
            )));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let mut in_strides = vec![1; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
        }
        // stride in the input for each output axis, right-aligned to rank 4
        let mut gather = [0usize; super::MAX_RANK];
        let off = super::MAX_RANK - rank;
        for (i, &a) in axes.iter().enumerate() {
            gather[off + i] = in_strides[a];
        }
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        super::for_each_broadcast(&out_shape, gather, [0; super::MAX_RANK], |o, i, _| out[o] = src[i]);
        drop(src);
        let out_shape_bw = out_shape.clone();
        Ok(Tensor::from_op(
            "permute",
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); ctx.grad.len()];
                super::for_each_broadcast(&out_shape_bw, gather, [0; super::MAX_RANK], |o, i, _| {
                    g[i] = ctx.grad[o]
                });
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
    fn identity_product() {
        let i = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let b = t(&[5.0, 6.0, 7.0, 8.0], &[2, 2]);
        assert_eq!(i.matmul(&b).unwrap().to_vec(), b.to_vec());
    }

    #[test]
    fn hand_computed_product() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t(&[5.0, 6.0, 7.0, 8.0], &[2, 2]);
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = t(&[0.0; 6], &[2, 3]);
        assert!(matches!(a.matmul(&a), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn sum_of_product_gradient_is_ones_times_bt() {
        let a = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = t(&[1.0, -1.0, 2.0, 0.5, -3.0, 4.0], &[3, 2]);
        a.matmul(&b).unwrap().sum().unwrap().backward().unwrap();
        // row sums of B, repeated per row of A
        assert_eq!(a.grad().unwrap(), vec![0.0, 2.5, 1.0, 0.0, 2.5, 1.0]);
    }

    #[test]
    fn permute_round_trip() {
        let x = t(&(0..24).map(f64::from).collect::<Vec<_>>(), &[2, 3, 4]);
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        // y[k][i][j] == x[i][j][k]
        assert_eq!(y.data()[6 + 3 + 2], x.data()[12 + 2 * 4 + 1]);
        let back = y.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn bmm_matches_per_slice_matmul() {
        let a = t(&(0..12).map(|v| v as f64 * 0.5).collect::<Vec<_>>(), &[2, 2, 3]);
        let b = t(&(0..12).map(|v| 1.0 - v as f64).collect::<Vec<_>>(), &[2, 3, 2]);
        let y = a.bmm(&b).unwrap();
        for s in 0..2 {
            let sa = t(&a.to_vec()[s * 6..(s + 1) * 6], &[2, 3]);
            let sb = t(&b.to_vec()[s * 6..(s + 1) * 6], &[3, 2]);
            assert_eq!(&y.to_vec()[s * 4..(s + 1) * 4], &sa.matmul(&sb).unwrap().to_vec()[..]);
        }
    }
}
