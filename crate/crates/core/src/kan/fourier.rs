//! `φ_j(x) = Σ_{k=1..M} a_sin[j,k]·sin(kx) + a_cos[j,k]·cos(kx)`
//!
//! Harmonics come from the angle-addition recurrence, so each element costs
//! one `sin_cos` regardless of `M`.

use rand::Rng;

use super::sine::check_input;
use crate::error::Result;
use crate::nn::{init, join, NamedParams, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FourierKanParams<T: Scalar> {
    pub a_sin: Tensor<T>,
    pub a_cos: Tensor<T>,
}

impl<T: Scalar> FourierKanParams<T> {
    /// Coefficients ~ U[-1, 1] / M.
    pub fn new(rng: &mut impl Rng, channels: usize, m: usize) -> Result<Self> {
        let s = 1.0 / m as f64;
        Ok(Self {
            a_sin: init::uniform(rng, &[channels, m], -s, s)?,
            a_cos: init::uniform(rng, &[channels, m], -s, s)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.a_sin.shape()[0]
    }

    pub fn harmonics(&self) -> usize {
        self.a_sin.shape()[1]
    }
}

impl<T: Scalar> Parameterized<T> for FourierKanParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((join(prefix, "a_sin"), self.a_sin.clone()));
        out.push((join(prefix, "a_cos"), self.a_cos.clone()));
    }
}

/// Calls `f(k, sin(kx), cos(kx))` for k = 1..=m.
#[inline]
fn harmonics<T: Scalar>(x: T, m: usize, mut f: impl FnMut(usize, T, T)) {
    let (s1, c1) = x.sin_cos();
    let (mut s, mut c) = (s1, c1);
    for k in 0..m {
        f(k, s, c);
        let next_s = s * c1 + c * s1;
        c = c * c1 - s * s1;
        s = next_s;
    }
}

pub fn phi_fourier<T: Scalar>(p: &FourierKanParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_input("phi_fourier", x, p.channels())?;
    let m = p.harmonics();
    let mut out = vec![T::zero(); n * c];
    {
        let (xd, amp_s, amp_c) = (x.data(), p.a_sin.data(), p.a_cos.data());
        for i in 0..n {
            for j in 0..c {
                let mut acc = T::zero();
                harmonics(xd[i * c + j], m, |k, s, co| {
                    acc = acc + amp_s[j * m + k] * s + amp_c[j * m + k] * co;
                });
                out[i * c + j] = acc;
            }
        }
    }
    Ok(Tensor::from_op(
        "phi_fourier",
        out,
        vec![n, c],
        vec![x.clone(), p.a_sin.clone(), p.a_cos.clone()],
        Box::new(move |ctx| {
            let ps = ctx.parents;
            let (xd, amp_s, amp_c) = (ps[0].data(), ps[1].data(), ps[2].data());
            let mut dx = vec![T::zero(); n * c];
            let mut ds = vec![T::zero(); c * m];
            let mut dc = vec![T::zero(); c * m];
            for i in 0..n {
                for j in 0..c {
                    let g = ctx.grad[i * c + j];
                    let mut gx = T::zero();
                    harmonics(xd[i * c + j], m, |k, s, co| {
                        let idx = j * m + k;
                        ds[idx] = ds[idx] + g * s;
                        dc[idx] = dc[idx] + g * co;
                        gx = gx + T::of((k + 1) as f64) * (amp_s[idx] * co - amp_c[idx] * s);
                    });
                    dx[i * c + j] = g * gx;
                }
            }
            vec![Some(dx), Some(ds), Some(dc)]
        }),
    ))
}
