use super::{init, join, NamedParams, Parameterized};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNormParams<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn new(d: usize) -> Result<Self> {
        Ok(Self {
            gamma: init::ones_param(&[d])?,
            beta: init::zeros_param(&[d])?,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

impl<T: Scalar> Parameterized<T> for LayerNormParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }
}

/// Normalizes over the last axis (biased variance), then applies `γ·x̂ + β`.
/// One tape node.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let d = x.shape().last().copied().unwrap_or(0);
    if d == 0 || gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let rows = x.numel() / d;
    let inv_d = T::one() / T::of(d as f64);
    let eps = T::of(eps);
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    let mut out = vec![T::zero(); rows * d];
    {
        let (xd, g, b) = (x.data(), gamma.data(), beta.data());
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
            let s = T::one() / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
    }
    Ok(Tensor::from_op(
        "layer_norm",
        out,
        x.shape().to_vec(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |ctx| {
            let g = ctx.parents[1].data();
            let mut dx = vec![T::zero(); rows * d];
            let mut dg = vec![T::zero(); d];
            let mut db = vec![T::zero(); d];
            for r in 0..rows {
                let gr = &ctx.grad[r * d..(r + 1) * d];
                let hr = &xhat[r * d..(r + 1) * d];
                let mut mean_dh = T::zero();
                let mut mean_dh_h = T::zero();
                for j in 0..d {
                    let dh = gr[j] * g[j];
                    mean_dh = mean_dh + dh;
                    mean_dh_h = mean_dh_h + dh * hr[j];
                    dg[j] = dg[j] + gr[j] * hr[j];
                    db[j] = db[j] + gr[j];
                }
                mean_dh = mean_dh * inv_d;
                mean_dh_h = mean_dh_h * inv_d;
                for j in 0..d {
                    dx[r * d + j] = rstd[r] * (gr[j] * g[j] - mean_dh - hr[j] * mean_dh_h);
                }
            }
            vec![Some(dx), Some(dg), Some(db)]
        }),
    ))
}
