use rand::Rng;

use super::{init, join, NamedParams, Parameterized};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map `x·Wᵀ + b` with `weight: [out, in]`, `bias: [out]`.
#[derive(Clone, Debug)]
pub struct LinearParams<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearParams<T> {
    /// Xavier-uniform weight, zero bias.
    pub fn new(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: init::xavier(rng, &[out_dim, in_dim], in_dim, out_dim)?,
            bias: init::zeros_param(&[out_dim])?,
        })
    }

    /// Zero weight and bias.
    pub fn zeros(in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: init::zeros_param(&[out_dim, in_dim])?,
            bias: init::zeros_param(&[out_dim])?,
        })
    }

    pub fn from_tensors(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `x: [n, in] -> [n, out]`
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 2 || x.shape()[1] != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        x.linear(&self.weight, &self.bias)
    }
}

impl<T: Scalar> Parameterized<T> for LinearParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(w: &[f64], b: &[f64], out: usize, inp: usize) -> LinearParams<f64> {
        LinearParams::from_tensors(
            Tensor::param(w.to_vec(), &[out, inp]).unwrap(),
            Tensor::param(b.to_vec(), &[out]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_weight_passes_input_through() {
        let p = lin(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 2);
        let x = Tensor::from_f64(&[1.5, -2.0, 0.25, 4.0], &[2, 2]).unwrap();
        assert_eq!(p.forward(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn zero_weight_gives_bias_rows() {
        let p = lin(&[0.0; 6], &[1.0, 2.0], 2, 3);
        let x = Tensor::from_f64(&[3.0, 1.0, -1.0, 7.0, 2.0, 0.5], &[2, 3]).unwrap();
        assert_eq!(p.forward(&x).unwrap().to_vec(), vec![1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = init::seeded(11);
        let p = LinearParams::<f64>::new(&mut rng, 5, 3).unwrap();
        let x: Tensor<f64> = init::uniform(&mut rng, &[4, 5], -1.0, 1.0).unwrap();
        let y = p.forward(&x).unwrap().to_vec();
        let (w, b, xv) = (p.weight.to_vec(), p.bias.to_vec(), x.to_vec());
        for i in 0..4 {
            for o in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += xv[i * 5 + k] * w[o * 5 + k];
                }
                assert_eq!(y[i * 3 + o], acc + b[o]);
            }
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let p = lin(&[0.0; 6], &[0.0; 2], 2, 3);
        let x = Tensor::from_f64(&[0.0; 4], &[2, 2]).unwrap();
        assert!(p.forward(&x).is_err());
    }
}
