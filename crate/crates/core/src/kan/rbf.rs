//! Gaussian radial-basis expansion with learnable centers, widths and
//! weights: `φ_j(x) = Σ_c w[j,c]·exp(-((x - c[j,c]) / σ[j,c])²)`, where
//! `σ = exp(log_width)` keeps every width positive.
//!
//! Evaluated by broadcasting over an `[n, d, C]` intermediate built from
//! ordinary tape operations.

use rand::Rng;

use super::sine::check_input;
use crate::error::Result;
use crate::nn::{init, join, NamedParams, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smallest initial width; keeps `ln σ` finite for draws at 0.
const MIN_INIT_WIDTH: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct FastKanParams<T: Scalar> {
    pub centers: Tensor<T>,
    pub log_widths: Tensor<T>,
    pub weights: Tensor<T>,
}

impl<T: Scalar> FastKanParams<T> {
    /// Centers and widths ~ U[0, 1]; weights ~ U[-1, 1] / √C.
    pub fn new(rng: &mut impl Rng, channels: usize, count: usize) -> Result<Self> {
        let shape = [channels, count];
        let centers = init::uniform(rng, &shape, 0.0, 1.0)?;
        let widths = init::uniform_vec(rng, channels * count, 0.0, 1.0);
        let log_widths = Tensor::param(
            widths.into_iter().map(|w| T::of(w.max(MIN_INIT_WIDTH).ln())).collect(),
            &shape,
        )?;
        let s = 1.0 / (count as f64).sqrt();
        let weights = init::uniform(rng, &shape, -s, s)?;
        Ok(Self {
            centers,
            log_widths,
            weights,
        })
    }

    pub fn channels(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn count(&self) -> usize {
        self.centers.shape()[1]
    }
}

impl<T: Scalar> Parameterized<T> for FastKanParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((join(prefix, "centers"), self.centers.clone()));
        out.push((join(prefix, "log_widths"), self.log_widths.clone()));
        out.push((join(prefix, "weights"), self.weights.clone()));
    }
}

pub fn phi_rbf<T: Scalar>(p: &FastKanParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_input("phi_rbf", x, p.channels())?;
    let z = x
        .reshape(&[n, c, 1])?
        .sub(&p.centers)?
        .div(&p.log_widths.exp())?;
    z.square().neg().exp().mul(&p.weights)?.sum_axis(2, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: &[f64], w: &[f64], wt: &[f64], ch: usize, k: usize) -> FastKanParams<f64> {
        FastKanParams {
            centers: Tensor::param(c.to_vec(), &[ch, k]).unwrap(),
            log_widths: Tensor::param(w.iter().map(|v: &f64| v.ln()).collect(), &[ch, k]).unwrap(),
            weights: Tensor::param(wt.to_vec(), &[ch, k]).unwrap(),
        }
    }

    #[test]
    fn input_at_center_gives_weight() {
        let p = params(&[0.3, 0.8], &[0.5, 0.5], &[1.0, 0.0], 1, 2);
        let y = phi_rbf(&p, &Tensor::from_f64(&[0.3], &[1, 1]).unwrap()).unwrap();
        assert_eq!(y.to_vec(), vec![1.0]);
    }

    #[test]
    fn far_tail_vanishes() {
        let p = params(&[0.0], &[0.2], &[1.0], 1, 1);
        let y = phi_rbf(&p, &Tensor::from_f64(&[2.0, -3.0], &[2, 1]).unwrap()).unwrap();
        assert!(y.to_vec().iter().all(|v| *v < 1e-10));
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = init::seeded(77);
        let p = FastKanParams::<f64>::new(&mut rng, 3, 5).unwrap();
        let x: Tensor<f64> = init::uniform(&mut rng, &[4, 3], -1.0, 2.0).unwrap();
        let y = phi_rbf(&p, &x).unwrap().to_vec();
        let (cs, lw, ws, xv) = (p.centers.to_vec(), p.log_widths.to_vec(), p.weights.to_vec(), x.to_vec());
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    let z = (xv[i * 3 + j] - cs[j * 5 + k]) / lw[j * 5 + k].exp();
                    acc += (-(z * z)).exp() * ws[j * 5 + k];
                }
                assert_eq!(y[i * 3 + j], acc);
            }
        }
    }

    #[test]
    fn init_in_unit_interval() {
        let p = FastKanParams::<f64>::new(&mut init::seeded(2), 8, 5).unwrap();
        assert!(p.centers.to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(p.log_widths.to_vec().iter().all(|v| v.exp() > 0.0 && v.exp() <= 1.0));
    }
}
