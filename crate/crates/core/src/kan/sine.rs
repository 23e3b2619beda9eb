//! `φ_j(x) = Σ_m α[j,m]·sin(ω[j,m]·x + b[j,m])`

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{init, join, NamedParams, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SineKanParams<T: Scalar> {
    pub alpha: Tensor<T>,
    pub omega: Tensor<T>,
    pub phase: Tensor<T>,
}

impl<T: Scalar> SineKanParams<T> {
    /// ω, b ~ U[-1, 1]; α ~ U[-1, 1] / M.
    pub fn new(rng: &mut impl Rng, channels: usize, m: usize) -> Result<Self> {
        let omega = init::uniform(rng, &[channels, m], -1.0, 1.0)?;
        let phase = init::uniform(rng, &[channels, m], -1.0, 1.0)?;
        let s = 1.0 / m as f64;
        let alpha = init::uniform(rng, &[channels, m], -s, s)?;
        Ok(Self { alpha, omega, phase })
    }

    pub fn channels(&self) -> usize {
        self.alpha.shape()[0]
    }

    pub fn terms(&self) -> usize {
        self.alpha.shape()[1]
    }
}

impl<T: Scalar> Parameterized<T> for SineKanParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((join(prefix, "alpha"), self.alpha.clone()));
        out.push((join(prefix, "omega"), self.omega.clone()));
        out.push((join(prefix, "phase"), self.phase.clone()));
    }
}

pub(crate) fn check_input<T: Scalar>(op: &'static str, x: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, c] if c == channels => Ok((n, c)),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![channels],
        }),
    }
}

/// `x: [n, d] -> [n, d]`, one fused tape node.
pub fn phi_sine<T: Scalar>(p: &SineKanParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_input("phi_sine", x, p.channels())?;
    let m = p.terms();
    let mut out = vec![T::zero(); n * c];
    // sin and cos of every term, laid out [n, c, m]; cos is reused by backward
    let mut sines = vec![T::zero(); n * c * m];
    let mut cosines = vec![T::zero(); n * c * m];
    {
        let (xd, a, w, b) = (x.data(), p.alpha.data(), p.omega.data(), p.phase.data());
        for (r, &xv) in xd.iter().enumerate() {
            let j = r % c;
            let (a, w, b) = (&a[j * m..(j + 1) * m], &w[j * m..(j + 1) * m], &b[j * m..(j + 1) * m]);
            let (sr, cr) = (&mut sines[r * m..(r + 1) * m], &mut cosines[r * m..(r + 1) * m]);
            let mut acc = T::zero();
            for k in 0..m {
                let (s, co) = (w[k] * xv + b[k]).sin_cos();
                sr[k] = s;
                cr[k] = co;
                acc = acc + a[k] * s;
            }
            out[r] = acc;
        }
    }
    Ok(Tensor::from_op(
        "phi_sine",
        out,
        vec![n, c],
        vec![x.clone(), p.alpha.clone(), p.omega.clone(), p.phase.clone()],
        Box::new(move |ctx| {
            let ps = ctx.parents;
            let (xd, a, w) = (ps[0].data(), ps[1].data(), ps[2].data());
            let mut dx = vec![T::zero(); n * c];
            let mut da = vec![T::zero(); c * m];
            let mut dw = vec![T::zero(); c * m];
            let mut db = vec![T::zero(); c * m];
            for (r, &xv) in xd.iter().enumerate() {
                let j = r % c;
                let g = ctx.grad[r];
                let (sr, cr) = (&sines[r * m..(r + 1) * m], &cosines[r * m..(r + 1) * m]);
                let mut gx = T::zero();
                for k in 0..m {
                    let q = j * m + k;
                    let ga = g * a[q] * cr[k];
                    da[q] = da[q] + g * sr[k];
                    dw[q] = dw[q] + ga * xv;
                    db[q] = db[q] + ga;
                    gx = gx + ga * w[q];
                }
                dx[r] = gx;
            }
            vec![Some(dx), Some(da), Some(dw), Some(db)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: &[f64], w: &[f64], b: &[f64], c: usize, m: usize) -> SineKanParams<f64> {
        SineKanParams {
            alpha: Tensor::param(a.to_vec(), &[c, m]).unwrap(),
            omega: Tensor::param(w.to_vec(), &[c, m]).unwrap(),
            phase: Tensor::param(b.to_vec(), &[c, m]).unwrap(),
        }
    }

    #[test]
    fn zero_input_unit_params() {
        let p = params(&[1.0], &[1.0], &[0.0], 1, 1);
        let y = phi_sine(&p, &Tensor::from_f64(&[0.0], &[1, 1]).unwrap()).unwrap();
        assert_eq!(y.to_vec(), vec![0.0]);
    }

    #[test]
    fn constant_phase_gives_one() {
        let p = params(&[1.0], &[0.0], &[std::f64::consts::FRAC_PI_2], 1, 1);
        let x = Tensor::from_f64(&[-3.0, 0.4, 17.0], &[3, 1]).unwrap();
        assert_eq!(phi_sine(&p, &x).unwrap().to_vec(), vec![1.0; 3]);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = init::seeded(42);
        let p = SineKanParams::<f64>::new(&mut rng, 2, 3).unwrap();
        let x: Tensor<f64> = init::uniform(&mut rng, &[4, 2], -2.0, 2.0).unwrap();
        let y = phi_sine(&p, &x).unwrap().to_vec();
        let (a, w, b, xv) = (p.alpha.to_vec(), p.omega.to_vec(), p.phase.to_vec(), x.to_vec());
        for i in 0..4 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a[j * 3 + k] * (w[j * 3 + k] * xv[i * 2 + j] + b[j * 3 + k]).sin();
                }
                assert_eq!(y[i * 2 + j], acc);
            }
        }
    }

    #[test]
    fn init_ranges() {
        let p = SineKanParams::<f64>::new(&mut init::seeded(1), 8, 8).unwrap();
        assert!(p.omega.to_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(p.phase.to_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(p.alpha.to_vec().iter().all(|v| v.abs() <= 1.0 / 8.0));
    }
}
