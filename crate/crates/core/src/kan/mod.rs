//! Dimension-wise expansion feed-forward blocks.
//!
//! Each KAN variant applies a learnable scalar function φ_j to every channel
//! of `x: [n, d]` and mixes the concatenated outputs with a `d -> d` linear
//! layer. The MLP variant is the usual two-layer block. All six share the
//! `[n, d] -> [n, d]` contract of [`FeedForward::forward`].

pub mod config;
pub mod fourier;
pub mod mlp;
pub mod rbf;
pub mod sine;
pub mod spline;

use rand::Rng;

pub use config::{ExpansionConfig, Variant, MAX_SPLINE_ORDER};
pub use fourier::{phi_fourier, FourierKanParams};
pub use mlp::MlpParams;
pub use rbf::{phi_rbf, FastKanParams};
pub use sine::{phi_sine, SineKanParams};
pub use spline::{bspline_basis, phi_spline, KnotGrid, SplineKanParams, SplineStrategy};

use crate::error::{Error, Result};
use crate::nn::{join, LinearParams, NamedParams, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel univariate function family.
#[derive(Clone, Debug)]
pub enum Expansion<T: Scalar> {
    Sine(SineKanParams<T>),
    Fourier(FourierKanParams<T>),
    Rbf(FastKanParams<T>),
    Spline(SplineKanParams<T>, SplineStrategy),
}

impl<T: Scalar> Expansion<T> {
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Expansion::Sine(p) => phi_sine(p, x),
            Expansion::Fourier(p) => phi_fourier(p, x),
            Expansion::Rbf(p) => phi_rbf(p, x),
            Expansion::Spline(p, s) => phi_spline(p, x, *s),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Expansion<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        match self {
            Expansion::Sine(p) => p.collect_params(prefix, out),
            Expansion::Fourier(p) => p.collect_params(prefix, out),
            Expansion::Rbf(p) => p.collect_params(prefix, out),
            Expansion::Spline(p, _) => p.collect_params(prefix, out),
        }
    }
}

#[derive(Clone, Debug)]
pub enum FeedForward<T: Scalar> {
    Kan {
        variant: Variant,
        expansion: Expansion<T>,
        mixer: LinearParams<T>,
        /// Copies of each input channel fed to distinct φ functions.
        multiplier: usize,
    },
    Mlp(MlpParams<T>),
}

impl<T: Scalar> FeedForward<T> {
    pub fn variant(&self) -> Variant {
        match self {
            FeedForward::Kan { variant, .. } => *variant,
            FeedForward::Mlp(_) => Variant::Mlp,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            FeedForward::Kan { expansion, mixer, multiplier, .. } => {
                let wide = if *multiplier == 1 {
                    x.clone()
                } else {
                    Tensor::concat(&vec![x.clone(); *multiplier], 1)?
                };
                mixer.forward(&expansion.apply(&wide)?)
            }
            FeedForward::Mlp(p) => p.forward(x),
        }
    }
}

impl<T: Scalar> Parameterized<T> for FeedForward<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        match self {
            FeedForward::Kan { expansion, mixer, .. } => {
                expansion.collect_params(&join(prefix, "phi"), out);
                mixer.collect_params(&join(prefix, "mix"), out);
            }
            FeedForward::Mlp(p) => p.collect_params(prefix, out),
        }
    }
}

/// Draws parameters for `cfg.variant` on `d` channels; the expansion is
/// drawn before the mixer.
pub fn init_expansion<T: Scalar>(cfg: &ExpansionConfig, d: usize, rng: &mut impl Rng) -> Result<FeedForward<T>> {
    cfg.validate()?;
    if d == 0 {
        return Err(Error::InvalidConfig("feed-forward width must be >= 1".into()));
    }
    let c = d * cfg.hidden_multiplier;
    let spline = |rng: &mut _, with_base, strategy| -> Result<Expansion<T>> {
        let grid = KnotGrid::uniform(cfg.grid_range, cfg.knots, cfg.order)?;
        Ok(Expansion::Spline(SplineKanParams::new(rng, c, grid, with_base)?, strategy))
    };
    let expansion = match cfg.variant {
        Variant::SineKan => Expansion::Sine(SineKanParams::new(rng, c, cfg.m)?),
        Variant::FourierKan => Expansion::Fourier(FourierKanParams::new(rng, c, cfg.m)?),
        Variant::FastKan => Expansion::Rbf(FastKanParams::new(rng, c, cfg.centers)?),
        Variant::VanillaKan => spline(rng, true, SplineStrategy::Local)?,
        Variant::EfficientKan => spline(rng, false, SplineStrategy::BasisMatrix)?,
        Variant::Mlp => return Ok(FeedForward::Mlp(MlpParams::new(rng, d, cfg.hidden)?)),
    };
    let mixer = LinearParams::new(rng, c, d)?;
    Ok(FeedForward::Kan {
        variant: cfg.variant,
        expansion,
        mixer,
        multiplier: cfg.hidden_multiplier,
    })
}

/// Applies `params` after checking they were built for `cfg`.
pub fn kan_ffn<T: Scalar>(cfg: &ExpansionConfig, params: &FeedForward<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if params.variant() != cfg.variant {
        return Err(Error::InvalidConfig(format!(
            "feed-forward parameters are {}, config asks for {}",
            params.variant(),
            cfg.variant
        )));
    }
    params.forward(x)
}

/// Learnable scalar count of one feed-forward block on `d` channels.
pub fn ffn_param_count(cfg: &ExpansionConfig, d: usize) -> usize {
    let c = d * cfg.hidden_multiplier;
    let mixer = c * d + d;
    match cfg.variant {
        Variant::SineKan => 3 * c * cfg.m + mixer,
        Variant::FourierKan => 2 * c * cfg.m + mixer,
        Variant::FastKan => 3 * c * cfg.centers + mixer,
        Variant::VanillaKan => c * cfg.spline_bases() + c + mixer,
        Variant::EfficientKan => c * cfg.spline_bases() + mixer,
        Variant::Mlp => 2 * d * cfg.hidden + cfg.hidden + d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;

    fn x(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        Tensor::new(init::uniform_vec(&mut init::seeded(seed), n * d, -1.5, 1.5), &[n, d]).unwrap()
    }

    #[test]
    fn param_counts_match_closed_forms() {
        let d = 8;
        for v in Variant::ALL {
            let cfg = ExpansionConfig::new(v);
            let ff: FeedForward<f64> = init_expansion(&cfg, d, &mut init::seeded(1)).unwrap();
            let expected = match v {
                Variant::SineKan => 3 * d * 8 + d * d + d,
                Variant::FourierKan => 2 * d * 8 + d * d + d,
                Variant::FastKan => 3 * d * 5 + d * d + d,
                Variant::VanillaKan => d * 8 + d + d * d + d,
                Variant::EfficientKan => d * 8 + d * d + d,
                Variant::Mlp => d * 16 + 16 + 16 * d + d,
            };
            assert_eq!(ff.param_count(), expected, "{v}");
            assert_eq!(ffn_param_count(&cfg, d), expected, "{v}");
        }
    }

    #[test]
    fn every_variant_maps_nd_to_nd() {
        let input = x(5, 4, 2);
        for v in Variant::ALL {
            let mut cfg = ExpansionConfig::new(v);
            cfg.hidden_multiplier = 2;
            let ff: FeedForward<f64> = init_expansion(&cfg, 4, &mut init::seeded(3)).unwrap();
            let y = kan_ffn(&cfg, &ff, &input).unwrap();
            assert_eq!(y.shape(), &[5, 4], "{v}");
            assert_eq!(ff.param_count(), ffn_param_count(&cfg, 4), "{v}");
        }
    }

    #[test]
    fn zero_expansion_yields_mixer_bias() {
        let cfg = ExpansionConfig::new(Variant::SineKan);
        let ff: FeedForward<f64> = init_expansion(&cfg, 3, &mut init::seeded(4)).unwrap();
        let FeedForward::Kan { expansion: Expansion::Sine(p), mixer, .. } = &ff else {
            unreachable!()
        };
        p.alpha.update_data(|a| a.fill(0.0));
        mixer.bias.update_data(|b| b.copy_from_slice(&[0.5, -1.0, 2.0]));
        let y = ff.forward(&x(2, 3, 0)).unwrap().to_vec();
        assert_eq!(y, vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn identity_mixer_exposes_phi() {
        let cfg = ExpansionConfig::new(Variant::FourierKan);
        let ff: FeedForward<f64> = init_expansion(&cfg, 3, &mut init::seeded(5)).unwrap();
        let FeedForward::Kan { expansion, mixer, .. } = &ff else { unreachable!() };
        mixer.weight.update_data(|w| {
            w.fill(0.0);
            for i in 0..3 {
                w[i * 3 + i] = 1.0;
            }
        });
        let input = x(4, 3, 6);
        assert_eq!(ff.forward(&input).unwrap().to_vec(), expansion.apply(&input).unwrap().to_vec());
    }

    #[test]
    fn sine_block_matches_composed_oracle() {
        let d = 3;
        let cfg = ExpansionConfig { m: 4, ..ExpansionConfig::new(Variant::SineKan) };
        let ff: FeedForward<f64> = init_expansion(&cfg, d, &mut init::seeded(8)).unwrap();
        let FeedForward::Kan { expansion: Expansion::Sine(p), mixer, .. } = &ff else { unreachable!() };
        let input = x(6, d, 9);
        let (xs, a, w, b) = (input.to_vec(), p.alpha.to_vec(), p.omega.to_vec(), p.phase.to_vec());
        let (wm, bm) = (mixer.weight.to_vec(), mixer.bias.to_vec());
        let y = ff.forward(&input).unwrap().to_vec();
        for i in 0..6 {
            let phi: Vec<f64> = (0..d)
                .map(|j| (0..4).map(|m| a[j * 4 + m] * (w[j * 4 + m] * xs[i * d + j] + b[j * 4 + m]).sin()).sum())
                .collect();
            for o in 0..d {
                let expect = bm[o] + (0..d).map(|j| wm[o * d + j] * phi[j]).sum::<f64>();
                assert!((y[i * d + o] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_in_range() {
        for v in Variant::ALL {
            let cfg = ExpansionConfig::new(v);
            let a: FeedForward<f64> = init_expansion(&cfg, 8, &mut init::seeded(11)).unwrap();
            let b: FeedForward<f64> = init_expansion(&cfg, 8, &mut init::seeded(11)).unwrap();
            for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params().iter()) {
                assert_eq!(na, nb);
                assert_eq!(ta.to_vec(), tb.to_vec());
            }
        }
        let sine: FeedForward<f64> = init_expansion(&ExpansionConfig::new(Variant::SineKan), 8, &mut init::seeded(0)).unwrap();
        let FeedForward::Kan { expansion: Expansion::Sine(p), .. } = &sine else { unreachable!() };
        assert!(p.omega.to_vec().iter().all(|w| (-1.0..=1.0).contains(w)));
        let fast: FeedForward<f64> = init_expansion(&ExpansionConfig::new(Variant::FastKan), 8, &mut init::seeded(0)).unwrap();
        let FeedForward::Kan { expansion: Expansion::Rbf(p), .. } = &fast else { unreachable!() };
        assert!(p.centers.to_vec().iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn every_variant_passes_gradcheck() {
        use crate::tensor::grad_check_params;
        for v in Variant::ALL {
            let cfg = ExpansionConfig { m: 3, centers: 3, hidden: 5, ..ExpansionConfig::new(v) };
            let ff: FeedForward<f64> = init_expansion(&cfg, 3, &mut init::seeded(12)).unwrap();
            let input = Tensor::param(x(4, 3, 13).to_vec(), &[4, 3]).unwrap();
            let mut leaves: Vec<_> = ff.params().into_iter().map(|(_, t)| t).collect();
            leaves.push(input.clone());
            let report = grad_check_params(|| ff.forward(&input)?.sin().sum(), &leaves, 1e-5).unwrap();
            assert!(report.passes(1e-4), "{v}: {report:?}");
        }
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let ff: FeedForward<f64> = init_expansion(&ExpansionConfig::new(Variant::Mlp), 4, &mut init::seeded(0)).unwrap();
        assert!(kan_ffn(&ExpansionConfig::new(Variant::SineKan), &ff, &x(1, 4, 0)).is_err());
    }
}
