use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feed-forward family used inside each Transformer block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    VanillaKan,
    SineKan,
    FourierKan,
    FastKan,
    EfficientKan,
    Mlp,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::SineKan,
        Variant::FourierKan,
        Variant::FastKan,
        Variant::VanillaKan,
        Variant::EfficientKan,
        Variant::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::VanillaKan => "vanillakan",
            Variant::SineKan => "sinekan",
            Variant::FourierKan => "fourierkan",
            Variant::FastKan => "fastkan",
            Variant::EfficientKan => "efficientkan",
            Variant::Mlp => "mlp",
        }
    }

    pub fn is_spline(self) -> bool {
        matches!(self, Variant::VanillaKan | Variant::EfficientKan)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

/// Basis sizes and initialization knobs for one feed-forward variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    pub variant: Variant,
    /// Sinusoid count (SineKAN) or harmonic count (FourierKAN) per dimension.
    pub m: usize,
    /// Gaussian RBF count per dimension (FastKAN).
    pub centers: usize,
    /// Knot points spanning `grid_range` (spline variants).
    pub knots: usize,
    /// Spline degree; 3 is cubic.
    pub order: usize,
    pub grid_range: (f64, f64),
    /// Hidden width of the MLP feed-forward.
    pub hidden: usize,
    /// Univariate functions per input dimension; 1 keeps the block `d -> d`
    /// before mixing.
    pub hidden_multiplier: usize,
    pub seed: u64,
}

pub const MAX_SPLINE_ORDER: usize = 7;

impl ExpansionConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            m: 8,
            centers: 5,
            knots: 6,
            order: 3,
            grid_range: (-2.0, 2.0),
            hidden: 16,
            hidden_multiplier: 1,
            seed: 0,
        }
    }

    /// Spline basis count: `knots + order - 1`.
    pub fn spline_bases(&self) -> usize {
        self.knots + self.order - 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m < 1 {
            return bad("m must be >= 1".into());
        }
        if self.centers < 1 {
            return bad("centers must be >= 1".into());
        }
        if self.order < 1 || self.order > MAX_SPLINE_ORDER {
            return bad(format!("spline order must be in 1..={MAX_SPLINE_ORDER}, got {}", self.order));
        }
        if self.knots < self.order + 1 {
            return bad(format!("knots ({}) must be >= order + 1 ({})", self.knots, self.order + 1));
        }
        let (lo, hi) = self.grid_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("grid_range [{lo}, {hi}] must satisfy lo < hi"));
        }
        if self.hidden < 1 || self.hidden_multiplier < 1 {
            return bad("hidden and hidden_multiplier must be >= 1".into());
        }
        Ok(())
    }
}
