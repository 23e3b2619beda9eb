//! Standard two-layer feed-forward: `linear(d -> hidden) -> GELU -> linear(hidden -> d)`.

use rand::Rng;

use crate::error::Result;
use crate::nn::{join, LinearParams, NamedParams, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct MlpParams<T: Scalar> {
    pub fc1: LinearParams<T>,
    pub fc2: LinearParams<T>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(rng: &mut impl Rng, d: usize, hidden: usize) -> Result<Self> {
        let fc1 = LinearParams::new(rng, d, hidden)?;
        let fc2 = LinearParams::new(rng, hidden, d)?;
        Ok(Self { fc1, fc2 })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu())
    }
}

impl<T: Scalar> Parameterized<T> for MlpParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.fc1.collect_params(&join(prefix, "fc1"), out);
        self.fc2.collect_params(&join(prefix, "fc2"), out);
    }
}
