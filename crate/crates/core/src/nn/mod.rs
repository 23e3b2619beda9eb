//! Building blocks shared by every model variant.

pub mod attention;
pub mod init;
pub mod linear;
pub mod norm;

pub use attention::{AttentionMode, AttentionParams, StorageMeter};
pub use linear::LinearParams;
pub use norm::{layer_norm, LayerNormParams};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type NamedParams<T> = Vec<(String, Tensor<T>)>;

/// Anything owning trainable leaves. Names are dotted paths, stable across
/// runs, and used as checkpoint keys.
pub trait Parameterized<T: Scalar> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>);

    fn params(&self) -> NamedParams<T> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn zero_grad(&self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
