//! Small Vision Transformer whose feed-forward sub-layers are swappable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::{ffn_param_count, init_expansion, ExpansionConfig, FeedForward, Variant};
use crate::nn::{init, join, AttentionMode, AttentionParams, LayerNormParams, LinearParams, NamedParams, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Naive,
    Tiled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    ClsToken,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
    pub n_classes: usize,
    pub ffn: ExpansionConfig,
    pub attention: AttentionKind,
    /// Key/value tile length for tiled attention.
    pub tile: usize,
    pub pooling: Pooling,
    /// Seeds every parameter initializer.
    pub seed: u64,
}

impl ModelConfig {
    /// 28×28 input, 7×7 patches, d=8, two blocks of two heads.
    pub fn mnist(variant: Variant) -> Self {
        Self {
            image_size: 28,
            patch_size: 7,
            d: 8,
            blocks: 2,
            heads: 2,
            n_classes: 10,
            ffn: ExpansionConfig::new(variant),
            attention: AttentionKind::Naive,
            tile: 4,
            pooling: Pooling::ClsToken,
            seed: 0,
        }
    }

    /// 8×8 input in four 4×4 patches, d=4, one block; for gradient checks.
    pub fn tiny(variant: Variant) -> Self {
        let mut ffn = ExpansionConfig::new(variant);
        ffn.m = 3;
        ffn.centers = 3;
        ffn.hidden = 6;
        Self {
            image_size: 8,
            patch_size: 4,
            d: 4,
            blocks: 1,
            heads: 2,
            n_classes: 3,
            ffn,
            attention: AttentionKind::Naive,
            tile: 2,
            pooling: Pooling::ClsToken,
            seed: 0,
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Sequence length including the cls token when present.
    pub fn tokens(&self) -> usize {
        self.n_patches() + usize::from(self.pooling == Pooling::ClsToken)
    }

    pub fn attention_mode(&self) -> AttentionMode {
        match self.attention {
            AttentionKind::Naive => AttentionMode::Naive,
            AttentionKind::Tiled => AttentionMode::Tiled { tile: self.tile },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!("patch size {} must divide image size {}", self.patch_size, self.image_size));
        }
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("{} heads must divide d={}", self.heads, self.d));
        }
        if self.blocks == 0 || self.n_classes < 2 {
            return bad("need >= 1 block and >= 2 classes".into());
        }
        if self.attention == AttentionKind::Tiled && self.tile == 0 {
            return bad("tile must be >= 1".into());
        }
        self.ffn.validate()
    }

    /// Closed-form learnable scalar count.
    pub fn param_count(&self) -> usize {
        let d = self.d;
        let embed = self.patch_dim() * d + d;
        let cls = if self.pooling == Pooling::ClsToken { d } else { 0 };
        let pos = self.tokens() * d;
        let block = 2 * (2 * d) + 4 * d * d + ffn_param_count(&self.ffn, d);
        let head = d * self.n_classes + self.n_classes;
        embed + cls + pos + self.blocks * block + 2 * d + head
    }
}

/// Flat source index of every patch entry: `out[p·P² + o] = img[table[..]]`.
fn patch_table(image: usize, patch: usize) -> Vec<usize> {
    let g = image / patch;
    let mut table = vec![0; image * image];
    for r in 0..image {
        for c in 0..image {
            let p = (r / patch) * g + c / patch;
            let o = (r % patch) * patch + c % patch;
            table[p * patch * patch + o] = r * image + c;
        }
    }
    table
}

/// `[S, S]` or `[B, S, S]` images into `[N, P²]` or `[B, N, P²]` row-major
/// patches. A pure permutation of pixels.
pub fn patchify<T: Scalar>(img: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let (b, s, batched) = match *img.shape() {
        [h, w] if h == w => (1, h, false),
        [b, h, w] if h == w => (b, h, true),
        _ => {
            return Err(Error::Rank {
                op: "patchify",
                expected: 3,
                shape: img.shape().to_vec(),
            })
        }
    };
    if patch == 0 || s % patch != 0 {
        return Err(Error::InvalidConfig(format!("patch {patch} does not tile a {s}x{s} image")));
    }
    let table = patch_table(s, patch);
    let px = s * s;
    let src = img.data();
    let mut out = Vec::with_capacity(b * px);
    for i in 0..b {
        out.extend(table.iter().map(|&t| src[i * px + t]));
    }
    drop(src);
    let n = px / (patch * patch);
    let shape = if batched {
        vec![b, n, patch * patch]
    } else {
        vec![n, patch * patch]
    };
    Ok(Tensor::from_op(
        "patchify",
        out,
        shape,
        vec![img.clone()],
        Box::new(move |ctx| {
            let mut g = vec![T::zero(); b * px];
            for i in 0..b {
                for (k, &t) in table.iter().enumerate() {
                    g[i * px + t] = ctx.grad[i * px + k];
                }
            }
            vec![Some(g)]
        }),
    ))
}

#[derive(Clone, Debug)]
pub struct BlockParams<T: Scalar> {
    pub ln1: LayerNormParams<T>,
    pub attn: AttentionParams<T>,
    pub ln2: LayerNormParams<T>,
    pub ffn: FeedForward<T>,
}

impl<T: Scalar> Parameterized<T> for BlockParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.ln1.collect_params(&join(prefix, "ln1"), out);
        self.attn.collect_params(&join(prefix, "attn"), out);
        self.ln2.collect_params(&join(prefix, "ln2"), out);
        self.ffn.collect_params(&join(prefix, "ffn"), out);
    }
}

#[derive(Clone, Debug)]
pub struct ModelParams<T: Scalar> {
    pub config: ModelConfig,
    pub patch_embed: LinearParams<T>,
    pub cls_token: Option<Tensor<T>>,
    pub pos_embed: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_ln: LayerNormParams<T>,
    pub head: LinearParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let rng = &mut init::seeded(config.seed);
        let d = config.d;
        let patch_embed = LinearParams::new(rng, config.patch_dim(), d)?;
        let cls_token = match config.pooling {
            Pooling::ClsToken => Some(init::normal(rng, &[d], 0.02)?),
            Pooling::Mean => None,
        };
        let pos_embed = init::normal(rng, &[config.tokens(), d], 0.02)?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let ln1 = LayerNormParams::new(d)?;
            let attn = AttentionParams::new(rng, d, config.heads)?;
            let ln2 = LayerNormParams::new(d)?;
            let ffn = init_expansion(&config.ffn, d, rng)?;
            blocks.push(BlockParams { ln1, attn, ln2, ffn });
        }
        let final_ln = LayerNormParams::new(d)?;
        // zero head: every class starts at logit 0, so the initial loss is ln(n_classes)
        let head = LinearParams::zeros(d, config.n_classes)?;
        Ok(Self {
            config: config.clone(),
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            final_ln,
            head,
        })
    }

    pub fn count_params(&self) -> usize {
        self.param_count()
    }

    /// `images: [B, S, S]` -> logits `[B, n_classes]`.
    pub fn forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let s = cfg.image_size;
        let b = match *images.shape() {
            [b, h, w] if h == s && w == s && b > 0 => b,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "vit_forward",
                    lhs: images.shape().to_vec(),
                    rhs: vec![0, s, s],
                })
            }
        };
        let (n, d, t) = (cfg.n_patches(), cfg.d, cfg.tokens());
        let patches = patchify(images, cfg.patch_size)?.reshape(&[b * n, cfg.patch_dim()])?;
        let mut x = self.patch_embed.forward(&patches)?.reshape(&[b, n, d])?;
        if let Some(cls) = &self.cls_token {
            x = Tensor::concat(&[cls.expand(&[b, 1, d])?, x], 1)?;
        }
        x = x.add(&self.pos_embed)?;
        let mode = cfg.attention_mode();
        for blk in &self.blocks {
            x = x.add(&blk.attn.forward(&blk.ln1.forward(&x)?, mode)?)?;
            let h = blk.ln2.forward(&x)?.reshape(&[b * t, d])?;
            x = x.add(&blk.ffn.forward(&h)?.reshape(&[b, t, d])?)?;
        }
        let pooled = match cfg.pooling {
            Pooling::ClsToken => x.narrow(1, 0, 1)?.reshape(&[b, d])?,
            Pooling::Mean => x.mean_axis(1, false)?,
        };
        self.head.forward(&self.final_ln.forward(&pooled)?)
    }
}

impl<T: Scalar> Parameterized<T> for ModelParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.patch_embed.collect_params(&join(prefix, "patch_embed"), out);
        if let Some(cls) = &self.cls_token {
            out.push((join(prefix, "cls_token"), cls.clone()));
        }
        out.push((join(prefix, "pos_embed"), self.pos_embed.clone()));
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.collect_params(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.final_ln.collect_params(&join(prefix, "final_ln"), out);
        self.head.collect_params(&join(prefix, "head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::no_grad;

    fn images(b: usize, s: usize, seed: u64) -> Tensor<f64> {
        Tensor::new(init::uniform_vec(&mut init::seeded(seed), b * s * s, 0.0, 1.0), &[b, s, s]).unwrap()
    }

    #[test]
    fn patchify_shapes_and_constants() {
        let img = Tensor::<f64>::full(&[28, 28], 0.25).unwrap();
        let p = patchify(&img, 7).unwrap();
        assert_eq!(p.shape(), &[16, 49]);
        assert!(p.to_vec().iter().all(|&v| v == 0.25));
        assert!(patchify(&Tensor::<f64>::zeros(&[28, 27]).unwrap(), 7).is_err());
    }

    #[test]
    fn patchify_index_arithmetic() {
        let img = Tensor::new((0..784).map(f64::from).collect(), &[28, 28]).unwrap();
        let p = patchify(&img, 7).unwrap().to_vec();
        for r in 0..28 {
            for c in 0..28 {
                let (pi, o) = ((r / 7) * 4 + c / 7, (r % 7) * 7 + c % 7);
                assert_eq!(p[pi * 49 + o], (r * 28 + c) as f64);
            }
        }
        assert_eq!(p[4 * 49], (7 * 28) as f64);
        let mut sorted = p.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, (0..784).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn logits_shape_and_identical_rows() {
        let cfg = ModelConfig::mnist(Variant::SineKan);
        let m = ModelParams::<f64>::new(&cfg).unwrap();
        random_head(&m);
        let one = images(1, 28, 1);
        let two = Tensor::concat(&[one.clone(), one.clone(), images(1, 28, 2)], 0).unwrap();
        let y = m.forward(&two).unwrap();
        assert_eq!(y.shape(), &[3, 10]);
        let v = y.to_vec();
        assert_eq!(v[..10], v[10..20]);
        assert_eq!(m.forward(&one).unwrap().shape(), &[1, 10]);
    }

    /// Replaces the zero head so logits depend on the body.
    fn random_head<T: Scalar>(m: &ModelParams<T>) {
        let w = init::uniform_vec(&mut init::seeded(77), m.head.weight.numel(), -0.5, 0.5);
        m.head.weight.update_data(|d| d.iter_mut().zip(&w).for_each(|(x, &v)| *x = T::of(v)));
    }

    #[test]
    fn fresh_model_predicts_uniformly() {
        let m = ModelParams::<f64>::new(&ModelConfig::mnist(Variant::Mlp)).unwrap();
        let y = m.forward(&images(2, 28, 3)).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
        let ce = -y.log_softmax(1).unwrap().to_vec()[0];
        assert!((ce - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn param_counts() {
        let d = 8;
        let base = 49 * d + d + d + 17 * d + 2 * (4 * d + 4 * d * d) + 2 * d + d * 10 + 10;
        let mut mlp = ModelConfig::mnist(Variant::Mlp);
        mlp.ffn.hidden = 8;
        let m = ModelParams::<f64>::new(&mlp).unwrap();
        let by_shapes: usize = m.params().iter().map(|(_, t)| t.shape().iter().product::<usize>()).sum();
        assert_eq!(m.count_params(), by_shapes);
        assert_eq!(m.count_params(), base + 2 * (2 * d * 8 + 8 + d));
        assert_eq!(mlp.param_count(), m.count_params());

        let sine = ModelParams::<f64>::new(&ModelConfig::mnist(Variant::SineKan)).unwrap();
        assert_eq!(sine.count_params(), base + 2 * (3 * 8 * 8 + 8 * 8 + 8));

        for v in Variant::ALL {
            let cls = ModelConfig::mnist(v);
            let mean = ModelConfig { pooling: Pooling::Mean, ..cls.clone() };
            let a = ModelParams::<f64>::new(&cls).unwrap().count_params();
            let b = ModelParams::<f64>::new(&mean).unwrap().count_params();
            assert_eq!(a, b + 8 + 8, "{v}");
            assert_eq!(a, cls.param_count(), "{v}");
        }
    }

    #[test]
    fn tiled_matches_naive_logits() {
        let x = images(3, 28, 4);
        for v in [Variant::SineKan, Variant::EfficientKan] {
            let naive = ModelConfig::mnist(v);
            let m = ModelParams::<f64>::new(&naive).unwrap();
            random_head(&m);
            let base = m.forward(&x).unwrap().to_vec();
            for tile in [1, 3, 5, 17, 40] {
                let mut tm = m.clone();
                tm.config.attention = AttentionKind::Tiled;
                tm.config.tile = tile;
                for (a, b) in base.iter().zip(tm.forward(&x).unwrap().to_vec()) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn batch_permutation_permutes_logits() {
        let m = ModelParams::<f64>::new(&ModelConfig::mnist(Variant::FastKan)).unwrap();
        random_head(&m);
        let parts: Vec<_> = (0..3).map(|i| images(1, 28, 10 + i)).collect();
        let fwd = Tensor::concat(&parts, 0).unwrap();
        let rev = Tensor::concat(&[parts[2].clone(), parts[1].clone(), parts[0].clone()], 0).unwrap();
        let a = m.forward(&fwd).unwrap().to_vec();
        let b = m.forward(&rev).unwrap().to_vec();
        for i in 0..3 {
            assert_eq!(a[i * 10..(i + 1) * 10], b[(2 - i) * 10..(3 - i) * 10]);
        }
    }

    #[test]
    fn forward_is_finite_on_unit_inputs() {
        for v in Variant::ALL {
            let m = ModelParams::<f32>::new(&ModelConfig::mnist(v)).unwrap();
            random_head(&m);
            for seed in 0..100 {
                let x = Tensor::<f32>::from_f64(&images(4, 28, seed).to_vec(), &[4, 28, 28]).unwrap();
                let y = no_grad(|| m.forward(&x)).unwrap();
                assert!(y.to_vec().iter().all(|v| v.is_finite()), "{v}");
            }
        }
    }

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        use crate::tensor::grad_check_params;
        for v in Variant::ALL {
            for attention in [AttentionKind::Naive, AttentionKind::Tiled] {
                let cfg = ModelConfig { attention, ..ModelConfig::tiny(v) };
                let m = ModelParams::<f64>::new(&cfg).unwrap();
                let w = init::uniform_vec(&mut init::seeded(6), m.head.weight.numel(), -0.5, 0.5);
                m.head.weight.update_data(|d| d.copy_from_slice(&w));
                let x = images(2, 8, 5).mul_scalar(2.0).add_scalar(-1.0);
                let leaves: Vec<_> = m.params().into_iter().map(|(_, t)| t).collect();
                let f = || m.forward(&x)?.log_softmax(1)?.gather_rows(&[0, 2])?.sum();
                let report = grad_check_params(f, &leaves, 1e-5).unwrap();
                assert!(report.passes(1e-4), "{v} {attention:?}: {report:?}");
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = ModelConfig::mnist(Variant::Mlp);
        assert!(ModelConfig { patch_size: 5, ..base.clone() }.validate().is_err());
        assert!(ModelConfig { heads: 3, ..base.clone() }.validate().is_err());
        assert!(ModelConfig { attention: AttentionKind::Tiled, tile: 0, ..base }.validate().is_err());
    }
}
