//! Multi-head self-attention, bidirectional and unmasked.
//!
//! Two evaluation strategies share one parameter set:
//!
//! * [`AttentionMode::Naive`] computes `softmax(QKᵀ/√d_head)·V` in one tape
//!   node and keeps every `T×T` probability matrix for backward.
//! * [`AttentionMode::Tiled`] walks the keys in tiles with an online softmax
//!   (running max `m`, running denominator `ℓ`, rescaled accumulator). Its
//!   backward pass recomputes probabilities tile by tile from the saved
//!   log-sum-exp, so no `T×T` buffer exists in either direction.

use std::cell::Cell;

use rand::Rng;

use super::{init, join, NamedParams, Parameterized};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    Naive,
    Tiled { tile: usize },
}

/// Tracks live and peak element counts of attention intermediates.
#[derive(Debug, Default)]
pub struct StorageMeter {
    live: Cell<usize>,
    peak: Cell<usize>,
}

impl StorageMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&self, elems: usize) {
        let live = self.live.get() + elems;
        self.live.set(live);
        self.peak.set(self.peak.get().max(live));
    }

    pub fn free(&self, elems: usize) {
        self.live.set(self.live.get().saturating_sub(elems));
    }

    pub fn peak(&self) -> usize {
        self.peak.get()
    }

    pub fn live(&self) -> usize {
        self.live.get()
    }
}

/// Projections for `H` heads. Column block `h·d_head..(h+1)·d_head` of
/// `w_q`, `w_k` and `w_v` is head `h`'s `[d, d_head]` projection, so one
/// matrix product serves all heads. `w_o` maps the concatenated heads back
/// to `d`. No biases.
#[derive(Clone, Debug)]
pub struct AttentionParams<T: Scalar> {
    pub heads: usize,
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(rng: &mut impl Rng, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::InvalidConfig(format!("{heads} heads do not divide d={d}")));
        }
        let dh = d / heads;
        // each per-head block is Xavier-initialized with fans (d, d_head)
        let w_q = init::xavier(rng, &[d, d], d, dh)?;
        let w_k = init::xavier(rng, &[d, d], d, dh)?;
        let w_v = init::xavier(rng, &[d, d], d, dh)?;
        let w_o = init::xavier(rng, &[d, d], d, d)?;
        Ok(Self { heads, w_q, w_k, w_v, w_o })
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// `x: [T, d]` or `[B, T, d]`; output has the same shape.
    pub fn forward(&self, x: &Tensor<T>, mode: AttentionMode) -> Result<Tensor<T>> {
        self.forward_metered(x, mode, &StorageMeter::new())
    }

    /// As [`forward`](Self::forward), recording intermediate storage in `meter`.
    pub fn forward_metered(&self, x: &Tensor<T>, mode: AttentionMode, meter: &StorageMeter) -> Result<Tensor<T>> {
        let d = self.dim();
        let (b, t) = match *x.shape() {
            [t, dd] if dd == d => (1, t),
            [b, t, dd] if dd == d => (b, t),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "attention",
                    lhs: x.shape().to_vec(),
                    rhs: self.w_q.shape().to_vec(),
                })
            }
        };
        let (h, dh) = (self.heads, self.head_dim());
        let flat = x.reshape(&[b * t, d])?;
        let split = |w: &Tensor<T>| -> Result<Tensor<T>> {
            flat.matmul(w)?
                .reshape(&[b, t, h, dh])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[b * h, t, dh])
        };
        let (q, k, v) = (split(&self.w_q)?, split(&self.w_k)?, split(&self.w_v)?);
        let scale = T::one() / T::of(dh as f64).sqrt();
        let heads_out = match mode {
            AttentionMode::Naive => full_attention(&q, &k, &v, scale, meter)?,
            AttentionMode::Tiled { tile } => tiled_attention(&q, &k, &v, scale, tile, meter)?,
        };
        let merged = heads_out
            .reshape(&[b, h, t, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * t, d])?;
        merged.matmul(&self.w_o)?.reshape(x.shape())
    }
}

impl<T: Scalar> Parameterized<T> for AttentionParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((join(prefix, "w_q"), self.w_q.clone()));
        out.push((join(prefix, "w_k"), self.w_k.clone()));
        out.push((join(prefix, "w_v"), self.w_v.clone()));
        out.push((join(prefix, "w_o"), self.w_o.clone()));
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

fn check_qkv<T: Scalar>(op: &'static str, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    Ok((q.shape()[0], q.shape()[1], q.shape()[2]))
}

/// `softmax(scale·QKᵀ)·V` over `[S, T, dh]` slices with the full `[S, T, T]`
/// probability matrix materialized and kept for backward. One tape node.
pub fn full_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    scale: T,
    meter: &StorageMeter,
) -> Result<Tensor<T>> {
    let (slices, t, dh) = check_qkv("full_attention", q, k, v)?;
    let mut probs = vec![T::zero(); slices * t * t];
    meter.alloc(probs.len());
    let mut out = vec![T::zero(); slices * t * dh];
    {
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        for s in 0..slices {
            let base = s * t * dh;
            for i in 0..t {
                let qi = &qd[base + i * dh..base + (i + 1) * dh];
                let row = &mut probs[(s * t + i) * t..(s * t + i + 1) * t];
                let mut mx = T::neg_infinity();
                for (j, p) in row.iter_mut().enumerate() {
                    *p = scale * dot(qi, &kd[base + j * dh..base + (j + 1) * dh]);
                    mx = mx.max(*p);
                }
                let mut z = T::zero();
                for p in row.iter_mut() {
                    *p = (*p - mx).exp();
                    z = z + *p;
                }
                let inv = T::one() / z;
                let oi = &mut out[base + i * dh..base + (i + 1) * dh];
                for (j, p) in row.iter_mut().enumerate() {
                    *p = *p * inv;
                    for (o, &vv) in oi.iter_mut().zip(&vd[base + j * dh..base + (j + 1) * dh]) {
                        *o = *o + *p * vv;
                    }
                }
            }
        }
    }
    // the probabilities stay alive on the tape; only the forward peak is metered
    meter.free(probs.len());
    Ok(Tensor::from_op(
        "full_attention",
        out,
        vec![slices, t, dh],
        vec![q.clone(), k.clone(), v.clone()],
        Box::new(move |ctx| {
            let (qd, kd, vd) = (ctx.parents[0].data(), ctx.parents[1].data(), ctx.parents[2].data());
            let g = ctx.grad;
            let mut dq = vec![T::zero(); qd.len()];
            let mut dk = vec![T::zero(); kd.len()];
            let mut dv = vec![T::zero(); vd.len()];
            let mut dp = vec![T::zero(); t];
            let block = t * dh;
            if block == 0 {
                return vec![Some(dq), Some(dk), Some(dv)];
            }
            let slice_iter = qd
                .chunks_exact(block)
                .zip(kd.chunks_exact(block))
                .zip(vd.chunks_exact(block))
                .zip(g.chunks_exact(block))
                .zip(probs.chunks_exact(t * t))
                .zip(dq.chunks_exact_mut(block).zip(dk.chunks_exact_mut(block)).zip(dv.chunks_exact_mut(block)));
            for (((((qs, ks), vs), gs), ps), ((dqs, dks), dvs)) in slice_iter {
                for (((qi, gi), row), dqi) in
                    qs.chunks_exact(dh).zip(gs.chunks_exact(dh)).zip(ps.chunks_exact(t)).zip(dqs.chunks_exact_mut(dh))
                {
                    let mut delta = T::zero();
                    for (((d, &p), vj), dvj) in dp.iter_mut().zip(row).zip(vs.chunks_exact(dh)).zip(dvs.chunks_exact_mut(dh)) {
                        *d = dot(gi, vj);
                        delta = delta + p * *d;
                        for (o, &gc) in dvj.iter_mut().zip(gi) {
                            *o = *o + p * gc;
                        }
                    }
                    for (((&d, &p), kj), dkj) in dp.iter().zip(row).zip(ks.chunks_exact(dh)).zip(dks.chunks_exact_mut(dh)) {
                        let ds = p * (d - delta) * scale;
                        for (((oq, &kc), ok), &qc) in dqi.iter_mut().zip(kj).zip(dkj.iter_mut()).zip(qi) {
                            *oq = *oq + ds * kc;
                            *ok = *ok + ds * qc;
                        }
                    }
                }
            }
            vec![Some(dq), Some(dk), Some(dv)]
        }),
    ))
}

/// Online-softmax attention over `[S, T, dh]` slices (`S` = batch·heads).
/// One reusable workspace of `T·tile + 2T + T·dh` elements serves every slice.
pub fn tiled_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    scale: T,
    tile: usize,
    meter: &StorageMeter,
) -> Result<Tensor<T>> {
    if tile == 0 {
        return Err(Error::InvalidConfig("attention tile must be >= 1".into()));
    }
    let (slices, t, dh) = check_qkv("tiled_attention", q, k, v)?;
    let tile = tile.min(t);

    let mut out = vec![T::zero(); slices * t * dh];
    let mut lse = vec![T::zero(); slices * t];

    let ws_elems = t * tile + 2 * t + t * dh;
    meter.alloc(ws_elems);
    let mut block = vec![T::zero(); t * tile];
    let mut row_max = vec![T::zero(); t];
    let mut row_sum = vec![T::zero(); t];
    let mut acc = vec![T::zero(); t * dh];
    {
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        for s in 0..slices {
            let base = s * t * dh;
            let qs = &qd[base..base + t * dh];
            let ks = &kd[base..base + t * dh];
            let vs = &vd[base..base + t * dh];
            row_max.fill(T::neg_infinity());
            row_sum.fill(T::zero());
            acc.fill(T::zero());
            for j0 in (0..t).step_by(tile) {
                let jn = tile.min(t - j0);
                for i in 0..t {
                    let qi = &qs[i * dh..(i + 1) * dh];
                    let scores = &mut block[i * tile..i * tile + jn];
                    let mut m_new = row_max[i];
                    for (jj, sc) in scores.iter_mut().enumerate() {
                        let j = j0 + jj;
                        *sc = scale * dot(qi, &ks[j * dh..(j + 1) * dh]);
                        m_new = m_new.max(*sc);
                    }
                    let corr = if row_max[i] == T::neg_infinity() {
                        T::zero()
                    } else {
                        (row_max[i] - m_new).exp()
                    };
                    let acc_i = &mut acc[i * dh..(i + 1) * dh];
                    for a in acc_i.iter_mut() {
                        *a = *a * corr;
                    }
                    let mut l = row_sum[i] * corr;
                    for (jj, &sc) in scores.iter().enumerate() {
                        let p = (sc - m_new).exp();
                        l = l + p;
                        let j = j0 + jj;
                        for (a, &vv) in acc_i.iter_mut().zip(&vs[j * dh..(j + 1) * dh]) {
                            *a = *a + p * vv;
                        }
                    }
                    row_sum[i] = l;
                    row_max[i] = m_new;
                }
            }
            for i in 0..t {
                let inv = T::one() / row_sum[i];
                for c in 0..dh {
                    out[base + i * dh + c] = acc[i * dh + c] * inv;
                }
                lse[s * t + i] = row_max[i] + row_sum[i].ln();
            }
        }
    }
    meter.free(ws_elems);

    Ok(Tensor::from_op(
        "tiled_attention",
        out,
        vec![slices, t, dh],
        vec![q.clone(), k.clone(), v.clone()],
        Box::new(move |ctx| {
            let (qd, kd, vd) = (ctx.parents[0].data(), ctx.parents[1].data(), ctx.parents[2].data());
            let (o, g) = (ctx.out, ctx.grad);
            let mut dq = vec![T::zero(); qd.len()];
            let mut dk = vec![T::zero(); kd.len()];
            let mut dv = vec![T::zero(); vd.len()];
            let mut delta = vec![T::zero(); t];
            for s in 0..slices {
                let base = s * t * dh;
                for (i, d) in delta.iter_mut().enumerate() {
                    let r = base + i * dh..base + (i + 1) * dh;
                    *d = dot(&g[r.clone()], &o[r]);
                }
                for j0 in (0..t).step_by(tile) {
                    let jn = tile.min(t - j0);
                    for i in 0..t {
                        let ri = base + i * dh..base + (i + 1) * dh;
                        let lse_i = lse[s * t + i];
                        for j in j0..j0 + jn {
                            let rj = base + j * dh..base + (j + 1) * dh;
                            let p = (scale * dot(&qd[ri.clone()], &kd[rj.clone()]) - lse_i).exp();
                            let dp = dot(&g[ri.clone()], &vd[rj.clone()]);
                            let ds = p * (dp - delta[i]) * scale;
                            for c in 0..dh {
                                dv[rj.start + c] = dv[rj.start + c] + p * g[ri.start + c];
                                dq[ri.start + c] = dq[ri.start + c] + ds * kd[rj.start + c];
                                dk[rj.start + c] = dk[rj.start + c] + ds * qd[ri.start + c];
                            }
                        }
                    }
                }
            }
            vec![Some(dq), Some(dk), Some(dv)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64, d: usize, heads: usize) -> AttentionParams<f64> {
        AttentionParams::new(&mut init::seeded(seed), d, heads).unwrap()
    }

    /// Explicit scalar loops over heads, queries, and keys.
    fn loop_oracle(p: &AttentionParams<f64>, x: &[f64], t: usize) -> Vec<f64> {
        let (d, h, dh) = (p.dim(), p.heads, p.head_dim());
        let (wq, wk, wv, wo) = (p.w_q.to_vec(), p.w_k.to_vec(), p.w_v.to_vec(), p.w_o.to_vec());
        let proj = |w: &[f64], i: usize, col: usize| (0..d).map(|r| x[i * d + r] * w[r * d + col]).sum::<f64>();
        let mut concat = vec![0.0; t * d];
        for head in 0..h {
            for i in 0..t {
                let logits: Vec<f64> = (0..t)
                    .map(|j| {
                        (0..dh)
                            .map(|c| proj(&wq, i, head * dh + c) * proj(&wk, j, head * dh + c))
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for c in 0..dh {
                    concat[i * d + head * dh + c] =
                        (0..t).map(|j| (logits[j] - m).exp() / z * proj(&wv, j, head * dh + c)).sum();
                }
            }
        }
        (0..t * d)
            .map(|idx| {
                let (i, col) = (idx / d, idx % d);
                (0..d).map(|r| concat[i * d + r] * wo[r * d + col]).sum()
            })
            .collect()
    }

    fn random_x(seed: u64, shape: &[usize]) -> Tensor<f64> {
        init::uniform(&mut init::seeded(seed), shape, -1.5, 1.5).unwrap()
    }

    #[test]
    fn single_token_uses_its_value_row() {
        let p = params(1, 8, 2);
        let x = random_x(2, &[1, 8]);
        let y = p.forward(&x, AttentionMode::Naive).unwrap();
        let v = x.matmul(&p.w_v).unwrap().matmul(&p.w_o).unwrap();
        for (a, b) in y.to_vec().iter().zip(v.to_vec()) {
            assert!((a - b).abs() < 1e-14);
        }
        let yt = p.forward(&x, AttentionMode::Tiled { tile: 3 }).unwrap();
        for (a, b) in y.to_vec().iter().zip(yt.to_vec()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_keys_average_values() {
        // identical token rows make every logit equal
        let p = params(3, 8, 2);
        let row = random_x(4, &[1, 8]).to_vec();
        let x = Tensor::new(row.repeat(5), &[5, 8]).unwrap();
        let y = p.forward(&x, AttentionMode::Naive).unwrap().to_vec();
        let single = p.forward(&Tensor::new(row, &[1, 8]).unwrap(), AttentionMode::Naive).unwrap().to_vec();
        for i in 0..5 {
            for c in 0..8 {
                assert!((y[i * 8 + c] - single[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn naive_matches_loop_oracle() {
        let p = params(5, 8, 2);
        let x = random_x(6, &[5, 8]);
        let y = p.forward(&x, AttentionMode::Naive).unwrap().to_vec();
        let oracle = loop_oracle(&p, &x.to_vec(), 5);
        for (a, b) in y.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn tiled_matches_naive_for_all_tiles() {
        for seed in 0..5 {
            let p = params(10 + seed, 8, 2);
            let x = random_x(20 + seed, &[3, 8, 8]);
            let naive = p.forward(&x, AttentionMode::Naive).unwrap().to_vec();
            for tile in [1, 2, 3, 8, 50] {
                let tiled = p.forward(&x, AttentionMode::Tiled { tile }).unwrap().to_vec();
                for (a, b) in naive.iter().zip(&tiled) {
                    assert!((a - b).abs() < 1e-10, "tile {tile}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn tiled_storage_below_naive() {
        let p = params(7, 8, 2);
        let x = random_x(8, &[17, 8]);
        let (naive, tiled) = (StorageMeter::new(), StorageMeter::new());
        p.forward_metered(&x, AttentionMode::Naive, &naive).unwrap();
        p.forward_metered(&x, AttentionMode::Tiled { tile: 4 }, &tiled).unwrap();
        assert_eq!(naive.peak(), 2 * 17 * 17);
        assert_eq!(tiled.peak(), 17 * 4 + 2 * 17 + 17 * 4);
        assert!(tiled.peak() < naive.peak());
        assert_eq!(tiled.live(), 0);
    }

    #[test]
    fn gradients_agree_between_modes() {
        let p = params(9, 8, 2);
        let x = Tensor::param(random_x(10, &[2, 6, 8]).to_vec(), &[2, 6, 8]).unwrap();
        let grads = |mode| {
            p.zero_grad();
            x.zero_grad();
            p.forward(&x, mode).unwrap().square().sum().unwrap().backward().unwrap();
            let mut g = x.grad().unwrap();
            for (_, t) in p.params() {
                g.extend(t.grad().unwrap());
            }
            g
        };
        let a = grads(AttentionMode::Naive);
        let b = grads(AttentionMode::Tiled { tile: 4 });
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fused_core_matches_composite_ops() {
        let shape = [3, 5, 4];
        let leaves: Vec<Tensor<f64>> =
            (0..3).map(|i| Tensor::param(random_x(20 + i, &shape).to_vec(), &shape).unwrap()).collect();
        let run = |fused: bool| {
            for l in &leaves {
                l.zero_grad();
            }
            let (q, k, v) = (&leaves[0], &leaves[1], &leaves[2]);
            let out = if fused {
                full_attention(q, k, v, 0.5, &StorageMeter::new()).unwrap()
            } else {
                q.bmm(&k.permute(&[0, 2, 1]).unwrap()).unwrap().mul_scalar(0.5).softmax(2).unwrap().bmm(v).unwrap()
            };
            let w = random_x(30, &shape);
            out.mul(&w).unwrap().sum().unwrap().backward().unwrap();
            let mut all = out.to_vec();
            for l in &leaves {
                all.extend(l.grad().unwrap());
            }
            all
        };
        for (a, b) in run(true).iter().zip(&run(false)) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        assert!(AttentionParams::<f64>::new(&mut init::seeded(0), 8, 3).is_err());
    }
}
