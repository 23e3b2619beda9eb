//! Order-k B-spline expansions on a fixed uniform knot grid.
//!
//! The grid holds `knots` points spanning `grid_range` plus `order` extension
//! knots on each side, which gives `knots + order - 1` basis functions that
//! form a partition of unity on `grid_range`. Outside the extended grid every
//! basis is zero; inputs are never clamped.
//!
//! Two evaluation strategies produce the same function family:
//!
//! * [`SplineStrategy::Local`] (VanillaKAN) finds the knot span of each input
//!   and runs the triangular de Boor scheme over its `order + 1` nonzero bases
//!   inside a single fused tape node, with a SiLU base term.
//! * [`SplineStrategy::BasisMatrix`] (EfficientKAN) builds the full
//!   `[n, d, B]` basis tensor level by level with the Cox–de Boor recursion
//!   on the tape, then contracts it with the coefficients.

use rand::Rng;

use super::sine::check_input;
use super::MAX_SPLINE_ORDER;
use crate::error::{Error, Result};
use crate::nn::{init, join, NamedParams, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplineStrategy {
    Local,
    BasisMatrix,
}

/// Uniform knot vector with `order` extension knots on each side.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotGrid {
    lo: f64,
    step: f64,
    order: usize,
    len: usize,
}

impl KnotGrid {
    pub fn uniform(range: (f64, f64), knots: usize, order: usize) -> Result<Self> {
        if knots < 2 || !(range.0 < range.1) || order > MAX_SPLINE_ORDER {
            return Err(Error::InvalidConfig(format!(
                "knot grid needs >= 2 knots, lo < hi and order <= {MAX_SPLINE_ORDER}, got {knots} knots of order {order} on {range:?}"
            )));
        }
        Ok(Self {
            lo: range.0,
            step: (range.1 - range.0) / (knots - 1) as f64,
            order,
            len: knots + 2 * order,
        })
    }

    /// Knot `i`, also defined past either end of the stored vector.
    #[inline]
    pub fn knot(&self, i: isize) -> f64 {
        self.lo + (i - self.order as isize) as f64 * self.step
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.len as isize).map(|i| self.knot(i)).collect()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bases(&self) -> usize {
        self.len - 1 - self.order
    }

    /// Index `μ` with `t_μ <= x < t_{μ+1}`, if `x` lies in the extended grid.
    #[inline]
    fn span(&self, x: f64) -> Option<usize> {
        let first = self.knot(0);
        let last = self.knot(self.len as isize - 1);
        if !(x >= first && x < last) {
            return None;
        }
        let mut mu = (((x - first) / self.step).floor() as usize).min(self.len - 2);
        // correct for rounding in the division against the exact knot values
        while mu > 0 && x < self.knot(mu as isize) {
            mu -= 1;
        }
        while mu < self.len - 2 && x >= self.knot(mu as isize + 1) {
            mu += 1;
        }
        Some(mu)
    }
}

/// Values of all degree-`order` bases at `x` via the Cox–de Boor recursion
/// over the explicit knot vector (half-open intervals at degree 0).
pub fn bspline_basis<T: Scalar>(grid: &[T], order: usize, x: T) -> Vec<T> {
    if grid.len() < order + 2 {
        return Vec::new();
    }
    let mut level: Vec<T> = grid
        .windows(2)
        .map(|w| if x >= w[0] && x < w[1] { T::one() } else { T::zero() })
        .collect();
    for p in 1..=order {
        level = (0..level.len() - 1)
            .map(|i| {
                let left = (x - grid[i]) / (grid[i + p] - grid[i]) * level[i];
                let right = (grid[i + p + 1] - x) / (grid[i + p + 1] - grid[i + 1]) * level[i + 1];
                left + right
            })
            .collect();
    }
    level
}

/// Nonzero bases at `x` for span `mu`: entry `r` of the returned arrays is
/// the basis with global index `mu - degree + r`. Also returns the
/// degree-`order-1` values (entry `r` ↔ index `mu - order + 1 + r`) used for
/// derivatives.
#[inline]
fn local_bases<T: Scalar>(grid: &KnotGrid, mu: usize, x: T) -> ([T; MAX_SPLINE_ORDER + 1], [T; MAX_SPLINE_ORDER + 1]) {
    let k = grid.order();
    let t = |i: isize| T::of(grid.knot(i));
    let mut n = [T::zero(); MAX_SPLINE_ORDER + 1];
    let mut lower = [T::zero(); MAX_SPLINE_ORDER + 1];
    let mut left = [T::zero(); MAX_SPLINE_ORDER + 1];
    let mut right = [T::zero(); MAX_SPLINE_ORDER + 1];
    n[0] = T::one();
    let mu = mu as isize;
    for j in 1..=k {
        if j == k {
            lower = n;
        }
        left[j] = x - t(mu + 1 - j as isize);
        right[j] = t(mu + j as isize) - x;
        let mut saved = T::zero();
        for r in 0..j {
            // N_{mu-j+1+r, j-1} contributes to N_{mu-j+r, j} and N_{mu-j+1+r, j}
            let denom = right[r + 1] + left[j - r];
            let temp = n[r] / denom;
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    if k == 0 {
        lower[0] = T::zero();
    }
    (n, lower)
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[derive(Clone, Debug)]
pub struct SplineKanParams<T: Scalar> {
    pub grid: KnotGrid,
    /// `[channels, B]`
    pub coef: Tensor<T>,
    /// `[channels]`, present for the VanillaKAN form.
    pub base_weight: Option<Tensor<T>>,
}

impl<T: Scalar> SplineKanParams<T> {
    /// Coefficients ~ U[-1, 1] / √B; base weight 1 when requested.
    pub fn new(
        rng: &mut impl Rng,
        channels: usize,
        grid: KnotGrid,
        with_base: bool,
    ) -> Result<Self> {
        let b = grid.bases();
        let s = 1.0 / (b as f64).sqrt();
        let coef = init::uniform(rng, &[channels, b], -s, s)?;
        let base_weight = if with_base {
            Some(init::ones_param(&[channels])?)
        } else {
            None
        };
        Ok(Self { grid, coef, base_weight })
    }

    pub fn channels(&self) -> usize {
        self.coef.shape()[0]
    }
}

impl<T: Scalar> Parameterized<T> for SplineKanParams<T> {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((join(prefix, "coef"), self.coef.clone()));
        if let Some(bw) = &self.base_weight {
            out.push((join(prefix, "base_weight"), bw.clone()));
        }
    }
}

/// `out[i,j] = Σ_b coef[j,b]·B_b(x[i,j]) (+ base_weight[j]·silu(x[i,j]))`
pub fn phi_spline<T: Scalar>(p: &SplineKanParams<T>, x: &Tensor<T>, strategy: SplineStrategy) -> Result<Tensor<T>> {
    match strategy {
        SplineStrategy::Local => spline_local(p, x),
        SplineStrategy::BasisMatrix => {
            let y = spline_basis_matrix(p, x)?;
            match &p.base_weight {
                Some(bw) => y.add(&x.silu().mul(bw)?),
                None => Ok(y),
            }
        }
    }
}

fn spline_local<T: Scalar>(p: &SplineKanParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_input("phi_spline", x, p.channels())?;
    let grid = &p.grid;
    let (k, nb) = (grid.order(), grid.bases());
    let kf = T::of(k as f64);
    let mut out = vec![T::zero(); n * c];
    // saved for backward: first basis index of each span (None outside the
    // grid), its k+1 basis values, d(out)/dx and silu(x)
    let mut first = vec![None; n * c];
    let mut vals = vec![T::zero(); n * c * (k + 1)];
    let mut slope = vec![T::zero(); n * c];
    let mut silu = vec![T::zero(); n * c];
    {
        let xd = x.data();
        let coef = p.coef.data();
        let bw = p.base_weight.as_ref().map(|t| t.data());
        let t = |q: isize| T::of(grid.knot(q));
        for e in 0..n * c {
            let j = e % c;
            let xv = xd[e];
            let mut acc = T::zero();
            let mut dx = T::zero();
            if let Some(mu) = grid.span(xv.to_f64_lossy()) {
                let (nv, lower) = local_bases(grid, mu, xv);
                let base = mu as isize - k as isize;
                first[e] = Some(base);
                vals[e * (k + 1)..(e + 1) * (k + 1)].copy_from_slice(&nv[..=k]);
                for r in 0..=k {
                    let idx = base + r as isize;
                    if idx < 0 || idx as usize >= nb {
                        continue;
                    }
                    let cv = coef[j * nb + idx as usize];
                    acc = acc + cv * nv[r];
                    // N'_{b,k} = k/(t_{b+k}-t_b)·N_{b,k-1} - k/(t_{b+k+1}-t_{b+1})·N_{b+1,k-1}
                    // with lower[r'] ↔ index base + 1 + r'
                    let lo_b = if r >= 1 { lower[r - 1] } else { T::zero() };
                    let lo_b1 = if r < k { lower[r] } else { T::zero() };
                    let d = kf * lo_b / (t(idx + k as isize) - t(idx))
                        - kf * lo_b1 / (t(idx + k as isize + 1) - t(idx + 1));
                    dx = dx + cv * d;
                }
            }
            if let Some(bw) = &bw {
                let sg = sigmoid(xv);
                silu[e] = xv * sg;
                acc = acc + bw[j] * silu[e];
                dx = dx + bw[j] * sg * (T::one() + xv * (T::one() - sg));
            }
            out[e] = acc;
            slope[e] = dx;
        }
    }
    let mut parents = vec![x.clone(), p.coef.clone()];
    if let Some(bw) = &p.base_weight {
        parents.push(bw.clone());
    }
    let with_base = p.base_weight.is_some();
    Ok(Tensor::from_op(
        "phi_spline_local",
        out,
        vec![n, c],
        parents,
        Box::new(move |ctx| {
            let mut dx = vec![T::zero(); n * c];
            let mut dcoef = vec![T::zero(); c * nb];
            let mut dbw = with_base.then(|| vec![T::zero(); c]);
            for (e, &g) in ctx.grad.iter().enumerate() {
                let j = e % c;
                dx[e] = g * slope[e];
                if let Some(base) = first[e] {
                    for (r, &v) in vals[e * (k + 1)..(e + 1) * (k + 1)].iter().enumerate() {
                        let idx = base + r as isize;
                        if idx >= 0 && (idx as usize) < nb {
                            let b = j * nb + idx as usize;
                            dcoef[b] = dcoef[b] + g * v;
                        }
                    }
                }
                if let Some(dbw) = dbw.as_mut() {
                    dbw[j] = dbw[j] + g * silu[e];
                }
            }
            let mut grads = vec![Some(dx), Some(dcoef)];
            if let Some(dbw) = dbw {
                grads.push(Some(dbw));
            }
            grads
        }),
    ))
}

/// Full Cox–de Boor recursion on `[n, d, ·]` tensors; the degree-0
/// indicators are constants, every higher level is recorded on the tape.
fn spline_basis_matrix<T: Scalar>(p: &SplineKanParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_input("phi_spline", x, p.channels())?;
    let knots: Vec<T> = p.grid.knots().into_iter().map(T::of).collect();
    let g = knots.len();
    let x3 = x.reshape(&[n, c, 1])?;
    let intervals = g - 1;
    let mut ind = vec![T::zero(); n * c * intervals];
    {
        let xd = x.data();
        for (e, &xv) in xd.iter().enumerate() {
            for l in 0..intervals {
                if xv >= knots[l] && xv < knots[l + 1] {
                    ind[e * intervals + l] = T::one();
                }
            }
        }
    }
    let mut bases = Tensor::new(ind, &[n, c, intervals])?;
    let slice = |from: usize, len: usize| Tensor::new(knots[from..from + len].to_vec(), &[len]);
    for p_deg in 1..=p.grid.order() {
        let len = intervals - p_deg;
        let t_i = slice(0, len)?;
        let t_ip = slice(p_deg, len)?;
        let t_i1 = slice(1, len)?;
        let t_ip1 = slice(p_deg + 1, len)?;
        let left = x3.sub(&t_i)?.div(&t_ip.sub(&t_i)?)?.mul(&bases.narrow(2, 0, len)?)?;
        let right = t_ip1.sub(&x3)?.div(&t_ip1.sub(&t_i1)?)?.mul(&bases.narrow(2, 1, len)?)?;
        bases = left.add(&right)?;
    }
    bases.mul(&p.coef)?.sum_axis(2, false)
}
