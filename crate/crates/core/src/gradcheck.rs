//! The full F64 gradient-check suite: every tape op, every feed-forward
//! variant, both attention paths, LayerNorm and the tiny end-to-end model.

use crate::error::Result;
use crate::kan::{init_expansion, ExpansionConfig, Variant};
use crate::nn::{init, AttentionMode, AttentionParams, LayerNormParams, Parameterized};
use crate::tensor::{grad_check_params, GradCheckReport, Tensor};
use crate::vit::{AttentionKind, ModelConfig, ModelParams};

/// Maximum relative error for a component to pass.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coordinates: usize,
}

impl ComponentCheck {
    pub fn passes(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

type Check = Box<dyn Fn() -> Result<GradCheckReport>>;

struct Case {
    name: String,
    run: Check,
}

fn rand(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    init::uniform(&mut init::seeded(seed), shape, lo, hi).expect("valid shape")
}

fn leaf(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let t = rand(seed, shape, lo, hi);
    Tensor::param(t.to_vec(), shape).expect("valid shape")
}

/// Σ y ⊙ r for a fixed random r, so every output coordinate carries a
/// distinct upstream gradient.
fn project(y: &Tensor<f64>) -> Result<Tensor<f64>> {
    let r = rand(99, y.shape(), -1.0, 1.0);
    y.mul(&r)?.sum()
}

fn case(name: impl Into<String>, run: impl Fn() -> Result<GradCheckReport> + 'static) -> Case {
    Case { name: name.into(), run: Box::new(run) }
}

fn unary(name: &'static str, lo: f64, hi: f64, f: fn(&Tensor<f64>) -> Result<Tensor<f64>>) -> Case {
    case(format!("op/{name}"), move || {
        let x = leaf(1, &[3, 4], lo, hi);
        grad_check_params(|| project(&f(&x)?), std::slice::from_ref(&x), STEP)
    })
}

fn binary(
    name: &'static str,
    shapes: (&'static [usize], &'static [usize]),
    rhs_range: (f64, f64),
    f: fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
) -> Case {
    case(format!("op/{name}"), move || {
        let a = leaf(2, shapes.0, -1.5, 1.5);
        let b = leaf(3, shapes.1, rhs_range.0, rhs_range.1);
        grad_check_params(|| project(&f(&a, &b)?), &[a.clone(), b.clone()], STEP)
    })
}

/// Deliberately wrong backward (sign flipped) to prove the harness fails.
fn wrong_sign_sin(x: &Tensor<f64>) -> Tensor<f64> {
    let data = x.data().iter().map(|v| v.sin()).collect();
    Tensor::from_op(
        "wrong_sign_sin",
        data,
        x.shape().to_vec(),
        vec![x.clone()],
        Box::new(|ctx| {
            let x = ctx.parents[0].data();
            vec![Some(ctx.grad.iter().zip(x.iter()).map(|(g, v)| -g * v.cos()).collect())]
        }),
    )
}

fn op_cases() -> Vec<Case> {
    vec![
        unary("neg", -2.0, 2.0, |x| Ok(x.neg())),
        unary("sin", -3.0, 3.0, |x| Ok(x.sin())),
        unary("cos", -3.0, 3.0, |x| Ok(x.cos())),
        unary("exp", -2.0, 2.0, |x| Ok(x.exp())),
        unary("log", 0.2, 3.0, |x| Ok(x.log())),
        unary("tanh", -2.0, 2.0, |x| Ok(x.tanh())),
        unary("silu", -3.0, 3.0, |x| Ok(x.silu())),
        unary("gelu", -3.0, 3.0, |x| Ok(x.gelu())),
        unary("square", -2.0, 2.0, |x| Ok(x.square())),
        unary("powf", 0.2, 2.0, |x| Ok(x.powf(1.7))),
        unary("add_scalar", -2.0, 2.0, |x| Ok(x.add_scalar(0.7))),
        unary("mul_scalar", -2.0, 2.0, |x| Ok(x.mul_scalar(-1.3))),
        binary("add", (&[3, 4], &[1, 4]), (-1.0, 1.0), |a, b| a.add(b)),
        binary("sub", (&[3, 4], &[3, 1]), (-1.0, 1.0), |a, b| a.sub(b)),
        binary("mul", (&[2, 3, 4], &[3, 4]), (-1.0, 1.0), |a, b| a.mul(b)),
        binary("div", (&[3, 4], &[4]), (0.5, 2.0), |a, b| a.div(b)),
        binary("matmul", (&[3, 4], &[4, 2]), (-1.0, 1.0), |a, b| a.matmul(b)),
        binary("bmm", (&[2, 3, 4], &[2, 4, 2]), (-1.0, 1.0), |a, b| a.bmm(b)),
        case("op/linear", || {
            let x = leaf(4, &[5, 3], -1.0, 1.0);
            let w = leaf(5, &[2, 3], -1.0, 1.0);
            let b = leaf(6, &[2], -1.0, 1.0);
            grad_check_params(|| project(&x.linear(&w, &b)?), &[x.clone(), w.clone(), b.clone()], STEP)
        }),
        unary("t", -1.0, 1.0, |x| x.t()),
        unary("permute", -1.0, 1.0, |x| x.reshape(&[3, 2, 2])?.permute(&[2, 0, 1])),
        unary("reshape", -1.0, 1.0, |x| x.reshape(&[2, 6])),
        unary("narrow", -1.0, 1.0, |x| x.narrow(1, 1, 2)),
        unary("concat", -1.0, 1.0, |x| Tensor::concat(&[x.clone(), x.square()], 0)),
        unary("expand", -1.0, 1.0, |x| x.reshape(&[3, 1, 4])?.expand(&[3, 2, 4])),
        unary("sum", -1.0, 1.0, |x| x.sin().sum()),
        unary("mean", -1.0, 1.0, |x| x.sin().mean()),
        unary("sum_axis", -1.0, 1.0, |x| x.sum_axis(0, false)),
        unary("mean_axis", -1.0, 1.0, |x| x.mean_axis(1, true)),
        unary("max_axis", -1.0, 1.0, |x| x.max_axis(1, false)),
        unary("softmax", -2.0, 2.0, |x| x.softmax(1)),
        unary("log_softmax", -2.0, 2.0, |x| x.log_softmax(0)),
        unary("gather_rows", -2.0, 2.0, |x| x.gather_rows(&[2, 0, 3])),
    ]
}

fn ffn_case(variant: Variant) -> Case {
    case(format!("ffn/{variant}"), move || {
        let cfg = ExpansionConfig { centers: 3, m: 3, hidden: 6, ..ExpansionConfig::new(variant) };
        let ffn = init_expansion::<f64>(&cfg, 4, &mut init::seeded(11))?;
        let x = leaf(12, &[5, 4], -1.5, 1.5);
        let mut leaves: Vec<_> = ffn.params().into_iter().map(|(_, t)| t).collect();
        leaves.push(x.clone());
        grad_check_params(|| project(&ffn.forward(&x)?), &leaves, STEP)
    })
}

fn attention_case(name: &str, mode: AttentionMode) -> Case {
    case(format!("attention/{name}"), move || {
        let p = AttentionParams::<f64>::new(&mut init::seeded(21), 4, 2)?;
        let x = leaf(22, &[2, 5, 4], -1.5, 1.5);
        let mut leaves: Vec<_> = p.params().into_iter().map(|(_, t)| t).collect();
        leaves.push(x.clone());
        grad_check_params(|| project(&p.forward(&x, mode)?), &leaves, STEP)
    })
}

fn layer_norm_case() -> Case {
    case("layer_norm", || {
        let ln = LayerNormParams::<f64>::new(4)?;
        ln.gamma.update_data(|g| g.copy_from_slice(&[0.5, -1.2, 2.0, 0.9]));
        ln.beta.update_data(|b| b.copy_from_slice(&[0.1, 0.0, -0.3, 0.7]));
        let x = leaf(31, &[2, 3, 4], -2.0, 2.0);
        grad_check_params(|| project(&ln.forward(&x)?), &[ln.gamma.clone(), ln.beta.clone(), x.clone()], STEP)
    })
}

fn model_case(variant: Variant, attention: AttentionKind) -> Case {
    let kind = match attention {
        AttentionKind::Naive => "naive",
        AttentionKind::Tiled => "tiled",
    };
    case(format!("model/{variant}/{kind}"), move || {
        let cfg = ModelConfig { attention, seed: 41, ..ModelConfig::tiny(variant) };
        let model = ModelParams::<f64>::new(&cfg)?;
        // the zero head would hide every other gradient
        let w = rand(43, model.head.weight.shape(), -0.5, 0.5).to_vec();
        model.head.weight.update_data(|d| d.copy_from_slice(&w));
        let images = rand(42, &[2, cfg.image_size, cfg.image_size], -1.0, 1.0);
        let leaves: Vec<_> = model.params().into_iter().map(|(_, t)| t).collect();
        let loss = || model.forward(&images)?.log_softmax(1)?.gather_rows(&[1, 2])?.sum().map(|l| l.mul_scalar(-0.5));
        grad_check_params(loss, &leaves, STEP)
    })
}

fn cases(inject_fault: bool) -> Vec<Case> {
    let mut all = op_cases();
    all.extend(Variant::ALL.into_iter().map(ffn_case));
    all.push(attention_case("naive", AttentionMode::Naive));
    for tile in [1, 2, 3, 5] {
        all.push(attention_case(&format!("tiled{tile}"), AttentionMode::Tiled { tile }));
    }
    all.push(layer_norm_case());
    for v in Variant::ALL {
        all.push(model_case(v, AttentionKind::Naive));
        all.push(model_case(v, AttentionKind::Tiled));
    }
    if inject_fault {
        all.push(case("fixture/wrong_sign_sin", || {
            let x = leaf(51, &[3, 4], -2.0, 2.0);
            grad_check_params(|| project(&wrong_sign_sin(&x)), std::slice::from_ref(&x), STEP)
        }));
    }
    all
}

/// Names of every component, in run order.
pub fn component_names(inject_fault: bool) -> Vec<String> {
    cases(inject_fault).into_iter().map(|c| c.name).collect()
}

/// Runs every component whose name contains `only` (all when `None`).
/// `inject_fault` appends a deliberately broken op, which must fail.
pub fn run_suite(only: Option<&str>, inject_fault: bool) -> Result<Vec<ComponentCheck>> {
    let only = only.map(str::to_ascii_lowercase);
    let mut out = Vec::new();
    for c in cases(inject_fault) {
        if only.as_deref().is_some_and(|f| !c.name.contains(f)) {
            continue;
        }
        let report = (c.run)()?;
        out.push(ComponentCheck { name: c.name, max_rel_err: report.max_rel_err, coordinates: report.coordinates });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let names = component_names(true);
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
    }

    #[test]
    fn filter_restricts_scope() {
        let r = run_suite(Some("fourierkan"), false).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|c| c.name.contains("fourierkan") && c.passes()));
    }

    #[test]
    fn wrong_sign_fixture_fails() {
        let r = run_suite(Some("fixture"), true).unwrap();
        assert_eq!(r.len(), 1);
        assert!(!r[0].passes(), "{r:?}");
    }
}
