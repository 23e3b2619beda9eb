//! Cross-entropy, Adam, evaluation, and the epoch loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, argmax_rows, macro_f1, roc_auc_ovr};
use crate::nn::Parameterized;
use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor};
use crate::vit::ModelParams;

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    logits.log_softmax(1)?.gather_rows(labels)?.mean().map(|m| m.neg())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` in place; `t` counts from 1.
pub fn adam_step<T: Scalar>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let bc2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam state for a fixed list of leaves.
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    params: Vec<Tensor<T>>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, config: AdamConfig) -> Self {
        let m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        let v = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Self { config, params, m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Applies one update from the leaves' accumulated gradients. Leaves
    /// that received no gradient are left untouched.
    pub fn step(&mut self) {
        self.t += 1;
        let t = self.t;
        let cfg = self.config;
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            p.update_with_grad(|data, grad| {
                if let Some(g) = grad {
                    adam_step(data, g, m, v, t, &cfg);
                }
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch: usize,
    /// Keys the per-epoch shuffle.
    pub seed: u64,
    /// Batch size for evaluation passes.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 10,
            batch: 128,
            seed: 0,
            eval_batch: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub roc_auc_ovr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub macro_f1: f64,
    pub roc_auc_ovr: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,macro_f1,roc_auc_ovr,seconds";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.3}",
            self.epoch, self.train_loss, self.train_acc, self.test_acc, self.macro_f1, self.roc_auc_ovr, self.seconds
        )
    }
}

/// Forward pass over `ds` without recording a tape.
pub fn evaluate<T: Scalar>(model: &ModelParams<T>, ds: &Dataset, batch: usize) -> Result<EvalMetrics> {
    let classes = model.config.n_classes;
    let mut probs = Vec::with_capacity(ds.len() * classes);
    let mut loss_sum = 0.0;
    no_grad(|| -> Result<()> {
        for idx in batch_indices(ds.len(), batch, 0, 0, false) {
            let b = ds.batch::<T>(&idx)?;
            let logits = model.forward(&b.images)?;
            loss_sum += cross_entropy(&logits, &b.labels)?.item().to_f64_lossy() * idx.len() as f64;
            probs.extend(logits.softmax(1)?.to_f64_vec());
        }
        Ok(())
    })?;
    let truth: Vec<usize> = ds.labels.iter().map(|&l| l as usize).collect();
    let preds = argmax_rows(&probs, classes);
    Ok(EvalMetrics {
        loss: loss_sum / ds.len() as f64,
        accuracy: accuracy(&preds, &truth)?,
        macro_f1: macro_f1(&preds, &truth, classes)?,
        roc_auc_ovr: roc_auc_ovr(&probs, &truth, classes)?,
    })
}

/// Running statistics of one optimization step.
struct StepOutcome {
    loss: f64,
    correct: usize,
}

fn train_step<T: Scalar>(
    model: &ModelParams<T>,
    opt: &mut Adam<T>,
    ds: &Dataset,
    idx: &[usize],
    epoch: usize,
    batch_no: usize,
) -> Result<StepOutcome> {
    let b = ds.batch::<T>(idx)?;
    let logits = model.forward(&b.images)?;
    let loss = cross_entropy(&logits, &b.labels)?;
    let value = loss.item().to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            batch: batch_no,
            variant: model.config.ffn.variant.to_string(),
        });
    }
    let preds = argmax_rows(&logits.to_f64_vec(), model.config.n_classes);
    let correct = preds.iter().zip(&b.labels).filter(|(p, t)| p == t).count();
    opt.zero_grad();
    loss.backward()?;
    opt.step();
    Ok(StepOutcome { loss: value, correct })
}

/// The epoch loop: shuffle, then per batch forward, loss, backward, Adam;
/// the full test split is evaluated after every epoch and handed to `sink`.
/// Training loss and accuracy are running averages over the epoch's batches.
pub fn train<T: Scalar>(
    model: &ModelParams<T>,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    if train_ds.is_empty() || test_ds.is_empty() {
        return Err(Error::InvalidConfig("training and test sets must be non-empty".into()));
    }
    let params: Vec<Tensor<T>> = model.params().into_iter().map(|(_, t)| t).collect();
    let mut opt = Adam::new(params, cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch_no, idx) in batch_indices(train_ds.len(), cfg.batch, cfg.seed, epoch, true).iter().enumerate() {
            let out = train_step(model, &mut opt, train_ds, idx, epoch, batch_no)?;
            loss_sum += out.loss * idx.len() as f64;
            correct += out.correct;
        }
        let eval = evaluate(model, test_ds, cfg.eval_batch)?;
        let n = train_ds.len() as f64;
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_acc: eval.accuracy,
            macro_f1: eval.macro_f1,
            roc_auc_ovr: eval.roc_auc_ovr,
            seconds: start.elapsed().as_secs_f64(),
        };
        sink(&row)?;
        history.push(row);
    }
    Ok(history)
}

/// Repeated full-batch steps on a small set; returns the 1-based step after
/// which every sample is classified correctly, if that happens within
/// `max_steps`.
pub fn overfit<T: Scalar>(model: &ModelParams<T>, ds: &Dataset, adam: AdamConfig, max_steps: usize) -> Result<Option<usize>> {
    let params: Vec<Tensor<T>> = model.params().into_iter().map(|(_, t)| t).collect();
    let mut opt = Adam::new(params, adam);
    let all: Vec<usize> = (0..ds.len()).collect();
    for step in 1..=max_steps {
        train_step(model, &mut opt, ds, &all, 1, step - 1)?;
        if evaluate(model, ds, ds.len())?.accuracy == 1.0 {
            return Ok(Some(step));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Tensor::<f64>::zeros(&[4, 10]).unwrap();
        let l = cross_entropy(&logits, &[0, 3, 9, 5]).unwrap().item();
        assert!((l - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logit_saturates() {
        let mut v = vec![0.0; 10];
        v[2] = 30.0;
        let l = cross_entropy(&Tensor::<f64>::from_f64(&v, &[1, 10]).unwrap(), &[2]).unwrap().item();
        assert!(l < 1e-9);
    }

    #[test]
    fn matches_softmax_then_log() {
        let mut rng = init::seeded(2);
        let x: Tensor<f64> = init::uniform(&mut rng, &[6, 10], -4.0, 4.0).unwrap();
        let labels = [1, 0, 9, 4, 4, 7];
        let v = x.to_vec();
        let mut expect = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &v[i * 10..(i + 1) * 10];
            let z: f64 = row.iter().map(|a| a.exp()).sum();
            expect -= (row[y].exp() / z).ln();
        }
        expect /= 6.0;
        assert!((cross_entropy(&x, &labels).unwrap().item() - expect).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = (vec![1.5, -2.0], vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &cfg);
        assert_eq!(p, vec![1.5, -2.0]);
        let (mut m2, mut v2): (Vec<f64>, Vec<f64>) = (vec![0.4, -0.2], vec![0.1, 0.3]);
        let mut p2 = p.clone();
        adam_step(&mut p2, &[0.0, 0.0], &mut m2, &mut v2, 3, &cfg);
        assert!(m2[0].abs() < 0.4 && v2[1] < 0.3);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = (vec![0.0, 0.0], vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p, &[3.0, -0.5], &mut m, &mut v, 1, &cfg);
        assert!((p[0] + cfg.lr).abs() < 1e-9 && (p[1] - cfg.lr).abs() < 1e-9);
    }

    #[test]
    fn optimizer_skips_leaves_without_gradient() {
        let a = Tensor::param(vec![1.0], &[1]).unwrap();
        let b = Tensor::param(vec![5.0], &[1]).unwrap();
        let mut opt = Adam::new(vec![a.clone(), b.clone()], AdamConfig::default());
        a.square().sum().unwrap().backward().unwrap();
        opt.step();
        assert!(a.item() < 1.0);
        assert_eq!(b.item(), 5.0);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn csv_row_layout() {
        let row = EpochMetrics {
            epoch: 3,
            train_loss: 0.5,
            train_acc: 0.9,
            test_acc: 0.91,
            macro_f1: 0.905,
            roc_auc_ovr: 0.99,
            seconds: 1.23456,
        };
        assert_eq!(row.csv_row(), "3,0.50000000,0.90000000,0.91000000,0.90500000,0.99000000,1.235");
        assert_eq!(METRICS_HEADER.split(',').count(), row.csv_row().split(',').count());
    }
}
