//! Classification metrics over predicted labels and class scores.

use crate::error::{Error, Result};

fn check_lengths(preds: usize, truth: usize) -> Result<()> {
    if preds == 0 || preds != truth {
        return Err(Error::Metric(format!(
            "need equal non-empty inputs, got {preds} predictions and {truth} labels"
        )));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), truth.len())?;
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Unweighted mean of per-class F1 = 2TP / (2TP + FP + FN). Classes with no
/// true and no predicted samples are left out of the mean.
pub fn macro_f1(preds: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    check_lengths(preds.len(), truth.len())?;
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &t) in preds.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Metric(format!("class id {} outside 0..{n_classes}", p.max(t))));
        }
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..n_classes {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom == 0 {
            continue;
        }
        present += 1;
        sum += (2 * tp[c]) as f64 / denom as f64;
    }
    Ok(sum / present as f64)
}

/// Mann–Whitney statistic doubled so ties stay integral:
/// `Σ_{pos, neg} 2·[s_pos > s_neg] + [s_pos == s_neg]`.
fn doubled_u(scores: &[f64], positive: &[bool]) -> u64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut negatives_below = 0u64;
    let mut u2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        u2 += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    u2
}

/// One-vs-rest ROC AUC from row-major `scores: [N, n_classes]`, macro-averaged
/// over classes that have at least one positive and one negative sample.
pub fn roc_auc_ovr(scores: &[f64], truth: &[usize], n_classes: usize) -> Result<f64> {
    if n_classes == 0 || scores.len() != truth.len() * n_classes {
        return Err(Error::Metric(format!(
            "scores hold {} values, expected {} rows of {n_classes}",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let n = truth.len();
    let mut sum = 0.0;
    let mut scored = 0usize;
    let mut column = vec![0.0; n];
    let mut positive = vec![false; n];
    for c in 0..n_classes {
        for i in 0..n {
            column[i] = scores[i * n_classes + c];
            positive[i] = truth[i] == c;
        }
        let pos = positive.iter().filter(|&&p| p).count() as u64;
        let neg = n as u64 - pos;
        if pos == 0 || neg == 0 {
            continue;
        }
        sum += doubled_u(&column, &positive) as f64 / (2 * pos * neg) as f64;
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::Metric("no class has both positive and negative samples".into()));
    }
    Ok(sum / scored as f64)
}

/// Row-wise argmax (first maximum wins).
pub fn argmax_rows(scores: &[f64], n_classes: usize) -> Vec<usize> {
    scores
        .chunks(n_classes)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
