//! Binary classification metrics: accuracy, rank-based ROC-AUC, average
//! precision, reliability bins, and expected calibration error. The positive
//! class is label 1 throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One reliability bin over `[lo, hi)` (the last bin is closed).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct ReliabilityBin<T: Scalar> {
    pub lo: T,
    pub hi: T,
    /// Mean predicted probability of the points in the bin (0 when empty).
    pub confidence: T,
    /// Empirical positive rate in the bin (0 when empty).
    pub accuracy: T,
    pub count: usize,
}

/// Full evaluation of one model on one test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct EvalReport<T: Scalar> {
    pub accuracy: T,
    pub roc_auc: T,
    pub pr_auc: T,
    pub ece: T,
    pub roc_curve: Vec<CurvePoint<T>>,
    pub pr_curve: Vec<CurvePoint<T>>,
    pub reliability: Vec<ReliabilityBin<T>>,
}

/// One operating point of a ROC or precision-recall curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct CurvePoint<T: Scalar> {
    pub threshold: T,
    /// FPR for ROC, recall for PR.
    pub x: T,
    /// TPR for ROC, precision for PR.
    pub y: T,
}

/// Fraction of exact label matches.
pub fn accuracy<T: Scalar>(preds: &[usize], labels: &[usize]) -> Result<T> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::InvalidInput(
            "accuracy needs nonempty, equal-length inputs".into(),
        ));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(T::of(hits as f64 / preds.len() as f64))
}

fn check_binary(labels: &[usize]) -> Result<(usize, usize)> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.iter().filter(|&&y| y == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    Ok((n_pos, n_neg))
}

/// Indices sorted by descending score; ties keep their original order, so any
/// strictly increasing score transform leaves the permutation unchanged.
fn descending_order<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap());
    idx
}

/// Probability that a random positive outranks a random negative, ties
/// counted half (the rank / Mann-Whitney formulation with midranks).
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[usize]) -> Result<T> {
    let (n_pos, n_neg) = check_binary(labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "roc-auc needs both classes present".into(),
        ));
    }
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores/labels length mismatch".into()));
    }
    // Ascending order; midranks over tie groups.
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    let nn = n_neg as f64;
    Ok(T::of((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn)))
}

/// Average precision: the mean, over positives in descending-score order, of
/// the precision at that cutoff (a step-wise integral of the PR curve).
pub fn pr_auc<T: Scalar>(scores: &[T], labels: &[usize]) -> Result<T> {
    let (n_pos, _) = check_binary(labels)?;
    if n_pos == 0 {
        return Err(Error::InvalidInput("pr-auc needs at least one positive".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores/labels length mismatch".into()));
    }
    let order = descending_order(scores);
    let mut hits = 0usize;
    let mut ap = 0.0f64;
    for (rank0, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            ap += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(T::of(ap / n_pos as f64))
}

/// ROC operating points, one per distinct threshold (descending), with the
/// leading (0,0) point at an infinite threshold.
pub fn roc_curve<T: Scalar>(scores: &[T], labels: &[usize]) -> Result<Vec<CurvePoint<T>>> {
    let (n_pos, n_neg) = check_binary(labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput("roc curve needs both classes".into()));
    }
    let order = descending_order(scores);
    let mut pts = vec![CurvePoint {
        threshold: T::infinity(),
        x: T::zero(),
        y: T::zero(),
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push(CurvePoint {
            threshold,
            x: T::of(fp as f64 / n_neg as f64),
            y: T::of(tp as f64 / n_pos as f64),
        });
    }
    Ok(pts)
}

/// Precision-recall operating points, one per distinct threshold
/// (descending).
pub fn pr_curve<T: Scalar>(scores: &[T], labels: &[usize]) -> Result<Vec<CurvePoint<T>>> {
    let (n_pos, _) = check_binary(labels)?;
    if n_pos == 0 {
        return Err(Error::InvalidInput("pr curve needs a positive".into()));
    }
    let order = descending_order(scores);
    let mut pts = Vec::new();
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            }
            seen += 1;
            i += 1;
        }
        pts.push(CurvePoint {
            threshold,
            x: T::of(tp as f64 / n_pos as f64),
            y: T::of(tp as f64 / seen as f64),
        });
    }
    Ok(pts)
}

/// Reliability bins over `n_bins` uniform probability intervals (the last
/// closed at 1), and the expected calibration error
/// `sum_bins (count/n) |confidence - accuracy|`; empty bins contribute zero.
pub fn reliability_and_ece<T: Scalar>(
    probs: &[T],
    labels: &[usize],
    n_bins: usize,
) -> Result<(Vec<ReliabilityBin<T>>, T)> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::InvalidInput(
            "reliability needs nonempty, equal-length inputs".into(),
        ));
    }
    if probs.iter().any(|p| *p < T::zero() || *p > T::one()) {
        return Err(Error::InvalidInput("probabilities must lie in [0,1]".into()));
    }
    check_binary(labels)?;
    let mut counts = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0f64; n_bins];
    let mut pos_sum = vec![0usize; n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = (p.as_f64() * n_bins as f64).floor() as usize;
        let b = b.min(n_bins - 1); // p = 1 falls in the last (closed) bin
        counts[b] += 1;
        conf_sum[b] += p.as_f64();
        pos_sum[b] += y;
    }
    let n = probs.len() as f64;
    let mut bins = Vec::with_capacity(n_bins);
    let mut ece = 0.0f64;
    for b in 0..n_bins {
        let (conf, acc) = if counts[b] > 0 {
            (
                conf_sum[b] / counts[b] as f64,
                pos_sum[b] as f64 / counts[b] as f64,
            )
        } else {
            (0.0, 0.0)
        };
        ece += counts[b] as f64 / n * (conf - acc).abs();
        bins.push(ReliabilityBin {
            lo: T::of(b as f64 / n_bins as f64),
            hi: T::of((b + 1) as f64 / n_bins as f64),
            confidence: T::of(conf),
            accuracy: T::of(acc),
            count: counts[b],
        });
    }
    Ok((bins, T::of(ece)))
}

/// Assemble a full report: accuracy from the hard predictions, rank metrics
/// and calibration from the calibrated probabilities.
pub fn evaluate_binary<T: Scalar>(
    preds: &[usize],
    probs: &[T],
    labels: &[usize],
) -> Result<EvalReport<T>> {
    let (reliability, ece) = reliability_and_ece(probs, labels, 10)?;
    Ok(EvalReport {
        accuracy: accuracy(preds, labels)?,
        roc_auc: roc_auc(probs, labels)?,
        pr_auc: pr_auc(probs, labels)?,
        ece,
        roc_curve: roc_curve(probs, labels)?,
        pr_curve: pr_curve(probs, labels)?,
        reliability,
    })
}
