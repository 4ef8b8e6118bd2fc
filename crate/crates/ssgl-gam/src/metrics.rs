//! Evaluation metrics: function-estimation MSE, selection MCC,
//! classification AUC (Mann-Whitney with midrank ties), and MSPE.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl SelectionCounts {
    /// Tally selected vs true index sets over p covariates.
    pub fn from_sets(selected: &[usize], truth: &[usize], p: usize) -> Self {
        let sel: std::collections::HashSet<_> = selected.iter().copied().collect();
        let tru: std::collections::HashSet<_> = truth.iter().copied().collect();
        let mut c = SelectionCounts {
            tp: 0,
            tn: 0,
            fp: 0,
            fn_: 0,
        };
        for j in 0..p {
            match (sel.contains(&j), tru.contains(&j)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

/// Mean squared difference between fitted and true function values.
pub fn mse_f(fhat: &[f64], ftrue: &[f64]) -> Result<f64> {
    if fhat.len() != ftrue.len() || fhat.is_empty() {
        return Err(Error::argument("mse_f requires equal nonempty lengths"));
    }
    Ok(fhat
        .iter()
        .zip(ftrue)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / fhat.len() as f64)
}

/// Matthews correlation coefficient; 0 when any denominator factor
/// vanishes.
pub fn mcc(c: &SelectionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den <= 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

/// ROC AUC by rank summation (Mann-Whitney with midranks for ties).
pub fn auc(y_true: &[f64], scores: &[f64]) -> Result<f64> {
    if y_true.len() != scores.len() || y_true.is_empty() {
        return Err(Error::argument("auc requires equal nonempty lengths"));
    }
    let n_pos = y_true.iter().filter(|&&y| y == 1.0).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::data("auc requires both classes present"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = y_true
        .iter()
        .zip(&ranks)
        .filter(|(&y, _)| y == 1.0)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean squared prediction error between responses and fitted means.
pub fn mspe(y_new: &[f64], mean_hat: &[f64]) -> Result<f64> {
    mse_f(y_new, mean_hat)
}
