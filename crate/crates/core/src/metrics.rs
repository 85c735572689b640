//! Multi-label classification and ranking metrics.
//!
//! All functions take a score matrix `(notes × codes)` and a boolean gold matrix
//! of the same shape.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn same_shape(y_hat: &ArrayView2<f64>, targets: &ArrayView2<bool>) -> Result<()> {
    if y_hat.dim() == targets.dim() {
        Ok(())
    } else {
        Err(Error::Shape(format!("scores {:?} vs targets {:?}", y_hat.dim(), targets.dim())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub micro: f64,
    /// `None` when no code has a gold or predicted positive.
    pub macro_: Option<f64>,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// A cell is predicted positive when its score is `>= threshold`.
///
/// Macro F1 averages per-code F1 over codes with at least one gold or predicted
/// positive; codes absent from both are left out of the mean.
pub fn f1_scores(y_hat: ArrayView2<f64>, targets: ArrayView2<bool>, threshold: f64) -> Result<F1Scores> {
    same_shape(&y_hat, &targets)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut per_code = Vec::new();
    for (scores, gold) in y_hat.axis_iter(Axis(1)).zip(targets.axis_iter(Axis(1))) {
        let (mut c_tp, mut c_fp, mut c_fn) = (0, 0, 0);
        for (&s, &g) in scores.iter().zip(gold.iter()) {
            match (s >= threshold, g) {
                (true, true) => c_tp += 1,
                (true, false) => c_fp += 1,
                (false, true) => c_fn += 1,
                (false, false) => {}
            }
        }
        tp += c_tp;
        fp += c_fp;
        fn_ += c_fn;
        if c_tp + c_fp + c_fn > 0 {
            per_code.push(f1(c_tp, c_fp, c_fn));
        }
    }
    let macro_ = (!per_code.is_empty()).then(|| per_code.iter().sum::<f64>() / per_code.len() as f64);
    Ok(F1Scores {
        micro: f1(tp, fp, fn_),
        macro_,
    })
}

/// Rank-sum AUC with midranks for ties; `None` without both classes.
pub fn binary_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Some((rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucScores {
    pub micro: Option<f64>,
    /// Mean over codes with both positive and negative cells.
    pub macro_: Option<f64>,
    pub macro_codes: usize,
}

pub fn auc_roc(y_hat: ArrayView2<f64>, targets: ArrayView2<bool>) -> Result<AucScores> {
    same_shape(&y_hat, &targets)?;
    let flat_scores: Vec<f64> = y_hat.iter().copied().collect();
    let flat_labels: Vec<bool> = targets.iter().copied().collect();
    let micro = binary_auc(&flat_scores, &flat_labels);
    let per_code: Vec<f64> = y_hat
        .axis_iter(Axis(1))
        .zip(targets.axis_iter(Axis(1)))
        .filter_map(|(s, t)| binary_auc(&s.to_vec(), &t.to_vec()))
        .collect();
    let macro_ = (!per_code.is_empty()).then(|| per_code.iter().sum::<f64>() / per_code.len() as f64);
    Ok(AucScores {
        micro,
        macro_,
        macro_codes: per_code.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingScores {
    pub precision_at: BTreeMap<usize, f64>,
    pub r_precision: f64,
    pub map: f64,
    /// Notes with at least one gold code; the others are excluded from every average.
    pub notes_scored: usize,
    pub notes_excluded: usize,
}

/// Column order for one note: score descending, then `keys` ascending.
pub fn rank_columns<K: Ord>(scores: &[f64], keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => keys[a].cmp(&keys[b]),
        other => other,
    });
    order
}

/// P@k, R-precision and MAP averaged over notes with at least one gold code.
/// `keys` break score ties (ascending), normally the code ids.
pub fn ranking_metrics<K: Ord>(
    y_hat: ArrayView2<f64>,
    targets: ArrayView2<bool>,
    ks: &[usize],
    keys: &[K],
) -> Result<RankingScores> {
    same_shape(&y_hat, &targets)?;
    if keys.len() != y_hat.ncols() {
        return Err(Error::Shape(format!("{} tie keys for {} codes", keys.len(), y_hat.ncols())));
    }
    let mut p_at: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let (mut r_prec, mut ap_sum) = (0.0, 0.0);
    let (mut scored, mut excluded) = (0, 0);
    for (scores, gold) in y_hat.axis_iter(Axis(0)).zip(targets.axis_iter(Axis(0))) {
        let n_gold = gold.iter().filter(|&&g| g).count();
        if n_gold == 0 {
            excluded += 1;
            continue;
        }
        scored += 1;
        let order = rank_columns(&scores.to_vec(), keys);
        let hits: Vec<bool> = order.iter().map(|&j| gold[j]).collect();
        for (&k, acc) in p_at.iter_mut() {
            let found = hits.iter().take(k).filter(|&&h| h).count();
            *acc += found as f64 / k as f64;
        }
        r_prec += hits.iter().take(n_gold).filter(|&&h| h).count() as f64 / n_gold as f64;
        let mut found = 0;
        let mut ap = 0.0;
        for (rank, &h) in hits.iter().enumerate() {
            if h {
                found += 1;
                ap += found as f64 / (rank + 1) as f64;
            }
        }
        ap_sum += ap / n_gold as f64;
    }
    let denom = scored.max(1) as f64;
    p_at.values_mut().for_each(|v| *v /= denom);
    Ok(RankingScores {
        precision_at: p_at,
        r_precision: r_prec / denom,
        map: ap_sum / denom,
        notes_scored: scored,
        notes_excluded: excluded,
    })
}

/// Global decision threshold maximizing micro F1, swept over the gaps between
/// sorted unique scores. Returns a value strictly above every score when no
/// threshold yields a true positive.
pub fn tune_threshold(y_hat: ArrayView2<f64>, targets: ArrayView2<bool>) -> Result<f64> {
    same_shape(&y_hat, &targets)?;
    let mut cells: Vec<(f64, bool)> = y_hat.iter().copied().zip(targets.iter().copied()).collect();
    if cells.is_empty() {
        return Ok(0.5);
    }
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let max = cells[0].0;
    let above_max = if max.abs() < 1.0 { max + (1.0 - max) / 2.0 } else { max + max.abs() * 1e-9 + 1e-12 };
    let positives = cells.iter().filter(|c| c.1).count();
    if positives == 0 {
        return Ok(above_max);
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (0.0, above_max);
    let mut i = 0;
    while i < cells.len() {
        let score = cells[i].0;
        while i < cells.len() && cells[i].0 == score {
            if cells[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let value = f1(tp, fp, positives - tp);
        if value > best.0 {
            let threshold = match cells.get(i) {
                Some(next) => (score + next.0) / 2.0,
                None => score,
            };
            // Midpoints of adjacent floats can round up to the lower score's neighbour.
            let threshold = if threshold > score { score } else { threshold };
            best = (value, threshold);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn perfect_predictions() {
        let t = array![[true, false], [false, true]];
        let y = t.mapv(|g| if g { 0.9 } else { 0.1 });
        let f = f1_scores(y.view(), t.view(), 0.5).unwrap();
        assert_eq!((f.micro, f.macro_), (1.0, Some(1.0)));
        let a = auc_roc(y.view(), t.view()).unwrap();
        assert_eq!((a.micro, a.macro_), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn one_good_one_bad_code_macro_half() {
        let t = array![[true, true], [false, false]];
        let y = array![[0.9, 0.1], [0.1, 0.9]];
        assert_eq!(f1_scores(y.view(), t.view(), 0.5).unwrap().macro_, Some(0.5));
    }

    #[test]
    fn codes_absent_everywhere_leave_macro() {
        let t = array![[true, false], [true, false]];
        let y = array![[0.9, 0.1], [0.8, 0.2]];
        assert_eq!(f1_scores(y.view(), t.view(), 0.5).unwrap().macro_, Some(1.0));
    }

    #[test]
    fn constant_scores_give_half_auc() {
        let t = array![[true, false, true], [false, false, true]];
        let y = Array2::from_elem((2, 3), 0.3);
        assert_eq!(auc_roc(y.view(), t.view()).unwrap().micro, Some(0.5));
    }

    #[test]
    fn macro_auc_absent_without_eligible_code() {
        let t = array![[true], [true]];
        let y = array![[0.2], [0.4]];
        let a = auc_roc(y.view(), t.view()).unwrap();
        assert_eq!((a.micro, a.macro_), (None, None));
    }

    #[test]
    fn top_eight_exact() {
        let y = Array2::from_shape_fn((1, 20), |(_, j)| 1.0 - j as f64 / 20.0);
        let t = Array2::from_shape_fn((1, 20), |(_, j)| j < 8);
        let keys: Vec<usize> = (0..20).collect();
        let r = ranking_metrics(y.view(), t.view(), &[8, 15], &keys).unwrap();
        assert_eq!(r.precision_at[&8], 1.0);
        assert_eq!(r.map, 1.0);
        assert_eq!(r.r_precision, 1.0);
    }

    #[test]
    fn single_gold_ranked_second() {
        let y = array![[0.9, 0.8, 0.1, 0.0]];
        let t = array![[false, true, false, false]];
        let r = ranking_metrics(y.view(), t.view(), &[8], &[0, 1, 2, 3]).unwrap();
        assert_eq!(r.map, 0.5);
        assert_eq!(r.precision_at[&8], 1.0 / 8.0);
    }

    #[test]
    fn empty_gold_notes_are_excluded() {
        let y = array![[0.9, 0.1], [0.5, 0.5]];
        let t = array![[true, false], [false, false]];
        let r = ranking_metrics(y.view(), t.view(), &[1], &["a", "b"]).unwrap();
        assert_eq!((r.notes_scored, r.notes_excluded), (1, 1));
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn ties_break_by_key() {
        assert_eq!(rank_columns(&[0.5, 0.5, 0.7], &["b", "a", "c"]), [2, 1, 0]);
    }

    #[test]
    fn threshold_lands_in_gap() {
        let y = array![[0.9, 0.2], [0.1, 0.8]];
        let t = array![[true, false], [false, true]];
        let thr = tune_threshold(y.view(), t.view()).unwrap();
        assert!(thr > 0.2 && thr <= 0.8, "{thr}");
        assert_eq!(f1_scores(y.view(), t.view(), thr).unwrap().micro, 1.0);
    }

    #[test]
    fn all_negative_targets_push_threshold_above_max() {
        let y = array![[0.9, 0.2], [0.1, 0.8]];
        let t = Array2::from_elem((2, 2), false);
        assert!(tune_threshold(y.view(), t.view()).unwrap() > 0.9);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let y = Array2::<f64>::zeros((2, 2));
        let t = Array2::from_elem((2, 3), false);
        assert!(f1_scores(y.view(), t.view(), 0.5).is_err());
    }
}
