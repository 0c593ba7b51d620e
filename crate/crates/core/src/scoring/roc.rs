//! ROC curve and AUC with exact tie handling.
//!
//! The sweep groups tied scores and accumulates the trapezoid area as an
//! integer numerator, so the result equals the pairwise win/tie count
//! (ties worth one half) without floating-point drift.

use crate::error::{Error, Result};

/// ROC points from (0, 0) to (1, 1) and the exact area under them.
#[derive(Debug, Clone)]
pub struct RocResult {
    /// (false positive rate, true positive rate), threshold descending.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    /// `auc` as an exact fraction: `auc_numerator / (2 * positives * negatives)`.
    pub auc_numerator: u128,
    pub positives: usize,
    pub negatives: usize,
}

/// Area under the ROC curve for anomaly scores (higher = more anomalous)
/// against ground-truth anomaly flags.
pub fn roc_auc(scores: &[f64], is_anomaly: &[bool]) -> Result<RocResult> {
    if scores.len() != is_anomaly.len() {
        return Err(Error::shape(format!(
            "{} scores for {} flags",
            scores.len(),
            is_anomaly.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numeric("NaN score in ROC input"));
    }
    let positives = is_anomaly.iter().filter(|&&f| f).count();
    let negatives = is_anomaly.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::config(format!(
            "ROC needs both classes, got {positives} anomalies and {negatives} normals"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push((0.0, 0.0));
    let mut tp: u128 = 0;
    let mut fp: u128 = 0;
    let mut num: u128 = 0;
    let mut at = 0;
    while at < order.len() {
        let mut end = at + 1;
        while end < order.len() && scores[order[end]] == scores[order[at]] {
            end += 1;
        }
        let mut t_pos: u128 = 0;
        let mut t_neg: u128 = 0;
        for &i in &order[at..end] {
            if is_anomaly[i] {
                t_pos += 1;
            } else {
                t_neg += 1;
            }
        }
        num += t_neg * (2 * tp + t_pos);
        tp += t_pos;
        fp += t_neg;
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        at = end;
    }

    let denom = 2 * positives as u128 * negatives as u128;
    Ok(RocResult {
        points,
        auc: num as f64 / denom as f64,
        auc_numerator: num,
        positives,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent O(P*N) oracle: twice the pairwise wins plus ties.
    fn pairwise_numerator(scores: &[f64], flags: &[bool]) -> u128 {
        let mut num = 0u128;
        for (i, &fi) in flags.iter().enumerate() {
            if !fi {
                continue;
            }
            for (j, &fj) in flags.iter().enumerate() {
                if fj {
                    continue;
                }
                if scores[i] > scores[j] {
                    num += 2;
                } else if scores[i] == scores[j] {
                    num += 1;
                }
            }
        }
        num
    }

    #[test]
    fn perfect_separation_is_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let flags = [true, true, false, false];
        let r = roc_auc(&scores, &flags).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn inverted_separation_is_zero() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let flags = [true, true, false, false];
        assert_eq!(roc_auc(&scores, &flags).unwrap().auc, 0.0);
    }

    #[test]
    fn all_tied_is_half_with_two_points() {
        let scores = [0.5; 6];
        let flags = [true, false, true, false, false, true];
        let r = roc_auc(&scores, &flags).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn tie_worth_one_half() {
        let scores = [0.9, 0.8, 0.8, 0.1];
        let flags = [true, false, true, false];
        let r = roc_auc(&scores, &flags).unwrap();
        assert_eq!(r.auc, 0.875);
        assert_eq!(r.auc_numerator, 7);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[false, false]).is_err());
        assert!(roc_auc(&[], &[]).is_err());
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(
            raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..120)
        ) {
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64 / 4.0).collect();
            let flags: Vec<bool> = raw.iter().map(|&(_, f)| f).collect();
            let p = flags.iter().filter(|&&f| f).count();
            prop_assume!(p > 0 && p < flags.len());
            let r = roc_auc(&scores, &flags).unwrap();
            prop_assert_eq!(r.auc_numerator, pairwise_numerator(&scores, &flags));
            prop_assert_eq!(r.points.first().copied(), Some((0.0, 0.0)));
            prop_assert_eq!(r.points.last().copied(), Some((1.0, 1.0)));
            prop_assert!(r.auc >= 0.0 && r.auc <= 1.0);
        }
    }
}
