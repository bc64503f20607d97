use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::atomic_write;

/// Default false-positive rates for the TPR table, log-spaced down to 1e-3.
pub const FPR_GRID: [f64; 10] = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub fpr: f64,
    pub tpr: f64,
}

/// Sweep the threshold down through the distinct scores (higher = member).
///
/// Samples sharing a score cross the threshold together, so ties contribute a
/// diagonal segment and half credit to the AUC.
pub fn roc_curve(scores: &[f64], truth: &[bool]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(Error::input(format!("{} scores but {} labels", scores.len(), truth.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("ROC over NaN scores"));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::input("ROC needs both members and non-members"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let (tp0, fp0) = (tp, fp);
        while i < idx.len() && scores[idx[i]] == s {
            if truth[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: auc / (pos as f64 * neg as f64),
    })
}

/// Highest TPR reachable at each requested FPR without exceeding it.
pub fn tpr_at_fpr(curve: &RocCurve, grid: &[f64]) -> Vec<TprAtFpr> {
    grid.iter()
        .map(|&f| TprAtFpr {
            fpr: f,
            tpr: curve
                .points
                .iter()
                .filter(|p| p.0 <= f)
                .map(|p| p.1)
                .fold(0.0, f64::max),
        })
        .collect()
}

pub fn roc_and_tpr(scores: &[f64], truth: &[bool], grid: &[f64]) -> Result<(RocCurve, Vec<TprAtFpr>)> {
    let curve = roc_curve(scores, truth)?;
    let table = tpr_at_fpr(&curve, grid);
    Ok((curve, table))
}

pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["fpr", "tpr"])?;
        for (f, t) in &curve.points {
            out.write_record([f.to_string(), t.to_string()])?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn write_tpr_csv(path: &Path, table: &[TprAtFpr]) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for r in table {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn pairwise_auc(scores: &[f64], truth: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if truth[i] && !truth[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0
                    } else if scores[i] == scores[j] {
                        num += 0.5
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn separated_scores() {
        let (c, t) = roc_and_tpr(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false], &[0.001, 0.5]).unwrap();
        assert_eq!(c.auc, 1.0);
        assert!(t.iter().all(|r| r.tpr == 1.0));
        assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn constant_scores_give_half() {
        let c = roc_curve(&[0.4; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(tpr_at_fpr(&c, &[0.5])[0].tpr, 0.0);
    }

    #[test]
    fn hand_fixture_matches_pairwise() {
        let s = [0.9, 0.7, 0.7, 0.6, 0.55, 0.5, 0.4, 0.4, 0.2, 0.1];
        let t = [true, true, false, true, false, true, false, true, false, false];
        let c = roc_curve(&s, &t).unwrap();
        assert!((c.auc - pairwise_auc(&s, &t)).abs() < 1e-12);
        // 5 members, 5 non-members; at FPR 0.2 the sweep has passed 0.9 and the tied 0.7 pair.
        let tab = tpr_at_fpr(&c, &[0.0, 0.2, 0.4]);
        assert_eq!(tab[0].tpr, 0.2);
        assert_eq!(tab[1].tpr, 0.6);
        assert_eq!(tab[2].tpr, 0.8);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_curve(&[0.1], &[true, false]).is_err());
    }

    proptest! {
        #[test]
        fn auc_is_pairwise_probability(data in prop::collection::vec((0u8..20, any::<bool>()), 2..100)) {
            let s: Vec<f64> = data.iter().map(|d| d.0 as f64 / 7.0).collect();
            let t: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(t.iter().any(|&x| x) && t.iter().any(|&x| !x));
            let c = roc_curve(&s, &t).unwrap();
            prop_assert!((c.auc - pairwise_auc(&s, &t)).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&c.auc));
            for w in c.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }
    }
}
