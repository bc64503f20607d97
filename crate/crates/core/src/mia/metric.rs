use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::shadow::{Access, AdversaryKnowledge};
use super::threshold::best_cut;
use super::verdict::MembershipVerdict;
use crate::error::{Error, Result};
use crate::nn::{argmax, Network, LOG_FLOOR};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[serde(rename = "corr")]
    Correctness,
    #[serde(rename = "conf")]
    Confidence,
    #[serde(rename = "ent")]
    Entropy,
    #[serde(rename = "ment")]
    ModifiedEntropy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Correctness,
        MetricKind::Confidence,
        MetricKind::Entropy,
        MetricKind::ModifiedEntropy,
    ];

    /// Maps a metric value to a signal where higher means member.
    fn signal(self, value: f64) -> f64 {
        match self {
            MetricKind::Correctness | MetricKind::Confidence => value,
            MetricKind::Entropy | MetricKind::ModifiedEntropy => -value,
        }
    }
}

fn ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Metric value of one posterior for true class `y`.
pub fn metric_value(kind: MetricKind, p: &[f64], y: usize) -> Result<f64> {
    if y >= p.len() {
        return Err(Error::input(format!("label {y} for a {}-class posterior", p.len())));
    }
    Ok(match kind {
        MetricKind::Correctness => {
            if argmax(p) == y {
                1.0
            } else {
                0.0
            }
        }
        MetricKind::Confidence => p[y],
        MetricKind::Entropy => -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>(),
        MetricKind::ModifiedEntropy => {
            let own = -(1.0 - p[y]) * ln(p[y]);
            let rest: f64 = p
                .iter()
                .enumerate()
                .filter(|&(i, &v)| i != y && v > 0.0)
                .map(|(_, &v)| v * ln(1.0 - v))
                .sum();
            own - rest
        }
    })
}

fn metric_values(kind: MetricKind, probs: &Array2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| metric_value(kind, &row.to_vec(), y))
        .collect()
}

/// Per-class thresholds in the metric's own units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricThresholds {
    pub kind: MetricKind,
    /// `None` for classes with no shadow examples; they use `global`.
    pub per_class: Vec<Option<f64>>,
    pub global: f64,
}

impl MetricThresholds {
    pub fn threshold(&self, class: usize) -> f64 {
        self.per_class.get(class).copied().flatten().unwrap_or(self.global)
    }

    /// `conf >= tau` for confidence; `value <= tau` for the entropies; correctness ignores thresholds.
    pub fn is_member(&self, value: f64, class: usize) -> bool {
        match self.kind {
            MetricKind::Correctness => value >= 1.0,
            MetricKind::Confidence => value >= self.threshold(class),
            MetricKind::Entropy | MetricKind::ModifiedEntropy => value <= self.threshold(class),
        }
    }
}

/// Thresholds maximizing shadow attack accuracy, chosen per true class.
pub fn fit_thresholds(
    kind: MetricKind,
    values: &[f64],
    labels: &[usize],
    membership: &[bool],
    class_count: usize,
) -> Result<MetricThresholds> {
    if values.len() != labels.len() || values.len() != membership.len() {
        return Err(Error::input("metric values, labels and membership differ in length"));
    }
    let cut = |sel: &dyn Fn(usize) -> bool| -> Result<Option<f64>> {
        let mut m = Vec::new();
        let mut n = Vec::new();
        for i in (0..values.len()).filter(|&i| sel(i)) {
            let s = kind.signal(values[i]);
            if membership[i] {
                m.push(s)
            } else {
                n.push(s)
            }
        }
        if m.is_empty() && n.is_empty() {
            return Ok(None);
        }
        Ok(Some(kind.signal(best_cut(&m, &n)?.threshold)))
    };
    let global = cut(&|_| true)?.ok_or_else(|| Error::config("no shadow samples for threshold selection"))?;
    let per_class = (0..class_count).map(|c| cut(&|i| labels[i] == c)).collect::<Result<_>>()?;
    Ok(MetricThresholds { kind, per_class, global })
}

/// Thresholds from the pooled posteriors of every shadow model on the shadow split.
pub fn fit_metric_thresholds<T: Scalar>(kind: MetricKind, knowledge: &AdversaryKnowledge<T>) -> Result<MetricThresholds> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut membership = Vec::new();
    for (probs, m) in knowledge.pooled_posteriors()? {
        values.extend(metric_values(kind, &probs, &knowledge.data.labels)?);
        labels.extend_from_slice(&knowledge.data.labels);
        membership.extend(m);
    }
    fit_thresholds(kind, &values, &labels, &membership, knowledge.data.class_count)
}

/// Metric attack over the query rows `x` with true labels `labels`.
///
/// Correctness needs no shadows; the other metrics fit thresholds on `knowledge` first.
pub fn metric_attack<T: Scalar>(
    kind: MetricKind,
    target: &Network<T>,
    knowledge: &AdversaryKnowledge<T>,
    x: ArrayView2<T>,
    labels: &[usize],
) -> Result<Vec<MembershipVerdict>> {
    if x.nrows() != labels.len() {
        return Err(Error::input(format!("{} queries but {} labels", x.nrows(), labels.len())));
    }
    let thresholds = match kind {
        MetricKind::Correctness => MetricThresholds {
            kind,
            per_class: Vec::new(),
            global: 1.0,
        },
        _ => {
            if knowledge.access == Access::LabelOnly {
                return Err(Error::Unsupported(format!("{kind:?} attack needs posterior access")));
            }
            fit_metric_thresholds(kind, knowledge)?
        }
    };
    let probs = target.predict_batch(x)?.mapv(Scalar::widen);
    let values = metric_values(kind, &probs, labels)?;
    Ok(values
        .iter()
        .zip(labels)
        .map(|(&v, &y)| MembershipVerdict {
            is_member: thresholds.is_member(v, y),
            confidence: 1.0,
            raw_score: kind.signal(v),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_correct_posterior_has_zero_entropies() {
        let p = [0.0, 1.0, 0.0];
        assert_eq!(metric_value(MetricKind::Entropy, &p, 1).unwrap(), 0.0);
        assert_eq!(metric_value(MetricKind::ModifiedEntropy, &p, 1).unwrap(), 0.0);
        let t = MetricThresholds {
            kind: MetricKind::Entropy,
            per_class: vec![Some(0.01); 3],
            global: 0.01,
        };
        assert!(t.is_member(0.0, 1));
    }

    #[test]
    fn entropy_and_modified_entropy_by_hand() {
        let p = [0.5, 0.25, 0.25];
        let ent = metric_value(MetricKind::Entropy, &p, 0).unwrap();
        assert!((ent - 1.5 * 2f64.ln()).abs() < 1e-12);
        // -(0.5) ln 0.5 - 2 * 0.25 ln 0.75
        let ment = metric_value(MetricKind::ModifiedEntropy, &p, 0).unwrap();
        assert!((ment - (0.5 * 2f64.ln() - 0.5 * 0.75f64.ln())).abs() < 1e-12);
        assert_eq!(metric_value(MetricKind::Confidence, &p, 2).unwrap(), 0.25);
        assert_eq!(metric_value(MetricKind::Correctness, &p, 0).unwrap(), 1.0);
        assert_eq!(metric_value(MetricKind::Correctness, &p, 1).unwrap(), 0.0);
    }

    fn brute_class_cut(kind: MetricKind, v: &[f64], m: &[bool]) -> (f64, usize) {
        // Enumerate every cut point in metric units, including "nobody".
        let mut cands: Vec<f64> = v.to_vec();
        let none = match kind {
            MetricKind::Confidence => f64::INFINITY,
            _ => f64::NEG_INFINITY,
        };
        cands.push(none);
        let mut best = (none, 0usize);
        let mut first = true;
        for &t in &cands {
            let hits = v
                .iter()
                .zip(m)
                .filter(|(&x, &mm)| {
                    let pred = match kind {
                        MetricKind::Confidence => x >= t,
                        _ => x <= t,
                    };
                    pred == mm
                })
                .count();
            let tie_better = match kind {
                MetricKind::Confidence => t < best.0,
                _ => t > best.0,
            };
            if first || hits > best.1 || (hits == best.1 && tie_better) {
                best = (t, hits);
                first = false;
            }
        }
        best
    }

    #[test]
    fn per_class_thresholds_match_brute_force() {
        let values = [0.9, 0.2, 0.75, 0.4, 0.6, 0.95, 0.3, 0.6, 0.1, 0.85, 0.5, 0.7];
        let labels = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let member = [true, false, true, false, false, true, false, true, false, true, true, false];
        for kind in [MetricKind::Confidence, MetricKind::Entropy] {
            let t = fit_thresholds(kind, &values, &labels, &member, 2).unwrap();
            for c in 0..2 {
                let idx: Vec<usize> = (0..12).filter(|&i| labels[i] == c).collect();
                let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
                let m: Vec<bool> = idx.iter().map(|&i| member[i]).collect();
                let (bt, hits) = brute_class_cut(kind, &v, &m);
                assert_eq!(t.per_class[c], Some(bt), "{kind:?} class {c}");
                let got = v.iter().zip(&m).filter(|(&x, &mm)| t.is_member(x, c) == mm).count();
                assert_eq!(got, hits);
            }
        }
    }

    #[test]
    fn empty_class_falls_back_to_global() {
        let t = fit_thresholds(MetricKind::Confidence, &[0.9, 0.1], &[0, 0], &[true, false], 3).unwrap();
        assert_eq!(t.per_class, vec![Some(0.9), None, None]);
        assert_eq!(t.threshold(2), t.global);
    }
}
