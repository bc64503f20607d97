use crate::error::{Error, Result};

/// Decision cut on a signal where higher means member: member iff `signal >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cut {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Cut maximizing plain accuracy on the given member and non-member signals.
///
/// Candidates are every observed value plus `+inf` (nobody is a member); on ties the
/// smallest candidate wins.
pub fn best_cut(members: &[f64], non_members: &[f64]) -> Result<Cut> {
    let total = members.len() + non_members.len();
    if total == 0 {
        return Err(Error::input("threshold selection needs at least one sample"));
    }
    if members.iter().chain(non_members).any(|v| v.is_nan()) {
        return Err(Error::input("threshold selection over NaN scores"));
    }
    let mut pts: Vec<(f64, bool)> = members
        .iter()
        .map(|&v| (v, true))
        .chain(non_members.iter().map(|&v| (v, false)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    // At the smallest value every sample is called a member.
    let mut members_at_or_above = members.len();
    let mut non_below = 0usize;
    let mut best = Cut {
        threshold: f64::INFINITY,
        accuracy: non_members.len() as f64 / total as f64,
    };
    let mut best_hits = non_members.len();
    let mut i = 0;
    while i < pts.len() {
        let v = pts[i].0;
        let hits = members_at_or_above + non_below;
        if hits > best_hits || (hits == best_hits && v < best.threshold) {
            best_hits = hits;
            best = Cut {
                threshold: v,
                accuracy: hits as f64 / total as f64,
            };
        }
        while i < pts.len() && pts[i].0 == v {
            if pts[i].1 {
                members_at_or_above -= 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    Ok(best)
}
