use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mia::VerdictRecord;
use crate::report::atomic_write;

/// Attack outcome for one difficulty level's members plus the shared non-member pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub level: usize,
    pub members: usize,
    pub accuracy: Option<f64>,
    /// Mean member score (`raw_score`) of this level's members.
    pub member_score: Option<f64>,
    /// Mean member score of the non-member pool; identical across levels.
    pub non_member_score: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-level rows; members are grouped by `difficulty_level`, every non-member is in the pool.
pub fn bucket_report(records: &[VerdictRecord], n_levels: usize) -> Result<Vec<BucketRow>> {
    let pool: Vec<&VerdictRecord> = records.iter().filter(|r| !r.is_member_truth).collect();
    if let Some(r) = records
        .iter()
        .find(|r| r.is_member_truth && r.difficulty_level.is_none_or(|l| l >= n_levels))
    {
        return Err(Error::input(format!("member {} has no valid difficulty level", r.sample_index)));
    }
    let pool_hits = pool.iter().filter(|r| !r.verdict).count();
    let non_member_score = mean(pool.iter().map(|r| r.raw_score));
    Ok((0..n_levels)
        .map(|level| {
            let ms: Vec<&VerdictRecord> = records
                .iter()
                .filter(|r| r.is_member_truth && r.difficulty_level == Some(level))
                .collect();
            let hits = ms.iter().filter(|r| r.verdict).count() + pool_hits;
            BucketRow {
                level,
                members: ms.len(),
                accuracy: (!ms.is_empty()).then(|| hits as f64 / (ms.len() + pool.len()) as f64),
                member_score: mean(ms.iter().map(|r| r.raw_score)),
                non_member_score,
            }
        })
        .collect())
}

pub fn write_bucket_csv(path: &Path, rows: &[BucketRow]) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for r in rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    })
}

/// Rescale to `[0, 1]`; a constant input maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossHistogram {
    /// `bins + 1` edges over the normalized range.
    pub edges: Vec<f64>,
    pub members: Vec<usize>,
    pub non_members: Vec<usize>,
}

/// Histograms of member and non-member losses after joint min-max normalization.
pub fn loss_histograms(member_losses: &[f64], non_member_losses: &[f64], bins: usize) -> Result<LossHistogram> {
    if bins == 0 {
        return Err(Error::input("histogram needs at least one bin"));
    }
    let all: Vec<f64> = member_losses.iter().chain(non_member_losses).copied().collect();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite loss"));
    }
    let norm = min_max_normalize(&all);
    let bin = |v: f64| ((v * bins as f64) as usize).min(bins - 1);
    let mut members = vec![0; bins];
    let mut non_members = vec![0; bins];
    for (i, &v) in norm.iter().enumerate() {
        if i < member_losses.len() {
            members[bin(v)] += 1;
        } else {
            non_members[bin(v)] += 1;
        }
    }
    Ok(LossHistogram {
        edges: (0..=bins).map(|b| b as f64 / bins as f64).collect(),
        members,
        non_members,
    })
}

pub fn write_histogram_csv(path: &Path, h: &LossHistogram) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_low", "bin_high", "members", "non_members"])?;
        for b in 0..h.members.len() {
            out.write_record([
                h.edges[b].to_string(),
                h.edges[b + 1].to_string(),
                h.members[b].to_string(),
                h.non_members[b].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    })
}
