use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::atomic_write;

/// Outcome of one membership query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipVerdict {
    pub is_member: bool,
    /// Posterior of the predicted class, or 1 for hard-threshold attacks.
    pub confidence: f64,
    /// Higher means more member-like; used for ROC sweeps.
    pub raw_score: f64,
}

impl MembershipVerdict {
    pub fn new(is_member: bool, confidence: f64, raw_score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::input(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            is_member,
            confidence,
            raw_score,
        })
    }
}

/// A verdict joined with ground truth, as exported to CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub sample_index: usize,
    pub is_member_truth: bool,
    pub verdict: bool,
    pub confidence: f64,
    pub raw_score: f64,
    pub difficulty_level: Option<usize>,
}

impl VerdictRecord {
    pub fn new(sample_index: usize, truth: bool, v: &MembershipVerdict, difficulty_level: Option<usize>) -> Self {
        Self {
            sample_index,
            is_member_truth: truth,
            verdict: v.is_member,
            confidence: v.confidence,
            raw_score: v.raw_score,
            difficulty_level,
        }
    }
}

pub fn write_verdicts_csv(path: &Path, records: &[VerdictRecord]) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for r in records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn read_verdicts_csv(path: &Path) -> Result<Vec<VerdictRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Fraction of verdicts that agree with `truth`.
pub fn attack_accuracy(verdicts: &[MembershipVerdict], truth: &[bool]) -> Result<f64> {
    if verdicts.len() != truth.len() {
        return Err(Error::input(format!("{} verdicts but {} labels", verdicts.len(), truth.len())));
    }
    if verdicts.is_empty() {
        return Err(Error::input("no verdicts to score"));
    }
    let hits = verdicts.iter().zip(truth).filter(|(v, &t)| v.is_member == t).count();
    Ok(hits as f64 / verdicts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_must_be_a_probability() {
        assert!(MembershipVerdict::new(true, 1.2, 0.0).is_err());
        assert!(MembershipVerdict::new(true, 0.7, -3.0).is_ok());
    }

    #[test]
    fn csv_roundtrip_keeps_missing_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let v = MembershipVerdict::new(true, 0.75, 0.5).unwrap();
        let recs = vec![VerdictRecord::new(4, true, &v, Some(2)), VerdictRecord::new(9, false, &v, None)];
        write_verdicts_csv(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "sample_index,is_member_truth,verdict,confidence,raw_score,difficulty_level\n\
             4,true,true,0.75,0.5,2\n9,false,true,0.75,0.5,\n"
        );
        assert_eq!(read_verdicts_csv(&path).unwrap(), recs);
    }

    #[test]
    fn accuracy_counts_agreement() {
        let m = MembershipVerdict::new(true, 1.0, 1.0).unwrap();
        let n = MembershipVerdict::new(false, 1.0, 0.0).unwrap();
        assert_eq!(attack_accuracy(&[m, n, m, m], &[true, true, false, true]).unwrap(), 0.5);
        assert!(attack_accuracy(&[m], &[]).is_err());
    }
}
