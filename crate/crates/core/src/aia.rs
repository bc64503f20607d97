//! Attribute inference from a target model's penultimate-layer embeddings.

use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, train, Network, PosteriorVector, TrainConfig};
use crate::report::atomic_write;
use crate::scalar::Scalar;

pub const AIA_HIDDEN: [usize; 2] = [128, 128];

#[derive(Clone, Debug, PartialEq)]
pub struct AiaAttackModel<T> {
    pub network: Network<T>,
    /// Most frequent attribute value in the auxiliary split.
    pub majority: usize,
}

fn sensitive<T>(data: &Dataset<T>) -> Result<&[usize]> {
    data.sensitive
        .as_deref()
        .ok_or_else(|| Error::config("dataset has no sensitive attribute"))
}

fn majority(values: &[usize], count: usize) -> usize {
    let mut hist = vec![0usize; count.max(1)];
    for &v in values {
        hist[v] += 1;
    }
    argmax(&hist)
}

/// Train on `(embed(target, x), s)` pairs of the auxiliary split.
pub fn aia_train<T: Scalar>(target: &Network<T>, aux: &Dataset<T>, config: &TrainConfig) -> Result<AiaAttackModel<T>> {
    let s = sensitive(aux)?;
    if aux.sensitive_count < 1 {
        return Err(Error::config("sensitive_count must be positive"));
    }
    let h = target.embed_batch(aux.x())?;
    let dims = [h.ncols(), AIA_HIDDEN[0], AIA_HIDDEN[1], aux.sensitive_count];
    let init = Network::random(&dims, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    let (network, _) = train(init, h.view(), s, config)?;
    Ok(AiaAttackModel {
        network,
        majority: majority(s, aux.sensitive_count),
    })
}

pub fn aia_infer<T: Scalar>(attack: &AiaAttackModel<T>, target: &Network<T>, x: ArrayView1<T>) -> Result<(usize, PosteriorVector<T>)> {
    let p = attack.network.forward(target.embed(x)?.view())?;
    Ok((p.argmax(), p))
}

/// Predicted attribute and its posterior per row.
pub fn aia_infer_batch<T: Scalar>(attack: &AiaAttackModel<T>, target: &Network<T>, x: ArrayView2<T>) -> Result<Vec<(usize, f64)>> {
    let p = attack.network.predict_batch(target.embed_batch(x)?.view())?;
    Ok(p
        .rows()
        .into_iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|x| x.widen()).collect();
            let k = argmax(&v);
            (k, v[k])
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AiaRecord {
    pub sample_index: usize,
    pub true_attribute: usize,
    pub predicted_attribute: usize,
    pub confidence: f64,
    pub difficulty_level: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AiaReport {
    pub accuracy: f64,
    /// Accuracy of always guessing the auxiliary split's majority value.
    pub majority_baseline: f64,
    /// Accuracy per difficulty level; `None` for empty levels.
    pub per_level: Vec<Option<f64>>,
    #[serde(skip)]
    pub records: Vec<AiaRecord>,
}

/// Attack accuracy on `data`, optionally broken down by `levels` (one per row, `< n_levels`).
pub fn aia_evaluate<T: Scalar>(
    attack: &AiaAttackModel<T>,
    target: &Network<T>,
    data: &Dataset<T>,
    levels: Option<(&[usize], usize)>,
) -> Result<AiaReport> {
    let s = sensitive(data)?;
    if let Some((lv, _)) = levels {
        if lv.len() != data.len() {
            return Err(Error::input(format!("{} levels for {} rows", lv.len(), data.len())));
        }
    }
    let preds = aia_infer_batch(attack, target, data.x())?;
    let records: Vec<AiaRecord> = preds
        .iter()
        .enumerate()
        .map(|(i, &(k, c))| AiaRecord {
            sample_index: i,
            true_attribute: s[i],
            predicted_attribute: k,
            confidence: c,
            difficulty_level: levels.map(|(lv, _)| lv[i]),
        })
        .collect();
    let frac = |hits: usize, n: usize| hits as f64 / n as f64;
    let n = data.len();
    let accuracy = frac(records.iter().filter(|r| r.true_attribute == r.predicted_attribute).count(), n);
    let majority_baseline = frac(s.iter().filter(|&&v| v == attack.majority).count(), n);
    let per_level = match levels {
        None => Vec::new(),
        Some((_, n_levels)) => (0..n_levels)
            .map(|l| {
                let rs: Vec<&AiaRecord> = records.iter().filter(|r| r.difficulty_level == Some(l)).collect();
                (!rs.is_empty()).then(|| frac(rs.iter().filter(|r| r.true_attribute == r.predicted_attribute).count(), rs.len()))
            })
            .collect(),
    };
    Ok(AiaReport {
        accuracy,
        majority_baseline,
        per_level,
        records,
    })
}

pub fn write_aia_csv(path: &Path, records: &[AiaRecord]) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for r in records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    })
}
