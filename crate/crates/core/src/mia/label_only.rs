use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::shadow::AdversaryKnowledge;
use super::threshold::{best_cut, Cut};
use super::verdict::MembershipVerdict;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::scalar::Scalar;

/// How a query is perturbed at a given noise level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Each binary feature is flipped with probability equal to the level.
    BitFlip,
    /// Additive Gaussian noise with standard deviation equal to the level.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelOnlyConfig {
    pub noise_grid: Vec<f64>,
    pub trials: usize,
    pub perturbation: Perturbation,
    pub seed: u64,
}

impl LabelOnlyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_grid.is_empty() {
            return Err(Error::config("label-only noise grid is empty"));
        }
        if self.trials == 0 {
            return Err(Error::config("label-only attack needs at least one trial per level"));
        }
        for &l in &self.noise_grid {
            let ok = match self.perturbation {
                Perturbation::BitFlip => (0.0..=1.0).contains(&l),
                Perturbation::Gaussian => l >= 0.0 && l.is_finite(),
            };
            if !ok {
                return Err(Error::config(format!("noise level {l} invalid for {:?}", self.perturbation)));
            }
        }
        Ok(())
    }
}

const ROWS_PER_PASS: usize = 4096;

/// Fraction of perturbed copies that keep the clean predicted label, averaged over the grid.
///
/// Sample `i` draws its noise from its own stream, so scores do not depend on batching.
pub fn robustness_scores<T: Scalar>(model: &Network<T>, x: ArrayView2<T>, config: &LabelOnlyConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let clean = model.predict_labels(x)?;
    let copies = config.noise_grid.len() * config.trials;
    let per_pass = (ROWS_PER_PASS / copies).max(1);
    let d = x.ncols();
    let mut scores = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(per_pass) {
        let end = (start + per_pass).min(x.nrows());
        let mut batch = Array2::<T>::zeros(((end - start) * copies, d));
        for i in start..end {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let src = x.row(i);
            for (c, &level) in config.noise_grid.iter().flat_map(|l| std::iter::repeat(l).take(config.trials)).enumerate() {
                let mut row = batch.row_mut((i - start) * copies + c);
                for (dst, &v) in row.iter_mut().zip(src.iter()) {
                    *dst = match config.perturbation {
                        Perturbation::BitFlip => {
                            if rng.random::<f64>() < level {
                                T::one() - v
                            } else {
                                v
                            }
                        }
                        Perturbation::Gaussian => {
                            let z: f64 = rng.sample(StandardNormal);
                            v + T::of(level * z)
                        }
                    };
                }
            }
        }
        let preds = model.predict_labels(batch.view())?;
        for (k, i) in (start..end).enumerate() {
            let kept = preds[k * copies..(k + 1) * copies].iter().filter(|&&p| p == clean[i]).count();
            scores.push(kept as f64 / copies as f64);
        }
    }
    Ok(scores)
}

/// Noise-robustness label-only attack: member iff robustness >= a cut chosen on shadow data.
pub fn label_only_attack<T: Scalar>(
    target: &Network<T>,
    knowledge: &AdversaryKnowledge<T>,
    x: ArrayView2<T>,
    config: &LabelOnlyConfig,
) -> Result<(Vec<MembershipVerdict>, Cut)> {
    config.validate()?;
    if knowledge.shadows.is_empty() {
        return Err(Error::config("label-only attack needs at least one shadow model"));
    }
    let mut members = Vec::new();
    let mut non_members = Vec::new();
    for s in &knowledge.shadows {
        let r = robustness_scores(&s.model, knowledge.data.x(), config)?;
        members.extend(s.members.iter().map(|&i| r[i]));
        non_members.extend(s.non_members.iter().map(|&i| r[i]));
    }
    let cut = best_cut(&members, &non_members)?;
    let verdicts = robustness_scores(target, x, config)?
        .into_iter()
        .map(|s| MembershipVerdict {
            is_member: s >= cut.threshold,
            confidence: 1.0,
            raw_score: s,
        })
        .collect();
    Ok((verdicts, cut))
}
