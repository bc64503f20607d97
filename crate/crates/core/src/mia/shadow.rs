use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::train_classifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Network, TrainConfig};
use crate::scalar::Scalar;

/// What the adversary can observe from the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Posterior,
    LabelOnly,
}

/// A shadow model with the rows of the shadow split it was (and was not) trained on.
#[derive(Clone, Debug)]
pub struct ShadowModel<T> {
    pub model: Network<T>,
    pub members: Vec<usize>,
    pub non_members: Vec<usize>,
}

impl<T> ShadowModel<T> {
    /// Membership flag per shadow-split row.
    pub fn membership(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.members {
            m[i] = true;
        }
        m
    }
}

/// The adversary's data split and the shadow models trained on it.
#[derive(Clone, Debug)]
pub struct AdversaryKnowledge<T> {
    /// Row indices of the shadow split within the full dataset.
    pub shadow_split: Vec<usize>,
    pub data: Dataset<T>,
    pub shadows: Vec<ShadowModel<T>>,
    pub access: Access,
}

impl<T: Scalar> AdversaryKnowledge<T> {
    /// Knowledge over `shadow_split` of `full`; rejects any overlap with the target's training rows.
    pub fn new(full: &Dataset<T>, shadow_split: &[usize], target_train: &[usize], access: Access) -> Result<Self> {
        if shadow_split.is_empty() {
            return Err(Error::config("shadow split is empty"));
        }
        if let Some(&bad) = shadow_split.iter().find(|&&i| i >= full.len()) {
            return Err(Error::input(format!("shadow index {bad} out of range")));
        }
        let train: HashSet<usize> = target_train.iter().copied().collect();
        if let Some(&bad) = shadow_split.iter().find(|i| train.contains(i)) {
            return Err(Error::config(format!("sample {bad} is in both the shadow split and the target training split")));
        }
        Ok(Self {
            shadow_split: shadow_split.to_vec(),
            data: full.subset(shadow_split),
            shadows: Vec::new(),
            access,
        })
    }

    /// Knowledge over a standalone dataset, with the disjointness already guaranteed by the caller.
    pub fn from_dataset(data: Dataset<T>, access: Access) -> Self {
        Self {
            shadow_split: (0..data.len()).collect(),
            data,
            shadows: Vec::new(),
            access,
        }
    }

    pub fn with_shadows(mut self, shadows: Vec<ShadowModel<T>>) -> Self {
        self.shadows = shadows;
        self
    }

    /// Shadow-split rows and membership flags pooled over every shadow, with each shadow's posteriors.
    pub(crate) fn pooled_posteriors(&self) -> Result<Vec<(Array2<f64>, Vec<bool>)>> {
        if self.shadows.is_empty() {
            return Err(Error::config("no shadow models trained"));
        }
        self.shadows
            .iter()
            .map(|s| {
                let p = s.model.predict_batch(self.data.x())?.mapv(Scalar::widen);
                Ok((p, s.membership(self.data.len())))
            })
            .collect()
    }
}

/// Train `count` shadows, each on its own random half of the shadow split.
///
/// Shadow `i` uses seed `config.seed + i` for both its split and its weights.
pub fn train_shadows<T: Scalar>(
    knowledge: &AdversaryKnowledge<T>,
    count: usize,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<Vec<ShadowModel<T>>> {
    let n = knowledge.data.len();
    if count == 0 {
        return Err(Error::config("shadow count must be at least 1"));
    }
    if n < 2 {
        return Err(Error::config(format!("shadow split of {n} rows cannot be halved")));
    }
    (0..count)
        .map(|i| {
            let seed = config.seed.wrapping_add(i as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5ead_0f5a));
            let mut non_members = idx.split_off(n / 2);
            let mut members = idx;
            members.sort_unstable();
            non_members.sort_unstable();
            let (model, _) = train_classifier(&knowledge.data.subset(&members), hidden, &config.with_seed(seed))?;
            Ok(ShadowModel {
                model,
                members,
                non_members,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_tabular, SynthParams};

    fn data(n: usize) -> Dataset<f64> {
        synth_tabular(&SynthParams {
            n,
            dim: 40,
            class_count: 4,
            spread: 0.2,
            flip: 0.3,
            density: 0.5,
            sensitive: None,
            seed: 3,
        })
        .unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.1,
            ..TrainConfig::target(9)
        }
    }

    #[test]
    fn single_shadow_uses_half_the_split() {
        let k = AdversaryKnowledge::from_dataset(data(41), Access::Posterior);
        let s = train_shadows(&k, 1, &[16], &cfg()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].members.len(), 20);
        assert_eq!(s[0].non_members.len(), 21);
        let mut all: Vec<usize> = s[0].members.iter().chain(&s[0].non_members).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..41).collect::<Vec<_>>());
    }

    #[test]
    fn shadows_are_seeded() {
        let k = AdversaryKnowledge::from_dataset(data(40), Access::Posterior);
        let a = train_shadows(&k, 2, &[8], &cfg()).unwrap();
        let b = train_shadows(&k, 2, &[8], &cfg()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.members, y.members);
            assert_eq!(x.model, y.model);
        }
        assert_ne!(a[0].members, a[1].members);
    }

    #[test]
    fn shadow_overfits_its_members() {
        let k = AdversaryKnowledge::from_dataset(data(200), Access::Posterior);
        let s = &train_shadows(&k, 1, &[32], &cfg()).unwrap()[0];
        let tr = k.data.subset(&s.members);
        let te = k.data.subset(&s.non_members);
        let a_tr = s.model.accuracy(tr.x(), &tr.labels).unwrap();
        let a_te = s.model.accuracy(te.x(), &te.labels).unwrap();
        assert!(a_tr > a_te, "train {a_tr} test {a_te}");
    }

    #[test]
    fn insufficient_or_overlapping_splits_are_rejected() {
        let full = data(20);
        let k = AdversaryKnowledge::from_dataset(full.subset(&[0]), Access::Posterior);
        assert!(matches!(train_shadows(&k, 1, &[4], &cfg()), Err(Error::Config(_))));
        let k = AdversaryKnowledge::from_dataset(full.clone(), Access::Posterior);
        assert!(matches!(train_shadows(&k, 0, &[4], &cfg()), Err(Error::Config(_))));
        assert!(matches!(
            AdversaryKnowledge::new(&full, &[1, 2, 3], &[3, 4], Access::Posterior),
            Err(Error::Config(_))
        ));
        let ok = AdversaryKnowledge::new(&full, &[1, 2, 3], &[4, 5], Access::LabelOnly).unwrap();
        assert_eq!(ok.data.len(), 3);
    }
}
