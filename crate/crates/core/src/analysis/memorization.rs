use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::quantile;
use crate::curriculum::{classifier_dims, Curriculum};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{train_in_order, Network, TrainConfig};
use crate::scalar::Scalar;

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.04;

/// Where the holdout group sits in each epoch's sample order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Holdout removed from training.
    NotSeen,
    FirstSeen,
    LastSeen,
    /// Holdout shuffled in with everything else.
    Random,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::NotSeen, Scenario::FirstSeen, Scenario::LastSeen, Scenario::Random];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationConfig {
    pub holdout_fraction: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Independent trainings averaged per scenario; seed `train.seed + s` for run `s`.
    pub seeds: usize,
}

impl MemorizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config(format!("holdout fraction {} outside (0, 1)", self.holdout_fraction)));
        }
        if self.seeds == 0 {
            return Err(Error::config("memorization needs at least one seed"));
        }
        self.train.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationResult {
    pub scenario: Scenario,
    /// Dataset indices of the holdout, most difficult first.
    pub holdout: Vec<usize>,
    /// True-class probability per holdout sample, aligned with `holdout`.
    pub probabilities: Vec<f64>,
    pub quartiles: Quartiles,
}

/// The `round(q * N)` highest-ranked (most difficult) samples, hardest first.
pub fn holdout_indices(curriculum: &Curriculum, q: f64) -> Result<Vec<usize>> {
    let k = (q * curriculum.len() as f64).round() as usize;
    if k == 0 {
        return Err(Error::config(format!("holdout of {q} x {} samples is empty", curriculum.len())));
    }
    if k >= curriculum.len() {
        return Err(Error::config("holdout would cover every sample"));
    }
    Ok(curriculum.order().iter().rev().take(k).copied().collect())
}

/// One epoch's sample order for `scenario`; non-holdout samples are reshuffled every epoch.
pub fn scenario_order(scenario: Scenario, n: usize, holdout: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut in_holdout = vec![false; n];
    holdout.iter().for_each(|&i| in_holdout[i] = true);
    let mut rest: Vec<usize> = (0..n).filter(|&i| !in_holdout[i]).collect();
    let mut group = holdout.to_vec();
    match scenario {
        Scenario::NotSeen => {
            rest.shuffle(rng);
            rest
        }
        Scenario::FirstSeen => {
            group.shuffle(rng);
            rest.shuffle(rng);
            group.extend(rest);
            group
        }
        Scenario::LastSeen => {
            rest.shuffle(rng);
            group.shuffle(rng);
            rest.extend(group);
            rest
        }
        Scenario::Random => {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(rng);
            all
        }
    }
}

fn true_class_probabilities<T: Scalar>(net: &Network<T>, data: &Dataset<T>, idx: &[usize]) -> Result<Vec<f64>> {
    let sub = data.subset(idx);
    let p = net.predict_batch(sub.x())?;
    Ok(sub.labels.iter().enumerate().map(|(i, &y)| p[[i, y]].widen()).collect())
}

/// Train once per scenario (and seed) and report the holdout's true-class probabilities.
pub fn memorization_experiment<T: Scalar>(
    data: &Dataset<T>,
    curriculum: &Curriculum,
    scenarios: &[Scenario],
    config: &MemorizationConfig,
) -> Result<Vec<MemorizationResult>> {
    config.validate()?;
    if curriculum.len() != data.len() {
        return Err(Error::config("curriculum does not rank the dataset"));
    }
    let holdout = holdout_indices(curriculum, config.holdout_fraction)?;
    let dims = classifier_dims(data, &config.hidden);
    scenarios
        .iter()
        .map(|&scenario| {
            let mut sum = vec![0.0; holdout.len()];
            for s in 0..config.seeds {
                let cfg = config.train.with_seed(config.train.seed.wrapping_add(s as u64));
                let init = Network::random(&dims, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
                let (net, _) = train_in_order(init, data.x(), &data.labels, &cfg, |_, rng| {
                    scenario_order(scenario, data.len(), &holdout, rng)
                })?;
                for (a, p) in sum.iter_mut().zip(true_class_probabilities(&net, data, &holdout)?) {
                    *a += p;
                }
            }
            let probabilities: Vec<f64> = sum.into_iter().map(|v| v / config.seeds as f64).collect();
            let q = |x| quantile(&probabilities, x).unwrap_or(f64::NAN);
            Ok(MemorizationResult {
                scenario,
                holdout: holdout.clone(),
                quartiles: Quartiles {
                    q1: q(0.25),
                    median: q(0.5),
                    q3: q(0.75),
                },
                probabilities,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::{build_curriculum, CurriculumMode};

    #[test]
    fn holdout_is_four_percent_of_twenty_thousand() {
        let c = build_curriculum(&(0..20000).map(|i| i as f64).collect::<Vec<_>>(), CurriculumMode::Bootstrap, 0).unwrap();
        let h = holdout_indices(&c, DEFAULT_HOLDOUT_FRACTION).unwrap();
        assert_eq!(h.len(), 800);
        assert_eq!(h[0], 19999);
        assert!(h.iter().all(|&i| i >= 19200));
    }

    #[test]
    fn empty_holdout_is_a_config_error() {
        let c = build_curriculum(&[0.0; 10], CurriculumMode::Bootstrap, 0).unwrap();
        assert!(matches!(holdout_indices(&c, 0.01), Err(Error::Config(_))));
    }

    #[test]
    fn orders_place_the_holdout_and_keep_the_multiset() {
        let holdout = [7, 2, 9];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 12;
        let sorted = |mut v: Vec<usize>| {
            v.sort_unstable();
            v
        };
        let first = scenario_order(Scenario::FirstSeen, n, &holdout, &mut rng);
        let last = scenario_order(Scenario::LastSeen, n, &holdout, &mut rng);
        let random = scenario_order(Scenario::Random, n, &holdout, &mut rng);
        let not_seen = scenario_order(Scenario::NotSeen, n, &holdout, &mut rng);
        assert_eq!(sorted(first[..3].to_vec()), vec![2, 7, 9]);
        assert_eq!(sorted(last[9..].to_vec()), vec![2, 7, 9]);
        let all: Vec<usize> = (0..n).collect();
        assert_eq!(sorted(first), all);
        assert_eq!(sorted(last), all);
        assert_eq!(sorted(random), all);
        assert_eq!(not_seen.len(), 9);
        assert!(not_seen.iter().all(|i| !holdout.contains(i)));
    }

    #[test]
    fn random_placement_is_seeded() {
        let h = [1, 4];
        let a = scenario_order(Scenario::Random, 10, &h, &mut ChaCha8Rng::seed_from_u64(3));
        let b = scenario_order(Scenario::Random, 10, &h, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
