//! Defenses: DP-SGD training, noisy-curriculum DP-SGD, and posterior perturbation.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::curriculum::{build_curriculum, score_difficulty, Curriculum, CurriculumMode, DifficultyMeasurer};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mia::{topk_features, AttackModel, FeatureKind, MEMBER};
use crate::nn::{argmax, Optimizer, PosteriorVector, TrainConfig};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpParams {
    /// Per-sample L2 clipping bound.
    pub clip: f64,
    /// Noise multiplier.
    pub noise: f64,
}

impl DpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::config(format!("DP clip bound must be positive, got {}", self.clip)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config(format!("DP noise multiplier must be non-negative, got {}", self.noise)));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Optimizer {
        Optimizer::DpSgd {
            clip: self.clip,
            noise: self.noise,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseConfig {
    #[default]
    None,
    /// Target trained with DP-SGD.
    DpSgd { clip: f64, noise: f64 },
    /// DP-SGD target whose curriculum scorer is also trained with DP-SGD.
    DpSgdStar { clip: f64, noise: f64 },
    /// Target posteriors perturbed against the defender's copy of the attack.
    MemGuard { budget: f64 },
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DefenseConfig::None => Ok(()),
            DefenseConfig::DpSgd { clip, noise } | DefenseConfig::DpSgdStar { clip, noise } => DpParams {
                clip: *clip,
                noise: *noise,
            }
            .validate(),
            DefenseConfig::MemGuard { budget } => {
                if *budget >= 0.0 && budget.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(format!("MemGuard budget must be non-negative, got {budget}")))
                }
            }
        }
    }

    pub fn dp(&self) -> Option<DpParams> {
        match *self {
            DefenseConfig::DpSgd { clip, noise } | DefenseConfig::DpSgdStar { clip, noise } => Some(DpParams { clip, noise }),
            _ => None,
        }
    }
}

/// Bootstrap curriculum whose difficulty scorer is trained with DP-SGD.
pub fn dpstar_curriculum<T: Scalar>(
    data: &Dataset<T>,
    dp: DpParams,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<Curriculum> {
    dp.validate()?;
    let measurer = DifficultyMeasurer::Bootstrap {
        hidden: hidden.to_vec(),
        config: config.with_optimizer(dp.optimizer()),
    };
    let scores = score_difficulty(data, &measurer)?;
    build_curriculum(&scores, CurriculumMode::Bootstrap, config.seed)
}

/// Line-search resolution along each mixing path.
const PATH_POINTS: usize = 33;
const BISECTION_STEPS: usize = 30;
const COORDINATE_STEPS: [f64; 3] = [0.05, 0.01, 0.002];
const MAX_SWEEPS: usize = 20;

struct Guard<'a, T> {
    attack: &'a AttackModel<T>,
    k: usize,
    label: usize,
    origin: Vec<f64>,
    budget: f64,
}

impl<T: Scalar> Guard<'_, T> {
    fn features(&self, q: &[f64]) -> Vec<T> {
        let pv = PosteriorVector::new_unchecked(q.iter().map(|&v| T::of(v)).collect());
        topk_features(&pv, self.k).expect("k checked against the class count")
    }

    fn member_posteriors(&self, qs: &[Vec<f64>]) -> Vec<f64> {
        let mut x = Array2::<T>::zeros((qs.len(), self.k));
        for (i, q) in qs.iter().enumerate() {
            for (j, v) in self.features(q).into_iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        self.attack
            .member_posteriors(x.view())
            .expect("feature width matches the attack model")
    }

    /// Lower is better: points at or below one half beat any point above it.
    fn cost(f: f64) -> f64 {
        if f <= 0.5 {
            0.5 - f
        } else {
            1.0 + (f - 0.5)
        }
    }

    fn feasible(&self, q: &[f64]) -> bool {
        let l1: f64 = q.iter().zip(&self.origin).map(|(a, b)| (a - b).abs()).sum();
        q.iter().all(|&v| v >= 0.0) && argmax(q) == self.label && l1 <= self.budget + 1e-12
    }

    fn mix(&self, towards: &[f64], lambda: f64) -> Vec<f64> {
        self.origin.iter().zip(towards).map(|(&p, &t)| (1.0 - lambda) * p + lambda * t).collect()
    }

    /// Best point along `origin -> towards`, refined by bisection around the 0.5 crossing.
    fn line_search(&self, towards: &[f64]) -> (Vec<f64>, f64) {
        let dist: f64 = self.origin.iter().zip(towards).map(|(a, b)| (a - b).abs()).sum();
        let lmax = if dist > 0.0 { (self.budget / dist).min(1.0) } else { 0.0 };
        let lambdas: Vec<f64> = (0..PATH_POINTS).map(|i| lmax * i as f64 / (PATH_POINTS - 1) as f64).collect();
        let qs: Vec<Vec<f64>> = lambdas.iter().map(|&l| self.mix(towards, l)).collect();
        let fs = self.member_posteriors(&qs);
        let mut best = (qs[0].clone(), fs[0]);
        for (q, &f) in qs.iter().zip(&fs) {
            if self.feasible(q) && Self::cost(f) < Self::cost(best.1) {
                best = (q.clone(), f);
            }
        }
        for w in 0..PATH_POINTS - 1 {
            if (fs[w] > 0.5) != (fs[w + 1] > 0.5) {
                let (mut lo, mut hi) = (lambdas[w], lambdas[w + 1]);
                let above_at_lo = fs[w] > 0.5;
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    let q = self.mix(towards, mid);
                    let f = self.member_posteriors(std::slice::from_ref(&q))[0];
                    if self.feasible(&q) && Self::cost(f) < Self::cost(best.1) {
                        best = (q, f);
                    }
                    if (f > 0.5) == above_at_lo {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
        }
        best
    }

    /// Pairwise mass transfers among the top entries while they lower the cost.
    fn refine(&self, mut q: Vec<f64>, mut f: f64) -> (Vec<f64>, f64) {
        let mut idx: Vec<usize> = (0..q.len()).collect();
        idx.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
        idx.truncate((self.k + 1).min(q.len()));
        for &step in &COORDINATE_STEPS {
            for _ in 0..MAX_SWEEPS {
                let mut improved = false;
                for &i in &idx {
                    for &j in &idx {
                        if i == j || Self::cost(f) < 1e-9 {
                            continue;
                        }
                        let mut c = q.clone();
                        let delta = step.min(c[j]);
                        c[i] += delta;
                        c[j] -= delta;
                        if delta <= 0.0 || !self.feasible(&c) {
                            continue;
                        }
                        let fc = self.member_posteriors(std::slice::from_ref(&c))[0];
                        if Self::cost(fc) < Self::cost(f) {
                            q = c;
                            f = fc;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        (q, f)
    }
}

/// Perturb a posterior within L1 `budget` so the defender's attack model reads it as close
/// to one half as possible (preferring the non-member side), never changing the argmax.
///
/// Returns the input unchanged when nothing better is found.
pub fn memguard_perturb<T: Scalar>(posterior: &PosteriorVector<T>, attack: &AttackModel<T>, budget: f64) -> PosteriorVector<T> {
    let k = match attack.feature_kind {
        FeatureKind::TopkPosteriors { k } if k <= posterior.len() => k,
        _ => return posterior.clone(),
    };
    if budget.is_nan() || budget <= 0.0 {
        return posterior.clone();
    }
    let origin: Vec<f64> = posterior.as_slice().iter().map(|v| v.widen()).collect();
    let g = Guard {
        attack,
        k,
        label: argmax(&origin),
        budget,
        origin,
    };
    let f0 = g.member_posteriors(std::slice::from_ref(&g.origin))[0];
    let n = g.origin.len();
    let uniform = vec![1.0 / n as f64; n];
    let mut sharp = vec![0.0; n];
    sharp[g.label] = 1.0;
    let mut best = (g.origin.clone(), f0);
    for towards in [&uniform, &sharp] {
        let cand = g.line_search(towards);
        if Guard::<T>::cost(cand.1) < Guard::<T>::cost(best.1) {
            best = cand;
        }
    }
    let best = g.refine(best.0, best.1);
    if (best.1 - 0.5).abs() > (f0 - 0.5).abs() || best.0 == g.origin {
        return posterior.clone();
    }
    let out: Vec<T> = best.0.iter().map(|&v| T::of(v)).collect();
    if argmax(&out) != g.label {
        return posterior.clone();
    }
    PosteriorVector::new(out).unwrap_or_else(|_| posterior.clone())
}

/// Row-wise [`memguard_perturb`].
pub fn memguard_perturb_batch<T: Scalar>(probs: ArrayView2<T>, attack: &AttackModel<T>, budget: f64) -> Array2<T> {
    let mut out = probs.to_owned();
    for (mut dst, src) in out.rows_mut().into_iter().zip(probs.rows()) {
        let p = PosteriorVector::new_unchecked(src.to_vec());
        let q = memguard_perturb(&p, attack, budget);
        dst.iter_mut().zip(q.as_slice()).for_each(|(d, &v)| *d = v);
    }
    out
}

/// Member posterior of `attack` on a single posterior vector.
pub fn attack_member_posterior<T: Scalar>(attack: &AttackModel<T>, posterior: &PosteriorVector<T>) -> Result<f64> {
    let k = match attack.feature_kind {
        FeatureKind::TopkPosteriors { k } => k,
        FeatureKind::CalibratedScore => return Err(Error::input("attack model does not read posteriors")),
    };
    let f = topk_features(posterior, k)?;
    Ok(attack.posterior(ndarray::ArrayView1::from(&f))?.as_slice()[MEMBER].widen())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::{build_curriculum, score_difficulty};
    use crate::data::{synth_tabular, SynthParams};
    use crate::mia::train_attack_model;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Attack that calls confident posteriors members.
    fn confident_attack() -> AttackModel<f64> {
        static CACHE: std::sync::OnceLock<AttackModel<f64>> = std::sync::OnceLock::new();
        CACHE.get_or_init(train_confident_attack).clone()
    }

    fn train_confident_attack() -> AttackModel<f64> {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = Array2::zeros((n, 3));
        let mut m = Vec::new();
        for i in 0..n {
            let member = i % 2 == 0;
            let top = if member { rng.random_range(0.8..1.0) } else { rng.random_range(0.2..0.6) };
            let rest = (1.0 - top) / 2.0;
            x[[i, 0]] = top;
            x[[i, 1]] = rest;
            x[[i, 2]] = rest;
            m.push(member);
        }
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 200,
            ..TrainConfig::attack(1)
        };
        train_attack_model(x.view(), &m, FeatureKind::TopkPosteriors { k: 3 }, &cfg).unwrap()
    }

    fn random_posterior(rng: &mut ChaCha8Rng, n: usize) -> PosteriorVector<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(6)).collect();
        let s: f64 = raw.iter().sum();
        PosteriorVector::new(raw.into_iter().map(|v| v / s).collect()).unwrap()
    }

    #[test]
    fn zero_budget_is_identity() {
        let a = confident_attack();
        let p = PosteriorVector::new(vec![0.9, 0.05, 0.05]).unwrap();
        assert_eq!(memguard_perturb(&p, &a, 0.0), p);
    }

    #[test]
    fn confident_member_is_pushed_to_the_boundary() {
        let a = confident_attack();
        let p = PosteriorVector::new(vec![0.95, 0.03, 0.02]).unwrap();
        assert!(attack_member_posterior(&a, &p).unwrap() > 0.5);
        let q = memguard_perturb(&p, &a, 2.0);
        let f = attack_member_posterior(&a, &q).unwrap();
        assert!(f <= 0.5 && f > 0.49, "{f}");
        assert_eq!(q.argmax(), 0);
    }

    proptest! {
        #[test]
        fn perturbation_keeps_label_and_never_moves_away(seed in 0u64..300, n in 3usize..12, budget in 0.0f64..2.0) {
            let a = confident_attack();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_posterior(&mut rng, n);
            let q = memguard_perturb(&p, &a, budget);
            prop_assert!(PosteriorVector::new(q.as_slice().to_vec()).is_ok());
            prop_assert_eq!(q.argmax(), p.argmax());
            let l1: f64 = p.as_slice().iter().zip(q.as_slice()).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!(l1 <= budget + 1e-9);
            let before = (attack_member_posterior(&a, &p).unwrap() - 0.5).abs();
            let after = (attack_member_posterior(&a, &q).unwrap() - 0.5).abs();
            prop_assert!(after <= before + 1e-12);
        }
    }

    fn small_data() -> Dataset<f64> {
        synth_tabular(&SynthParams {
            n: 120,
            dim: 30,
            class_count: 3,
            spread: 0.2,
            flip: 0.2,
            density: 0.5,
            sensitive: None,
            seed: 6,
        })
        .unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 15,
            batch_size: 16,
            learning_rate: 0.1,
            ..TrainConfig::target(4)
        }
    }

    #[test]
    fn noiseless_unclipped_dpstar_equals_bootstrap() {
        let d = small_data();
        let dp = DpParams { clip: 1e12, noise: 0.0 };
        let star = dpstar_curriculum(&d, dp, &[8], &cfg()).unwrap();
        let plain_scores = score_difficulty(&d, &DifficultyMeasurer::Bootstrap { hidden: vec![8], config: cfg() }).unwrap();
        let plain = build_curriculum(&plain_scores, CurriculumMode::Bootstrap, 4).unwrap();
        assert_eq!(star.order(), plain.order());
    }

    #[test]
    fn dpstar_is_seeded() {
        let d = small_data();
        let dp = DpParams { clip: 1.0, noise: 2.0 };
        let a = dpstar_curriculum(&d, dp, &[8], &cfg()).unwrap();
        let b = dpstar_curriculum(&d, dp, &[8], &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(DefenseConfig::DpSgd { clip: 0.0, noise: 1.0 }.validate().is_err());
        assert!(DefenseConfig::DpSgdStar { clip: 1.0, noise: -1.0 }.validate().is_err());
        assert!(DefenseConfig::MemGuard { budget: -0.1 }.validate().is_err());
        assert!(DefenseConfig::None.validate().is_ok());
        let t: DefenseConfig = toml::from_str("kind = \"dp_sgd\"\nclip = 1.0\nnoise = 0.5").unwrap();
        assert_eq!(t.dp(), Some(DpParams { clip: 1.0, noise: 0.5 }));
        assert!(toml::from_str::<DefenseConfig>("kind = \"mem_guard\"").is_err());
    }
}
