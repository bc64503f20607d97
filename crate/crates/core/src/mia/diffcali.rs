use ndarray::{Array2, ArrayView1, ArrayView2};
use num_traits::{FromPrimitive, Num};

use super::nn_attack::{AttackModel, FeatureKind, MEMBER, NON_MEMBER};
use super::verdict::MembershipVerdict;
use crate::curriculum::Curriculum;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{check_split, Network, Optimizer, TrainConfig, Trainer};
use crate::scalar::Scalar;

/// Threshold assigned to the most difficult sample.
pub const THRESHOLD_FLOOR: f64 = 1e-4;
pub const THETA0_MAX: f64 = 0.1;
/// Grid points are `k / THETA0_STEPS_PER_UNIT` for `k` in `0..=100`.
pub const THETA0_STEPS_PER_UNIT: u32 = 1000;

/// Linear threshold in rank: `theta0` at rank 1 down to `floor` at rank `size`.
///
/// Generic so the endpoints can be checked in exact arithmetic.
pub fn difficulty_threshold<N>(rank: usize, size: usize, theta0: N, floor: N) -> Result<N>
where
    N: Clone + Num + FromPrimitive,
{
    if size < 2 {
        return Err(Error::input(format!("difficulty threshold needs |D| >= 2, got {size}")));
    }
    if rank == 0 || rank > size {
        return Err(Error::input(format!("rank {rank} outside 1..={size}")));
    }
    let conv = |v: usize| N::from_usize(v).ok_or_else(|| Error::input(format!("{v} not representable")));
    let d = conv(size)?;
    let r = conv(rank)?;
    Ok((d.clone() - r) * (theta0 - floor.clone()) / (d - N::one()) + floor)
}

/// [`difficulty_threshold`] in `f64` with the standard floor.
pub fn theta_for_rank(rank: usize, size: usize, theta0: f64) -> Result<f64> {
    difficulty_threshold(rank, size, theta0, THRESHOLD_FLOOR)
}

/// The candidate `theta0` values, 0 to 0.1 inclusive.
pub fn theta0_grid() -> Vec<f64> {
    let steps = (THETA0_MAX * THETA0_STEPS_PER_UNIT as f64).round() as u32;
    (0..=steps).map(|k| k as f64 / THETA0_STEPS_PER_UNIT as f64).collect()
}

/// Member iff the member posterior reaches the rank's threshold.
pub fn diffcali_decide(member_posterior: f64, rank: usize, size: usize, theta0: f64) -> Result<MembershipVerdict> {
    let theta = theta_for_rank(rank, size, theta0)?;
    let is_member = member_posterior >= theta;
    Ok(MembershipVerdict {
        is_member,
        confidence: if is_member { member_posterior } else { 1.0 - member_posterior },
        raw_score: member_posterior - theta,
    })
}

/// Grid point with the highest accuracy (smallest on ties), before the floor is applied.
pub fn search_theta0(member_posteriors: &[f64], ranks: &[usize], membership: &[bool]) -> Result<(f64, f64)> {
    let n = member_posteriors.len();
    if ranks.len() != n || membership.len() != n {
        return Err(Error::input("posteriors, ranks and membership differ in length"));
    }
    let mut best = (0.0, -1.0);
    for theta0 in theta0_grid() {
        let mut hits = 0usize;
        for i in 0..n {
            if (member_posteriors[i] >= theta_for_rank(ranks[i], n, theta0)?) == membership[i] {
                hits += 1;
            }
        }
        let acc = hits as f64 / n as f64;
        if acc > best.1 {
            best = (theta0, acc);
        }
    }
    Ok(best)
}

/// `-loss(target) + mean(-loss(reference))`, i.e. the reference-mean loss minus the target loss.
pub fn calibrate(target_loss: f64, reference_losses: &[f64]) -> Result<f64> {
    if reference_losses.is_empty() {
        return Err(Error::input("calibration needs at least one reference model"));
    }
    let mean = reference_losses.iter().sum::<f64>() / reference_losses.len() as f64;
    Ok(mean - target_loss)
}

pub fn calibrated_scores<T: Scalar>(
    target: &Network<T>,
    references: &[Network<T>],
    x: ArrayView2<T>,
    labels: &[usize],
) -> Result<Vec<f64>> {
    if references.is_empty() {
        return Err(Error::input("calibration needs at least one reference model"));
    }
    let t = target.losses(x, labels)?;
    let refs: Vec<Vec<T>> = references.iter().map(|r| r.losses(x, labels)).collect::<Result<_>>()?;
    (0..t.len())
        .map(|i| {
            let r: Vec<f64> = refs.iter().map(|l| l[i].widen()).collect();
            calibrate(t[i].widen(), &r)
        })
        .collect()
}

pub fn calibrated_score<T: Scalar>(
    target: &Network<T>,
    references: &[Network<T>],
    x: ArrayView1<T>,
    label: usize,
) -> Result<f64> {
    let row = x.insert_axis(ndarray::Axis(0));
    Ok(calibrated_scores(target, references, row, &[label])?[0])
}

/// Learned threshold offset and the attacker's difficulty ranking of its own split.
#[derive(Clone, Debug)]
pub struct DiffCaliState<T> {
    pub theta0: f64,
    pub floor: f64,
    pub curriculum: Curriculum,
    /// Scores new queries so they can be ranked against the split.
    pub measurer: Network<T>,
    sorted_scores: Vec<f64>,
}

impl<T: Scalar> DiffCaliState<T> {
    /// Attacker-estimated rank of an unseen query with difficulty `score` among the split.
    pub fn rank_for_score(&self, score: f64) -> usize {
        let below = self.sorted_scores.partition_point(|&s| s < score);
        (below + 1).min(self.sorted_scores.len())
    }

    pub fn size(&self) -> usize {
        self.sorted_scores.len()
    }

    pub fn threshold(&self, rank: usize) -> Result<f64> {
        theta_for_rank(rank, self.size(), self.theta0)
    }
}

fn score_matrix<T: Scalar>(scores: &[f64]) -> Array2<T> {
    Array2::from_shape_fn((scores.len(), 1), |(i, _)| T::of(scores[i]))
}

fn ln_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Train the calibrated-score attack with per-sample thresholds, re-searching `theta0` every epoch.
///
/// `target` is the model whose membership `membership` describes over `data`. The
/// curriculum must rank `data` and come from `measurer`'s losses. During training
/// the member logit is shifted by `-logit(theta(x))`, so the fitted posterior crosses
/// one half exactly where the raw posterior crosses `theta(x)`.
pub fn diffcali_train<T: Scalar>(
    target: &Network<T>,
    references: &[Network<T>],
    data: &Dataset<T>,
    membership: &[bool],
    curriculum: Curriculum,
    measurer: Network<T>,
    config: &TrainConfig,
) -> Result<(AttackModel<T>, DiffCaliState<T>)> {
    let n = data.len();
    if curriculum.len() != n {
        return Err(Error::config(format!("curriculum ranks {} samples but the split has {n}", curriculum.len())));
    }
    if membership.len() != n {
        return Err(Error::input(format!("{} membership labels for {n} samples", membership.len())));
    }
    if n < 2 {
        return Err(Error::config("Diff-Cali needs at least two samples"));
    }
    if !matches!(config.optimizer, Optimizer::Sgd) {
        return Err(Error::Unsupported("Diff-Cali attack training uses plain SGD".into()));
    }
    let features = score_matrix::<T>(&calibrated_scores(target, references, data.x(), &data.labels)?);
    let labels: Vec<usize> = membership.iter().map(|&m| if m { MEMBER } else { NON_MEMBER }).collect();
    check_split(features.view(), &labels)?;
    let ranks = curriculum.ranks().to_vec();

    let mut attack = AttackModel::new(FeatureKind::CalibratedScore, config.seed)?;
    let mut trainer = Trainer::new(config.clone())?;
    let mut offsets = Array2::<T>::zeros((n, 2));
    for _ in 0..config.epochs {
        let post = attack.member_posteriors(features.view())?;
        let theta0 = search_theta0(&post, &ranks, membership)?.0.max(THRESHOLD_FLOOR);
        for i in 0..n {
            offsets[[i, MEMBER]] = T::of(-ln_odds(theta_for_rank(ranks[i], n, theta0)?));
        }
        let batches = trainer.shuffled_batches(n);
        trainer.epoch(&mut attack.network, features.view(), &labels, Some(offsets.view()), &batches)?;
    }
    let post = attack.member_posteriors(features.view())?;
    let theta0 = search_theta0(&post, &ranks, membership)?.0.max(THRESHOLD_FLOOR);

    let mut sorted_scores = curriculum.scores().to_vec();
    sorted_scores.sort_by(f64::total_cmp);
    let state = DiffCaliState {
        theta0,
        floor: THRESHOLD_FLOOR,
        curriculum,
        measurer,
        sorted_scores,
    };
    Ok((attack, state))
}

/// Verdicts for query rows; each query is ranked against the split by the attacker's measurer.
pub fn diffcali_infer_batch<T: Scalar>(
    attack: &AttackModel<T>,
    state: &DiffCaliState<T>,
    target: &Network<T>,
    references: &[Network<T>],
    x: ArrayView2<T>,
    labels: &[usize],
) -> Result<Vec<MembershipVerdict>> {
    if attack.feature_kind != FeatureKind::CalibratedScore {
        return Err(Error::input("Diff-Cali needs a calibrated-score attack model"));
    }
    let s = calibrated_scores(target, references, x, labels)?;
    let post = attack.member_posteriors(score_matrix::<T>(&s).view())?;
    let difficulty = state.measurer.losses(x, labels)?;
    post.iter()
        .zip(&difficulty)
        .map(|(&p, d)| diffcali_decide(p, state.rank_for_score(d.widen()), state.size(), state.theta0))
        .collect()
}

pub fn diffcali_infer<T: Scalar>(
    attack: &AttackModel<T>,
    state: &DiffCaliState<T>,
    target: &Network<T>,
    references: &[Network<T>],
    x: ArrayView1<T>,
    label: usize,
) -> Result<MembershipVerdict> {
    let row = x.insert_axis(ndarray::Axis(0));
    Ok(diffcali_infer_batch(attack, state, target, references, row, &[label])?[0])
}
