use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shadow::AdversaryKnowledge;
use super::verdict::MembershipVerdict;
use crate::error::{Error, Result};
use crate::nn::{train, Network, PosteriorVector, TrainConfig};
use crate::scalar::Scalar;

/// Output index of the member class in every attack model.
pub const MEMBER: usize = 0;
pub const NON_MEMBER: usize = 1;
pub const ATTACK_HIDDEN: [usize; 2] = [64, 32];
pub const TOP_K: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureKind {
    TopkPosteriors { k: usize },
    CalibratedScore,
}

impl FeatureKind {
    pub fn width(&self) -> usize {
        match self {
            FeatureKind::TopkPosteriors { k } => *k,
            FeatureKind::CalibratedScore => 1,
        }
    }
}

/// Binary member/non-member classifier over attack features.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackModel<T> {
    pub network: Network<T>,
    pub feature_kind: FeatureKind,
}

impl<T: Scalar> AttackModel<T> {
    /// Untrained `width-64-32-2` model with weights seeded by `seed`.
    pub fn new(feature_kind: FeatureKind, seed: u64) -> Result<Self> {
        let dims = [feature_kind.width(), ATTACK_HIDDEN[0], ATTACK_HIDDEN[1], 2];
        let network = Network::random(&dims, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { network, feature_kind })
    }

    pub fn posterior(&self, features: ArrayView1<T>) -> Result<PosteriorVector<T>> {
        self.network.forward(features)
    }

    /// Member-class posterior per feature row.
    pub fn member_posteriors(&self, features: ArrayView2<T>) -> Result<Vec<f64>> {
        let p = self.network.predict_batch(features)?;
        Ok(p.column(MEMBER).iter().map(|v| v.widen()).collect())
    }
}

/// Member iff the member posterior is strictly above one half.
pub fn verdict_from_member_posterior(p: f64) -> MembershipVerdict {
    let is_member = p > 0.5;
    MembershipVerdict {
        is_member,
        confidence: if is_member { p } else { 1.0 - p },
        raw_score: p,
    }
}

/// The `k` largest posterior entries, descending.
pub fn topk_features<T: Scalar>(posterior: &PosteriorVector<T>, k: usize) -> Result<Vec<T>> {
    topk_slice(posterior.as_slice(), k)
}

fn topk_slice<T: Scalar>(p: &[T], k: usize) -> Result<Vec<T>> {
    if k == 0 || k > p.len() {
        return Err(Error::input(format!("k = {k} for a {}-class posterior", p.len())));
    }
    let mut v = p.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    v.truncate(k);
    Ok(v)
}

/// Row-wise top-k of a posterior matrix.
pub fn topk_matrix<T: Scalar>(probs: ArrayView2<T>, k: usize) -> Result<Array2<T>> {
    let mut out = Array2::zeros((probs.nrows(), k));
    for (i, row) in probs.rows().into_iter().enumerate() {
        let top = topk_slice(&row.to_vec(), k)?;
        for (j, v) in top.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Top-k shadow features with membership labels, balanced within every shadow.
pub fn attack_training_set<T: Scalar>(knowledge: &AdversaryKnowledge<T>, k: usize) -> Result<(Array2<T>, Vec<bool>)> {
    if knowledge.shadows.is_empty() {
        return Err(Error::config("NN attack needs at least one shadow model"));
    }
    let mut rows: Vec<Array2<T>> = Vec::new();
    let mut membership = Vec::new();
    for s in &knowledge.shadows {
        let m = s.members.len().min(s.non_members.len());
        let idx: Vec<usize> = s.members[..m].iter().chain(&s.non_members[..m]).copied().collect();
        let x = knowledge.data.subset(&idx);
        let probs = s.model.predict_batch(x.x())?;
        rows.push(topk_matrix(probs.view(), k)?);
        membership.extend(std::iter::repeat(true).take(m));
        membership.extend(std::iter::repeat(false).take(m));
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let features = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::input(e.to_string()))?;
    Ok((features, membership))
}

/// Train an attack model on precomputed features; weights are seeded from `config.seed`.
pub fn train_attack_model<T: Scalar>(
    features: ArrayView2<T>,
    membership: &[bool],
    feature_kind: FeatureKind,
    config: &TrainConfig,
) -> Result<AttackModel<T>> {
    if features.ncols() != feature_kind.width() {
        return Err(Error::input(format!(
            "{} feature columns for a width-{} attack model",
            features.ncols(),
            feature_kind.width()
        )));
    }
    if membership.iter().all(|&m| m) || membership.iter().all(|&m| !m) {
        return Err(Error::config("attack training labels are all one class"));
    }
    let labels: Vec<usize> = membership.iter().map(|&m| if m { MEMBER } else { NON_MEMBER }).collect();
    let init = AttackModel::new(feature_kind, config.seed)?;
    let (network, _) = train(init.network, features, &labels, config)?;
    Ok(AttackModel { network, feature_kind })
}

/// Black-box top-3 attack trained on every shadow's posteriors.
pub fn nn_attack_train<T: Scalar>(knowledge: &AdversaryKnowledge<T>, config: &TrainConfig) -> Result<AttackModel<T>> {
    let (features, membership) = attack_training_set(knowledge, TOP_K)?;
    train_attack_model(features.view(), &membership, FeatureKind::TopkPosteriors { k: TOP_K }, config)
}

fn require_topk<T>(attack: &AttackModel<T>) -> Result<usize> {
    match attack.feature_kind {
        FeatureKind::TopkPosteriors { k } => Ok(k),
        FeatureKind::CalibratedScore => Err(Error::input("attack model expects calibrated scores, not posteriors")),
    }
}

pub fn nn_attack_infer<T: Scalar>(attack: &AttackModel<T>, target: &Network<T>, x: ArrayView1<T>) -> Result<MembershipVerdict> {
    let k = require_topk(attack)?;
    let feats = topk_features(&target.forward(x)?, k)?;
    let p = attack.posterior(ArrayView1::from(&feats))?;
    Ok(verdict_from_member_posterior(p.as_slice()[MEMBER].widen()))
}

pub fn nn_attack_infer_batch<T: Scalar>(
    attack: &AttackModel<T>,
    target: &Network<T>,
    x: ArrayView2<T>,
) -> Result<Vec<MembershipVerdict>> {
    let k = require_topk(attack)?;
    let feats = topk_matrix(target.predict_batch(x)?.view(), k)?;
    Ok(attack
        .member_posteriors(feats.view())?
        .into_iter()
        .map(verdict_from_member_posterior)
        .collect())
}
