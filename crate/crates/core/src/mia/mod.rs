//! Membership inference: shadow models, the black-box top-3 NN attack, metric
//! attacks, a noise-robustness label-only attack, calibrated scores and the
//! difficulty-calibrated attack.

mod diffcali;
mod label_only;
mod metric;
mod nn_attack;
mod shadow;
mod threshold;
mod verdict;

pub use diffcali::{
    calibrate, calibrated_score, calibrated_scores, diffcali_decide, diffcali_infer, diffcali_infer_batch,
    diffcali_train, difficulty_threshold, search_theta0, theta0_grid, theta_for_rank, DiffCaliState,
    THETA0_MAX, THETA0_STEPS_PER_UNIT, THRESHOLD_FLOOR,
};
pub use label_only::{label_only_attack, robustness_scores, LabelOnlyConfig, Perturbation};
pub use metric::{fit_metric_thresholds, fit_thresholds, metric_attack, metric_value, MetricKind, MetricThresholds};
pub use nn_attack::{
    attack_training_set, nn_attack_infer, nn_attack_infer_batch, nn_attack_train, topk_features, topk_matrix,
    train_attack_model, verdict_from_member_posterior, AttackModel, FeatureKind, ATTACK_HIDDEN, MEMBER,
    NON_MEMBER, TOP_K,
};
pub use shadow::{train_shadows, Access, AdversaryKnowledge, ShadowModel};
pub use threshold::{best_cut, Cut};
pub use verdict::{attack_accuracy, read_verdicts_csv, write_verdicts_csv, MembershipVerdict, VerdictRecord};
