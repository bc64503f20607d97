use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::aia::{aia_evaluate, aia_train};
use crate::analysis::{
    bucket_report, knn_shapley, loss_histograms, memorization_experiment, roc_and_tpr, spearman, MemorizationConfig,
};
use crate::curriculum::{
    build_curriculum, classifier_dims, curriculum_train, iterations_per_epoch, model_scores, train_classifier,
    Curriculum, CurriculumMode,
};
use crate::data::{bucketize, load_csv, split_indices, synth_tabular, Dataset, SplitName};
use crate::defense::{dpstar_curriculum, memguard_perturb_batch, DefenseConfig};
use crate::error::{Error, Result, Stage, StageExt};
use crate::mia::{
    attack_accuracy, diffcali_infer_batch, diffcali_train, label_only_attack, metric_attack, nn_attack_infer_batch,
    nn_attack_train, topk_matrix, train_shadows, verdict_from_member_posterior, Access, AdversaryKnowledge,
    AttackModel, DiffCaliState, FeatureKind, MembershipVerdict, VerdictRecord,
};
use crate::nn::{checkpoint, Network};
use crate::scalar::Scalar;

use super::config::{DataSource, ExperimentConfig, Precision, TargetKind};
use super::report::{
    AttackDetails, AttackReport, AuditReport, MemGuardReport, RunOutput, ShapleyReport, TargetReport, TrialDetails,
    TrialOutcome, TrialReport, TrialStatus,
};

const SHADOW_SALT: u64 = 0x5400_0000;
const NN_SALT: u64 = 0x5410_0000;
const LABEL_ONLY_SALT: u64 = 0x5420_0000;
const REFERENCE_SALT: u64 = 0x5430_0000;
const DIFFCALI_SALT: u64 = 0x5440_0000;
const AIA_SALT: u64 = 0x5450_0000;
const TRANSFER_SALT: u64 = 0x5460_0000;
const MEMORIZATION_SALT: u64 = 0x5470_0000;
const MEASURER_SALT: u64 = 0x5480_0000;

/// Which parts of the pipeline to execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Phases {
    pub targets: bool,
    pub attacks: bool,
    pub memorization: bool,
    pub shapley: bool,
}

impl Phases {
    pub const ALL: Phases = Phases {
        targets: true,
        attacks: true,
        memorization: true,
        shapley: true,
    };
    pub const TRAIN: Phases = Phases {
        targets: true,
        attacks: false,
        memorization: false,
        shapley: false,
    };
    pub const ATTACK: Phases = Phases {
        targets: true,
        attacks: true,
        memorization: false,
        shapley: false,
    };
    pub const MEMORIZATION: Phases = Phases {
        targets: false,
        attacks: false,
        memorization: true,
        shapley: false,
    };
    pub const SHAPLEY: Phases = Phases {
        targets: false,
        attacks: false,
        memorization: false,
        shapley: true,
    };
}

/// Execution options that do not affect results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Trials run concurrently on this many threads.
    pub jobs: usize,
    pub phases: Phases,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            phases: Phases::ALL,
        }
    }
}

fn serde_name<S: Serialize>(v: &S) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => format!("{:?}", serde_json::to_value(v).ok()),
    }
}

fn load_data<T: Scalar>(cfg: &ExperimentConfig) -> Result<Dataset<T>> {
    match &cfg.data {
        DataSource::Synth(p) => synth_tabular(p),
        DataSource::Csv { path, schema } => load_csv(path, schema),
    }
}

/// Run every trial of `config` and aggregate. Data problems fail the whole run;
/// any later failure only fails its own trial.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutput> {
    config.validate().stage(Stage::Config)?;
    match config.precision {
        Precision::F32 => run_typed::<f32>(config, options),
        Precision::F64 => run_typed::<f64>(config, options),
    }
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig, options: &RunOptions) -> Result<RunOutput> {
    let data = load_data::<T>(cfg).stage(Stage::Data)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let results: Vec<(TrialOutcome, Option<TrialDetails>)> = pool.install(|| {
        (0..cfg.repeat)
            .into_par_iter()
            .map(|index| {
                let seed = cfg.seed.wrapping_add(index as u64);
                match run_trial(cfg, &data, seed, options.phases) {
                    Ok((report, details)) => (
                        TrialOutcome {
                            index,
                            seed,
                            result: TrialStatus::Completed(report),
                        },
                        Some(details),
                    ),
                    Err(e) => {
                        let (stage, message) = match e {
                            Error::Stage { stage, source } => (Some(stage), source.to_string()),
                            other => (None, other.to_string()),
                        };
                        (
                            TrialOutcome {
                                index,
                                seed,
                                result: TrialStatus::Failed { stage, message },
                            },
                            None,
                        )
                    }
                }
            })
            .collect()
    });
    let (trials, details): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(RunOutput {
        report: AuditReport::new(cfg.clone(), trials),
        details,
    })
}

struct NamedVerdicts {
    name: String,
    verdicts: Vec<MembershipVerdict>,
    extra: BTreeMap<String, f64>,
}

impl NamedVerdicts {
    fn new(name: impl Into<String>, verdicts: Vec<MembershipVerdict>) -> Self {
        Self {
            name: name.into(),
            verdicts,
            extra: BTreeMap::new(),
        }
    }
}

/// Attacker-side state shared by every target of a trial.
struct Adversary<T> {
    knowledge: Option<AdversaryKnowledge<T>>,
    nn: Option<AttackModel<T>>,
    diffcali: Option<(AttackModel<T>, DiffCaliState<T>, Vec<Network<T>>)>,
}

/// Query rows: target members followed by test non-members.
struct EvalSet<T> {
    data: Dataset<T>,
    index: Vec<usize>,
    truth: Vec<bool>,
    levels: Vec<Option<usize>>,
}

struct Trial<'a, T> {
    cfg: &'a ExperimentConfig,
    data: &'a Dataset<T>,
    seed: u64,
    train: Dataset<T>,
    test: Dataset<T>,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

fn run_trial<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset<T>,
    seed: u64,
    phases: Phases,
) -> Result<(TrialReport, TrialDetails)> {
    let splits = split_indices(data.len(), &cfg.split_plan(seed)).stage(Stage::Data)?;
    let train_idx = splits.get(SplitName::TargetTrain).stage(Stage::Data)?.to_vec();
    let test_idx = splits.get(SplitName::Test).stage(Stage::Data)?.to_vec();
    let trial = Trial {
        cfg,
        data,
        seed,
        train: data.subset(&train_idx),
        test: data.subset(&test_idx),
        train_idx,
        test_idx,
    };
    let mut details = TrialDetails {
        splits: Some(splits),
        ..TrialDetails::default()
    };
    let mut report = TrialReport {
        targets: Vec::new(),
        memorization: None,
        shapley: None,
        metrics: BTreeMap::new(),
    };
    trial.run(phases, &mut report, &mut details)?;
    Ok((report, details))
}

impl<T: Scalar> Trial<'_, T> {
    fn base_config(&self) -> crate::nn::TrainConfig {
        self.cfg.train.config(self.seed)
    }

    fn hidden(&self) -> &[usize] {
        &self.cfg.model.hidden
    }

    fn run(&self, phases: Phases, report: &mut TrialReport, details: &mut TrialDetails) -> Result<()> {
        let cfg = self.cfg;
        let base = self.base_config();
        // separately seeded normal model: the bootstrap measurer and the level source
        let (measurer, _) =
            train_classifier(&self.train, self.hidden(), &base.with_seed(self.seed ^ MEASURER_SALT)).stage(Stage::Curriculum)?;
        let difficulty = model_scores(&measurer, &self.train).stage(Stage::Curriculum)?;
        let bootstrap = build_curriculum(&difficulty, CurriculumMode::Bootstrap, self.seed).stage(Stage::Curriculum)?;
        let levels = bucketize(&bootstrap, cfg.analysis.levels).stage(Stage::Analysis)?;
        details.curricula.push(("difficulty".into(), bootstrap.clone()));

        if phases.targets {
            let targets = self.train_targets(&bootstrap, details)?;
            let adversary = if phases.attacks && cfg.attacks.any() {
                Some(self.build_adversary()?)
            } else {
                None
            };
            let eval = self.eval_set(&levels);
            for (kind, net) in &targets {
                let t = self.evaluate_target(kind.name(), net, adversary.as_ref(), &eval, &levels, report, details)?;
                report.targets.push(t);
            }
        }
        if phases.memorization {
            if let Some(m) = &cfg.memorization {
                let mc = MemorizationConfig {
                    holdout_fraction: m.holdout_fraction,
                    hidden: cfg.model.hidden.clone(),
                    train: base.with_seed(self.seed ^ MEMORIZATION_SALT),
                    seeds: m.seeds,
                };
                let results = memorization_experiment(&self.train, &bootstrap, &m.scenarios, &mc).stage(Stage::Analysis)?;
                for r in &results {
                    let s = serde_name(&r.scenario);
                    report.metrics.insert(format!("memorization.{s}.q1"), r.quartiles.q1);
                    report.metrics.insert(format!("memorization.{s}.median"), r.quartiles.median);
                    report.metrics.insert(format!("memorization.{s}.q3"), r.quartiles.q3);
                }
                report.memorization = Some(results);
            }
        }
        if phases.shapley {
            if let Some(s) = &cfg.shapley {
                let m = s.max_validation.unwrap_or(usize::MAX).min(self.test.len());
                let validation = self.test.subset(&(0..m).collect::<Vec<_>>());
                let values = knn_shapley(&self.train, &validation, s.k).stage(Stage::Analysis)?;
                let rho = spearman(&values, &difficulty).stage(Stage::Analysis)?;
                let per_level_mean: Vec<Option<f64>> = (0..cfg.analysis.levels)
                    .map(|l| {
                        let v: Vec<f64> = values.iter().zip(&levels).filter(|(_, &lv)| lv == l).map(|(v, _)| *v).collect();
                        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                    })
                    .collect();
                for (l, m) in per_level_mean.iter().enumerate() {
                    if let Some(m) = m {
                        report.metrics.insert(format!("shapley.level_{l:02}.mean"), *m);
                    }
                }
                if let Some(r) = rho {
                    report.metrics.insert("shapley.spearman".into(), r);
                }
                details.shapley = self
                    .train_idx
                    .iter()
                    .zip(&values)
                    .zip(&levels)
                    .map(|((&i, &v), &l)| (i, v, l))
                    .collect();
                report.shapley = Some(ShapleyReport {
                    k: s.k,
                    validation_size: m,
                    per_level_mean,
                    spearman_with_difficulty: rho,
                });
            }
        }
        Ok(())
    }

    fn train_targets(
        &self,
        bootstrap: &Curriculum,
        details: &mut TrialDetails,
    ) -> Result<Vec<(TargetKind, Network<T>)>> {
        let cfg = self.cfg;
        let base = self.base_config();
        let dp = cfg.defense.dp();
        let target_cfg = dp.map_or_else(|| base.clone(), |d| base.with_optimizer(d.optimizer()));
        let star = matches!(cfg.defense, DefenseConfig::DpSgdStar { .. });
        let measurer_cfg = if star { target_cfg.clone() } else { base.clone() };

        // under DP-SGD* the easy-to-hard order itself comes from a DP-trained measurer
        let mut ordered: Option<Curriculum> = None;
        let mut easy_to_hard = || -> Result<Curriculum> {
            if let Some(c) = &ordered {
                return Ok(c.clone());
            }
            let c = match (star, dp) {
                (true, Some(d)) => dpstar_curriculum(&self.train, d, self.hidden(), &base)?,
                _ => bootstrap.clone(),
            };
            ordered = Some(c.clone());
            Ok(c)
        };

        let n = self.train.len();
        let schedule = cfg
            .pacing
            .schedule(n, iterations_per_epoch(n, target_cfg.batch_size));
        let mut out = Vec::new();
        for &kind in &cfg.targets {
            let net = match kind {
                TargetKind::Normal => train_classifier(&self.train, self.hidden(), &target_cfg).stage(Stage::Train)?.0,
                _ => {
                    let curriculum = match kind {
                        TargetKind::Bootstrap => easy_to_hard().stage(Stage::Curriculum)?,
                        TargetKind::Anti => {
                            let c = easy_to_hard().stage(Stage::Curriculum)?;
                            build_curriculum(c.scores(), CurriculumMode::Anti, self.seed).stage(Stage::Curriculum)?
                        }
                        TargetKind::Baseline => {
                            build_curriculum(bootstrap.scores(), CurriculumMode::Baseline, self.seed).stage(Stage::Curriculum)?
                        }
                        TargetKind::Transfer => self.transfer_curriculum(&measurer_cfg).stage(Stage::Curriculum)?,
                        TargetKind::Normal => unreachable!(),
                    };
                    let init = Network::random(
                        &classifier_dims(&self.train, self.hidden()),
                        &mut ChaCha8Rng::seed_from_u64(self.seed),
                    )
                    .stage(Stage::Train)?;
                    let (net, _) = curriculum_train(
                        init,
                        self.train.x(),
                        &self.train.labels,
                        &curriculum,
                        &schedule,
                        &target_cfg,
                        cfg.pacing.sampling,
                    )
                    .stage(Stage::Train)?;
                    details.curricula.push((kind.name().into(), curriculum));
                    net
                }
            };
            if !net.is_finite() {
                return Err(Error::input(format!("{} target diverged", kind.name()))).stage(Stage::Train);
            }
            details.checkpoints.push((kind.name().into(), checkpoint::to_bytes(&net)));
            out.push((kind, net));
        }
        Ok(out)
    }

    fn transfer_curriculum(&self, measurer_cfg: &crate::nn::TrainConfig) -> Result<Curriculum> {
        let cfg = self.cfg;
        let splits = split_indices(self.data.len(), &cfg.split_plan(self.seed))?;
        let reference = self.data.subset(splits.get(SplitName::Reference2)?);
        let (scorer, _) =
            train_classifier(&reference, self.hidden(), &measurer_cfg.with_seed(self.seed ^ TRANSFER_SALT))?;
        build_curriculum(&model_scores(&scorer, &self.train)?, CurriculumMode::Transfer, self.seed)
    }

    fn split_rows(&self, name: SplitName) -> Result<Vec<usize>> {
        let splits = split_indices(self.data.len(), &self.cfg.split_plan(self.seed))?;
        Ok(splits.get(name)?.to_vec())
    }

    fn build_adversary(&self) -> Result<Adversary<T>> {
        let a = &self.cfg.attacks;
        let base = self.base_config();
        let knowledge = if a.needs_shadows() || a.aia {
            let shadow_idx = self.split_rows(SplitName::ShadowTrain).stage(Stage::Attack)?;
            let k = AdversaryKnowledge::new(self.data, &shadow_idx, &self.train_idx, Access::Posterior).stage(Stage::Attack)?;
            let k = if a.needs_shadows() {
                let shadows = train_shadows(&k, a.shadow_count, self.hidden(), &base.with_seed(self.seed ^ SHADOW_SALT))
                    .stage(Stage::Attack)?;
                k.with_shadows(shadows)
            } else {
                k
            };
            Some(k)
        } else {
            None
        };
        let needs_nn = a.nn || matches!(self.cfg.defense, DefenseConfig::MemGuard { .. });
        let nn = match (&knowledge, needs_nn) {
            (Some(k), true) => Some(nn_attack_train(k, &a.config(self.seed ^ NN_SALT)).stage(Stage::Attack)?),
            _ => None,
        };
        let diffcali = match (&knowledge, a.diffcali) {
            (Some(k), true) => Some(self.train_diffcali(k).stage(Stage::Attack)?),
            _ => None,
        };
        Ok(Adversary { knowledge, nn, diffcali })
    }

    /// The first shadow stands in for the target; reference models come from a disjoint split.
    fn train_diffcali(&self, k: &AdversaryKnowledge<T>) -> Result<(AttackModel<T>, DiffCaliState<T>, Vec<Network<T>>)> {
        let a = &self.cfg.attacks;
        let base = self.base_config();
        let ref_data = self.data.subset(&self.split_rows(SplitName::Reference1)?);
        let references = (0..a.reference_count)
            .map(|r| {
                train_classifier(&ref_data, self.hidden(), &base.with_seed((self.seed ^ REFERENCE_SALT).wrapping_add(r as u64)))
                    .map(|(m, _)| m)
            })
            .collect::<Result<Vec<_>>>()?;
        let measurer = references[0].clone();
        let pseudo = &k.shadows[0];
        let membership = pseudo.membership(k.data.len());
        let curriculum = build_curriculum(&model_scores(&measurer, &k.data)?, CurriculumMode::Transfer, self.seed)?;
        let (attack, state) = diffcali_train(
            &pseudo.model,
            &references,
            &k.data,
            &membership,
            curriculum,
            measurer,
            &a.config(self.seed ^ DIFFCALI_SALT),
        )?;
        Ok((attack, state, references))
    }

    fn eval_set(&self, levels: &[usize]) -> EvalSet<T> {
        let index: Vec<usize> = self.train_idx.iter().chain(&self.test_idx).copied().collect();
        let n_train = self.train_idx.len();
        EvalSet {
            data: self.data.subset(&index),
            truth: (0..index.len()).map(|i| i < n_train).collect(),
            levels: levels.iter().map(|&l| Some(l)).chain(std::iter::repeat_n(None, self.test_idx.len())).collect(),
            index,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate_target(
        &self,
        name: &str,
        net: &Network<T>,
        adversary: Option<&Adversary<T>>,
        eval: &EvalSet<T>,
        levels: &[usize],
        report: &mut TrialReport,
        details: &mut TrialDetails,
    ) -> Result<TargetReport> {
        let cfg = self.cfg;
        let metrics = &mut report.metrics;
        let train_accuracy = net.accuracy(self.train.x(), &self.train.labels).stage(Stage::Train)?;
        let test_accuracy = net.accuracy(self.test.x(), &self.test.labels).stage(Stage::Train)?;
        metrics.insert(format!("{name}.train_accuracy"), train_accuracy);
        metrics.insert(format!("{name}.test_accuracy"), test_accuracy);
        let mut out = TargetReport {
            name: name.into(),
            train_accuracy,
            test_accuracy,
            attacks: Vec::new(),
            aia: None,
            memguard: None,
        };
        let Some(adv) = adversary else {
            return Ok(out);
        };
        let a = &cfg.attacks;
        let x = eval.data.x();
        let labels = &eval.data.labels;

        let losses: Vec<f64> = net.losses(x, labels).stage(Stage::Analysis)?.into_iter().map(Scalar::widen).collect();
        let (m, nm): (Vec<_>, Vec<_>) = losses.iter().zip(&eval.truth).partition(|(_, &t)| t);
        let strip = |v: Vec<(&f64, &bool)>| v.into_iter().map(|(l, _)| *l).collect::<Vec<_>>();
        let hist = loss_histograms(&strip(m), &strip(nm), cfg.analysis.histogram_bins).stage(Stage::Analysis)?;
        details.histograms.push((name.into(), hist));

        let mut runs: Vec<NamedVerdicts> = Vec::new();
        let nn_verdicts = match &adv.nn {
            Some(nn) => Some(nn_attack_infer_batch(nn, net, x).stage(Stage::Attack)?),
            None => None,
        };
        if a.nn {
            if let Some(v) = &nn_verdicts {
                runs.push(NamedVerdicts::new("nn", v.clone()));
            }
        }
        let fallback;
        let knowledge = match &adv.knowledge {
            Some(k) => k,
            None => {
                fallback = AdversaryKnowledge::from_dataset(self.test.clone(), Access::Posterior);
                &fallback
            }
        };
        for &kind in &a.metrics {
            let v = metric_attack(kind, net, knowledge, x, labels).stage(Stage::Attack)?;
            runs.push(NamedVerdicts::new(format!("metric_{}", serde_name(&kind)), v));
        }
        if let Some(l) = &a.label_only {
            let (v, cut) = label_only_attack(net, knowledge, x, &l.config(self.seed ^ LABEL_ONLY_SALT)).stage(Stage::Attack)?;
            let mut r = NamedVerdicts::new("label_only", v);
            if cut.threshold.is_finite() {
                r.extra.insert("threshold".into(), cut.threshold);
            }
            runs.push(r);
        }
        if let Some((attack, state, references)) = &adv.diffcali {
            let v = diffcali_infer_batch(attack, state, net, references, x, labels).stage(Stage::Attack)?;
            let mut r = NamedVerdicts::new("diffcali", v);
            r.extra.insert("theta0".into(), state.theta0);
            runs.push(r);
        }
        if let (DefenseConfig::MemGuard { budget }, Some(nn), Some(undefended)) = (cfg.defense, &adv.nn, &nn_verdicts) {
            let probs = net.predict_batch(x).stage(Stage::Defense)?;
            let perturbed = memguard_perturb_batch(probs.view(), nn, budget);
            let k = match nn.feature_kind {
                FeatureKind::TopkPosteriors { k } => k,
                FeatureKind::CalibratedScore => unreachable!("NN attack is trained on posteriors"),
            };
            let feats = topk_matrix(perturbed.view(), k).stage(Stage::Defense)?;
            let defended: Vec<MembershipVerdict> = nn
                .member_posteriors(feats.view())
                .stage(Stage::Defense)?
                .into_iter()
                .map(verdict_from_member_posterior)
                .collect();
            let argmax = |row: ndarray::ArrayView1<T>| crate::nn::argmax(row.as_slice().unwrap_or(&row.to_vec()));
            let labels_identical = probs.rows().into_iter().zip(perturbed.rows()).all(|(p, q)| argmax(p) == argmax(q));
            let mean_l1 = probs
                .rows()
                .into_iter()
                .zip(perturbed.rows())
                .map(|(p, q)| p.iter().zip(q.iter()).map(|(a, b)| (a.widen() - b.widen()).abs()).sum::<f64>())
                .sum::<f64>()
                / probs.nrows() as f64;
            let mg = MemGuardReport {
                budget,
                undefended_accuracy: attack_accuracy(undefended, &eval.truth).stage(Stage::Defense)?,
                defended_accuracy: attack_accuracy(&defended, &eval.truth).stage(Stage::Defense)?,
                labels_identical,
                mean_l1,
            };
            metrics.insert(format!("{name}.memguard.undefended_accuracy"), mg.undefended_accuracy);
            metrics.insert(format!("{name}.memguard.defended_accuracy"), mg.defended_accuracy);
            metrics.insert(format!("{name}.memguard.labels_identical"), f64::from(u8::from(labels_identical)));
            metrics.insert(format!("{name}.memguard.mean_l1"), mean_l1);
            out.memguard = Some(mg);
            runs.push(NamedVerdicts::new("nn_memguard", defended));
        }

        for run in runs {
            let records: Vec<VerdictRecord> = run
                .verdicts
                .iter()
                .enumerate()
                .map(|(i, v)| VerdictRecord::new(eval.index[i], eval.truth[i], v, eval.levels[i]))
                .collect();
            let accuracy = attack_accuracy(&run.verdicts, &eval.truth).stage(Stage::Analysis)?;
            let scores: Vec<f64> = run.verdicts.iter().map(|v| v.raw_score).collect();
            let (roc, tpr) = roc_and_tpr(&scores, &eval.truth, &cfg.analysis.fpr_grid).stage(Stage::Analysis)?;
            let buckets = bucket_report(&records, cfg.analysis.levels).stage(Stage::Analysis)?;
            let key = format!("{name}.{}", run.name);
            metrics.insert(format!("{key}.accuracy"), accuracy);
            metrics.insert(format!("{key}.auc"), roc.auc);
            for p in &tpr {
                metrics.insert(format!("{key}.tpr@{}", p.fpr), p.tpr);
            }
            for b in &buckets {
                if let Some(acc) = b.accuracy {
                    metrics.insert(format!("{key}.level_{:02}.accuracy", b.level), acc);
                }
                if let Some(s) = b.member_score {
                    metrics.insert(format!("{key}.level_{:02}.member_score", b.level), s);
                }
            }
            for (k, v) in &run.extra {
                metrics.insert(format!("{key}.{k}"), *v);
            }
            out.attacks.push(AttackReport {
                name: run.name.clone(),
                accuracy,
                auc: roc.auc,
                tpr_at_fpr: tpr,
                buckets,
                extra: run.extra,
            });
            details.attacks.push(AttackDetails {
                target: name.into(),
                attack: run.name,
                verdicts: records,
                roc,
            });
        }

        if a.aia {
            if let Some(k) = &adv.knowledge {
                let attack = aia_train(net, &k.data, &a.config(self.seed ^ AIA_SALT)).stage(Stage::Attack)?;
                let mut rep =
                    aia_evaluate(&attack, net, &self.train, Some((levels, cfg.analysis.levels))).stage(Stage::Attack)?;
                let mut records = std::mem::take(&mut rep.records);
                for r in &mut records {
                    r.sample_index = self.train_idx[r.sample_index];
                }
                metrics.insert(format!("{name}.aia.accuracy"), rep.accuracy);
                metrics.insert(format!("{name}.aia.majority_baseline"), rep.majority_baseline);
                for (l, acc) in rep.per_level.iter().enumerate() {
                    if let Some(acc) = acc {
                        metrics.insert(format!("{name}.aia.level_{l:02}.accuracy"), *acc);
                    }
                }
                details.aia.push((name.into(), records));
                out.aia = Some(rep);
            }
        }
        Ok(out)
    }
}
