use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::FPR_GRID;
use crate::curriculum::{BatchSampling, PacingSchedule};
use crate::data::{CsvSchema, SplitName, SplitPlan, SynthParams};
use crate::defense::DefenseConfig;
use crate::error::{Error, Result};
use crate::mia::{LabelOnlyConfig, MetricKind, Perturbation};
use crate::nn::{Optimizer, TrainConfig};

/// Numeric precision used for every model in a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthParams),
    Csv {
        path: PathBuf,
        #[serde(flatten)]
        schema: CsvSchema,
    },
}

/// How a target model is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Normal,
    Bootstrap,
    Transfer,
    Baseline,
    Anti,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Normal => "normal",
            TargetKind::Bootstrap => "bootstrap",
            TargetKind::Transfer => "transfer",
            TargetKind::Baseline => "baseline",
            TargetKind::Anti => "anti",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![256] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::target(0);
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

impl TrainSection {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: Optimizer::Sgd,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacingSection {
    pub start_fraction: f64,
    pub growth: f64,
    /// Defaults to a tenth of the iterations per epoch.
    pub step_length: Option<usize>,
    pub sampling: BatchSampling,
}

impl Default for PacingSection {
    fn default() -> Self {
        Self {
            start_fraction: PacingSchedule::DEFAULT_START,
            growth: PacingSchedule::DEFAULT_GROWTH,
            step_length: None,
            sampling: BatchSampling::Uniform,
        }
    }
}

impl PacingSection {
    pub fn schedule(&self, n: usize, iterations: usize) -> PacingSchedule {
        PacingSchedule {
            n,
            start_fraction: self.start_fraction,
            growth: self.growth,
            step_length: self.step_length.unwrap_or((iterations / 10).max(1)),
            total_iterations: iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelOnlySection {
    pub noise_grid: Vec<f64>,
    pub trials: usize,
    pub perturbation: Perturbation,
}

impl LabelOnlySection {
    pub fn config(&self, seed: u64) -> LabelOnlyConfig {
        LabelOnlyConfig {
            noise_grid: self.noise_grid.clone(),
            trials: self.trials,
            perturbation: self.perturbation,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub nn: bool,
    pub metrics: Vec<MetricKind>,
    pub label_only: Option<LabelOnlySection>,
    pub diffcali: bool,
    pub aia: bool,
    pub shadow_count: usize,
    pub reference_count: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = TrainConfig::attack(0);
        Self {
            nn: true,
            metrics: Vec::new(),
            label_only: None,
            diffcali: false,
            aia: false,
            shadow_count: 1,
            reference_count: 1,
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
        }
    }
}

impl AttackSection {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: Optimizer::Sgd,
            seed,
        }
    }

    /// True if any configured attack needs shadow models.
    pub fn needs_shadows(&self) -> bool {
        self.nn
            || self.metrics.iter().any(|&m| m != MetricKind::Correctness)
            || self.label_only.is_some()
            || self.diffcali
    }

    pub fn any(&self) -> bool {
        self.nn || !self.metrics.is_empty() || self.label_only.is_some() || self.diffcali || self.aia
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub levels: usize,
    pub fpr_grid: Vec<f64>,
    pub histogram_bins: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            levels: 10,
            fpr_grid: FPR_GRID.to_vec(),
            histogram_bins: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorizationSection {
    pub holdout_fraction: f64,
    pub scenarios: Vec<crate::analysis::Scenario>,
    pub seeds: usize,
}

impl Default for MemorizationSection {
    fn default() -> Self {
        Self {
            holdout_fraction: crate::analysis::DEFAULT_HOLDOUT_FRACTION,
            scenarios: crate::analysis::Scenario::ALL.to_vec(),
            seeds: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapleySection {
    pub k: usize,
    /// Use at most this many test rows as validation points.
    pub max_validation: Option<usize>,
}

impl Default for ShapleySection {
    fn default() -> Self {
        Self {
            k: crate::analysis::DEFAULT_K,
            max_validation: Some(1000),
        }
    }
}

fn default_repeat() -> usize {
    5
}

fn default_splits() -> BTreeMap<SplitName, f64> {
    SplitName::ALL.iter().map(|&s| (s, 0.2)).collect()
}

fn default_targets() -> Vec<TargetKind> {
    vec![TargetKind::Normal]
}

/// One experiment: data, splits, targets, attacks, defense and analyses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeat")]
    pub repeat: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default = "default_splits")]
    pub splits: BTreeMap<SplitName, f64>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_targets")]
    pub targets: Vec<TargetKind>,
    #[serde(default)]
    pub pacing: PacingSection,
    #[serde(default)]
    pub attacks: AttackSection,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub memorization: Option<MemorizationSection>,
    #[serde(default)]
    pub shapley: Option<ShapleySection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn split_plan(&self, seed: u64) -> SplitPlan {
        SplitPlan {
            fractions: self.splits.clone(),
            seed,
        }
    }

    fn require_split(&self, name: SplitName, why: &str) -> Result<()> {
        if self.splits.contains_key(&name) {
            Ok(())
        } else {
            Err(Error::config(format!("split '{name}' is required for {why}")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::config(format!("experiment id '{}' must be non-empty [A-Za-z0-9_-]", self.id)));
        }
        if self.repeat == 0 {
            return Err(Error::config("repeat must be at least 1"));
        }
        if let DataSource::Synth(p) = &self.data {
            p.validate()?;
        }
        self.split_plan(self.seed).validate()?;
        self.require_split(SplitName::TargetTrain, "every experiment")?;
        self.require_split(SplitName::Test, "every experiment")?;
        if self.targets.is_empty() {
            return Err(Error::config("at least one target is required"));
        }
        if self.targets.iter().collect::<BTreeSet<_>>().len() != self.targets.len() {
            return Err(Error::config("targets must be unique"));
        }
        if self.targets.contains(&TargetKind::Transfer) {
            self.require_split(SplitName::Reference2, "the transfer curriculum")?;
        }
        self.train.config(0).validate()?;
        self.pacing.schedule(1, 1).validate()?;
        let a = &self.attacks;
        if a.needs_shadows() || a.aia {
            self.require_split(SplitName::ShadowTrain, "shadow-based attacks")?;
        }
        if a.diffcali {
            self.require_split(SplitName::Reference1, "Diff-Cali reference models")?;
            if a.reference_count == 0 {
                return Err(Error::config("Diff-Cali needs reference_count >= 1"));
            }
        }
        if a.shadow_count == 0 {
            return Err(Error::config("shadow_count must be at least 1"));
        }
        if a.metrics.iter().collect::<BTreeSet<_>>().len() != a.metrics.len() {
            return Err(Error::config("metric attacks must be unique"));
        }
        if let Some(l) = &a.label_only {
            l.config(0).validate()?;
        }
        if a.aia && self.model.hidden.is_empty() {
            return Err(Error::config("attribute inference needs at least one hidden layer"));
        }
        a.config(0).validate()?;
        self.defense.validate()?;
        if matches!(self.defense, DefenseConfig::MemGuard { .. }) && !a.nn {
            return Err(Error::config("MemGuard needs the NN attack as the defender's model"));
        }
        if self.analysis.levels == 0 || self.analysis.histogram_bins == 0 {
            return Err(Error::config("analysis levels and histogram_bins must be positive"));
        }
        if self.analysis.fpr_grid.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::config("fpr_grid values must lie in (0, 1]"));
        }
        if let Some(m) = &self.memorization {
            if !(m.holdout_fraction > 0.0 && m.holdout_fraction < 1.0) || m.seeds == 0 || m.scenarios.is_empty() {
                return Err(Error::config("memorization needs holdout_fraction in (0, 1), seeds >= 1 and a scenario"));
            }
        }
        if let Some(s) = &self.shapley {
            if s.k == 0 || s.max_validation == Some(0) {
                return Err(Error::config("shapley k and max_validation must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
id = "t"
[data]
source = "synth"
n = 100
dim = 10
class_count = 2
spread = 0.1
flip = 0.1
seed = 1
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.repeat, 5);
        assert_eq!(c.model.hidden, vec![256]);
        assert_eq!(c.targets, vec![TargetKind::Normal]);
        assert_eq!(c.splits.len(), 5);
        assert!(c.attacks.nn);
        assert_eq!(c.defense, DefenseConfig::None);
        assert_eq!(c.analysis.levels, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str(&format!("{MINIMAL}\nbogus = 1")).is_err());
        let nested = MINIMAL.replace("seed = 1", "seed = 1\nnoise = 3");
        assert!(ExperimentConfig::from_toml_str(&nested).is_err());
        let t = format!("{MINIMAL}\n[train]\nepoch = 3");
        assert!(ExperimentConfig::from_toml_str(&t).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let r = ExperimentConfig::from_toml_str(&MINIMAL.replace("id = \"t\"", "id = \"t\"\nrepeat = 0"));
        assert!(matches!(r, Err(Error::Config(_))));
        let r = ExperimentConfig::from_toml_str(&format!("{MINIMAL}\n[splits]\ntarget_train = 0.5\nshadow_train = 0.2"));
        assert!(matches!(r, Err(Error::Config(_))));
        let r = ExperimentConfig::from_toml_str(&format!(
            "{MINIMAL}\n[splits]\ntarget_train = 0.5\ntest = 0.5\n[attacks]\nnn = false\ndiffcali = true"
        ));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn csv_source_parses() {
        let t = "id = \"c\"\n[data]\nsource = \"csv\"\npath = \"x.csv\"\nlabel_column = \"y\"\n";
        let c = ExperimentConfig::from_toml_str(t).unwrap();
        assert_eq!(
            c.data,
            DataSource::Csv {
                path: "x.csv".into(),
                schema: CsvSchema {
                    label_column: "y".into(),
                    sensitive_column: None
                }
            }
        );
    }

    #[test]
    fn json_echo_round_trips() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
