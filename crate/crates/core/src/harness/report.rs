use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aia::{write_aia_csv, AiaRecord, AiaReport};
use crate::analysis::{
    mean_std, write_bucket_csv, write_histogram_csv, write_roc_csv, write_tpr_csv, BucketRow, LossHistogram, MeanStd,
    MemorizationResult, RocCurve, TprAtFpr,
};
use crate::curriculum::Curriculum;
use crate::data::Splits;
use crate::error::{Error, Result, Stage};
use crate::mia::{write_verdicts_csv, VerdictRecord};
use crate::report::atomic_write;

use super::config::ExperimentConfig;

/// Scores for one attack against one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub name: String,
    pub accuracy: f64,
    pub auc: f64,
    pub tpr_at_fpr: Vec<TprAtFpr>,
    pub buckets: Vec<BucketRow>,
    /// Attack-specific scalars such as a fitted threshold.
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemGuardReport {
    pub budget: f64,
    pub undefended_accuracy: f64,
    pub defended_accuracy: f64,
    pub labels_identical: bool,
    pub mean_l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub name: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub attacks: Vec<AttackReport>,
    #[serde(default)]
    pub aia: Option<AiaReport>,
    #[serde(default)]
    pub memguard: Option<MemGuardReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub k: usize,
    pub validation_size: usize,
    /// Mean value per difficulty level, easiest first.
    pub per_level_mean: Vec<Option<f64>>,
    /// Rank correlation between value and difficulty score.
    pub spearman_with_difficulty: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub targets: Vec<TargetReport>,
    #[serde(default)]
    pub memorization: Option<Vec<MemorizationResult>>,
    #[serde(default)]
    pub shapley: Option<ShapleyReport>,
    /// Flat `name -> value` view used for aggregation.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Completed(TrialReport),
    Failed { stage: Option<Stage>, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub seed: u64,
    pub result: TrialStatus,
}

impl TrialOutcome {
    pub fn report(&self) -> Option<&TrialReport> {
        match &self.result {
            TrialStatus::Completed(r) => Some(r),
            TrialStatus::Failed { .. } => None,
        }
    }
}

/// Everything a run produced that fits in one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub id: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialOutcome>,
    /// Mean and sample std over completed trials, per metric.
    pub summary: BTreeMap<String, MeanStd>,
}

impl AuditReport {
    pub fn new(config: ExperimentConfig, trials: Vec<TrialOutcome>) -> Self {
        let mut pooled: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in trials.iter().filter_map(TrialOutcome::report) {
            for (k, &v) in &r.metrics {
                pooled.entry(k.clone()).or_default().push(v);
            }
        }
        let summary = pooled
            .into_iter()
            .filter_map(|(k, v)| mean_std(&v).map(|m| (k, m)))
            .collect();
        Self {
            id: config.id.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            trials,
            summary,
        }
    }

    pub fn completed(&self) -> usize {
        self.trials.iter().filter(|t| t.report().is_some()).count()
    }

    pub fn failed(&self) -> usize {
        self.trials.len() - self.completed()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Per-attack rows that are too bulky for the JSON summary.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackDetails {
    pub target: String,
    pub attack: String,
    pub verdicts: Vec<VerdictRecord>,
    pub roc: RocCurve,
}

/// Per-trial artifacts written to the CSV bundle.
#[derive(Clone, Debug, Default)]
pub struct TrialDetails {
    pub splits: Option<Splits>,
    pub curricula: Vec<(String, Curriculum)>,
    /// Serialized target checkpoints keyed by target name.
    pub checkpoints: Vec<(String, Vec<u8>)>,
    pub attacks: Vec<AttackDetails>,
    pub histograms: Vec<(String, LossHistogram)>,
    pub aia: Vec<(String, Vec<AiaRecord>)>,
    /// `(sample_index, value, difficulty_level)` over the target training split.
    pub shapley: Vec<(usize, f64, usize)>,
}

/// A report together with the per-trial artifacts; `details[t]` is `None` for failed trials.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: AuditReport,
    pub details: Vec<Option<TrialDetails>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// `report.json` only.
    Json,
    /// `summary.csv` plus per-trial CSVs and checkpoints.
    CsvBundle,
}

fn write_json(path: &Path, report: &AuditReport) -> Result<()> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, report)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn write_summary_csv(path: &Path, report: &AuditReport) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "mean", "std", "n"])?;
        for (k, m) in &report.summary {
            out.write_record([k.clone(), m.mean.to_string(), m.std.to_string(), m.n.to_string()])?;
        }
        out.flush()?;
        Ok(())
    })
}

fn write_shapley_csv(path: &Path, rows: &[(usize, f64, usize)]) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample_index", "value", "difficulty_level"])?;
        for (i, v, l) in rows {
            out.write_record([i.to_string(), v.to_string(), l.to_string()])?;
        }
        out.flush()?;
        Ok(())
    })
}

fn write_details(dir: &Path, d: &TrialDetails, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut put = |p: PathBuf| written.push(p);
    if let Some(s) = &d.splits {
        let p = dir.join("splits.csv");
        s.write_manifest(&p)?;
        put(p);
    }
    for (name, c) in &d.curricula {
        let p = dir.join(format!("curriculum_{name}.csv"));
        c.write_csv(&p)?;
        put(p);
    }
    for (name, bytes) in &d.checkpoints {
        let p = dir.join(format!("{name}.clpnet"));
        atomic_write(&p, |w| Ok(w.write_all(bytes)?))?;
        put(p);
    }
    for a in &d.attacks {
        let sub = dir.join(&a.target);
        std::fs::create_dir_all(&sub)?;
        let p = sub.join(format!("{}_verdicts.csv", a.attack));
        write_verdicts_csv(&p, &a.verdicts)?;
        put(p);
        let p = sub.join(format!("{}_roc.csv", a.attack));
        write_roc_csv(&p, &a.roc)?;
        put(p);
    }
    for (target, h) in &d.histograms {
        let sub = dir.join(target);
        std::fs::create_dir_all(&sub)?;
        let p = sub.join("loss_histogram.csv");
        write_histogram_csv(&p, h)?;
        put(p);
    }
    for (target, records) in &d.aia {
        let sub = dir.join(target);
        std::fs::create_dir_all(&sub)?;
        let p = sub.join("aia.csv");
        write_aia_csv(&p, records)?;
        put(p);
    }
    if !d.shapley.is_empty() {
        let p = dir.join("shapley.csv");
        write_shapley_csv(&p, &d.shapley)?;
        put(p);
    }
    Ok(())
}

fn write_trial_tables(dir: &Path, r: &TrialReport, written: &mut Vec<PathBuf>) -> Result<()> {
    for t in &r.targets {
        let sub = dir.join(&t.name);
        std::fs::create_dir_all(&sub)?;
        for a in &t.attacks {
            let p = sub.join(format!("{}_tpr.csv", a.name));
            write_tpr_csv(&p, &a.tpr_at_fpr)?;
            written.push(p);
            let p = sub.join(format!("{}_buckets.csv", a.name));
            write_bucket_csv(&p, &a.buckets)?;
            written.push(p);
        }
    }
    Ok(())
}

fn emit(output: &RunOutput, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let root = dir.join(&output.report.id);
    std::fs::create_dir_all(&root)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            let p = root.join("report.json");
            write_json(&p, &output.report)?;
            written.push(p);
        }
        ReportFormat::CsvBundle => {
            let p = root.join("summary.csv");
            write_summary_csv(&p, &output.report)?;
            written.push(p);
            for (t, outcome) in output.report.trials.iter().enumerate() {
                let tdir = root.join(format!("trial_{}", outcome.index));
                if let Some(r) = outcome.report() {
                    write_trial_tables(&tdir, r, &mut written)?;
                }
                if let Some(Some(d)) = output.details.get(t) {
                    write_details(&tdir, d, &mut written)?;
                }
            }
        }
    }
    Ok(written)
}

/// Write the report under `dir/{id}/`. Every file is written atomically.
pub fn emit_report(output: &RunOutput, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    emit(output, dir, format).map_err(|e| match e {
        tagged @ Error::Stage { .. } => tagged,
        other => Error::Stage {
            stage: Stage::Report,
            source: Box::new(other),
        },
    })
}

/// Render the summary as an aligned `metric  mean ± std (n)` table.
pub fn summary_table(report: &AuditReport) -> String {
    let width = report.summary.keys().map(String::len).max().unwrap_or(0);
    let mut s = format!(
        "{}: {} of {} trials completed\n",
        report.id,
        report.completed(),
        report.trials.len()
    );
    for t in &report.trials {
        if let TrialStatus::Failed { stage, message } = &t.result {
            let stage = stage.map_or("unknown".to_string(), |s| s.to_string());
            s.push_str(&format!("trial {} failed in {stage}: {message}\n", t.index));
        }
    }
    for (k, m) in &report.summary {
        s.push_str(&format!("{k:<width$}  {:.4} ± {:.4} (n={})\n", m.mean, m.std, m.n));
    }
    s
}
