//! Difficulty scoring, curriculum construction, pacing and curriculum training.

use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{check_split, train, History, Network, TrainConfig, Trainer};
use crate::report::atomic_write;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    /// Easy to hard, scored by a model trained normally on the same data.
    Bootstrap,
    /// Easy to hard, scored by an independently trained model.
    Transfer,
    /// Seeded random order, fixed for every epoch.
    Baseline,
    /// Hard to easy: the exact reverse of the bootstrap order.
    Anti,
}

/// Fixed sample order with per-sample difficulty scores and 1-based ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct Curriculum {
    scores: Vec<f64>,
    order: Vec<usize>,
    ranks: Vec<usize>,
    mode: CurriculumMode,
}

impl Curriculum {
    fn from_order(scores: Vec<f64>, order: Vec<usize>, mode: CurriculumMode) -> Self {
        let mut ranks = vec![0; order.len()];
        for (pos, &i) in order.iter().enumerate() {
            ranks[i] = pos + 1;
        }
        Self {
            scores,
            order,
            ranks,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Sample indices in presentation order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn mode(&self) -> CurriculumMode {
        self.mode
    }

    /// 1-based position of `sample` in the order; the first sample has rank 1.
    pub fn rank(&self, sample: usize) -> Result<usize> {
        self.ranks
            .get(sample)
            .copied()
            .ok_or_else(|| Error::input(format!("sample {sample} is not in a curriculum of {}", self.len())))
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// `sample_index,score,rank` rows in sample-index order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["sample_index", "score", "rank"])?;
            for (i, (s, r)) in self.scores.iter().zip(&self.ranks).enumerate() {
                out.write_record([i.to_string(), s.to_string(), r.to_string()])?;
            }
            out.flush()?;
            Ok(())
        })
    }
}

/// Indices sorted by ascending score, ties broken by index.
fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

pub fn build_curriculum(scores: &[f64], mode: CurriculumMode, seed: u64) -> Result<Curriculum> {
    if scores.is_empty() {
        return Err(Error::input("cannot build a curriculum over zero samples"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("difficulty scores contain NaN"));
    }
    let order = match mode {
        CurriculumMode::Bootstrap | CurriculumMode::Transfer => ascending_order(scores),
        CurriculumMode::Anti => {
            let mut o = ascending_order(scores);
            o.reverse();
            o
        }
        CurriculumMode::Baseline => {
            let mut o: Vec<usize> = (0..scores.len()).collect();
            o.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            o
        }
    };
    Ok(Curriculum::from_order(scores.to_vec(), order, mode))
}

/// How difficulty scores are produced.
pub enum DifficultyMeasurer<'a, T> {
    /// Train a fresh model normally on the split itself (hidden widths, config).
    Bootstrap { hidden: Vec<usize>, config: TrainConfig },
    /// Use an already-trained scorer.
    Transfer(&'a Network<T>),
}

/// Per-sample cross-entropy of `model`; higher means more difficult.
pub fn model_scores<T: Scalar>(model: &Network<T>, data: &Dataset<T>) -> Result<Vec<f64>> {
    if model.input_dim() != data.dim() {
        return Err(Error::input(format!(
            "scorer expects {} features, dataset has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    Ok(model.losses(data.x(), &data.labels)?.into_iter().map(Scalar::widen).collect())
}

/// Layer dims `[input, hidden..., classes]` for a classifier over `data`.
pub fn classifier_dims<T>(data: &Dataset<T>, hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![data.features.ncols()];
    dims.extend_from_slice(hidden);
    dims.push(data.class_count);
    dims
}

/// Train a classifier normally with weights seeded from `config.seed`.
pub fn train_classifier<T: Scalar>(
    data: &Dataset<T>,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<(Network<T>, History)> {
    let net = Network::random(&classifier_dims(data, hidden), &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    train(net, data.x(), &data.labels, config)
}

pub fn score_difficulty<T: Scalar>(data: &Dataset<T>, measurer: &DifficultyMeasurer<'_, T>) -> Result<Vec<f64>> {
    match measurer {
        DifficultyMeasurer::Bootstrap { hidden, config } => {
            let (model, _) = train_classifier(data, hidden, config)?;
            model_scores(&model, data)
        }
        DifficultyMeasurer::Transfer(model) => model_scores(model, data),
    }
}

/// Exponential pacing: the exposed prefix grows by `growth` every `step_length` iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacingSchedule {
    pub n: usize,
    pub start_fraction: f64,
    pub growth: f64,
    pub step_length: usize,
    pub total_iterations: usize,
}

impl PacingSchedule {
    pub const DEFAULT_START: f64 = 0.04;
    pub const DEFAULT_GROWTH: f64 = 1.9;

    /// Default parameters with `step_length = max(1, iterations / 10)`.
    pub fn with_defaults(n: usize, iterations: usize) -> Self {
        Self {
            n,
            start_fraction: Self::DEFAULT_START,
            growth: Self::DEFAULT_GROWTH,
            step_length: (iterations / 10).max(1),
            total_iterations: iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.total_iterations == 0 || self.step_length == 0 {
            return Err(Error::config("pacing n, step_length and total_iterations must be positive"));
        }
        if !(self.start_fraction > 0.0 && self.start_fraction <= 1.0) {
            return Err(Error::config(format!("start_fraction must lie in (0, 1], got {}", self.start_fraction)));
        }
        if !(self.growth > 1.0) || !self.growth.is_finite() {
            return Err(Error::config(format!("growth must exceed 1, got {}", self.growth)));
        }
        Ok(())
    }

    /// Size of the exposed prefix at iteration `i` (1-based).
    pub fn size(&self, i: usize) -> Result<usize> {
        if i == 0 || i > self.total_iterations {
            return Err(Error::input(format!("iteration {i} outside 1..={}", self.total_iterations)));
        }
        let steps = ((i - 1) / self.step_length) as i32;
        let raw = self.n as f64 * self.start_fraction * self.growth.powi(steps);
        if raw >= self.n as f64 {
            return Ok(self.n);
        }
        // guard ceil() against representation error such as 4.000000000000001
        let size = (raw - 1e-9).ceil().max(1.0) as usize;
        Ok(size.min(self.n))
    }
}

/// Batch selection within the exposed prefix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// Draw each batch uniformly without replacement from the prefix.
    #[default]
    Uniform,
    /// Skip sampling: sweep the prefix in curriculum order, wrapping around.
    Sequential,
}

/// Iterations per epoch for `n` samples at `batch_size`.
pub fn iterations_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.max(1))
}

/// The batches of one curriculum epoch. The curriculum order itself never changes.
pub fn epoch_batches(
    curriculum: &Curriculum,
    schedule: &PacingSchedule,
    sampling: BatchSampling,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let order = curriculum.order();
    let mut batches = Vec::with_capacity(schedule.total_iterations);
    for i in 1..=schedule.total_iterations {
        let size = schedule.size(i)?;
        let prefix = &order[..size];
        let take = batch_size.min(size);
        let batch = match sampling {
            BatchSampling::Uniform => rand::seq::index::sample(rng, size, take).into_iter().map(|p| prefix[p]).collect(),
            BatchSampling::Sequential => {
                let start = (i - 1) * batch_size;
                (start..start + take).map(|p| prefix[p % size]).collect()
            }
        };
        batches.push(batch);
    }
    Ok(batches)
}

/// Curriculum training: each epoch walks iterations 1..=M, drawing batches from the growing
/// prefix of the same fixed order.
pub fn curriculum_train<T: Scalar>(
    mut net: Network<T>,
    x: ArrayView2<T>,
    labels: &[usize],
    curriculum: &Curriculum,
    schedule: &PacingSchedule,
    config: &TrainConfig,
    sampling: BatchSampling,
) -> Result<(Network<T>, History)> {
    schedule.validate()?;
    if curriculum.len() != x.nrows() || schedule.n != x.nrows() {
        return Err(Error::config(format!(
            "curriculum covers {} samples and schedule {} samples, split has {}",
            curriculum.len(),
            schedule.n,
            x.nrows()
        )));
    }
    let mut trainer = Trainer::new(config.clone())?;
    let mut history = History::default();
    if config.epochs == 0 {
        return Ok((net, history));
    }
    check_split(x, labels)?;
    for _ in 0..config.epochs {
        let batches = epoch_batches(curriculum, schedule, sampling, config.batch_size, trainer.rng())?;
        let (loss, acc) = trainer.epoch(&mut net, x, labels, None, &batches)?;
        history.loss.push(loss);
        history.accuracy.push(acc);
    }
    Ok((net, history))
}
