use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{gather_rows, BatchStats, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Update rule used by the training loops.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    /// Per-sample clipping to L2 norm `clip`, Gaussian noise with multiplier `noise`.
    DpSgd { clip: f64, noise: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl TrainConfig {
    /// Target-model defaults: 200 epochs, batch 128, learning rate 0.1, plain SGD.
    pub fn target(seed: u64) -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            learning_rate: 0.1,
            optimizer: Optimizer::Sgd,
            seed,
        }
    }

    /// Attack-model defaults: 100 epochs, learning rate 0.01.
    pub fn attack(seed: u64) -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.01,
            optimizer: Optimizer::Sgd,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_optimizer(&self, optimizer: Optimizer) -> Self {
        Self {
            optimizer,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if let Optimizer::DpSgd { clip, noise } = self.optimizer {
            if !(clip > 0.0) || !clip.is_finite() {
                return Err(Error::config(format!("DP clip bound must be positive, got {clip}")));
            }
            if !(noise >= 0.0) || !noise.is_finite() {
                return Err(Error::config(format!("DP noise multiplier must be non-negative, got {noise}")));
            }
        }
        Ok(())
    }
}

/// Per-epoch training curve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Mean mini-batch loss over the epoch.
    pub loss: Vec<f64>,
    /// Fraction of samples classified correctly during the epoch's forward passes.
    pub accuracy: Vec<f64>,
}

impl History {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }
}

/// Stepping state that persists across epochs: configuration and the seeded RNG.
pub struct Trainer {
    config: TrainConfig,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { config, rng })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One update on the rows `batch` of `x`.
    pub(crate) fn step<T: Scalar>(
        &mut self,
        net: &mut Network<T>,
        x: ArrayView2<T>,
        labels: &[usize],
        offsets: Option<ArrayView2<T>>,
        batch: &[usize],
    ) -> Result<BatchStats> {
        let bx = gather_rows(x, batch);
        let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        let (stats, grads) = match self.config.optimizer {
            Optimizer::Sgd => {
                let boff: Option<Array2<T>> = offsets.map(|o| gather_rows(o, batch));
                net.loss_and_grad_offset(bx.view(), &by, boff.as_ref().map(|o| o.view()))?
            }
            Optimizer::DpSgd { clip, noise } => {
                if offsets.is_some() {
                    return Err(Error::Unsupported("logit offsets with DP-SGD".into()));
                }
                net.dp_gradient(bx.view(), &by, clip, noise, &mut self.rng)?
            }
        };
        net.apply(&grads, self.config.learning_rate)?;
        Ok(stats)
    }

    /// Run the given batches in order as one epoch; returns (mean loss, accuracy).
    pub(crate) fn epoch<T: Scalar>(
        &mut self,
        net: &mut Network<T>,
        x: ArrayView2<T>,
        labels: &[usize],
        offsets: Option<ArrayView2<T>>,
        batches: &[Vec<usize>],
    ) -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut correct = 0;
        let mut seen = 0;
        for batch in batches.iter().filter(|b| !b.is_empty()) {
            let s = self.step(net, x, labels, offsets, batch)?;
            loss += s.loss * s.size as f64;
            correct += s.correct;
            seen += s.size;
        }
        if seen == 0 {
            return Err(Error::input("epoch contained no samples"));
        }
        if !net.is_finite() {
            return Err(Error::input("training diverged: non-finite parameters"));
        }
        Ok((loss / seen as f64, correct as f64 / seen as f64))
    }

    /// Fresh random order each epoch, split into consecutive batches (last partial batch kept).
    pub(crate) fn shuffled_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.config.batch_size).map(|c| c.to_vec()).collect()
    }
}

pub(crate) fn check_split<T: Scalar>(x: ArrayView2<T>, labels: &[usize]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::input("training split is empty"));
    }
    if x.nrows() != labels.len() {
        return Err(Error::input(format!("{} rows but {} labels", x.nrows(), labels.len())));
    }
    Ok(())
}

/// Normal training: every epoch reshuffles the whole split.
pub fn train<T: Scalar>(
    net: Network<T>,
    x: ArrayView2<T>,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(Network<T>, History)> {
    train_with_offsets(net, x, labels, None, config)
}

fn train_with_offsets<T: Scalar>(
    mut net: Network<T>,
    x: ArrayView2<T>,
    labels: &[usize],
    offsets: Option<ArrayView2<T>>,
    config: &TrainConfig,
) -> Result<(Network<T>, History)> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut history = History::default();
    if config.epochs == 0 {
        return Ok((net, history));
    }
    check_split(x, labels)?;
    for _ in 0..config.epochs {
        let batches = trainer.shuffled_batches(x.nrows());
        let (loss, acc) = trainer.epoch(&mut net, x, labels, offsets, &batches)?;
        history.loss.push(loss);
        history.accuracy.push(acc);
    }
    Ok((net, history))
}

/// Train with a caller-supplied sample order per epoch, visited sequentially in batches.
pub fn train_in_order<T: Scalar>(
    mut net: Network<T>,
    x: ArrayView2<T>,
    labels: &[usize],
    config: &TrainConfig,
    mut order_for_epoch: impl FnMut(usize, &mut ChaCha8Rng) -> Vec<usize>,
) -> Result<(Network<T>, History)> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut history = History::default();
    if config.epochs == 0 {
        return Ok((net, history));
    }
    check_split(x, labels)?;
    for epoch in 0..config.epochs {
        let order = order_for_epoch(epoch, trainer.rng());
        if let Some(&bad) = order.iter().find(|&&i| i >= x.nrows()) {
            return Err(Error::input(format!("order refers to row {bad} of {}", x.nrows())));
        }
        let batches: Vec<Vec<usize>> = order.chunks(config.batch_size).map(|c| c.to_vec()).collect();
        let (loss, acc) = trainer.epoch(&mut net, x, labels, None, &batches)?;
        history.loss.push(loss);
        history.accuracy.push(acc);
    }
    Ok((net, history))
}
