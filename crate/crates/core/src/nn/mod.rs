//! Dense networks: forward pass, backpropagation, SGD / DP-SGD and training loops.

pub mod checkpoint;
mod network;
mod train;

pub use network::{Gradients, Network, PosteriorVector, LOG_FLOOR};
pub use train::{train, train_in_order, History, Optimizer, TrainConfig, Trainer};

pub(crate) use network::{argmax, gather_rows};
pub(crate) use train::{check_split};
