//! 3-5-3 feedforward network that learns the rule base.
//!
//! Sensor readings are min-max scaled to `[0, 1]³`, pass through one hidden
//! layer of five logistic units and a softmax output over the three duty
//! classes in `(Full, Half, Off)` order.

mod dataset;
mod io;
mod network;
mod train;

pub use dataset::{generate_dataset, Dataset, Sample};
pub use io::{WeightsDocument, WEIGHTS_FORMAT_VERSION};
pub use network::{
    forward, normalize, predict_duty, Model, NetworkWeights, NormalizationRanges, Range, HIDDEN,
    INPUTS, OUTPUTS,
};
pub use train::{
    accuracy, agreement_on_grid, loss_and_gradients, train, Optimizer, TrainingConfig,
    TrainingReport,
};

use thiserror::Error;

use crate::rulebase::{PumpDuty, ReadingError};

/// Output classes in network order.
pub const CLASSES: [PumpDuty; OUTPUTS] = [PumpDuty::Full, PumpDuty::Half, PumpDuty::Off];

pub fn class_index(duty: PumpDuty) -> usize {
    match duty {
        PumpDuty::Full => 0,
        PumpDuty::Half => 1,
        PumpDuty::Off => 2,
    }
}

pub fn one_hot(duty: PumpDuty) -> [f64; OUTPUTS] {
    let mut v = [0.0; OUTPUTS];
    v[class_index(duty)] = 1.0;
    v
}

#[derive(Debug, Error)]
pub enum MlpError {
    #[error(transparent)]
    Reading(#[from] ReadingError),
    #[error("network input contains a non-finite value")]
    NonFiniteInput,
    #[error("network weights contain a non-finite value")]
    NonFiniteWeights,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("grid needs at least 2 points per axis, got {0}")]
    DegenerateGrid(usize),
    #[error("invalid normalization range for {name}: min {min} must be below max {max}")]
    InvalidRange {
        name: &'static str,
        min: f64,
        max: f64,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("weights document: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
