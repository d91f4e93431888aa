use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{generate_dataset, Dataset, Sample};
use super::network::{
    activate, argmax_duty, log_sum_exp, NetworkWeights, NormalizationRanges, HIDDEN,
};
use super::{class_index, MlpError};

/// Range of the uniform initial weight draw.
const INIT_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain minibatch gradient descent.
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once training-set argmax accuracy reaches this fraction.
    pub target_accuracy: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 2000,
            batch_size: 32,
            seed: 0,
            target_accuracy: 0.99,
            optimizer: Optimizer::adam(),
        }
    }
}

impl TrainingConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |msg: &str| Err(MlpError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return bad("target_accuracy must lie in (0, 1]");
        }
        if let Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.optimizer
        {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub weights: NetworkWeights,
    /// Mean cross-entropy over the whole training set before any update.
    pub initial_loss: f64,
    /// Mean cross-entropy over the whole training set after each epoch.
    pub loss_history: Vec<f64>,
    /// Training-set argmax accuracy after the last epoch.
    pub train_accuracy: f64,
    pub epochs_run: usize,
    pub reached_target: bool,
}

impl TrainingReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_history
            .last()
            .copied()
            .unwrap_or(self.initial_loss)
    }
}

/// Mean cross-entropy of `batch` and its exact gradient.
pub fn loss_and_gradients(
    weights: &NetworkWeights,
    batch: &[Sample],
) -> Result<(f64, NetworkWeights), MlpError> {
    if batch.is_empty() {
        return Err(MlpError::EmptyBatch);
    }
    weights.ensure_finite()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = NetworkWeights::zeros();
    let mut loss = 0.0;

    for sample in batch {
        if !sample.input.iter().all(|v| v.is_finite()) {
            return Err(MlpError::NonFiniteInput);
        }
        let act = activate(weights, &sample.input);
        let label = class_index(sample.label);
        loss += log_sum_exp(&act.logits) - act.logits[label];

        let mut d_logits = act.probs;
        d_logits[label] -= 1.0;
        for d in &mut d_logits {
            *d *= scale;
        }

        let mut d_hidden = [0.0; HIDDEN];
        for (o, &d) in d_logits.iter().enumerate() {
            grad.b_out[o] += d;
            for (h, dh) in d_hidden.iter_mut().enumerate() {
                grad.w_out[o][h] += d * act.hidden[h];
                *dh += d * weights.w_out[o][h];
            }
        }
        for (h, dh) in d_hidden.iter().enumerate() {
            let a = act.hidden[h];
            let dz = dh * a * (1.0 - a);
            grad.b_hidden[h] += dz;
            for (g, x) in grad.w_hidden[h].iter_mut().zip(&sample.input) {
                *g += dz * x;
            }
        }
    }
    Ok((loss * scale, grad))
}

/// Fraction of rows whose predicted duty matches the label.
pub fn accuracy(weights: &NetworkWeights, dataset: &Dataset) -> f64 {
    evaluate(weights, &dataset.rows).1
}

/// Agreement between the network and the rule base on an `n³` grid.
pub fn agreement_on_grid(
    weights: &NetworkWeights,
    ranges: &NormalizationRanges,
    points_per_axis: usize,
) -> Result<f64, MlpError> {
    weights.ensure_finite()?;
    let grid = generate_dataset(points_per_axis, ranges)?;
    Ok(accuracy(weights, &grid))
}

fn evaluate(weights: &NetworkWeights, rows: &[Sample]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in rows {
        let act = activate(weights, &s.input);
        loss += log_sum_exp(&act.logits) - act.logits[class_index(s.label)];
        if argmax_duty(&act.probs) == s.label {
            correct += 1;
        }
    }
    let n = rows.len() as f64;
    (loss / n, correct as f64 / n)
}

struct AdamState {
    m: NetworkWeights,
    v: NetworkWeights,
    steps: i32,
}

/// Seeded minibatch training. Identical inputs give bit-identical weights.
pub fn train(dataset: &Dataset, config: &TrainingConfig) -> Result<TrainingReport, MlpError> {
    if dataset.is_empty() {
        return Err(MlpError::EmptyBatch);
    }
    config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = NetworkWeights::random(&mut rng, INIT_SCALE);
    let mut adam = AdamState {
        m: NetworkWeights::zeros(),
        v: NetworkWeights::zeros(),
        steps: 0,
    };

    let (initial_loss, mut train_accuracy) = evaluate(&weights, &dataset.rows);
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut reached_target = train_accuracy >= config.target_accuracy;

    while !reached_target && loss_history.len() < config.epochs {
        let epoch = loss_history.len();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset.rows[i]));
            let (loss, grad) = loss_and_gradients(&weights, &batch)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(MlpError::Diverged { epoch, loss });
            }
            apply_update(&mut weights, &grad, config, &mut adam);
            if !weights.is_finite() {
                return Err(MlpError::Diverged { epoch, loss });
            }
        }

        let (loss, acc) = evaluate(&weights, &dataset.rows);
        if !loss.is_finite() || !weights.is_finite() {
            return Err(MlpError::Diverged { epoch, loss });
        }
        loss_history.push(loss);
        train_accuracy = acc;
        reached_target = acc >= config.target_accuracy;
    }

    Ok(TrainingReport {
        weights,
        initial_loss,
        epochs_run: loss_history.len(),
        loss_history,
        train_accuracy,
        reached_target,
    })
}

fn apply_update(
    weights: &mut NetworkWeights,
    grad: &NetworkWeights,
    config: &TrainingConfig,
    adam: &mut AdamState,
) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (w, g) in weights.params_mut().zip(grad.params()) {
                *w -= lr * g;
            }
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            adam.steps += 1;
            let c1 = 1.0 - beta1.powi(adam.steps);
            let c2 = 1.0 - beta2.powi(adam.steps);
            let moments = adam.m.params_mut().zip(adam.v.params_mut());
            for ((w, g), (m, v)) in weights.params_mut().zip(grad.params()).zip(moments) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            }
        }
    }
}
