use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MlpError, CLASSES};
use crate::rulebase::{PumpDuty, SensorReading};

pub const INPUTS: usize = 3;
pub const HIDDEN: usize = 5;
pub const OUTPUTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    /// Linear map of `[min, max]` onto `[0, 1]`, clamped.
    pub fn scale(&self, value: f64) -> f64 {
        ((value - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    pub fn unscale(&self, unit: f64) -> f64 {
        self.min + unit * (self.max - self.min)
    }
}

/// Per-input scaling ranges in (temperature, humidity, soil moisture) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRanges {
    pub temperature_c: Range,
    pub humidity_pct: Range,
    pub soil_moisture_pct: Range,
}

impl Default for NormalizationRanges {
    fn default() -> Self {
        Self {
            temperature_c: Range::new(0.0, 50.0),
            humidity_pct: Range::new(0.0, 100.0),
            soil_moisture_pct: Range::new(0.0, 100.0),
        }
    }
}

impl NormalizationRanges {
    pub fn validate(&self) -> Result<(), MlpError> {
        for (name, r) in self.named() {
            if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) {
                return Err(MlpError::InvalidRange {
                    name,
                    min: r.min,
                    max: r.max,
                });
            }
        }
        Ok(())
    }

    pub fn axes(&self) -> [Range; INPUTS] {
        [
            self.temperature_c,
            self.humidity_pct,
            self.soil_moisture_pct,
        ]
    }

    fn named(&self) -> [(&'static str, Range); INPUTS] {
        [
            ("temperature", self.temperature_c),
            ("humidity", self.humidity_pct),
            ("soil moisture", self.soil_moisture_pct),
        ]
    }
}

pub fn normalize(
    reading: &SensorReading,
    ranges: &NormalizationRanges,
) -> Result<[f64; INPUTS], MlpError> {
    reading.validate()?;
    ranges.validate()?;
    Ok([
        ranges.temperature_c.scale(reading.temperature_c),
        ranges.humidity_pct.scale(reading.humidity_pct),
        ranges.soil_moisture_pct.scale(reading.soil_moisture_pct),
    ])
}

/// All trainable parameters. Matrices are indexed `[to][from]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub w_hidden: [[f64; INPUTS]; HIDDEN],
    pub b_hidden: [f64; HIDDEN],
    pub w_out: [[f64; HIDDEN]; OUTPUTS],
    pub b_out: [f64; OUTPUTS],
}

impl Default for NetworkWeights {
    fn default() -> Self {
        Self::zeros()
    }
}

impl NetworkWeights {
    pub const PARAM_COUNT: usize = HIDDEN * INPUTS + HIDDEN + OUTPUTS * HIDDEN + OUTPUTS;

    pub fn zeros() -> Self {
        Self {
            w_hidden: [[0.0; INPUTS]; HIDDEN],
            b_hidden: [0.0; HIDDEN],
            w_out: [[0.0; HIDDEN]; OUTPUTS],
            b_out: [0.0; OUTPUTS],
        }
    }

    /// Every parameter drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Self {
        let mut w = Self::zeros();
        for p in w.params_mut() {
            *p = rng.random_range(-scale..=scale);
        }
        w
    }

    /// Parameters in a fixed order: `w_hidden` row-major, `b_hidden`, `w_out`
    /// row-major, `b_out`.
    pub fn params(&self) -> impl Iterator<Item = &f64> + '_ {
        self.w_hidden
            .iter()
            .flatten()
            .chain(self.b_hidden.iter())
            .chain(self.w_out.iter().flatten())
            .chain(self.b_out.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w_hidden
            .iter_mut()
            .flatten()
            .chain(self.b_hidden.iter_mut())
            .chain(self.w_out.iter_mut().flatten())
            .chain(self.b_out.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub(crate) fn ensure_finite(&self) -> Result<(), MlpError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(MlpError::NonFiniteWeights)
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Hidden activations and output probabilities for one input.
pub(crate) struct Activations {
    pub hidden: [f64; HIDDEN],
    pub logits: [f64; OUTPUTS],
    pub probs: [f64; OUTPUTS],
}

pub(crate) fn activate(w: &NetworkWeights, x: &[f64; INPUTS]) -> Activations {
    let mut hidden = [0.0; HIDDEN];
    for (h, (row, b)) in hidden.iter_mut().zip(w.w_hidden.iter().zip(&w.b_hidden)) {
        let z = row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
        *h = sigmoid(z);
    }
    let mut logits = [0.0; OUTPUTS];
    for (o, (row, b)) in logits.iter_mut().zip(w.w_out.iter().zip(&w.b_out)) {
        *o = row.iter().zip(&hidden).map(|(wi, hi)| wi * hi).sum::<f64>() + b;
    }
    let probs = softmax(&logits);
    Activations {
        hidden,
        logits,
        probs,
    }
}

fn softmax(logits: &[f64; OUTPUTS]) -> [f64; OUTPUTS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|z| (z - max).exp());
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub(crate) fn log_sum_exp(logits: &[f64; OUTPUTS]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Class probabilities in `(Full, Half, Off)` order.
pub fn forward(weights: &NetworkWeights, x: &[f64; INPUTS]) -> Result<[f64; OUTPUTS], MlpError> {
    weights.ensure_finite()?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(MlpError::NonFiniteInput);
    }
    Ok(activate(weights, x).probs)
}

/// Most probable class; exact ties go to the lower duty.
pub(crate) fn argmax_duty(probs: &[f64; OUTPUTS]) -> PumpDuty {
    let mut best = CLASSES[OUTPUTS - 1];
    let mut best_p = probs[OUTPUTS - 1];
    for i in (0..OUTPUTS - 1).rev() {
        if probs[i] > best_p {
            best = CLASSES[i];
            best_p = probs[i];
        }
    }
    best
}

pub fn predict_duty(
    weights: &NetworkWeights,
    reading: &SensorReading,
    ranges: &NormalizationRanges,
) -> Result<PumpDuty, MlpError> {
    let x = normalize(reading, ranges)?;
    Ok(argmax_duty(&forward(weights, &x)?))
}

/// Trained weights bundled with the scaling they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub weights: NetworkWeights,
    pub ranges: NormalizationRanges,
}

impl Model {
    pub fn new(weights: NetworkWeights, ranges: NormalizationRanges) -> Result<Self, MlpError> {
        weights.ensure_finite()?;
        ranges.validate()?;
        Ok(Self { weights, ranges })
    }

    pub fn predict(&self, reading: &SensorReading) -> Result<PumpDuty, MlpError> {
        predict_duty(&self.weights, reading, &self.ranges)
    }
}
