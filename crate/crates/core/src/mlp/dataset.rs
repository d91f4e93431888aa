use super::network::{normalize, NormalizationRanges, INPUTS, OUTPUTS};
use super::{one_hot, MlpError};
use crate::rulebase::{classify, PumpDuty, SensorReading};

/// One labeled training row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Raw sensor values the row was generated from.
    pub raw: [f64; INPUTS],
    /// Scaled network input, inside `[0, 1]³`.
    pub input: [f64; INPUTS],
    pub label: PumpDuty,
}

impl Sample {
    pub fn target(&self) -> [f64; OUTPUTS] {
        one_hot(self.label)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row counts in `(Full, Half, Off)` order.
    pub fn class_counts(&self) -> [usize; OUTPUTS] {
        let mut counts = [0; OUTPUTS];
        for row in &self.rows {
            counts[super::class_index(row.label)] += 1;
        }
        counts
    }
}

/// Uniform `n × n × n` grid over the normalization ranges, labeled by the rule
/// base. Grid coordinates include both range endpoints.
pub fn generate_dataset(
    points_per_axis: usize,
    ranges: &NormalizationRanges,
) -> Result<Dataset, MlpError> {
    if points_per_axis < 2 {
        return Err(MlpError::DegenerateGrid(points_per_axis));
    }
    ranges.validate()?;
    let axes = ranges.axes();
    let coord = |axis: usize, i: usize| {
        let r = axes[axis];
        r.min + (r.max - r.min) * i as f64 / (points_per_axis - 1) as f64
    };

    let mut rows = Vec::with_capacity(points_per_axis.pow(3));
    for i in 0..points_per_axis {
        for j in 0..points_per_axis {
            for k in 0..points_per_axis {
                let raw = [coord(0, i), coord(1, j), coord(2, k)];
                let reading = SensorReading::new(raw[0], raw[1], raw[2], 0)?;
                rows.push(Sample {
                    raw,
                    input: normalize(&reading, ranges)?,
                    label: classify(&reading)?,
                });
            }
        }
    }
    Ok(Dataset { rows })
}
