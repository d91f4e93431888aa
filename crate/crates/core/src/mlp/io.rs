use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Model, NetworkWeights, NormalizationRanges, HIDDEN, INPUTS, OUTPUTS};
use super::MlpError;

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

/// On-disk form of a trained network. Matrices are stored row-major with
/// their dimensions alongside so a mismatched file is refused at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsDocument {
    pub version: u32,
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    pub normalization: NormalizationRanges,
    pub seed: u64,
}

impl WeightsDocument {
    pub fn new(weights: &NetworkWeights, normalization: NormalizationRanges, seed: u64) -> Self {
        Self {
            version: WEIGHTS_FORMAT_VERSION,
            inputs: INPUTS,
            hidden: HIDDEN,
            outputs: OUTPUTS,
            w_hidden: weights.w_hidden.iter().flatten().copied().collect(),
            b_hidden: weights.b_hidden.to_vec(),
            w_out: weights.w_out.iter().flatten().copied().collect(),
            b_out: weights.b_out.to_vec(),
            normalization,
            seed,
        }
    }

    pub fn weights(&self) -> Result<NetworkWeights, MlpError> {
        if self.version != WEIGHTS_FORMAT_VERSION {
            return Err(MlpError::Format(format!(
                "unsupported version {} (expected {WEIGHTS_FORMAT_VERSION})",
                self.version
            )));
        }
        if (self.inputs, self.hidden, self.outputs) != (INPUTS, HIDDEN, OUTPUTS) {
            return Err(MlpError::Format(format!(
                "topology {}-{}-{} does not match {INPUTS}-{HIDDEN}-{OUTPUTS}",
                self.inputs, self.hidden, self.outputs
            )));
        }
        let mut w = NetworkWeights::zeros();
        fill_rows(&mut w.w_hidden, &self.w_hidden, "w_hidden")?;
        fill(&mut w.b_hidden, &self.b_hidden, "b_hidden")?;
        fill_rows(&mut w.w_out, &self.w_out, "w_out")?;
        fill(&mut w.b_out, &self.b_out, "b_out")?;
        w.ensure_finite()?;
        self.normalization.validate()?;
        Ok(w)
    }

    pub fn model(&self) -> Result<Model, MlpError> {
        Model::new(self.weights()?, self.normalization)
    }

    pub fn to_json(&self) -> Result<String, MlpError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, MlpError> {
        let doc: Self = serde_json::from_str(text)?;
        doc.weights()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), std::io::Error> {
        let text = self
            .to_json()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        fs::write(path, text + "\n")
    }

    pub fn load(path: &Path) -> Result<Self, MlpError> {
        let text = fs::read_to_string(path)
            .map_err(|e| MlpError::Format(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn fill(dst: &mut [f64], src: &[f64], name: &str) -> Result<(), MlpError> {
    if dst.len() != src.len() {
        return Err(MlpError::Format(format!(
            "{name} has {} entries, expected {}",
            src.len(),
            dst.len()
        )));
    }
    dst.copy_from_slice(src);
    Ok(())
}

fn fill_rows<const N: usize>(
    dst: &mut [[f64; N]],
    src: &[f64],
    name: &str,
) -> Result<(), MlpError> {
    if src.len() != dst.len() * N {
        return Err(MlpError::Format(format!(
            "{name} has {} entries, expected {}",
            src.len(),
            dst.len() * N
        )));
    }
    for (row, chunk) in dst.iter_mut().zip(src.chunks_exact(N)) {
        row.copy_from_slice(chunk);
    }
    Ok(())
}
