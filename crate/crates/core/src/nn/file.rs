//! JSON model container.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! saved model reloads bit-for-bit.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Architecture, AutoencoderModel, Dense, NnError, Normalizer};

pub const MODEL_FORMAT: &str = "zonetrust-autoencoder";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `(rows, cols)` weights.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub normalizer: Normalizer,
    pub layers: Vec<LayerRecord>,
}

impl From<&AutoencoderModel> for ModelFile {
    fn from(m: &AutoencoderModel) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            architecture: m.architecture.clone(),
            normalizer: m.normalizer.clone(),
            layers: m
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    biases: l.biases.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for AutoencoderModel {
    type Error = NnError;

    fn try_from(f: ModelFile) -> Result<Self, NnError> {
        if f.format != MODEL_FORMAT {
            return Err(NnError::Format(format!("unknown format {:?}", f.format)));
        }
        if f.version != MODEL_VERSION {
            return Err(NnError::Format(format!("unsupported version {}", f.version)));
        }
        f.architecture.validate()?;
        let sizes = &f.architecture.layer_sizes;
        if f.layers.len() != sizes.len() - 1 {
            return Err(NnError::Format(format!(
                "expected {} layers, found {}",
                sizes.len() - 1,
                f.layers.len()
            )));
        }
        let input = sizes[0];
        if f.normalizer.mean.len() != input || f.normalizer.std.len() != input {
            return Err(NnError::Format("normalizer width differs from input".into()));
        }
        if f.normalizer.std.iter().any(|s| !(*s > 0.0)) {
            return Err(NnError::Format("normalizer std must be positive".into()));
        }
        let mut layers = Vec::with_capacity(f.layers.len());
        for (i, rec) in f.layers.into_iter().enumerate() {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            if rec.rows != fan_out || rec.cols != fan_in || rec.biases.len() != fan_out {
                return Err(NnError::Format(format!("layer {i} shape mismatch")));
            }
            let weights = Array2::from_shape_vec((rec.rows, rec.cols), rec.weights)
                .map_err(|e| NnError::Format(format!("layer {i}: {e}")))?;
            layers.push(Dense {
                weights,
                biases: Array1::from(rec.biases),
            });
        }
        Ok(AutoencoderModel {
            architecture: f.architecture,
            layers,
            normalizer: f.normalizer,
        })
    }
}

impl AutoencoderModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        let f: ModelFile = serde_json::from_str(s).map_err(|e| NnError::Format(e.to_string()))?;
        f.try_into()
    }
}

pub fn save_model(model: &AutoencoderModel, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, model.to_json())
}

pub fn load_model(path: &Path) -> Result<AutoencoderModel, NnError> {
    let text = std::fs::read_to_string(path).map_err(|e| NnError::Format(format!("{}: {e}", path.display())))?;
    AutoencoderModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, Activation};
    use crate::rng::SimRng;

    #[test]
    fn save_load_is_bit_exact() {
        let arch = Architecture::new(vec![7, 3, 7], Activation::Tanh).unwrap();
        let mut m = init_model(&arch, &mut SimRng::new(4)).unwrap();
        m.normalizer.mean = (0..7).map(|i| 0.1 * i as f64 + 1.0 / 3.0).collect();
        m.normalizer.std = (0..7).map(|i| std::f64::consts::PI / (i + 1) as f64).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let x = [1.5, -2.0, 0.25, 9.0, 1e-3, -7.5, 3.3];
        assert_eq!(back.score(&x).unwrap().to_bits(), m.score(&x).unwrap().to_bits());
    }

    #[test]
    fn rejects_bad_containers() {
        let arch = Architecture::new(vec![4, 2, 4], Activation::Tanh).unwrap();
        let m = init_model(&arch, &mut SimRng::new(4)).unwrap();
        let mut f = ModelFile::from(&m);
        f.version = 99;
        assert!(AutoencoderModel::try_from(f).is_err());

        let mut f = ModelFile::from(&m);
        f.layers[1].biases.pop();
        assert!(AutoencoderModel::try_from(f).is_err());

        assert!(AutoencoderModel::from_json("{not json").is_err());
    }
}
