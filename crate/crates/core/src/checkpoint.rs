//! Versioned JSON checkpoints: architecture, flat parameter arrays and the
//! training step.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::decoder::{Architecture, DecoderParams, Layer};
use crate::error::{ensure, Error, Result};
use crate::real::Real;

pub const FORMAT: &str = "mpnerf-decoder";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_in × fan_out`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub precision: String,
    pub step: u64,
    pub architecture: Architecture,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn from_params<T: Real>(params: &DecoderParams<T>, step: u64) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            precision: T::NAME.to_string(),
            step,
            architecture: params.architecture().clone(),
            layers: params
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    fan_in: l.weight.nrows(),
                    fan_out: l.weight.ncols(),
                    weight: l.weight.iter().map(|v| v.as_f64()).collect(),
                    bias: l.bias.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds parameters, checking every layer against the architecture.
    pub fn to_params<T: Real>(&self) -> Result<DecoderParams<T>> {
        ensure!(
            self.format == FORMAT,
            Validation,
            "not a decoder checkpoint (format `{}`)",
            self.format
        );
        ensure!(
            self.version == VERSION,
            Validation,
            "unsupported checkpoint version {}",
            self.version
        );
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, rec)| {
                let weight = Array2::from_shape_vec(
                    (rec.fan_in, rec.fan_out),
                    rec.weight.iter().map(|&v| T::lit(v)).collect(),
                )
                .map_err(|e| Error::Validation(format!("layer {k} weights: {e}")))?;
                ensure!(
                    rec.bias.len() == rec.fan_out,
                    Validation,
                    "layer {k}: bias has {} entries, expected {}",
                    rec.bias.len(),
                    rec.fan_out
                );
                let bias = Array1::from_iter(rec.bias.iter().map(|&v| T::lit(v)));
                Ok(Layer { weight, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        DecoderParams::from_layers(self.architecture.clone(), layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, "<checkpoint>", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::init_params;
    use crate::repr::FeatureMode;

    #[test]
    fn f32_parameters_round_trip_exactly() {
        let arch = Architecture::multiplane(4, FeatureMode::Generalization).with_size(12, 3, 6);
        let params = init_params::<f32>(&arch, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::from_params(&params, 42).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.precision, "f32");
        assert_eq!(loaded.to_params::<f32>().unwrap(), params);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let arch = Architecture::multiplane(2, FeatureMode::Standard).with_size(4, 1, 4);
        let params = init_params::<f64>(&arch, 1).unwrap();
        let mut ckpt = Checkpoint::from_params(&params, 0);
        ckpt.architecture.hidden_width = 5;
        assert!(matches!(ckpt.to_params::<f64>(), Err(Error::Validation(_))));

        let mut ckpt = Checkpoint::from_params(&params, 0);
        ckpt.layers[1].bias.pop();
        assert!(ckpt.to_params::<f64>().is_err());

        let mut ckpt = Checkpoint::from_params(&params, 0);
        ckpt.version = 99;
        assert!(ckpt.to_params::<f64>().is_err());
    }
}
