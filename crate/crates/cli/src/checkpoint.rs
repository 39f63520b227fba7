use std::path::Path;

use onsager::nets::OdeNet;
use onsager::reduce::{Autoencoder, PcaModel, ReduceError, Reducer};
use onsager::train::{EpochRecord, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Learned map between data and model coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReducerState {
    Pca(PcaModel),
    Autoencoder(Autoencoder),
}

impl ReducerState {
    pub fn encode(&self, u: &[f64]) -> std::result::Result<Vec<f64>, ReduceError> {
        match self {
            ReducerState::Pca(p) => p.encode(u),
            ReducerState::Autoencoder(a) => a.encode(u),
        }
    }
}

/// Deterministic part of a training run (no wall-clock figures).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSummary {
    pub history: Vec<EpochRecord>,
    pub mse_train: Option<f64>,
    pub mse_test: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: OdeNet,
    pub reducer: Option<ReducerState>,
    pub train: TrainConfig,
    /// SHA-256 of the training CSV.
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub summary: TrainingSummary,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| CliError::input(format!("serialising checkpoint: {e}")))
    }

    pub fn from_json(text: &str, source: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::json(source, e))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(CliError::input(format!(
                    "{}: checkpoint format version {v} is not supported (expected {FORMAT_VERSION})",
                    source.display()
                )))
            }
            None => return Err(CliError::input(format!("{}: missing format_version", source.display()))),
        }
        serde_json::from_str(text).map_err(|e| CliError::json(source, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use onsager::nets::{OnsagerConfig, OnsagerNet};
    use onsager::reduce::AutoencoderConfig;
    use onsager::tensor::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits(model: &OdeNet) -> Vec<u64> {
        model
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|x| x.to_bits()))
            .collect()
    }

    fn sample(seed: u64) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = OnsagerConfig::small_unforced(3);
        cfg.forced = true;
        cfg.hidden_layers = 2;
        cfg.alpha = 0.1;
        let ae = Autoencoder::new(
            &AutoencoderConfig {
                ambient_dim: 5,
                latent_dim: 3,
                hidden: None,
                activation: Activation::Tanh,
            },
            &mut rng,
        );
        Checkpoint {
            format_version: FORMAT_VERSION,
            model: OdeNet::Onsager(OnsagerNet::new(&cfg, &mut rng)),
            reducer: Some(ReducerState::Autoencoder(ae)),
            train: TrainConfig::default(),
            dataset_fingerprint: "00".into(),
            seed,
            summary: TrainingSummary {
                history: vec![EpochRecord {
                    epoch: 0,
                    train_loss: 0.1 + 0.2,
                    test_loss: None,
                    lr: 0.0128,
                }],
                mse_train: Some(1.0 / 3.0),
                mse_test: None,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for seed in 0..5 {
            let ck = sample(seed);
            let back = Checkpoint::from_json(&ck.to_json().unwrap(), Path::new("mem")).unwrap();
            assert_eq!(bits(&back.model), bits(&ck.model));
            assert_eq!(back, ck);
            assert_eq!(back.to_json().unwrap(), ck.to_json().unwrap());
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = sample(0)
            .to_json()
            .unwrap()
            .replacen("\"format_version\": 1", "\"format_version\": 99", 1);
        let err = Checkpoint::from_json(&text, Path::new("c.json")).unwrap_err();
        assert!(
            matches!(err, CliError::Input(ref m) if m.contains("version 99")),
            "{err}"
        );
    }
}
