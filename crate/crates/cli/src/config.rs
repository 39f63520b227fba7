//! The JSON run configuration shared by every command.
//!
//! Every section is optional; an empty document `{}` describes the damped
//! pendulum benchmark with the default OnsagerNet and training protocol.
//! Unknown keys are rejected at every level.

use std::path::Path;

use onsager::analysis::FixedPointOptions;
use onsager::nets::{MlpOden, MlpOdenConfig, OdeNet, OnsagerConfig, OnsagerNet};
use onsager::reduce::AutoencoderConfig;
use onsager::systems::{BenchmarkSystem, DatasetConfig};
use onsager::train::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Ground-truth system for `generate` (default: damped pendulum).
    #[serde(default = "BenchmarkSystem::pendulum")]
    pub system: BenchmarkSystem,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Default: the small unforced OnsagerNet in the model dimension.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Default: train directly on the dataset coordinates.
    #[serde(default)]
    pub reduction: Option<ReductionSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    /// Seeds dataset sampling, weight initialisation and minibatch order;
    /// overridden by `--seed`.
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: BenchmarkSystem::pendulum(),
            dataset: DatasetConfig::default(),
            model: None,
            reduction: None,
            train: TrainConfig::default(),
            analysis: AnalysisSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Onsager(OnsagerConfig),
    MlpOden(MlpOdenConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReductionSpec {
    /// Project onto the leading `dim` principal components of the training
    /// snapshots, then train the ODE model on the codes.
    Pca { dim: usize },
    /// Train an autoencoder jointly with the ODE model.
    Autoencoder(AutoencoderConfig),
}

impl ReductionSpec {
    pub fn latent_dim(&self) -> usize {
        match self {
            ReductionSpec::Pca { dim } => *dim,
            ReductionSpec::Autoencoder(cfg) => cfg.latent_dim,
        }
    }
}

/// Options for `analyze`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    /// Fixed-point search box; the cube `[−half_width, half_width]ᵐ` when absent.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub half_width: f64,
    pub n_starts: usize,
    /// Initial states for Lyapunov estimates. When empty and a dataset is
    /// given, the first snapshot of up to five test trajectories is used.
    pub lyapunov_starts: Vec<Vec<f64>>,
    pub lyapunov_time: f64,
    pub lyapunov_dt: f64,
    pub lyapunov_transient: f64,
    /// Seeds for periodic-orbit shooting.
    pub orbit_seeds: Vec<Vec<f64>>,
    /// Section normal; the first coordinate axis when absent.
    pub orbit_normal: Option<Vec<f64>>,
    pub orbit_max_time: f64,
    /// Half-width of the grid on which the aligned energy error is
    /// measured, for systems with a known energy.
    pub energy_half_width: f64,
    pub energy_grid: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            lower: None,
            upper: None,
            half_width: 2.0,
            n_starts: 64,
            lyapunov_starts: Vec::new(),
            lyapunov_time: 100.0,
            lyapunov_dt: 0.01,
            lyapunov_transient: 10.0,
            orbit_seeds: Vec::new(),
            orbit_normal: None,
            orbit_max_time: 100.0,
            energy_half_width: 1.0,
            energy_grid: 101,
        }
    }
}

impl AnalysisSpec {
    pub fn fixed_point_options(&self, dim: usize) -> Result<FixedPointOptions> {
        let mut opts = match (&self.lower, &self.upper) {
            (Some(lo), Some(hi)) => {
                if lo.len() != dim || hi.len() != dim {
                    return Err(CliError::input(format!("analysis box must have {dim} coordinates")));
                }
                FixedPointOptions::in_box(lo.clone(), hi.clone())
            }
            (None, None) => FixedPointOptions::cube(dim, self.half_width),
            _ => {
                return Err(CliError::input(
                    "analysis.lower and analysis.upper must be given together",
                ))
            }
        };
        opts.n_starts = self.n_starts;
        Ok(opts)
    }
}

impl RunConfig {
    /// Reads a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
    }

    /// Dimension the ODE model works in.
    pub fn model_dim(&self, data_dim: usize) -> usize {
        self.reduction.as_ref().map_or(data_dim, ReductionSpec::latent_dim)
    }

    pub fn model_spec(&self, data_dim: usize) -> ModelSpec {
        self.model
            .clone()
            .unwrap_or_else(|| ModelSpec::Onsager(OnsagerConfig::small_unforced(self.model_dim(data_dim))))
    }

    /// Freshly initialised model seeded with `self.seed`.
    pub fn build_model(&self, data_dim: usize) -> Result<OdeNet> {
        let want = self.model_dim(data_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let net = match self.model_spec(data_dim) {
            ModelSpec::Onsager(cfg) => {
                if cfg.hidden_layers == 0 || cfg.hidden_width == 0 {
                    return Err(CliError::input(
                        "model needs at least one hidden layer of positive width",
                    ));
                }
                OdeNet::Onsager(OnsagerNet::new(&cfg, &mut rng))
            }
            ModelSpec::MlpOden(cfg) => OdeNet::MlpOden(MlpOden::new(&cfg, &mut rng)),
        };
        if net.dim() != want {
            return Err(CliError::input(format!(
                "model dimension {} does not match the {} dimension {want}",
                net.dim(),
                if self.reduction.is_some() { "latent" } else { "data" }
            )));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 3}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"analysis": {"n_start": 3}}"#).is_err());
    }

    #[test]
    fn tagged_sections_parse() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{
                "system": {"kind": "lorenz", "r": 16.0},
                "model": {"kind": "onsager", "dim": 3, "hidden_width": 20, "forced": true, "alpha": 0.1, "beta": 0.1},
                "reduction": {"kind": "pca", "dim": 3}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.system, BenchmarkSystem::lorenz(16.0));
        assert_eq!(cfg.model_dim(20), 3);
        assert!(matches!(cfg.model_spec(20), ModelSpec::Onsager(c) if c.forced && c.hidden_width == 20));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"model": {"kind": "mlp_oden", "dim": 3, "hidden_layers": 1, "hidden_width": 4}}"#)
                .unwrap();
        assert!(matches!(cfg.build_model(2), Err(CliError::Input(_))));
        assert_eq!(cfg.build_model(3).unwrap().dim(), 3);
    }

    #[test]
    fn half_open_box_is_rejected() {
        let spec = AnalysisSpec {
            lower: Some(vec![0.0, 0.0]),
            ..Default::default()
        };
        assert!(spec.fixed_point_options(2).is_err());
        assert_eq!(
            AnalysisSpec::default().fixed_point_options(3).unwrap().lower,
            vec![-2.0; 3]
        );
    }
}
