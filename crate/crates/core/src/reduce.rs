//! Dimensionality reduction: PCA and an autoencoder whose encoder is pushed
//! towards an isometric embedding of trajectory increments.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::{FeedForward, FeedForwardVars};
use crate::systems::SnapshotPair;
use crate::tensor::{Activation, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReduceError {
    #[error("need at least {needed} samples, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("requested {requested} components but the data has rank {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Maps between ambient and latent coordinates.
pub trait Reducer {
    fn ambient_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn encode(&self, u: &[f64]) -> Result<Vec<f64>, ReduceError>;
    fn decode(&self, h: &[f64]) -> Result<Vec<f64>, ReduceError>;
}

fn check_len(expected: usize, got: usize) -> Result<(), ReduceError> {
    if expected == got {
        Ok(())
    } else {
        Err(ReduceError::DimensionMismatch { expected, got })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `m×N`, orthonormal rows.
    pub components: Tensor,
    /// Full spectrum of the centred data, descending.
    pub singular_values: Vec<f64>,
    /// `sᵢ² / Σ s²` for every singular value, descending.
    pub variance_fractions: Vec<f64>,
}

impl PcaModel {
    /// Fraction of variance captured by the retained components.
    pub fn captured_variance(&self) -> f64 {
        self.variance_fractions[..self.components.rows()].iter().sum()
    }
}

/// Top-`m` principal components of `data` (one sample per entry).
///
/// Each component's largest-magnitude entry is made positive.
pub fn pca_fit<R: AsRef<[f64]>>(data: &[R], m: usize) -> Result<PcaModel, ReduceError> {
    let n = data.len();
    if n < m.max(1) {
        return Err(ReduceError::NotEnoughSamples {
            needed: m.max(1),
            got: n,
        });
    }
    let dim = data[0].as_ref().len();
    for row in data {
        check_len(dim, row.as_ref().len())?;
    }
    let mut mean = vec![0.0; dim];
    for row in data {
        for (mu, x) in mean.iter_mut().zip(row.as_ref()) {
            *mu += x;
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= n as f64);
    let centred = DMatrix::from_fn(n, dim, |i, j| data[i].as_ref()[j] - mean[j]);
    let svd = centred.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

    let smax = singular_values.first().copied().unwrap_or(0.0);
    let tol = smax * 1e-10 * (n.max(dim) as f64);
    let rank = singular_values.iter().filter(|&&s| s > tol).count();
    if m > rank {
        return Err(ReduceError::RankDeficient { requested: m, rank });
    }

    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let variance_fractions = singular_values
        .iter()
        .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
        .collect();

    let mut components = Tensor::zeros(m, dim);
    for (c, &k) in order.iter().take(m).enumerate() {
        let row: Vec<f64> = (0..dim).map(|j| v_t[(k, j)]).collect();
        let pivot = row
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (j, v) in row.into_iter().enumerate() {
            components.set(c, j, sign * v);
        }
    }
    Ok(PcaModel {
        mean,
        components,
        singular_values,
        variance_fractions,
    })
}

impl Reducer for PcaModel {
    fn ambient_dim(&self) -> usize {
        self.components.cols()
    }

    fn latent_dim(&self) -> usize {
        self.components.rows()
    }

    fn encode(&self, u: &[f64]) -> Result<Vec<f64>, ReduceError> {
        check_len(self.ambient_dim(), u.len())?;
        Ok((0..self.latent_dim())
            .map(|i| {
                self.components
                    .row_slice(i)
                    .iter()
                    .zip(u.iter().zip(&self.mean))
                    .map(|(c, (x, mu))| c * (x - mu))
                    .sum()
            })
            .collect())
    }

    fn decode(&self, h: &[f64]) -> Result<Vec<f64>, ReduceError> {
        check_len(self.latent_dim(), h.len())?;
        let mut out = self.mean.clone();
        for (i, hi) in h.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.components.row_slice(i)) {
                *o += hi * c;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub ambient_dim: usize,
    pub latent_dim: usize,
    /// Widths of the two hidden encoder layers (mirrored in the decoder);
    /// geometric interpolation between ambient and latent when absent.
    #[serde(default)]
    pub hidden: Option<[usize; 2]>,
    #[serde(default = "default_ae_activation")]
    pub activation: Activation,
}

fn default_ae_activation() -> Activation {
    Activation::ReQUr
}

impl AutoencoderConfig {
    pub fn hidden_widths(&self) -> [usize; 2] {
        self.hidden.unwrap_or_else(|| {
            let (n, m) = (self.ambient_dim as f64, self.latent_dim.max(1) as f64);
            let w = |k: f64| (n.powf(1.0 - k / 3.0) * m.powf(k / 3.0)).round().max(1.0) as usize;
            [w(1.0), w(2.0)]
        })
    }
}

/// Encoder `φ` and decoder `ψ`, each with two activated hidden layers and a
/// linear read-out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub encoder: FeedForward,
    pub decoder: FeedForward,
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(cfg: &AutoencoderConfig, rng: &mut R) -> Self {
        let [w1, w2] = cfg.hidden_widths();
        let (n, m) = (cfg.ambient_dim, cfg.latent_dim);
        Self {
            encoder: FeedForward::new(&[n, w1, w2, m], cfg.activation, false, rng),
            decoder: FeedForward::new(&[m, w2, w1, n], cfg.activation, false, rng),
        }
    }

    pub fn zeros(cfg: &AutoencoderConfig) -> Self {
        let [w1, w2] = cfg.hidden_widths();
        let (n, m) = (cfg.ambient_dim, cfg.latent_dim);
        Self {
            encoder: FeedForward::zeros(&[n, w1, w2, m], cfg.activation, false),
            decoder: FeedForward::zeros(&[m, w2, w1, n], cfg.activation, false),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.encoder.tensors();
        out.extend(self.decoder.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.decoder.tensors_mut());
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> AutoencoderVars {
        AutoencoderVars {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    /// `‖u − ψ(φ(u))‖²`.
    pub fn reconstruction_error(&self, u: &[f64]) -> Result<f64, ReduceError> {
        let back = self.decode(&self.encode(u)?)?;
        Ok(u.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum())
    }
}

impl Reducer for Autoencoder {
    fn ambient_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    fn encode(&self, u: &[f64]) -> Result<Vec<f64>, ReduceError> {
        check_len(self.ambient_dim(), u.len())?;
        Ok(self.encoder.apply(u))
    }

    fn decode(&self, h: &[f64]) -> Result<Vec<f64>, ReduceError> {
        check_len(self.latent_dim(), h.len())?;
        Ok(self.decoder.apply(h))
    }
}

pub struct AutoencoderVars {
    pub encoder: FeedForwardVars,
    pub decoder: FeedForwardVars,
}

impl AutoencoderVars {
    pub fn params(&self) -> Vec<Var> {
        let mut out = self.encoder.params();
        out.extend(self.decoder.params());
        out
    }
}

/// `| ‖u₂ − u₁‖² − ‖φ(u₂) − φ(u₁)‖² |`.
pub fn isometric_loss<F>(encode: F, u1: &[f64], u2: &[f64]) -> Result<f64, ReduceError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, ReduceError>,
{
    check_len(u1.len(), u2.len())?;
    let (z1, z2) = (encode(u1)?, encode(u2)?);
    let du: f64 = u1.iter().zip(u2).map(|(a, b)| (b - a).powi(2)).sum();
    let dz: f64 = z1.iter().zip(&z2).map(|(a, b)| (b - a).powi(2)).sum();
    Ok((du - dz).abs())
}

/// Row-wise isometric loss on a tape; returns `B×1`.
pub fn isometric_loss_graph(tape: &mut Tape, u1: Var, u2: Var, z1: Var, z2: Var) -> Result<Var, TensorError> {
    let du = tape.sub(u2, u1)?;
    let du2 = tape.row_sum_sq(du)?;
    let dz = tape.sub(z2, z1)?;
    let dz2 = tape.row_sum_sq(dz)?;
    let gap = tape.sub(du2, dz2)?;
    tape.abs(gap)
}

/// Mean isometric loss of `model` over ambient snapshot pairs.
pub fn pca_isometry_baseline<'a, M, I>(model: &M, pairs: I) -> Result<f64, ReduceError>
where
    M: Reducer + ?Sized,
    I: IntoIterator<Item = &'a SnapshotPair>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for p in pairs {
        total += isometric_loss(|u| model.encode(u), &p.h1, &p.h2)?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Default `α_iso`: 0.9 of the PCA baseline.
pub fn default_alpha_iso(baseline: f64) -> f64 {
    0.9 * baseline
}
