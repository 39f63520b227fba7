//! Reference dynamics and snapshot-pair datasets.
//!
//! A dataset is built from `n_traj` trajectories integrated with SSP-RK3.
//! Trajectory `k` draws its initial state from a ChaCha8 generator seeded
//! with the dataset seed and switched to stream `k`, so each trajectory is
//! reproducible on its own and independent of how many others are drawn.
//! Along each trajectory, pairs `(h(tᵢ), h(tᵢ + τ))` are recorded at
//! `tᵢ = i·T/S`. The first `⌈train_fraction · n_traj⌉` trajectories form
//! the training split.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{advance, IntegrateError, Scheme, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("invalid dataset configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory {traj_id} failed: {source}")]
    BlowUp {
        traj_id: usize,
        #[source]
        source: IntegrateError,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchmarkSystem {
    /// `ẋ = v`, `v̇ = −c v³ − U'(x)` with `U(x) = 4κ/π² (1 − cos(πx/2))`.
    Pendulum {
        #[serde(default = "default_kappa")]
        kappa: f64,
        /// `c` in the resistance `γ(v) = c v²`.
        #[serde(default = "default_damping")]
        damping: f64,
    },
    /// `ẋ = v`, `v̇ = −γ v − κ x`.
    Hookean {
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default = "default_damping")]
        gamma: f64,
    },
    Lorenz {
        #[serde(default = "default_sigma")]
        sigma: f64,
        r: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    /// `ḣ = K h` for a square matrix `K` (rows).
    Linear { matrix: Vec<Vec<f64>> },
}

fn default_kappa() -> f64 {
    4.0
}

fn default_damping() -> f64 {
    3.0
}

fn default_sigma() -> f64 {
    10.0
}

fn default_b() -> f64 {
    8.0 / 3.0
}

impl BenchmarkSystem {
    pub fn pendulum() -> Self {
        BenchmarkSystem::Pendulum {
            kappa: 4.0,
            damping: 3.0,
        }
    }

    pub fn hookean() -> Self {
        BenchmarkSystem::Hookean { kappa: 4.0, gamma: 3.0 }
    }

    pub fn lorenz(r: f64) -> Self {
        BenchmarkSystem::Lorenz {
            sigma: 10.0,
            r,
            b: 8.0 / 3.0,
        }
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        let bad = |msg: &str| Err(SystemError::InvalidConfig(msg.to_string()));
        match self {
            BenchmarkSystem::Pendulum { kappa, damping } => {
                if !(*kappa > 0.0 && *damping >= 0.0) {
                    return bad("pendulum needs kappa > 0 and damping >= 0");
                }
            }
            BenchmarkSystem::Hookean { kappa, gamma } => {
                if !(*kappa > 0.0 && *gamma >= 0.0) {
                    return bad("hookean needs kappa > 0 and gamma >= 0");
                }
            }
            BenchmarkSystem::Lorenz { sigma, r, b } => {
                if !(*sigma > 0.0 && *r > 0.0 && *b > 0.0) {
                    return bad("lorenz parameters must be positive");
                }
            }
            BenchmarkSystem::Linear { matrix } => {
                let n = matrix.len();
                if n == 0 || matrix.iter().any(|r| r.len() != n) {
                    return bad("linear system matrix must be square and non-empty");
                }
            }
        }
        Ok(())
    }

    /// Default half-width of the initial-condition box.
    pub fn default_amplitude(&self) -> f64 {
        match self {
            BenchmarkSystem::Lorenz { .. } => 25.0,
            _ => 1.0,
        }
    }

    /// Physical energy for the dissipative oscillators.
    pub fn energy(&self, h: &[f64]) -> Option<f64> {
        match *self {
            BenchmarkSystem::Pendulum { kappa, .. } => Some(pendulum_potential(kappa, h[0]) + 0.5 * h[1] * h[1]),
            BenchmarkSystem::Hookean { kappa, .. } => Some(0.5 * kappa * h[0] * h[0] + 0.5 * h[1] * h[1]),
            _ => None,
        }
    }

    pub fn energy_grad(&self, h: &[f64]) -> Option<Vec<f64>> {
        match *self {
            BenchmarkSystem::Pendulum { kappa, .. } => Some(vec![pendulum_force(kappa, h[0]), h[1]]),
            BenchmarkSystem::Hookean { kappa, .. } => Some(vec![kappa * h[0], h[1]]),
            _ => None,
        }
    }
}

/// `U(x) = 4κ/π² (1 − cos(πx/2))`.
pub fn pendulum_potential(kappa: f64, x: f64) -> f64 {
    4.0 * kappa / (PI * PI) * (1.0 - (PI * x / 2.0).cos())
}

/// `U'(x) = (4κ/π²)(π/2) sin(πx/2)`.
pub fn pendulum_force(kappa: f64, x: f64) -> f64 {
    4.0 * kappa / (PI * PI) * (PI / 2.0) * (PI * x / 2.0).sin()
}

pub fn pendulum_rhs(kappa: f64, damping: f64, h: &[f64]) -> Vec<f64> {
    let (x, v) = (h[0], h[1]);
    vec![v, -damping * v * v * v - pendulum_force(kappa, x)]
}

pub fn lorenz_rhs(sigma: f64, r: f64, b: f64, h: &[f64]) -> Vec<f64> {
    let (x, y, z) = (h[0], h[1], h[2]);
    vec![sigma * (y - x), r * x - y - x * z, x * y - b * z]
}

impl VectorField for BenchmarkSystem {
    fn dim(&self) -> usize {
        match self {
            BenchmarkSystem::Pendulum { .. } | BenchmarkSystem::Hookean { .. } => 2,
            BenchmarkSystem::Lorenz { .. } => 3,
            BenchmarkSystem::Linear { matrix } => matrix.len(),
        }
    }

    fn eval(&self, h: &[f64]) -> Vec<f64> {
        match self {
            BenchmarkSystem::Pendulum { kappa, damping } => pendulum_rhs(*kappa, *damping, h),
            BenchmarkSystem::Hookean { kappa, gamma } => vec![h[1], -gamma * h[1] - kappa * h[0]],
            BenchmarkSystem::Lorenz { sigma, r, b } => lorenz_rhs(*sigma, *r, *b, h),
            BenchmarkSystem::Linear { matrix } => matrix
                .iter()
                .map(|row| row.iter().zip(h).map(|(a, x)| a * x).sum())
                .collect(),
        }
    }
}

/// Sampling protocol for [`generate_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    /// Trajectory length `T`.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Pairs per trajectory `S`.
    #[serde(default = "default_snapshots")]
    pub snapshots_per_traj: usize,
    /// Pair gap `τ`.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Internal SSP-RK3 steps per `τ`.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Half-width of the initial-condition box; system default when absent.
    #[serde(default)]
    pub init_amplitude: Option<f64>,
    /// Optional spanning vectors: initial states are `Σ cᵢ qᵢ` with
    /// `cᵢ ~ U[−a, a]` instead of filling the whole box.
    #[serde(default)]
    pub init_basis: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_n_traj() -> usize {
    100
}

fn default_t_end() -> f64 {
    5.0
}

fn default_snapshots() -> usize {
    100
}

fn default_tau() -> f64 {
    0.001
}

fn default_substeps() -> usize {
    1
}

fn default_train_fraction() -> f64 {
    0.8
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_traj: default_n_traj(),
            t_end: default_t_end(),
            snapshots_per_traj: default_snapshots(),
            tau: default_tau(),
            substeps: default_substeps(),
            init_amplitude: None,
            init_basis: None,
            train_fraction: default_train_fraction(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SystemError> {
        let bad = |msg: String| Err(SystemError::InvalidConfig(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.t_end > 0.0) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad(format!(
                "train_fraction must lie in [0, 1], got {}",
                self.train_fraction
            ));
        }
        if self.snapshots_per_traj > 0 && self.tau >= self.t_end / self.snapshots_per_traj as f64 {
            return bad(format!(
                "tau = {} must be smaller than the snapshot spacing T/S = {}",
                self.tau,
                self.t_end / self.snapshots_per_traj as f64
            ));
        }
        Ok(())
    }

    /// Internal integration step.
    pub fn dt(&self) -> f64 {
        self.tau / self.substeps as f64
    }

    /// Number of training trajectories, `⌈fraction · n_traj⌉`.
    pub fn n_train_traj(&self) -> usize {
        ((self.train_fraction * self.n_traj as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPair {
    pub traj_id: usize,
    pub t1: f64,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

/// Snapshot pairs sharing one gap `τ`, split into train/test by trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotDataset {
    pub dim: usize,
    pub tau: f64,
    pub pairs: Vec<SnapshotPair>,
    /// Trajectories with `traj_id < n_train_traj` are training data.
    pub n_train_traj: usize,
}

impl SnapshotDataset {
    pub fn new(dim: usize, tau: f64, pairs: Vec<SnapshotPair>, n_train_traj: usize) -> Self {
        Self {
            dim,
            tau,
            pairs,
            n_train_traj,
        }
    }

    pub fn is_train(&self, pair: &SnapshotPair) -> bool {
        pair.traj_id < self.n_train_traj
    }

    pub fn train(&self) -> Vec<&SnapshotPair> {
        self.pairs.iter().filter(|p| self.is_train(p)).collect()
    }

    pub fn test(&self) -> Vec<&SnapshotPair> {
        self.pairs.iter().filter(|p| !self.is_train(p)).collect()
    }

    pub fn traj_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.pairs.iter().map(|p| p.traj_id).collect();
        ids.dedup();
        ids
    }

    /// Applies `map` to both states of every pair (e.g. an encoder).
    pub fn map_states(&self, dim: usize, mut map: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let pairs = self
            .pairs
            .iter()
            .map(|p| SnapshotPair {
                traj_id: p.traj_id,
                t1: p.t1,
                h1: map(&p.h1),
                h2: map(&p.h2),
            })
            .collect();
        Self::new(dim, self.tau, pairs, self.n_train_traj)
    }
}

/// Initial state of trajectory `traj_id`.
pub fn initial_state(system: &BenchmarkSystem, cfg: &DatasetConfig, seed: u64, traj_id: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(traj_id as u64);
    let amp = cfg.init_amplitude.unwrap_or_else(|| system.default_amplitude());
    let m = system.dim();
    match &cfg.init_basis {
        Some(basis) => {
            let mut h = vec![0.0; m];
            for q in basis {
                let c = amp * (2.0 * rng.random::<f64>() - 1.0);
                for (hi, qi) in h.iter_mut().zip(q) {
                    *hi += c * qi;
                }
            }
            h
        }
        None => (0..m).map(|_| amp * (2.0 * rng.random::<f64>() - 1.0)).collect(),
    }
}

pub fn generate_dataset(
    system: &BenchmarkSystem,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<SnapshotDataset, SystemError> {
    system.validate()?;
    cfg.validate()?;
    let m = system.dim();
    if let Some(basis) = &cfg.init_basis {
        if basis.iter().any(|q| q.len() != m) {
            return Err(SystemError::InvalidConfig(format!(
                "init_basis vectors must have length {m}"
            )));
        }
    }
    let dt = cfg.dt();
    let spacing = cfg.t_end / cfg.snapshots_per_traj.max(1) as f64;
    let mut pairs = Vec::with_capacity(cfg.n_traj * cfg.snapshots_per_traj);
    for traj_id in 0..cfg.n_traj {
        let blow = |source| SystemError::BlowUp { traj_id, source };
        let mut state = initial_state(system, cfg, seed, traj_id);
        for i in 0..cfg.snapshots_per_traj {
            if i > 0 {
                state = advance(Scheme::SspRk3, system, &state, spacing, dt).map_err(blow)?;
            }
            let h2 = advance(Scheme::SspRk3, system, &state, cfg.tau, dt).map_err(blow)?;
            pairs.push(SnapshotPair {
                traj_id,
                t1: i as f64 * spacing,
                h1: state.clone(),
                h2,
            });
        }
    }
    Ok(SnapshotDataset::new(m, cfg.tau, pairs, cfg.n_train_traj()))
}

/// States at `t = k·t_end/n_samples`, `k = 0..=n_samples`, integrated with
/// steps no larger than `max_dt`.
pub fn sample_trajectory<F: VectorField + ?Sized>(
    scheme: Scheme,
    field: &F,
    h0: &[f64],
    t_end: f64,
    n_samples: usize,
    max_dt: f64,
) -> Result<Vec<Vec<f64>>, IntegrateError> {
    let mut out = Vec::with_capacity(n_samples + 1);
    let mut state = h0.to_vec();
    out.push(state.clone());
    let spacing = t_end / n_samples.max(1) as f64;
    for _ in 0..n_samples {
        state = advance(scheme, field, &state, spacing, max_dt)?;
        out.push(state.clone());
    }
    Ok(out)
}
