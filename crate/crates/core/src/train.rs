//! Losses, optimisers and the training loop.
//!
//! The dynamics loss compares the observed state at `t₂` with a Heun
//! rollout of the model from `t₁`:
//!
//! ```text
//! L_ode = 1/|S| Σ 1/τ² ‖h(t₂) − RK2(net; h(t₁), τ/n_s, n_s)‖²
//! ```
//!
//! End-to-end training with an autoencoder adds a reconstruction term and
//! a hinge on the isometric loss (see [`e2e_loss`]).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{heun_step_graph, IntegrateError};
use crate::nets::{BoundNet, OdeNet};
use crate::reduce::{isometric_loss_graph, Autoencoder, AutoencoderVars};
use crate::systems::{SnapshotDataset, SnapshotPair};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset tau {dataset} differs from configured tau {config}")]
    TauMismatch { dataset: f64, config: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite prediction for pair {pair_id}")]
    NonFinitePair { pair_id: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AmsGrad,
}

/// Training hyper-parameters. Defaults follow the pendulum protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without a new minimum of the training loss before halving.
    pub patience: usize,
    pub lr_factor: f64,
    pub epochs: usize,
    /// Heun steps per pair gap.
    pub n_s: usize,
    /// Pair gap; taken from the dataset when absent.
    pub tau: Option<f64>,
    pub optimizer: OptimizerKind,
    pub beta_ae: f64,
    pub beta_iso: f64,
    /// Isometry slack; when absent, 0.9 × the PCA baseline is used by
    /// callers that have one, otherwise 0.
    pub alpha_iso: Option<f64>,
    pub seed: u64,
    /// Worker threads for the batch gradient. `1` is the bit-reproducible
    /// reference path.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            lr: 0.0128,
            patience: 25,
            lr_factor: 0.5,
            epochs: 1000,
            n_s: 1,
            tau: None,
            optimizer: OptimizerKind::AmsGrad,
            beta_ae: 1.0,
            beta_iso: 0.1,
            alpha_iso: None,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if self.n_s == 0 {
            return bad("n_s must be at least 1");
        }
        if self.beta_ae < 0.0 || self.beta_iso < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }

    pub fn loss_config(&self, tau: f64) -> LossConfig {
        LossConfig {
            tau,
            n_s: self.n_s,
            beta_ae: self.beta_ae,
            beta_iso: self.beta_iso,
            alpha_iso: self.alpha_iso.unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub n_s: usize,
    pub beta_ae: f64,
    pub beta_iso: f64,
    pub alpha_iso: f64,
}

impl LossConfig {
    pub fn ode(tau: f64, n_s: usize) -> Self {
        Self {
            tau,
            n_s,
            beta_ae: 0.0,
            beta_iso: 0.0,
            alpha_iso: 0.0,
        }
    }
}

/// Pairs stacked row-wise.
#[derive(Clone, Debug)]
pub struct Batch {
    pub h1: Tensor,
    pub h2: Tensor,
    /// Index of each row's pair in the source dataset.
    pub ids: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&SnapshotPair], ids: Vec<usize>) -> Result<Self, TrainError> {
        if pairs.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let h1: Vec<&[f64]> = pairs.iter().map(|p| p.h1.as_slice()).collect();
        let h2: Vec<&[f64]> = pairs.iter().map(|p| p.h2.as_slice()).collect();
        Ok(Self {
            h1: Tensor::from_rows(&h1)?,
            h2: Tensor::from_rows(&h2)?,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Batch {
        let m1 = self.h1.cols();
        let m2 = self.h2.cols();
        let n = range.len();
        Batch {
            h1: Tensor::new(n, m1, self.h1.data()[range.start * m1..range.end * m1].to_vec()).expect("slice shape"),
            h2: Tensor::new(n, m2, self.h2.data()[range.start * m2..range.end * m2].to_vec()).expect("slice shape"),
            ids: self.ids[range].to_vec(),
        }
    }
}

fn first_non_finite_row(t: &Tensor) -> Option<usize> {
    (0..t.rows()).find(|&i| t.row_slice(i).iter().any(|x| !x.is_finite()))
}

/// Heun rollout on the tape, reporting the first offending pair on blow-up.
fn rollout(tape: &mut Tape, net: &BoundNet, h: Var, tau: f64, n_s: usize, ids: &[usize]) -> Result<Var, TrainError> {
    let dt = tau / n_s as f64;
    let mut rhs = |t: &mut Tape, x: Var| net.rhs(t, x);
    let mut state = h;
    for _ in 0..n_s {
        state = heun_step_graph(tape, &mut rhs, state, dt)?;
        if let Some(row) = first_non_finite_row(tape.value(state)) {
            return Err(TrainError::NonFinitePair { pair_id: ids[row] });
        }
    }
    Ok(state)
}

/// Row-wise `‖h₂ − RK2(h₁)‖²` (unscaled), `B×1`.
fn ode_residuals(
    tape: &mut Tape,
    net: &BoundNet,
    h1: Var,
    h2: Var,
    cfg: &LossConfig,
    ids: &[usize],
) -> Result<Var, TrainError> {
    let pred = rollout(tape, net, h1, cfg.tau, cfg.n_s, ids)?;
    let diff = tape.sub(h2, pred)?;
    Ok(tape.row_sum_sq(diff)?)
}

/// Mean dynamics loss of a batch on the tape (`1×1`).
pub fn ode_loss_graph(tape: &mut Tape, net: &BoundNet, batch: &Batch, cfg: &LossConfig) -> Result<Var, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let h1 = tape.input(batch.h1.clone());
    let h2 = tape.input(batch.h2.clone());
    let res = ode_residuals(tape, net, h1, h2, cfg, &batch.ids)?;
    let per_row = tape.scale(res, 1.0 / (cfg.tau * cfg.tau))?;
    let total = tape.sum(per_row)?;
    Ok(tape.scale(total, 1.0 / batch.len() as f64)?)
}

/// Mean dynamics loss of `net` over `pairs`.
pub fn ode_loss(net: &OdeNet, pairs: &[&SnapshotPair], tau: f64, n_s: usize) -> Result<f64, TrainError> {
    evaluate(net, pairs, &LossConfig::ode(tau, n_s))
}

/// Mean end-to-end loss of a batch of ambient pairs:
/// `β_ae ℓ_ae + ℓ_ode/τ² + β_iso (ℓ_iso − α_iso)₊`.
pub fn e2e_loss_graph(
    tape: &mut Tape,
    net: &BoundNet,
    ae: &AutoencoderVars,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<Var, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let u1 = tape.input(batch.h1.clone());
    let u2 = tape.input(batch.h2.clone());
    let z1 = ae.encoder.forward(tape, u1)?;
    let z2 = ae.encoder.forward(tape, u2)?;

    let ode = ode_residuals(tape, net, z1, z2, cfg, &batch.ids)?;
    let mut per_row = tape.scale(ode, 1.0 / (cfg.tau * cfg.tau))?;

    if cfg.beta_ae != 0.0 {
        let r1 = ae.decoder.forward(tape, z1)?;
        let r2 = ae.decoder.forward(tape, z2)?;
        let d1 = tape.sub(u1, r1)?;
        let d2 = tape.sub(u2, r2)?;
        let e1 = tape.row_sum_sq(d1)?;
        let e2 = tape.row_sum_sq(d2)?;
        let ae_term = tape.add(e1, e2)?;
        let ae_term = tape.scale(ae_term, cfg.beta_ae)?;
        per_row = tape.add(per_row, ae_term)?;
    }
    if cfg.beta_iso != 0.0 {
        let iso = isometric_loss_graph(tape, u1, u2, z1, z2)?;
        let excess = tape.shift(iso, -cfg.alpha_iso)?;
        let hinge = tape.relu(excess)?;
        let iso_term = tape.scale(hinge, cfg.beta_iso)?;
        per_row = tape.add(per_row, iso_term)?;
    }
    let total = tape.sum(per_row)?;
    Ok(tape.scale(total, 1.0 / batch.len() as f64)?)
}

/// Anything `fit` can optimise.
pub trait Trainable: Sync {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
    /// Mean loss of `batch` and the parameter leaves in [`Self::tensors`]
    /// order.
    fn batch_loss(&self, tape: &mut Tape, batch: &Batch, cfg: &LossConfig) -> Result<(Var, Vec<Var>), TrainError>;
}

impl Trainable for OdeNet {
    fn tensors(&self) -> Vec<&Tensor> {
        OdeNet::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        OdeNet::tensors_mut(self)
    }

    fn batch_loss(&self, tape: &mut Tape, batch: &Batch, cfg: &LossConfig) -> Result<(Var, Vec<Var>), TrainError> {
        let bound = self.bind(tape);
        let loss = ode_loss_graph(tape, &bound, batch, cfg)?;
        Ok((loss, bound.params()))
    }
}

/// Autoencoder and latent dynamics trained jointly on ambient pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndToEnd {
    pub net: OdeNet,
    pub autoencoder: Autoencoder,
}

impl Trainable for EndToEnd {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.net.tensors();
        out.extend(self.autoencoder.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.net.tensors_mut();
        out.extend(self.autoencoder.tensors_mut());
        out
    }

    fn batch_loss(&self, tape: &mut Tape, batch: &Batch, cfg: &LossConfig) -> Result<(Var, Vec<Var>), TrainError> {
        let net = self.net.bind(tape);
        let ae = self.autoencoder.bind(tape);
        let loss = e2e_loss_graph(tape, &net, &ae, batch, cfg)?;
        let mut params = net.params();
        params.extend(ae.params());
        Ok((loss, params))
    }
}

/// Mean loss of a model over a pair set, without gradients.
pub fn evaluate<M: Trainable + ?Sized>(
    model: &M,
    pairs: &[&SnapshotPair],
    cfg: &LossConfig,
) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut tape = Tape::new();
    let mut chunk_loss = |c: usize, chunk: &[&SnapshotPair]| -> Result<f64, TrainError> {
        let batch = Batch::from_pairs(chunk, (c * 512..c * 512 + chunk.len()).collect())?;
        tape.clear();
        let (loss, _) = model.batch_loss(&mut tape, &batch, cfg)?;
        Ok(tape.value(loss).item())
    };
    if pairs.len() <= 512 {
        return chunk_loss(0, pairs);
    }
    let mut total = 0.0;
    for (c, chunk) in pairs.chunks(512).enumerate() {
        total += chunk_loss(c, chunk)? * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Loss and parameter gradients of one batch.
pub fn loss_and_grad<M: Trainable + ?Sized>(
    model: &M,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let (loss, params) = model.batch_loss(&mut tape, batch, cfg)?;
    let grads = tape.backward(loss)?;
    let out = params.iter().map(|&p| grads.get_or_zeros(p, tape.shape(p))).collect();
    Ok((tape.value(loss).item(), out))
}

/// Splits the batch across `threads` workers and combines the chunk means.
/// Summation order differs from the single-threaded path, so results are
/// not bit-identical to it.
fn loss_and_grad_parallel<M: Trainable + ?Sized>(
    model: &M,
    batch: &Batch,
    cfg: &LossConfig,
    threads: usize,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let n = batch.len();
    let per = n.div_ceil(threads);
    let chunks: Vec<Batch> = (0..n).step_by(per).map(|s| batch.slice(s..(s + per).min(n))).collect();
    let results: Vec<Result<(f64, Vec<Tensor>), TrainError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| scope.spawn(move || loss_and_grad(model, chunk, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    });
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for (chunk, res) in chunks.iter().zip(results) {
        let (l, g) = res?;
        let w = chunk.len() as f64 / n as f64;
        loss += w * l;
        match &mut grads {
            None => grads = Some(g.into_iter().map(|t| t.map(|x| w * x)).collect()),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += w * y;
                    }
                }
            }
        }
    }
    Ok((loss, grads.unwrap_or_default()))
}

/// Adam with bias correction; the AMSGrad variant normalises by the
/// running maximum of the bias-corrected second moment.
#[derive(Clone, Debug)]
pub struct Adam {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    v_max: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(kind: OptimizerKind, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
            v_max: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v, vmax) = (&mut self.m[k], &mut self.v[k], &mut self.v_max[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let mut v_hat = v[i] / bc2;
                if self.kind == OptimizerKind::AmsGrad {
                    vmax[i] = vmax[i].max(v_hat);
                    v_hat = vmax[i];
                }
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Multiplies the learning rate by `factor` once the running minimum of
/// the monitored loss has not strictly improved for `patience` epochs.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    best: f64,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Self {
            lr,
            patience,
            factor,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one epoch's loss; returns `true` if the rate was cut.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.lr *= self.factor;
            self.stale = 0;
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the test split is empty.
    pub test_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub mse_train: Option<f64>,
    pub mse_test: Option<f64>,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// CSV with header `epoch,train_loss,test_loss,lr`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,test_loss,lr\n");
        for r in &self.history {
            let test = r.test_loss.map(|x| x.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, test, r.lr));
        }
        s
    }
}

/// Trains `model` on the training split of `data` and evaluates the test
/// split after every epoch.
pub fn fit<M: Trainable>(model: &mut M, data: &SnapshotDataset, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    fit_with(model, data, cfg, |_| {})
}

/// [`fit`] with a per-epoch callback (progress logging).
pub fn fit_with<M: Trainable>(
    model: &mut M,
    data: &SnapshotDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let tau = match cfg.tau {
        Some(t) if (t - data.tau).abs() > 1e-12 * t.abs().max(1.0) => {
            return Err(TrainError::TauMismatch {
                dataset: data.tau,
                config: t,
            })
        }
        _ => data.tau,
    };
    let loss_cfg = cfg.loss_config(tau);
    let start = Instant::now();

    let train_idx: Vec<usize> = (0..data.pairs.len())
        .filter(|&i| data.is_train(&data.pairs[i]))
        .collect();
    let test: Vec<&SnapshotPair> = data.test();
    let train: Vec<&SnapshotPair> = train_idx.iter().map(|&i| &data.pairs[i]).collect();

    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut opt = Adam::new(cfg.optimizer, &sizes);
    let mut schedule = PlateauSchedule::new(cfg.lr, cfg.patience, cfg.lr_factor);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order = train_idx.clone();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if order.is_empty() {
            break;
        }
        order.shuffle(&mut rng);
        let lr = schedule.lr;
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pairs: Vec<&SnapshotPair> = chunk.iter().map(|&i| &data.pairs[i]).collect();
            let batch = Batch::from_pairs(&pairs, chunk.to_vec())?;
            let (loss, grads) = if cfg.threads > 1 {
                loss_and_grad_parallel(&*model, &batch, &loss_cfg, cfg.threads)?
            } else {
                loss_and_grad(&*model, &batch, &loss_cfg)?
            };
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss * chunk.len() as f64;
            let mut params = model.tensors_mut();
            opt.step(&mut params, &grads, lr);
        }
        let train_loss = epoch_loss / order.len() as f64;
        let test_loss = if test.is_empty() {
            None
        } else {
            Some(evaluate(&*model, &test, &loss_cfg)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            test_loss,
            lr,
        };
        on_epoch(&record);
        history.push(record);
        schedule.observe(train_loss);
    }

    let mse_train = if train.is_empty() {
        None
    } else {
        Some(evaluate(&*model, &train, &loss_cfg)?)
    };
    let mse_test = if test.is_empty() {
        None
    } else {
        Some(evaluate(&*model, &test, &loss_cfg)?)
    };
    Ok(TrainReport {
        history,
        mse_train,
        mse_test,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Tensor::row(&[1.0, -2.0]);
        let mut opt = Adam::new(OptimizerKind::Adam, &[2]);
        opt.step(&mut [&mut p], &[Tensor::zeros(1, 2)], 0.1);
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        for kind in [OptimizerKind::Adam, OptimizerKind::AmsGrad] {
            let mut p = Tensor::row(&[0.0, 0.0, 0.0]);
            let mut opt = Adam::new(kind, &[3]);
            opt.step(&mut [&mut p], &[Tensor::row(&[3.0, -0.01, 1e-3])], 0.01);
            assert!((p.data()[0] + 0.01).abs() < 1e-9);
            assert!((p.data()[1] - 0.01).abs() < 1e-7);
            assert!((p.data()[2] + 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn plateau_constant_on_decrease() {
        let mut s = PlateauSchedule::new(1.0, 25, 0.5);
        for k in 0..200 {
            assert!(!s.observe(100.0 - k as f64));
        }
        assert_eq!(s.lr, 1.0);
    }

    #[test]
    fn plateau_halves_after_patience_flat_epochs() {
        let mut s = PlateauSchedule::new(1.0, 25, 0.5);
        assert!(!s.observe(1.0));
        for k in 1..=25 {
            let cut = s.observe(1.0);
            assert_eq!(cut, k == 25, "epoch {k}");
        }
        assert_eq!(s.lr, 0.5);
    }

    #[test]
    fn plateau_sawtooth_never_halves() {
        // a new minimum every 10 epochs, higher values in between
        let mut s = PlateauSchedule::new(1.0, 25, 0.5);
        let mut best = 10.0;
        for epoch in 0..300 {
            let loss = if epoch % 10 == 0 {
                best -= 0.01;
                best
            } else {
                best + 1.0
            };
            assert!(!s.observe(loss));
        }
        assert_eq!(s.lr, 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let cfg = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
