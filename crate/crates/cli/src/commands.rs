//! Implementations of the subcommands. Each returns the bytes of its main
//! output; the binary decides where they go.

use std::path::Path;

use onsager::analysis::{
    align_energy, energy_l2_error, find_fixed_points, find_periodic_orbit, largest_lyapunov, AnalysisReport,
    LyapunovOptions, OrbitOptions, Stability,
};
use onsager::integrate::{trajectory, Scheme};
use onsager::nets::{OdeNet, OnsagerNet};
use onsager::reduce::{default_alpha_iso, pca_fit, pca_isometry_baseline, Autoencoder, ReduceError, Reducer};
use onsager::systems::{generate_dataset, SnapshotDataset};
use onsager::train::{fit_with, EndToEnd, EpochRecord, TrainReport};
use onsager::VectorField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ReducerState, TrainingSummary, FORMAT_VERSION};
use crate::config::{ReductionSpec, RunConfig};
use crate::dataset::{self, DatasetMeta};
use crate::error::{CliError, Result};

/// Samples the configured system and writes `out` plus its sidecar.
/// Returns the dataset fingerprint.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = generate_dataset(&cfg.system, &cfg.dataset, cfg.seed)?;
    let meta = DatasetMeta {
        dim: data.dim,
        tau: data.tau,
        system: cfg.system.clone(),
        config: cfg.dataset.clone(),
        seed: cfg.seed,
        n_train_traj: data.n_train_traj,
        n_pairs: data.pairs.len(),
    };
    dataset::write(out, &data, &meta)
}

fn log_epoch(rec: &EpochRecord, total: usize) {
    if rec.epoch.is_multiple_of(100) || rec.epoch + 1 == total {
        let test = rec.test_loss.map_or_else(|| "-".to_string(), |x| format!("{x:.4e}"));
        eprintln!(
            "epoch {:>5}  train {:.4e}  test {test}  lr {:.3e}",
            rec.epoch, rec.train_loss, rec.lr
        );
    }
}

/// Trains the configured model on a dataset file.
pub fn train(cfg: &RunConfig, data_path: &Path, quiet: bool) -> Result<(Checkpoint, TrainReport)> {
    let loaded = dataset::load(data_path)?;
    let data = &loaded.data;
    let mut model = cfg.build_model(data.dim)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    let total = tcfg.epochs;
    let log = |r: &EpochRecord| {
        if !quiet {
            log_epoch(r, total)
        }
    };
    let train_states = |d: &SnapshotDataset| -> Vec<Vec<f64>> { d.train().iter().map(|p| p.h1.clone()).collect() };

    let (report, reducer) = match &cfg.reduction {
        None => (fit_with(&mut model, data, &tcfg, log)?, None),
        Some(ReductionSpec::Pca { dim }) => {
            let pca = pca_fit(&train_states(data), *dim)?;
            let reduced = encode_dataset(data, *dim, |u| pca.encode(u))?;
            let report = fit_with(&mut model, &reduced, &tcfg, log)?;
            (report, Some(ReducerState::Pca(pca)))
        }
        Some(ReductionSpec::Autoencoder(ae_cfg)) => {
            if ae_cfg.ambient_dim != data.dim {
                return Err(CliError::input(format!(
                    "autoencoder ambient_dim {} does not match the data dimension {}",
                    ae_cfg.ambient_dim, data.dim
                )));
            }
            if tcfg.alpha_iso.is_none() {
                let pca = pca_fit(&train_states(data), ae_cfg.latent_dim)?;
                tcfg.alpha_iso = Some(default_alpha_iso(pca_isometry_baseline(&pca, data.train())?));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(2);
            let mut joint = EndToEnd {
                net: model.clone(),
                autoencoder: Autoencoder::new(ae_cfg, &mut rng),
            };
            let report = fit_with(&mut joint, data, &tcfg, log)?;
            model = joint.net;
            (report, Some(ReducerState::Autoencoder(joint.autoencoder)))
        }
    };
    let checkpoint = Checkpoint {
        format_version: FORMAT_VERSION,
        model,
        reducer,
        train: tcfg,
        dataset_fingerprint: loaded.fingerprint,
        seed: cfg.seed,
        summary: TrainingSummary {
            history: report.history.clone(),
            mse_train: report.mse_train,
            mse_test: report.mse_test,
        },
    };
    Ok((checkpoint, report))
}

fn encode_dataset<F>(data: &SnapshotDataset, dim: usize, encode: F) -> Result<SnapshotDataset>
where
    F: Fn(&[f64]) -> std::result::Result<Vec<f64>, ReduceError>,
{
    let mut failure = None;
    let mapped = data.map_states(dim, |u| match encode(u) {
        Ok(z) => z,
        Err(e) => {
            failure.get_or_insert(e);
            vec![0.0; dim]
        }
    });
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(mapped),
    }
}

/// Model-coordinate states used as Lyapunov starting points.
fn lyapunov_starts(cfg: &RunConfig, checkpoint: &Checkpoint, data: Option<&SnapshotDataset>) -> Result<Vec<Vec<f64>>> {
    if !cfg.analysis.lyapunov_starts.is_empty() {
        return Ok(cfg.analysis.lyapunov_starts.clone());
    }
    let Some(data) = data else {
        return Ok(Vec::new());
    };
    let mut starts = Vec::new();
    let mut seen = Vec::new();
    for p in data.test() {
        if seen.contains(&p.traj_id) {
            continue;
        }
        seen.push(p.traj_id);
        let h = match &checkpoint.reducer {
            Some(r) => r.encode(&p.h1)?,
            None => p.h1.clone(),
        };
        starts.push(h);
        if starts.len() == 5 {
            break;
        }
    }
    Ok(starts)
}

/// Fixed points, periodic orbits, Lyapunov estimates and (when the dataset
/// system has a known energy) the aligned energy error.
pub fn analyze(cfg: &RunConfig, checkpoint: &Checkpoint, data_path: Option<&Path>) -> Result<AnalysisReport> {
    let net = &checkpoint.model;
    let dim = net.dim();
    let loaded = data_path.map(dataset::load).transpose()?;
    if let Some(l) = &loaded {
        if l.fingerprint != checkpoint.dataset_fingerprint {
            return Err(CliError::input(format!(
                "dataset fingerprint {} does not match the checkpoint's {}",
                l.fingerprint, checkpoint.dataset_fingerprint
            )));
        }
    }
    let spec = &cfg.analysis;
    for (what, states) in [
        ("lyapunov_starts", &spec.lyapunov_starts),
        ("orbit_seeds", &spec.orbit_seeds),
    ] {
        if states.iter().any(|s| s.len() != dim) {
            return Err(CliError::input(format!(
                "analysis.{what} entries must have {dim} coordinates"
            )));
        }
    }
    let mut report = AnalysisReport {
        fixed_points: find_fixed_points(net, &spec.fixed_point_options(dim)?),
        ..Default::default()
    };

    for seed in &spec.orbit_seeds {
        let normal = spec.orbit_normal.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            e
        });
        let mut opts = OrbitOptions::with_normal(normal);
        opts.max_time = spec.orbit_max_time;
        match find_periodic_orbit(net, seed, &opts) {
            Ok(orbit) => report.periodic_orbits.push(orbit),
            Err(e) => eprintln!("no periodic orbit from {seed:?}: {e}"),
        }
    }

    let mut lopts = LyapunovOptions::new(spec.lyapunov_time, spec.lyapunov_dt);
    lopts.transient = spec.lyapunov_transient;
    for h0 in lyapunov_starts(cfg, checkpoint, loaded.as_ref().map(|l| &l.data))? {
        match largest_lyapunov(net, &h0, &lopts) {
            Ok(est) => report.lyapunov_exponents.push(est.exponent),
            Err(e) => eprintln!("no Lyapunov estimate from {h0:?}: {e}"),
        }
    }
    report.positive_exponent = report.lyapunov_exponents.iter().any(|&l| l > 0.0);

    let system = loaded.as_ref().map(|l| &l.meta.system);
    if let (Some(sys), OdeNet::Onsager(onet), None) = (system, net, &checkpoint.reducer) {
        if sys.dim() == dim && sys.energy(&vec![0.0; dim]).is_some() {
            report.alignment_error = aligned_energy_error(onet, sys, &report, spec.energy_half_width, spec.energy_grid);
        }
    }
    Ok(report)
}

fn aligned_energy_error(
    net: &OnsagerNet,
    sys: &onsager::systems::BenchmarkSystem,
    report: &AnalysisReport,
    half_width: f64,
    grid: usize,
) -> Option<f64> {
    let origin = vec![0.0; net.dim];
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let anchor = report
        .fixed_points
        .iter()
        .filter(|fp| fp.stability == Stability::Stable)
        .min_by(|a, b| norm(&a.location).total_cmp(&norm(&b.location)))?
        .location
        .clone();
    let al = align_energy(
        |h| net.potential_grad(h),
        |h| sys.energy_grad(h).unwrap_or_default(),
        &anchor,
        &origin,
    )
    .ok()?;
    let lower = vec![-half_width; net.dim];
    let upper = vec![half_width; net.dim];
    Some(energy_l2_error(
        |h| al.aligned(|x| net.potential(x), h),
        |h| sys.energy(h).unwrap_or(f64::NAN),
        &lower,
        &upper,
        grid,
    ))
}

/// Heun rollout of the model; CSV columns `t,h_0..h_{m-1}` plus `energy`
/// for OnsagerNet models.
pub fn rollout(checkpoint: &Checkpoint, h0: &[f64], t_end: f64, dt: f64) -> Result<String> {
    let net = &checkpoint.model;
    let dim = net.dim();
    if h0.len() != dim {
        return Err(CliError::input(format!(
            "initial state has {} coordinates, model has {dim}",
            h0.len()
        )));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(CliError::input("rollout needs a finite T >= 0 and dt > 0"));
    }
    let n = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let step = if n == 0 { dt } else { t_end / n as f64 };
    let path = trajectory(Scheme::Heun, net, h0, step, n)?;
    let energy = net.as_onsager();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::input(format!("writing rollout: {e}"));
    let mut head = vec!["t".to_string()];
    head.extend((0..dim).map(|i| format!("h_{i}")));
    if energy.is_some() {
        head.push("energy".into());
    }
    w.write_record(&head).map_err(csv_err)?;
    for (k, h) in path.iter().enumerate() {
        let mut row = vec![(k as f64 * step).to_string()];
        row.extend(h.iter().map(f64::to_string));
        if let Some(onet) = energy {
            row.push(onet.potential(h).to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::input(format!("writing rollout: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::input(e.to_string()))
}

/// Condensed, machine-readable summary of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_kind: String,
    pub dim: usize,
    pub param_count: usize,
    pub reducer: Option<String>,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub epochs_run: usize,
    pub final_lr: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub mse_train: Option<f64>,
    pub mse_test: Option<f64>,
    pub analysis: Option<AnalysisSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub stable_fixed_points: usize,
    pub unstable_fixed_points: usize,
    pub marginal_fixed_points: usize,
    pub periodic_orbits: usize,
    pub max_lyapunov_exponent: Option<f64>,
    pub positive_exponent: bool,
    pub alignment_error: Option<f64>,
}

impl AnalysisSummary {
    pub fn from_report(r: &AnalysisReport) -> Self {
        let count = |f: &dyn Fn(Stability) -> bool| r.fixed_points.iter().filter(|fp| f(fp.stability)).count();
        Self {
            stable_fixed_points: count(&|s| s == Stability::Stable),
            unstable_fixed_points: count(&|s| matches!(s, Stability::Unstable | Stability::Saddle)),
            marginal_fixed_points: count(&|s| s == Stability::Marginal),
            periodic_orbits: r.periodic_orbits.len(),
            max_lyapunov_exponent: r.lyapunov_exponents.iter().copied().reduce(f64::max),
            positive_exponent: r.positive_exponent,
            alignment_error: r.alignment_error,
        }
    }
}

pub fn export_report(checkpoint: &Checkpoint, analysis: Option<&AnalysisReport>) -> RunSummary {
    let (kind, dim, params) = match &checkpoint.model {
        OdeNet::Onsager(n) => ("onsager", n.dim, checkpoint.model.param_count()),
        OdeNet::MlpOden(n) => ("mlp_oden", n.dim(), checkpoint.model.param_count()),
    };
    let last = checkpoint.summary.history.last();
    RunSummary {
        model_kind: kind.into(),
        dim,
        param_count: params,
        reducer: checkpoint.reducer.as_ref().map(|r| match r {
            ReducerState::Pca(_) => "pca".into(),
            ReducerState::Autoencoder(_) => "autoencoder".into(),
        }),
        seed: checkpoint.seed,
        dataset_fingerprint: checkpoint.dataset_fingerprint.clone(),
        epochs_run: checkpoint.summary.history.len(),
        final_lr: last.map(|r| r.lr),
        final_train_loss: last.map(|r| r.train_loss),
        mse_train: checkpoint.summary.mse_train,
        mse_test: checkpoint.summary.mse_test,
        analysis: analysis.map(AnalysisSummary::from_report),
    }
}
