//! Snapshot datasets on disk: a CSV of pairs plus a JSON sidecar.
//!
//! The CSV header is `traj_id,t1,h1_0..h1_{m-1},h2_0..h2_{m-1}`. Numbers are
//! written in shortest round-trip form, so reading a file back reproduces
//! every value bit for bit.

use std::path::{Path, PathBuf};

use onsager::systems::{BenchmarkSystem, DatasetConfig, SnapshotDataset, SnapshotPair};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Contents of the sidecar file next to a dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub dim: usize,
    pub tau: f64,
    pub system: BenchmarkSystem,
    pub config: DatasetConfig,
    pub seed: u64,
    /// Trajectories with `traj_id` below this value are training data.
    pub n_train_traj: usize,
    pub n_pairs: usize,
}

/// `data.csv` → `data.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn header(dim: usize) -> Vec<String> {
    let mut cols = vec!["traj_id".to_string(), "t1".to_string()];
    cols.extend((0..dim).map(|i| format!("h1_{i}")));
    cols.extend((0..dim).map(|i| format!("h2_{i}")));
    cols
}

pub fn to_csv(data: &SnapshotDataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::input(format!("writing dataset: {e}"));
    w.write_record(header(data.dim)).map_err(csv_err)?;
    for p in &data.pairs {
        let mut row = vec![p.traj_id.to_string(), p.t1.to_string()];
        row.extend(p.h1.iter().chain(&p.h2).map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::input(format!("writing dataset: {e}")))
}

/// Hex SHA-256 of the CSV bytes.
pub fn fingerprint(csv_bytes: &[u8]) -> String {
    Sha256::digest(csv_bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write(path: &Path, data: &SnapshotDataset, meta: &DatasetMeta) -> Result<String> {
    let bytes = to_csv(data)?;
    std::fs::write(path, &bytes).map_err(|e| CliError::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).map_err(|e| CliError::json(&side, e))?;
    std::fs::write(&side, json + "\n").map_err(|e| CliError::io(&side, e))?;
    Ok(fingerprint(&bytes))
}

/// Parses pair rows, checking every header column by name.
pub fn parse_csv(bytes: &[u8], dim: usize, source: &Path) -> Result<Vec<SnapshotPair>> {
    let mut r = csv::Reader::from_reader(bytes);
    let at = |msg: String| CliError::input(format!("{}: {msg}", source.display()));
    let found = r.headers().map_err(|e| at(e.to_string()))?.clone();
    let expected = header(dim);
    for (i, want) in expected.iter().enumerate() {
        match found.get(i) {
            Some(got) if got == want => {}
            Some(got) => return Err(at(format!("column {} should be `{want}`, found `{got}`", i + 1))),
            None => return Err(at(format!("missing column `{want}`"))),
        }
    }
    if found.len() > expected.len() {
        return Err(at(format!("unexpected column `{}`", &found[expected.len()])));
    }
    let mut pairs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| at(e.to_string()))?;
        let row = line + 2;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| {
                at(format!(
                    "row {row}, column `{}`: not a number: `{}`",
                    expected[i], &rec[i]
                ))
            })
        };
        let traj_id = rec[0]
            .parse::<usize>()
            .map_err(|_| at(format!("row {row}, column `traj_id`: not an index: `{}`", &rec[0])))?;
        let t1 = num(1)?;
        let h1 = (0..dim).map(|i| num(2 + i)).collect::<Result<Vec<f64>>>()?;
        let h2 = (0..dim).map(|i| num(2 + dim + i)).collect::<Result<Vec<f64>>>()?;
        pairs.push(SnapshotPair { traj_id, t1, h1, h2 });
    }
    Ok(pairs)
}

/// A dataset read back from disk.
pub struct LoadedDataset {
    pub data: SnapshotDataset,
    pub meta: DatasetMeta,
    pub fingerprint: String,
}

pub fn load(path: &Path) -> Result<LoadedDataset> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| CliError::json(&side, e))?;
    let pairs = parse_csv(&bytes, meta.dim, path)?;
    if pairs.len() != meta.n_pairs {
        return Err(CliError::input(format!(
            "{}: {} rows, sidecar declares {}",
            path.display(),
            pairs.len(),
            meta.n_pairs
        )));
    }
    Ok(LoadedDataset {
        data: SnapshotDataset::new(meta.dim, meta.tau, pairs, meta.n_train_traj),
        fingerprint: fingerprint(&bytes),
        meta,
    })
}
