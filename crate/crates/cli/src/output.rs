//! CSV tables and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::ensemble::RunOutput;
use crate::error::CliError;

pub const MEANS_HEADER: [&str; 6] = ["t", "psi", "initial", "dt", "mean", "stderr"];
pub const ECDF_HEADER: [&str; 5] = ["psi", "initial", "dt", "value", "cdf"];
pub const DISTANCES_HEADER: [&str; 5] = ["t", "method", "value", "n", "epsilon"];

/// Bumped whenever a column set changes.
pub const SCHEMA_VERSION: u32 = 1;

fn table<const C: usize>(header: [&str; C], rows: impl Iterator<Item = [String; C]>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn means_csv(run: &RunOutput) -> Vec<u8> {
    table(
        MEANS_HEADER,
        run.means.iter().map(|r| {
            [
                r.t.to_string(),
                r.psi.clone(),
                r.initial.clone(),
                r.dt.to_string(),
                r.estimate.mean.to_string(),
                r.estimate.stderr.to_string(),
            ]
        }),
    )
}

pub fn ecdf_csv(run: &RunOutput) -> Vec<u8> {
    table(
        ECDF_HEADER,
        run.ecdfs.iter().flat_map(|e| {
            e.ecdf.steps().map(move |(v, c)| {
                [e.psi.clone(), e.initial.clone(), e.dt.to_string(), v.to_string(), c.to_string()]
            })
        }),
    )
}

pub fn distances_csv(run: &RunOutput) -> Vec<u8> {
    table(
        DISTANCES_HEADER,
        run.distances.iter().map(|r| {
            [
                r.t.to_string(),
                r.method.clone(),
                r.value.to_string(),
                r.n.to_string(),
                r.epsilon.map(|e| e.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub wall_clock_seconds: f64,
    pub unix_time: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityEntry {
    pub dt: f64,
    pub certified: bool,
    pub ok: bool,
    pub overridden: bool,
    pub margin_a: Option<f64>,
    pub threshold_a: Option<f64>,
    pub margin_b: Option<f64>,
    pub threshold_b: Option<f64>,
    pub dt_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegEntry {
    pub initial: String,
    pub dt: f64,
    /// Derived leg seed, hex (TOML integers are signed 64-bit).
    pub seed: String,
    pub steps: usize,
    pub radius: f64,
    pub max_state_norm: f64,
    pub truncation_excess: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub initial: String,
    pub dt: f64,
    pub reference_time: f64,
    pub method: String,
    pub samples_total: usize,
    pub samples_used: usize,
    /// `seeded-subsample`, or `full` when every sample was used.
    pub sampling: String,
    pub bl_best_functional: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest: ManifestMeta,
    pub config: RunConfig,
    pub admissibility: Vec<AdmissibilityEntry>,
    pub legs: Vec<LegEntry>,
    pub distance: Option<DistanceEntry>,
    /// File name -> SHA-256 (hex).
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn from_run(run: &RunOutput, files: BTreeMap<String, String>) -> Self {
        let overridden = run.config.output.override_admissibility;
        Self {
            manifest: ManifestMeta {
                tool: "temsp".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                schema_version: SCHEMA_VERSION,
                wall_clock_seconds: run.wall_clock_seconds,
                unix_time: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
            config: run.config.clone(),
            admissibility: run
                .admissibility
                .iter()
                .map(|(dt, rep)| AdmissibilityEntry {
                    dt: *dt,
                    certified: rep.is_some(),
                    ok: rep.is_some_and(|r| r.ok),
                    overridden,
                    margin_a: rep.map(|r| r.margin_a),
                    threshold_a: rep.map(|r| r.threshold_a),
                    margin_b: rep.map(|r| r.margin_b),
                    threshold_b: rep.map(|r| r.threshold_b),
                    dt_max: rep.map(|r| r.dt_max),
                })
                .collect(),
            legs: run
                .legs
                .iter()
                .map(|l| LegEntry {
                    initial: l.initial.clone(),
                    dt: l.dt,
                    seed: format!("{:#018x}", l.seed),
                    steps: l.steps,
                    radius: l.radius,
                    max_state_norm: l.max_state_norm,
                    truncation_excess: l.truncation_excess,
                })
                .collect(),
            distance: run.distance_info.as_ref().map(|d| DistanceEntry {
                initial: d.initial.clone(),
                dt: d.dt,
                reference_time: d.reference_time,
                method: d.method.clone(),
                samples_total: d.samples_total,
                samples_used: d.samples_used,
                sampling: if d.samples_used < d.samples_total {
                    "seeded-subsample".into()
                } else {
                    "full".into()
                },
                bl_best_functional: d.bl_best.clone(),
            }),
            files,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `files` and a manifest into `dir`. Each file goes to a hidden
/// temporary name first; on any failure everything written so far is
/// removed, so a directory never holds a partial run.
pub fn write_files(
    dir: &Path,
    files: &[(&str, Vec<u8>)],
    manifest: impl FnOnce(BTreeMap<String, String>) -> String,
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let checksums: BTreeMap<String, String> = files.iter().map(|(n, b)| (n.to_string(), sha256_hex(b))).collect();
    let manifest_bytes = manifest(checksums).into_bytes();
    let all: Vec<(&str, &[u8])> = files
        .iter()
        .map(|(n, b)| (*n, b.as_slice()))
        .chain([("manifest.toml", manifest_bytes.as_slice())])
        .collect();
    let mut staged = Vec::new();
    let result = (|| {
        for (name, bytes) in &all {
            let tmp = dir.join(format!(".{name}.partial"));
            staged.push(tmp.clone());
            fs::write(&tmp, bytes).map_err(|e| CliError::io(format!("writing {}", tmp.display()), e))?;
        }
        let mut done = Vec::new();
        for (name, _) in &all {
            let tmp = dir.join(format!(".{name}.partial"));
            let dst = dir.join(name);
            fs::rename(&tmp, &dst).map_err(|e| CliError::io(format!("renaming to {}", dst.display()), e))?;
            done.push(dst);
        }
        Ok(done)
    })();
    if result.is_err() {
        for p in staged {
            let _ = fs::remove_file(&p);
        }
        for (name, _) in &all {
            let _ = fs::remove_file(dir.join(name));
        }
    }
    result
}

/// Writes `means.csv`, `ecdf.csv`, `distances.csv`, any `extra` files and
/// `manifest.toml` into the configured output directory.
pub fn write_run(run: &RunOutput, extra: &[(&str, Vec<u8>)]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = vec![
        ("means.csv", means_csv(run)),
        ("ecdf.csv", ecdf_csv(run)),
        ("distances.csv", distances_csv(run)),
    ];
    files.extend(extra.iter().cloned());
    write_files(&run.config.output.dir, &files, |sums| {
        toml::to_string(&Manifest::from_run(run, sums)).expect("manifest serialises")
    })
}
