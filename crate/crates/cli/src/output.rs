use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use stochastic_es::averaging::{fmt_f64, Trajectory};

use crate::error::CliError;

/// Output files held in memory until the run has finished.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("output types serialize");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    pub fn trajectory<S: AsRef<str>>(&mut self, name: &str, traj: &Trajectory<f64>, columns: &[S]) {
        let mut bytes = Vec::new();
        traj.write_csv_named(&mut bytes, columns).expect("writing to memory");
        self.add(name, bytes);
    }

    pub fn table<S: AsRef<str>>(&mut self, name: &str, header: &[S], rows: &[Vec<f64>]) {
        let mut text = header.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.iter().map(|&v| fmt_cell(v)).collect::<Vec<_>>().join(","));
            text.push('\n');
        }
        self.add(name, text.into_bytes());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    /// Writes every file plus `manifest.json` into `dir`.
    pub fn write(self, dir: &Path, run: RunInfo) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|source| io(dir, source))?;
        let mut entries = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|source| io(&path, source))?;
            entries.push(FileEntry {
                name: name.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len(),
            });
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: run.subcommand,
            config_sha256: run.config_sha256,
            seed: run.seed,
            wall_time_seconds: run.wall_time.as_secs_f64(),
            files: entries,
        };
        let path = dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|source| io(&path, source))
    }
}

/// Integers print without a mantissa so counts stay readable.
fn fmt_cell(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        fmt_f64(v)
    }
}

pub struct RunInfo {
    pub subcommand: &'static str,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub wall_time: Duration,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    config_sha256: Option<String>,
    seed: Option<u64>,
    wall_time_seconds: f64,
    files: Vec<FileEntry>,
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
    bytes: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}
