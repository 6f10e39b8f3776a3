use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cascade_core::mc::EstimateReport;
use cascade_core::{CVec, ModeIndex};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A CSV table; floats use the shortest round-trip formatting, so equal
/// numbers always render to equal bytes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn k_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("k{j}")).collect()
}

pub fn k_cells(k: &ModeIndex) -> Vec<String> {
    k.coords().iter().map(|c| c.to_string()).collect()
}

pub fn value_header(prefix: &str, r: usize) -> Vec<String> {
    (0..r)
        .flat_map(|c| [format!("{prefix}_re{c}"), format!("{prefix}_im{c}")])
        .collect()
}

pub fn value_cells(v: &CVec, r: usize) -> Vec<String> {
    v.0[..r].iter().flat_map(|z| [num(z.re), num(z.im)]).collect()
}

/// Report table columns: model, k coords, t, n_level, mean re/im per
/// component, SE, CI, n_samples, n_excluded, stable_flag.
pub fn estimate_header(dim: usize, r: usize) -> Vec<String> {
    let mut h = vec!["model".to_string()];
    h.extend(k_header(dim));
    h.extend(["t", "n_level"].map(String::from));
    h.extend(value_header("mean", r));
    h.extend(["se", "ci99", "n_samples", "n_excluded", "stable_flag"].map(String::from));
    h
}

pub fn estimate_cells(model: &str, rep: &EstimateReport) -> Vec<String> {
    let mut row = vec![model.to_string()];
    row.extend(k_cells(&rep.mode));
    row.push(num(rep.t));
    row.push(rep.functional.level_code().to_string());
    row.extend(value_cells(&rep.mean, rep.r));
    row.push(num(rep.std_error));
    row.push(num(rep.ci99));
    row.push(rep.n_samples.to_string());
    row.push(rep.n_excluded.to_string());
    row.push(u8::from(rep.stable).to_string());
    row
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub threads: usize,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<String>,
    pub exit_code: i32,
}

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects the files written by one command.
#[derive(Debug)]
pub struct OutputSink {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputSink {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let body = serde_json::to_string_pretty(value).expect("serializable") + "\n";
        self.write(name, &body)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}
