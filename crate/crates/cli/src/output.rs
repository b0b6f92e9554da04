//! Artifact IO: reading inputs with located errors, writing outputs and
//! their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::error::CliError;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    let kind = if e.kind() == std::io::ErrorKind::NotFound { "FileNotFound" } else { "IoError" };
    CliError::runtime(kind, format!("{}: {e}", path.display()))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| io_error(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Versions {
    rwtkan: &'static str,
    model_format: u32,
    equation_bank_sha256: &'static str,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    seed: u64,
    versions: Versions,
    inputs: &'a [FileDigest],
    outputs: &'a [FileDigest],
}

/// Collects the files one command reads and writes, then records them in
/// `<name>.manifest.json`. Entries use file names only so the manifest does
/// not depend on where the run happened.
pub struct ArtifactSet {
    dir: PathBuf,
    name: String,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl ArtifactSet {
    pub fn new(dir: &Path, name: impl Into<String>) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), name: name.into(), inputs: Vec::new(), outputs: Vec::new() })
    }

    fn label(path: &Path) -> String {
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
    }

    /// Reads an input and notes its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = read_bytes(path)?;
        self.inputs.push(FileDigest { file: Self::label(path), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &Path) -> Result<String, CliError> {
        String::from_utf8(self.read(path)?).map_err(|e| CliError::runtime("IoError", format!("{}: {e}", path.display())))
    }

    /// Writes `<dir>/<file>` and notes its digest.
    pub fn write(&mut self, file: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(file);
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.outputs.push(FileDigest { file: file.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, file: &str, records: &[T]) -> Result<PathBuf, CliError> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        self.write(file, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(file, text.as_bytes())
    }

    /// Writes a CSV built from a header and string rows.
    pub fn write_csv(&mut self, file: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::runtime("CsvError", e.to_string()))?;
        self.write(file, &bytes)
    }

    pub fn finish(self, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            command: &self.name,
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            versions: Versions {
                rwtkan: env!("CARGO_PKG_VERSION"),
                model_format: rwtkan::model::MODEL_FORMAT_VERSION,
                equation_bank_sha256: rwtkan::expr::BANK_SHA256,
            },
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join(format!("{}.manifest.json", self.name));
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

/// Shortest round-trip decimal form; stable across runs and platforms.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
