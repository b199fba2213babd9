//! Deterministic result files.
//!
//! Every JSON document carries the tool version and a digest of the raw
//! configuration bytes, so a result can always be traced to the run that
//! produced it. Fields serialize in declaration order and floats print in
//! the shortest form that parses back exactly, which keeps re-runs
//! byte-identical. File names inside documents are bare names, never
//! paths, so the choice of output directory does not leak into content.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_sha256: &'a str,
    result: T,
}

pub struct OutputDir {
    dir: PathBuf,
    command: &'static str,
    config_sha256: String,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn new(dir: &Path, command: &'static str, config_bytes: &[u8]) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let mut hasher = Sha256::new();
        hasher.update(config_bytes);
        let config_sha256 = hasher.finalize().iter().fold(
            String::with_capacity(64),
            |mut acc, b| {
                use std::fmt::Write as _;
                write!(acc, "{b:02x}").expect("writing to a string cannot fail");
                acc
            },
        );
        Ok(OutputDir { dir: dir.to_path_buf(), command, config_sha256, written: Vec::new() })
    }

    /// Writes the command's JSON document, named `<command>.json`.
    pub fn write_json<T: Serialize>(&mut self, result: &T) -> Result<(), CliError> {
        let envelope = Envelope {
            tool: "ifsthermo",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config_sha256: &self.config_sha256,
            result,
        };
        let mut bytes = serde_json::to_vec_pretty(&envelope)
            .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
        bytes.push(b'\n');
        let path = self.dir.join(format!("{}.json", self.command));
        fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    /// Writes a CSV side file `<stem>.csv` through the given writer.
    pub fn write_csv<F>(&mut self, stem: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        let path = self.dir.join(format!("{stem}.csv"));
        fs::write(&path, buf)?;
        self.written.push(path);
        Ok(())
    }

    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }
}
