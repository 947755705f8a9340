//! Output directory handling: atomic CSV writes, checksums and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";
const LOCK_NAME: &str = ".lockloop.lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmittedFile {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Options that shape a run, kept so the run can be replayed exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub locks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_hz: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbw_hz: Option<f64>,
    #[serde(default)]
    pub series: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Where the configuration came from (a path, or "built-in default").
    pub config_path: String,
    /// Exact configuration text the run used.
    pub config_text: String,
    pub seed_override: Option<u64>,
    pub seed: u64,
    pub options: RunOptions,
    pub output_dir: String,
    pub emitted_files: Vec<EmittedFile>,
}

/// An output directory owned by this process for the duration of a run.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<EmittedFile>,
}

impl OutputDir {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let lock = root.join(LOCK_NAME);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Usage(format!(
                    "output directory {} is in use by another run (remove {} if no run is active)",
                    root.display(),
                    lock.display()
                )));
            }
            Err(e) => return Err(CliError::io(&lock, e)),
        }
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Writes `name` via a temporary file and rename, recording its checksum.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.root.join(name), contents)?;
        self.files.retain(|f| f.name != name);
        self.files.push(EmittedFile {
            name: name.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len() as u64,
        });
        Ok(())
    }

    pub fn files(&self) -> &[EmittedFile] {
        &self.files
    }

    pub fn write_manifest(&mut self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.emitted_files = self.files.clone();
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST_NAME), text.as_bytes())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_NAME));
    }
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// CSV with a header row; numbers in shortest round-trip scientific form.
pub fn csv(header: &str, columns: &[&[f64]]) -> Vec<u8> {
    let rows = columns.first().map(|c| c.len()).unwrap_or(0);
    let mut out = String::with_capacity(rows * 24 * columns.len() + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for i in 0..rows {
        for (j, col) in columns.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:e}", col[i]));
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let text = String::from_utf8(csv("a,b", &[&[1.0, 0.5], &[2e6, -3.25e-9]])).unwrap();
        assert_eq!(text, "a,b\n1e0,2e6\n5e-1,-3.25e-9\n");
    }

    #[test]
    fn csv_numbers_round_trip() {
        let x = [std::f64::consts::PI, 1.0 / 3.0, 6.02214076e23];
        let text = String::from_utf8(csv("x", &[&x])).unwrap();
        let back: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, x);
    }
}
