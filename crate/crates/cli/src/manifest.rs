use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stopsurf::model::DomainBox;
use stopsurf::solver::SolverConfig;

use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
    pub horizon: f64,
    pub domain: DomainBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveQuality {
    pub converged: bool,
    pub activation_tol: f64,
    pub total_iterations: usize,
    pub max_level_residual: f64,
    /// Time levels that hit the iteration budget.
    pub unconverged_levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub tool_version: String,
    pub core_version: String,
    pub problem_file: String,
    pub problem_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<SolveQuality>,
    /// `binary` or `csv`, for the value and mask files of a solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_format: Option<String>,
    /// Command-specific settings.
    pub settings: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        if command == "solve" {
            "manifest.json".into()
        } else {
            format!("{command}.manifest.json")
        }
    }

    /// Reads a manifest and checks every listed output against its hash.
    pub fn read_verified(dir: &Path, command: &str) -> Result<RunManifest, CliError> {
        let path = dir.join(Self::file_name(command));
        let text = fs::read_to_string(&path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(CliError::input(format!("{}: unsupported manifest version {}", path.display(), m.manifest_version)));
        }
        for a in &m.outputs {
            let p = dir.join(&a.path);
            let bytes = fs::read(&p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(CliError::input(format!("{}: content does not match the manifest hash", p.display())));
            }
        }
        Ok(m)
    }
}

/// Writes artifacts into one directory and records their hashes.
pub struct OutputDir {
    pub dir: PathBuf,
    pub written: Vec<Artifact>,
    _lock: LockGuard,
}

impl OutputDir {
    pub fn open(dir: &Path) -> Result<OutputDir, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
        let lock = LockGuard::acquire(dir)?;
        Ok(OutputDir { dir: dir.to_path_buf(), written: Vec::new(), _lock: lock })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        self.written.retain(|a| a.path != name);
        self.written.push(Artifact { path: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest last, listing every artifact written before it.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.outputs = std::mem::take(&mut self.written);
        manifest.finished_unix = unix_now();
        let name = RunManifest::file_name(&manifest.command);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::input(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}

pub const LOCK_FILE: &str = ".stopsurf.lock";

/// Exclusive claim on an output directory, released on drop.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(dir: &Path) -> Result<LockGuard, CliError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::input(format!(
                "{} is in use by another run (delete {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::input(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Hash of an input file, for the `inputs` list.
pub fn input_artifact(path: &Path) -> Result<Artifact, CliError> {
    let mut f = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut f, &mut bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(Artifact { path: path.display().to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
}
