//! Output directories that appear only when a command succeeds, and the
//! run manifest every one of them carries.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rawnet::config::RunConfig;
use rawnet::tensor::write_atomic;
use rawnet::{Error, Result};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "run_manifest.toml";

/// A command's outputs are written into a sibling staging directory and
/// moved into place by [`Staging::commit`]. Dropping an uncommitted
/// staging directory deletes it, so a failed run leaves nothing behind.
pub struct Staging {
    target: PathBuf,
    dir: PathBuf,
    committed: bool,
}

impl Staging {
    /// Refuses a non-empty `target` unless `force` is set; nothing is
    /// written in that case.
    pub fn new(target: &Path, force: bool) -> Result<Self> {
        if target.is_file() {
            return Err(Error::InvalidArgument(format!("{} is a file, expected a directory", target.display())));
        }
        if target.is_dir() && !force {
            let non_empty = std::fs::read_dir(target).map_err(|e| io(target, e))?.next().is_some();
            if non_empty {
                return Err(Error::InvalidArgument(format!(
                    "{} exists and is not empty (pass --force to replace it)",
                    target.display()
                )));
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("bad output directory {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).map_err(|e| io(&parent, e))?;
        let dir = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        Ok(Self {
            target: target.to_path_buf(),
            dir,
            committed: false,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn commit(mut self, manifest: &RunManifest) -> Result<PathBuf> {
        manifest.write(&self.dir.join(MANIFEST_FILE))?;
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target).map_err(|e| io(&self.target, e))?;
        }
        std::fs::rename(&self.dir, &self.target).map_err(|e| io(&self.target, e))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.dir);
        }
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub git_describe: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
}

impl RunManifest {
    fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format {
            field: "run manifest".into(),
            message: e.to_string(),
        })?;
        write_atomic(path, text.as_bytes())
    }
}

/// Collects manifest fields while a command runs.
pub struct Run {
    command: &'static str,
    started: SystemTime,
    clock: Instant,
    pub seed: Option<u64>,
    pub config: Option<RunConfig>,
    pub inputs: Vec<String>,
}

impl Run {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: SystemTime::now(),
            clock: Instant::now(),
            seed: None,
            config: None,
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn finish(self, staging: &Staging) -> Result<RunManifest> {
        let mut outputs: Vec<String> = std::fs::read_dir(staging.dir())
            .map_err(|e| io(staging.dir(), e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        outputs.sort();
        outputs.push(MANIFEST_FILE.into());
        Ok(RunManifest {
            command: self.command.into(),
            args: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION").into(),
            git_describe: env!("RAWNET_GIT_DESCRIBE").into(),
            seed: self.seed,
            inputs: self.inputs,
            outputs,
            started_unix: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_secs: self.clock.elapsed().as_secs_f64(),
            config: self.config,
        })
    }
}
