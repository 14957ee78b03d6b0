//! Run directories and their lock files.

use std::fs::OpenOptions;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use slu_core::Error;

use crate::error::{CliError, CliResult};

/// Environment variable naming the directory relative run paths live under.
pub const RUN_ROOT_ENV: &str = "SLU_RUN_ROOT";
pub const LOCK_FILE: &str = "run.lock";

/// Resolve a run directory: relative paths go under `$SLU_RUN_ROOT` when it
/// is set, otherwise under the working directory.
pub fn resolve_run_dir(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// An exclusively held run directory. The lock file is removed on drop.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn acquire(path: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&lock, e))?;
                Ok(Self {
                    path: path.to_path_buf(),
                    lock,
                })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Locked(path.to_path_buf())),
            Err(e) => Err(Error::io(&lock, e).into()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}
