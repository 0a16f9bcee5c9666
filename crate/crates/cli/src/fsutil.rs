//! Output locking and atomic writes.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{CmdResult, Failure};

/// Exclusive claim on an output path, held as `<path>.lock` beside it.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(output: &Path) -> CmdResult<Self> {
        let mut name = output
            .file_name()
            .ok_or_else(|| {
                Failure::config(format!("output path {} has no file name", output.display()))
            })?
            .to_os_string();
        name.push(".lock");
        let path = output.with_file_name(name);
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Failure::config(format!(
                    "{} is locked by another command; remove {} if that command is gone",
                    output.display(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult {
    let dir = parent_dir(path);
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Failure::from(e.error))?;
    Ok(())
}

/// Builds a directory in a temporary sibling and swaps it in at `path`
/// only when `fill` succeeds.
pub fn build_dir_atomic<F>(path: &Path, fill: F) -> CmdResult
where
    F: FnOnce(&Path) -> CmdResult,
{
    let parent = parent_dir(path);
    fs::create_dir_all(parent)?;
    let tmp = tempfile::Builder::new()
        .prefix(".precondgen-")
        .tempdir_in(parent)?;
    fill(tmp.path())?;
    if path.exists() {
        fs::remove_dir_all(path)?;
    }
    let kept = tmp.keep();
    fs::rename(&kept, path)?;
    Ok(())
}
