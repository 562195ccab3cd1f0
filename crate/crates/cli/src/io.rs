//! File input and all-or-nothing output.

use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::CliError;

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes every file through a temporary sibling and renames them into
/// place only once all contents are on disk. If a rename fails, files
/// already renamed are removed again.
pub fn write_all(files: &[(&Path, &[u8])]) -> Result<(), CliError> {
    let werr = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Write { path, source }
    };
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let mut tmp = NamedTempFile::new_in(&dir).map_err(werr(path))?;
        tmp.write_all(bytes).map_err(werr(path))?;
        tmp.as_file().sync_all().map_err(werr(path))?;
        staged.push((tmp, *path));
    }
    let mut done: Vec<&Path> = Vec::new();
    for (tmp, path) in staged {
        if let Err(e) = tmp.persist(path) {
            for p in done {
                let _ = std::fs::remove_file(p);
            }
            return Err(CliError::Write {
                path: path.to_path_buf(),
                source: e.error,
            });
        }
        done.push(path);
    }
    Ok(())
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_all(&[(path, bytes)])
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `<path><suffix>`, e.g. `out.jsonl` + `.manifest.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
