//! Output paths and atomic writes.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{CliError, Result};

/// Environment variable redirecting every output file into one directory.
pub const OUT_DIR_ENV: &str = "RENEWAL_OUT_DIR";

/// `--out` as given, or its file name inside `$RENEWAL_OUT_DIR` when set.
pub fn resolve(out: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => {
            let name = out.file_name().map_or_else(|| out.as_os_str().to_owned(), |n| n.to_owned());
            PathBuf::from(dir).join(name)
        }
        _ => out.to_path_buf(),
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(
    out: &Path,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<PathBuf> {
    let path = resolve(out);
    let wrap = |source| CliError::Write {
        path: path.clone(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(wrap)?;
    let tmp = NamedTempFile::new_in(&dir).map_err(wrap)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(wrap)?;
        w.flush().map_err(wrap)?;
    }
    #[cfg(unix)]
    {
        // Temporary files are created owner-only; publish with the usual mode.
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(tmp.path(), std::fs::Permissions::from_mode(0o644)).map_err(wrap)?;
    }
    tmp.persist(&path).map_err(|e| wrap(e.error))?;
    Ok(path)
}
