//! Atomic output writes: data goes to a sibling temp file that is renamed over
//! the destination, so readers never observe a truncated file.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{KgcError, Result};

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| KgcError::io(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| KgcError::domain(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| KgcError::io(&tmp, e))?;
        f.write_all(contents).map_err(|e| KgcError::io(&tmp, e))?;
        f.sync_all().map_err(|e| KgcError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| KgcError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KgcError::io(path, e))
}
