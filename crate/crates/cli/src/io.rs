use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::Serialize;

use hsln::corpus::{parse_canonical_jsonl, write_canonical_jsonl, Dataset};

use crate::error::CliError;

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let ds = parse_canonical_jsonl(BufReader::new(f)).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    ds.validate().map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    write_canonical_jsonl(ds, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
