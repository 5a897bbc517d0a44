use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

/// Bad input from the user: exits with status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(invalid(format!("{} is not a readable file", path.display())));
    }
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Fails early when an output file could not be created in its directory.
pub fn require_writable(path: Option<&Path>) -> Result<()> {
    if let Some(path) = path {
        let dir = parent_dir(path);
        if !dir.is_dir() {
            return Err(invalid(format!("output directory {} does not exist", dir.display())));
        }
        if path.is_dir() {
            return Err(invalid(format!("{} is a directory", path.display())));
        }
    }
    Ok(())
}

/// Writes through a temp file in the target directory, then renames it into
/// place so readers never see a partial file.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path))
        .with_context(|| format!("creating temp file next to {}", path.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Atomic file when `out` is given, stdout otherwise.
pub fn emit(out: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, body),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require_file(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    require_file(path)?;
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        items.push(item);
    }
    Ok(items)
}

/// Numeric rows from a `.json` array of arrays or a CSV file with a header.
pub fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    require_file(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        return read_json(path);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|field| field.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| invalid(format!("{} row {}: {e}", path.display(), i + 2)))?;
        rows.push(row);
    }
    Ok(rows)
}
