//! Diagnostics CSV: header row first, columns in [`DiagnosticsRecord::header`]
//! order, values in Rust's shortest round-trip exponent notation, which is
//! locale independent and parses back bit-exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};

pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    /// Creates (truncating) the file and its directory, and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", DiagnosticsRecord::header().join(","))?;
        out.flush()?;
        Ok(Self { out })
    }

    /// Appends one row and flushes, so aborted runs keep every sample.
    pub fn write(&mut self, r: &DiagnosticsRecord) -> Result<()> {
        let row: Vec<String> = r.values().iter().map(|x| format!("{x:e}")).collect();
        writeln!(self.out, "{}", row.join(","))?;
        self.out.flush()?;
        Ok(())
    }
}

fn malformed(path: &Path, reason: String) -> Error {
    Error::InvalidArgument(format!("{}: {reason}", path.display()))
}

pub fn parse_records(text: &str, path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed(path, "empty file".into()))?;
    let expected = DiagnosticsRecord::header().join(",");
    if header.trim_end() != expected {
        return Err(malformed(path, "header does not match the diagnostics schema".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let values = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| malformed(path, format!("row {}: {e}", i + 1)))?;
            DiagnosticsRecord::from_values(&values).map_err(|e| malformed(path, format!("row {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = fs::read_to_string(path)?;
    parse_records(&text, path)
}
