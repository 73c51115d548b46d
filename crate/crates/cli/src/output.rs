//! CSV and JSON emission.
//!
//! Every CSV file starts with `#`-prefixed metadata lines carrying the
//! config hash and the master seed, then a header row. Values are UTF-8,
//! comma-separated, `.` decimal. JSON output uses the declaration order of
//! the structs, which is stable.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Identity stamped into every emitted file.
#[derive(Debug, Clone)]
pub struct RunStamp {
    pub config_sha256: String,
    pub master_seed: u64,
}

/// Data-table output format selected with `--format`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

/// An in-memory table: header plus stringified rows, written as CSV or as an
/// array of JSON objects depending on the selected format.
pub struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Writes the table under `dir` with the format-appropriate extension;
    /// returns the path actually written.
    pub fn write(
        &self,
        dir: &Path,
        basename: &str,
        format: TableFormat,
        stamp: &RunStamp,
    ) -> CliResult<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!(
            "{basename}.{}",
            match format {
                TableFormat::Csv => "csv",
                TableFormat::Json => "json",
            }
        ));
        let mut out = String::new();
        match format {
            TableFormat::Csv => {
                writeln!(out, "# config_sha256={}", stamp.config_sha256).unwrap();
                writeln!(out, "# master_seed={}", stamp.master_seed).unwrap();
                writeln!(out, "{}", self.columns.join(",")).unwrap();
                for row in &self.rows {
                    writeln!(out, "{}", row.join(",")).unwrap();
                }
            }
            TableFormat::Json => {
                let rows: Vec<serde_json::Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let mut obj = serde_json::Map::new();
                        for (col, cell) in self.columns.iter().zip(row) {
                            let value = cell
                                .parse::<f64>()
                                .ok()
                                .and_then(|v| serde_json::Number::from_f64(v))
                                .map(serde_json::Value::Number)
                                .unwrap_or_else(|| serde_json::Value::String(cell.clone()));
                            obj.insert((*col).to_string(), value);
                        }
                        serde_json::Value::Object(obj)
                    })
                    .collect();
                let doc = serde_json::json!({
                    "config_sha256": stamp.config_sha256,
                    "master_seed": stamp.master_seed,
                    "rows": rows,
                });
                out = serde_json::to_string_pretty(&doc)?;
                out.push('\n');
            }
        }
        atomic_write(&path, out.as_bytes())?;
        Ok(path)
    }
}

/// Writes a JSON document under `dir` and returns its path.
pub fn write_json<T: serde::Serialize>(dir: &Path, basename: &str, value: &T) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{basename}.json"));
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(&path, &bytes)?;
    Ok(path)
}

fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// A parsed CSV: named columns and numeric-or-string cells, with `#` lines
/// skipped. Errors carry 1-based row/column coordinates.
pub struct CsvData {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvData {
    pub fn read(path: &Path) -> CliResult<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = raw
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| {
            CliError::malformed_csv(format!("{}: no header row", path.display()))
        })?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (lineno, line) in lines {
            let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            if cells.len() != columns.len() {
                return Err(CliError::malformed_csv(format!(
                    "{}: row {} has {} fields, expected {}",
                    path.display(),
                    lineno + 1,
                    cells.len(),
                    columns.len()
                )));
            }
            rows.push(cells);
        }
        Ok(Self { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> CliResult<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| {
                CliError::malformed_csv(format!(
                    "missing column '{name}' (found: {})",
                    self.columns.join(", ")
                ))
            })
    }

    /// Numeric view of one column, with row/column diagnostics on failure.
    pub fn numeric_column(&self, name: &str) -> CliResult<Vec<f64>> {
        let idx = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row[idx].parse::<f64>().map_err(|_| {
                    CliError::malformed_csv(format!(
                        "row {}, column '{}': '{}' is not a number",
                        i + 1,
                        name,
                        row[idx]
                    ))
                })
            })
            .collect()
    }
}

/// Compact float formatting for CSV cells: round-trippable, no trailing
/// zeros beyond what f64 needs.
pub fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_metadata() {
        let dir = std::env::temp_dir().join("tbi_output_test");
        let stamp = RunStamp {
            config_sha256: "ab".repeat(32),
            master_seed: 42,
        };
        let mut t = Table::new(vec!["a", "b"]);
        t.push(vec![fmt_f64(1.5), fmt_f64(-3.0)]);
        t.push(vec![fmt_f64(2.0), "text".to_string()]);
        let path = t.write(&dir, "table", TableFormat::Csv, &stamp).unwrap();
        let data = CsvData::read(&path).unwrap();
        assert_eq!(data.columns, vec!["a", "b"]);
        assert_eq!(data.rows.len(), 2);
        assert_eq!(data.numeric_column("a").unwrap(), vec![1.5, 2.0]);
        assert!(data.numeric_column("b").is_err());
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.starts_with("# config_sha256="));
        assert!(raw.contains("# master_seed=42"));
    }

    #[test]
    fn ragged_rows_are_diagnosed() {
        let dir = std::env::temp_dir().join("tbi_output_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n3\n").unwrap();
        let err = CsvData::read(&path).unwrap_err();
        assert_eq!(err.code, "MALFORMED_CSV");
        assert!(err.message.contains("row 3"), "{}", err.message);
    }
}
