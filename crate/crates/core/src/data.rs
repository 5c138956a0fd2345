//! CSV ingestion and the embedded example datasets.

use crate::error::{Result, TrendError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

const BUN_CSV: &str = include_str!("../data/bun.csv");
const GLYPHOSATE_CSV: &str = include_str!("../data/glyphosate.csv");

/// Names accepted by [`Dataset::open`] in place of a path.
pub const EMBEDDED: [&str; 2] = ["bun", "glyphosate"];

/// A long-format table, one row per experimental unit, kept as text until a
/// column is requested with a type.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub source: String,
    pub headers: Vec<String>,
    records: Vec<Record>,
    /// Hex SHA-256 of the raw bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
struct Record {
    line: usize,
    fields: Vec<String>,
}

/// A row left out of the analysis, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

/// Rows retained for an analysis; `used.len() + rejected.len()` equals the
/// number of data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub used: Vec<usize>,
    pub rejected: Vec<Rejection>,
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

impl Dataset {
    /// Opens an embedded dataset by name, or else a CSV file.
    pub fn open(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "bun" => Self::from_bytes("bun", BUN_CSV.as_bytes()),
            "glyphosate" => Self::from_bytes("glyphosate", GLYPHOSATE_CSV.as_bytes()),
            path => Self::from_path(path),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| TrendError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&path.display().to_string(), &bytes)
    }

    pub fn from_bytes(source: &str, bytes: &[u8]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(bytes);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| ingest_error(e, 1))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(TrendError::Ingest { line: 1, message: "missing header row".into() });
        }
        for (i, h) in headers.iter().enumerate() {
            if headers[..i].contains(h) {
                return Err(TrendError::Ingest { line: 1, message: format!("duplicate column `{h}`") });
            }
        }
        let mut records = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| ingest_error(e, i + 2))?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
            records.push(Record { line, fields: rec.iter().map(|f| f.to_string()).collect() });
        }
        if records.is_empty() {
            return Err(TrendError::Ingest { line: 1, message: "the file has no data rows".into() });
        }
        Ok(Self {
            source: source.to_string(),
            headers,
            records,
            sha256: Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.records.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TrendError::Ingest {
                line: 1,
                message: format!("missing required column `{name}` (columns: {})", self.headers.join(", ")),
            })
    }

    /// Keeps rows with a value in every required column and itemizes the
    /// rest.
    pub fn select(&self, required: &[&str]) -> Result<Selection> {
        let cols: Vec<(usize, &str)> = required
            .iter()
            .map(|c| self.column_index(c).map(|i| (i, *c)))
            .collect::<Result<_>>()?;
        let mut sel = Selection { used: Vec::new(), rejected: Vec::new() };
        for (r, rec) in self.records.iter().enumerate() {
            let missing: Vec<&str> = cols.iter().filter(|(i, _)| is_missing(&rec.fields[*i])).map(|(_, c)| *c).collect();
            if missing.is_empty() {
                sel.used.push(r);
            } else {
                let reason = format!("missing value in {}", missing.join(", "));
                log::warn!("{}: line {} rejected, {reason}", self.source, rec.line);
                sel.rejected.push(Rejection { line: rec.line, reason });
            }
        }
        Ok(sel)
    }

    pub fn numeric(&self, column: &str, rows: &[usize]) -> Result<Vec<f64>> {
        let c = self.column_index(column)?;
        rows.iter()
            .map(|&r| {
                let rec = &self.records[r];
                let raw = rec.fields[c].trim();
                raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| TrendError::Ingest {
                    line: rec.line,
                    message: format!("column `{column}`: `{raw}` is not a number"),
                })
            })
            .collect()
    }

    pub fn text(&self, column: &str, rows: &[usize]) -> Result<Vec<String>> {
        let c = self.column_index(column)?;
        Ok(rows.iter().map(|&r| self.records[r].fields[c].trim().to_string()).collect())
    }

    /// Source line of data row `r`.
    pub fn line(&self, r: usize) -> usize {
        self.records[r].line
    }
}

fn ingest_error(e: csv::Error, fallback_line: usize) -> TrendError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
    TrendError::Ingest { line, message: e.to_string() }
}

/// Dummy columns for the levels of a categorical variable, first level as
/// reference, in order of first appearance.
pub fn indicator_columns(name: &str, values: &[String]) -> Vec<(String, Vec<f64>)> {
    let mut levels: Vec<&String> = Vec::new();
    for v in values {
        if !levels.contains(&v) {
            levels.push(v);
        }
    }
    levels
        .iter()
        .skip(1)
        .map(|l| (format!("{name}{l}"), values.iter().map(|v| (v == *l) as u8 as f64).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_bun() {
        let d = Dataset::open("bun").unwrap();
        assert_eq!(d.rows(), 60);
        let sel = d.select(&["dose", "BUN"]).unwrap();
        let dose = d.numeric("dose", &sel.used).unwrap();
        for level in [0.0, 62.5, 125.0, 250.0, 500.0, 1000.0] {
            assert_eq!(dose.iter().filter(|x| **x == level).count(), 10);
        }
        let bun = d.numeric("BUN", &sel.used).unwrap();
        assert_eq!((bun[0], bun[15], bun[59]), (15.0, 20.8, 17.1));
    }

    #[test]
    fn embedded_glyphosate() {
        let d = Dataset::open("glyphosate").unwrap();
        assert_eq!(d.rows(), 16);
        let a: Vec<usize> = (0..4).collect();
        assert_eq!(d.numeric("tumor", &a).unwrap(), vec![2.0, 5.0, 4.0, 2.0]);
        assert_eq!(d.numeric("mice", &a).unwrap(), vec![48.0, 49.0, 50.0, 49.0]);
        let study = d.text("study", &(0..16).collect::<Vec<_>>()).unwrap();
        assert_eq!(study.iter().filter(|s| *s == "D").count(), 4);
        assert_eq!(indicator_columns("study", &study).len(), 3);
    }

    #[test]
    fn header_only_is_empty() {
        let err = Dataset::from_bytes("x", b"dose,y\n").unwrap_err();
        assert!(matches!(err, TrendError::Ingest { line: 1, .. }));
    }

    #[test]
    fn non_numeric_dose_names_line() {
        let d = Dataset::from_bytes("x", b"dose,y\n0,1\n\"1,5\",2\nhigh,3\n").unwrap();
        let sel = d.select(&["dose", "y"]).unwrap();
        match d.numeric("dose", &sel.used) {
            Err(TrendError::Ingest { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("1,5"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_values_are_itemized() {
        let d = Dataset::from_bytes("x", b"dose,y,z\n0,1,\n1,NA,2\n2,,3\n3,4,5\n").unwrap();
        let sel = d.select(&["dose", "y"]).unwrap();
        assert_eq!(sel.used, vec![0, 3]);
        assert_eq!(sel.rejected.len(), 2);
        assert_eq!(sel.rejected[0].line, 3);
        assert!(sel.rejected[1].reason.contains('y'));
        assert_eq!(sel.used.len() + sel.rejected.len(), d.rows());
        assert!(matches!(d.select(&["weight"]), Err(TrendError::Ingest { .. })));
    }

    #[test]
    fn ragged_rows_are_errors() {
        assert!(Dataset::from_bytes("x", b"a,b\n1,2\n3\n").is_err());
    }

    #[test]
    fn hash_tracks_bytes() {
        let a = Dataset::from_bytes("x", b"a\n1\n").unwrap();
        let b = Dataset::from_bytes("y", b"a\n2\n").unwrap();
        assert_ne!(a.sha256, b.sha256);
        assert_eq!(a.sha256.len(), 64);
    }
}
