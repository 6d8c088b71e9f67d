//! Tables with a self-describing header, rendered as CSV or JSON.
//!
//! Every file starts with the schema version, the full run configuration and
//! a content hash of that configuration, so a result can be traced back to
//! the exact inputs that produced it.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: &str = "hardwall/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}
impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}
impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        Cell::Float(x.unwrap_or(f64::NAN))
    }
}

impl Cell {
    /// Shortest round-trip decimal, `.` separator, no locale.
    fn csv_text(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_nan() => "nan".into(),
            Cell::Float(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Float(x) => serde_json::to_string(&(x + 0.0)).expect("finite float"),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    /// JSON has no non-finite numbers; they become null.
    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => json!(i),
            Cell::Float(x) if x.is_finite() => json!(x + 0.0),
            Cell::Float(_) => Value::Null,
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    /// Table kind, e.g. `tails`; combined with [`SCHEMA_VERSION`].
    pub kind: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(kind: &'static str, columns: &[&'static str]) -> Self {
        Self { kind, columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width for {}", self.kind);
        self.rows.push(row);
    }

    pub fn schema(&self) -> String {
        format!("{SCHEMA_VERSION}/{}", self.kind)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }
}

/// Git-style content hash: sha256 of `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Compact config JSON and its content hash.
pub fn config_header(config: &Value) -> (String, String) {
    let text = serde_json::to_string(config).expect("config serialises");
    let hash = content_hash(text.as_bytes());
    (text, hash)
}

pub fn render(table: &Table, config: &Value, format: Format) -> Result<Vec<u8>, CliError> {
    let (cfg, hash) = config_header(config);
    match format {
        Format::Csv => {
            let mut out = Vec::new();
            writeln!(out, "# schema: {}", table.schema()).unwrap();
            writeln!(out, "# config: {cfg}").unwrap();
            writeln!(out, "# config_sha256: {hash}").unwrap();
            let mut w = csv::Writer::from_writer(out);
            let io = |e: csv::Error| CliError::Numerical(format!("writing CSV: {e}"));
            w.write_record(&table.columns).map_err(io)?;
            for row in &table.rows {
                w.write_record(row.iter().map(Cell::csv_text)).map_err(io)?;
            }
            w.into_inner().map_err(|e| CliError::Numerical(format!("writing CSV: {e}")))
        }
        Format::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| {
                    let m: Map<String, Value> =
                        table.columns.iter().zip(r).map(|(c, v)| (c.to_string(), v.json())).collect();
                    Value::Object(m)
                })
                .collect();
            let doc = json!({
                "schema": table.schema(),
                "config": config,
                "config_sha256": hash,
                "columns": table.columns,
                "rows": rows,
            });
            let mut out = serde_json::to_vec_pretty(&doc).expect("json");
            out.push(b'\n');
            Ok(out)
        }
    }
}

/// Write through a temporary file in the target directory, then rename, so a
/// failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| CliError::Validation(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn git_blob_hash() {
        // `printf 'hello\n' | git hash-object --stdin` uses sha1; the framing is the same.
        let mut h = Sha256::new();
        h.update(b"blob 6\0hello\n");
        assert_eq!(content_hash(b"hello\n"), hex::encode(h.finalize()));
    }

    #[test]
    fn csv_and_json_mirror() {
        let mut t = Table::new("demo", &["n", "x", "flag"]);
        t.push(vec![3usize.into(), 0.1.into(), true.into()]);
        t.push(vec![4usize.into(), f64::NEG_INFINITY.into(), false.into()]);
        let cfg = json!({"command": "demo"});
        let csv = String::from_utf8(render(&t, &cfg, Format::Csv).unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# schema: hardwall/1/demo");
        assert!(lines[2].starts_with("# config_sha256: "));
        assert_eq!(&lines[3..], &["n,x,flag", "3,0.1,true", "4,-inf,false"]);
        let js: Value = serde_json::from_slice(&render(&t, &cfg, Format::Json).unwrap()).unwrap();
        assert_eq!(js["rows"][0]["x"], json!(0.1));
        assert_eq!(js["rows"][1]["x"], Value::Null);
        assert_eq!(js["config_sha256"].as_str().unwrap(), &lines[2]["# config_sha256: ".len()..]);
    }
}
