//! Result bundles: named files plus a console summary.

use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub notes: Vec<String>,
}

impl RunMeta {
    pub fn new(command: &str, scenario: Option<String>, seed: Option<u64>, notes: Vec<String>) -> Self {
        RunMeta {
            command: command.into(),
            scenario,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            notes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub files: Vec<(String, Vec<u8>)>,
    /// Human-readable report for stdout.
    pub summary: String,
    /// Machine-readable report for `--json`.
    pub json: serde_json::Value,
    /// Set when the command ran but its checks did not pass.
    pub failure: Option<String>,
}

impl Bundle {
    pub fn new(meta: &RunMeta) -> CliResult<Self> {
        let mut b = Bundle {
            files: Vec::new(),
            summary: String::new(),
            json: serde_json::Value::Null,
            failure: None,
        };
        b.add_json("meta.json", meta)?;
        Ok(b)
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Failed(format!("{name}: {e}")))?;
        text.push(b'\n');
        self.files.push((name.into(), text));
        Ok(())
    }

    pub fn add_csv(&mut self, name: &str, table: Table) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::Failed(format!("{name}: {e}"));
        w.write_record(&table.header).map_err(fail)?;
        for row in &table.rows {
            w.write_record(row).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Failed(format!("{name}: {e}")))?;
        self.files.push((name.into(), bytes));
        Ok(())
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

/// A CSV table of preformatted cells.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest decimal that parses back to the same f64.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
