//! Run artifacts: `manifest.json`, `result.csv` and `report.json`.

use serde::Serialize;
use std::fs;
use std::path::Path;

/// A CSV table; every row has one cell per column.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        let row: Vec<String> = row.into_iter().collect();
        assert_eq!(row.len(), self.columns.len(), "row width differs from the header");
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Serialize)]
pub struct GridInfo {
    pub n: usize,
    pub half_width: f64,
    pub m: usize,
    pub h: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub name: &'a str,
    pub subcommand: &'a str,
    pub version: &'static str,
    pub git_describe: &'static str,
    pub seed: u64,
    pub jobs: usize,
    pub m_override: Option<usize>,
    pub config: Option<&'a mixlab::config::RunConfig>,
    pub grid: Option<GridInfo>,
    /// Every tolerance an assertion of this run compared against.
    pub tolerances: Vec<(&'static str, f64)>,
    pub wall_time_s: f64,
    pub passed: bool,
    pub failures: &'a [String],
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_per_rfc_4180() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(&["name", "value"]);
        t.push(["a, \"b\"".to_string(), num(0.1)]);
        t.push(["line\nbreak".to_string(), num(-2.5e-12)]);
        t.write(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "name,value\n\"a, \"\"b\"\"\",0.1\n\"line\nbreak\",-2.5e-12\n");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 12.820992204969127, -7e-300, 5.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
