//! Run reports and CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::manifold::TorusPoint;

/// How a measured value is compared against its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Assertion {
    pub fn new(name: &str, value: f64, relation: Relation, tolerance: f64) -> Self {
        let pass = match relation {
            Relation::AtMost => value <= tolerance,
            Relation::Below => value < tolerance,
            Relation::AtLeast => value >= tolerance,
        };
        Self {
            name: name.to_string(),
            value,
            tolerance,
            relation,
            pass,
        }
    }
}

/// A reported number with nothing to compare against.
#[derive(Debug, Clone, Serialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub subcommand: String,
    pub seed: u64,
    pub strict: bool,
    pub threads: usize,
    pub entries: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ConfigEcho,
    pub results: Vec<Assertion>,
    pub measurements: Vec<Measurement>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
    pub runtime_seconds: f64,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|a| a.pass)
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.results.iter().find(|a| a.name == name)
    }

    pub fn measurement(&self, name: &str) -> Option<f64> {
        self.measurements.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

/// Fixed 17-significant-digit rendering used in every table.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Pads short rows (failed points) with empty fields.
    pub fn push(&mut self, mut row: Vec<String>) {
        assert!(row.len() <= self.header.len(), "row wider than header");
        row.resize(self.header.len(), String::new());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let line = |cells: &[String]| cells.iter().map(|c| quote(c)).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "{}", line(&self.header));
        for r in &self.rows {
            let _ = writeln!(out, "{}", line(r));
        }
        out
    }

    pub fn write(&self, dir: &Path, name: &str) -> std::io::Result<()> {
        fs::write(dir.join(name), self.render())
    }
}

pub fn coord_header(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

pub fn coord_cells(p: &TorusPoint) -> Vec<String> {
    p.coords().iter().map(|x| num(*x)).collect()
}

/// Header names `prefix_i_j` in row-major order.
pub fn matrix_header(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| format!("{prefix}_{i}_{j}")))
        .collect()
}

pub fn matrix_cells(m: &DMatrix<f64>) -> Vec<String> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| num(m[(i, j)])))
        .collect()
}
