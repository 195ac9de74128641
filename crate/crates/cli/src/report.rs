use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, OutputFormat};
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskVerdict {
    Pass,
    Fail,
    /// The task measures something and has nothing to pass or fail.
    Info,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    OptFloat(Option<f64>),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format_float(*x),
            Cell::OptFloat(x) => x.map(format_float).unwrap_or_default(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// 17 significant digits, which round-trip every double.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub index: usize,
    pub task: String,
    pub verdict: TaskVerdict,
    /// The settings the module operations were called with.
    pub inputs: Value,
    pub result: Value,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub all_passed: bool,
    pub tasks: Vec<TaskReport>,
}

impl Report {
    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

pub fn table_csv(table: &Table) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io { path: table.name.clone(), source: e.into_error() })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write `report.json` and one CSV per table into `dir`; returns the written paths.
pub fn emit_report(report: &Report, dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    if formats.contains(&OutputFormat::Json) {
        let path = dir.join("report.json");
        write_file(&path, report.to_json()?.as_bytes())?;
        written.push(path);
    }
    if formats.contains(&OutputFormat::Csv) {
        let mut used: Vec<String> = Vec::new();
        for t in &report.tasks {
            for table in &t.tables {
                let mut name = table.name.clone();
                let mut i = 2;
                while used.contains(&name) {
                    name = format!("{}-{i}", table.name);
                    i += 1;
                }
                let path = dir.join(format!("{name}.csv"));
                write_file(&path, table_csv(table)?.as_bytes())?;
                used.push(name);
                written.push(path);
            }
        }
    }
    Ok(written)
}
