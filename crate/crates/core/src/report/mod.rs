//! Tables, figures, run configuration and number formatting for the CLI.

pub mod config;
mod figures;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::eds::EdsResult;

pub use config::{ConfigError, RunConfig};
pub use figures::{
    heatmap_grid, kde_curve, render_figure, silverman_bandwidth, Arrow, FigureData, FigureKind, FigureSpec,
    HeatmapCell, HeatmapGrid, Series,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("data error: {0}")]
    Data(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("table file: {0}")]
    Io(String),
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

/// Six significant digits, fixed notation for moderate magnitudes.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

/// Three decimals, the table precision.
pub fn fixed3(x: f64) -> String {
    format!("{x:.3}")
}

/// Three decimals with an explicit sign for shifts.
pub fn signed3(x: f64) -> String {
    let s = format!("{x:+.3}");
    // Keep "+0.000" rather than "-0.000" for values that round to zero.
    if s == "-0.000" {
        "+0.000".into()
    } else {
        s
    }
}

/// Display name for ISO codes that appear in the tables; other codes pass through.
pub fn country_name(code: &str) -> &str {
    match code {
        "ESP" => "Spain",
        "URY" => "Uruguay",
        "CHL" => "Chile",
        "PRT" => "Portugal",
        "CRI" => "Costa Rica",
        "GRC" => "Greece",
        "ARG" => "Argentina",
        "BRA" => "Brazil",
        "DEU" => "Germany",
        "FRA" => "France",
        "ITA" => "Italy",
        "MEX" => "Mexico",
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableLayout {
    /// Country, scenario, EDS, both means and the signed shift.
    Summary,
    /// As `Summary` without the shift column.
    Validation,
}

impl TableLayout {
    pub fn header(self) -> Vec<&'static str> {
        let mut h = vec!["Country", "Scenario", "EDS", "Mean (Real)", "Mean (Counterfactual)"];
        if self == TableLayout::Summary {
            h.push("ΔDevelopment");
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub cells: Vec<String>,
}

pub fn table_rows(results: &[EdsResult], layout: TableLayout) -> Vec<TableRow> {
    results
        .iter()
        .map(|r| {
            let name = country_name(&r.country);
            let mut cells = vec![
                name.to_string(),
                format!("{name} → {}", r.scenario),
                fixed3(r.eds),
                fixed3(r.mean_real),
                fixed3(r.mean_cf),
            ];
            if layout == TableLayout::Summary {
                cells.push(signed3(r.delta_development));
            }
            TableRow { cells }
        })
        .collect()
}

pub fn write_table_csv<W: Write>(results: &[EdsResult], layout: TableLayout, sink: W) -> Result<()> {
    let io = |e: csv::Error| ReportError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(layout.header()).map_err(io)?;
    for row in table_rows(results, layout) {
        w.write_record(&row.cells).map_err(io)?;
    }
    w.flush().map_err(|e| ReportError::Io(e.to_string()))
}

/// `{"columns": [...], "rows": [[...], ...]}` with the same cells as the CSV.
pub fn table_json(results: &[EdsResult], layout: TableLayout) -> String {
    #[derive(Serialize)]
    struct Table {
        columns: Vec<&'static str>,
        rows: Vec<Vec<String>>,
    }
    let table = Table {
        columns: layout.header(),
        rows: table_rows(results, layout).into_iter().map(|r| r.cells).collect(),
    };
    serde_json::to_string_pretty(&table).expect("table serializes")
}

/// Numeric cells of a rendered table, keyed by column header, one map per row.
pub fn read_table<R: Read>(source: R) -> Result<Vec<BTreeMap<String, f64>>> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers().map_err(|e| ReportError::Io(e.to_string()))?.clone();
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| ReportError::Io(e.to_string()))?;
        let mut row = BTreeMap::new();
        for (h, cell) in headers.iter().zip(rec.iter()).skip(2) {
            let v: f64 = cell
                .parse()
                .map_err(|_| ReportError::Io(format!("cell `{cell}` under `{h}` is not a number")))?;
            row.insert(h.to_string(), v);
        }
        out.push(row);
    }
    Ok(out)
}
