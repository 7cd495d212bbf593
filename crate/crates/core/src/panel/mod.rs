//! Country-year panels: CSV ingestion, validation and preprocessing into the
//! normalized `(I, C, H)` triplet space the generator is trained on.

mod impute;
mod pca;
mod preprocess;
mod regime;
pub(crate) mod transform;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use impute::{impute_rolling_median, ImputationLog};
pub use pca::{pca_fit, PcaResult};
pub use preprocess::{
    preprocess, ConstantPolicy, Embedding, FittedTransforms, PcaEmbedding, PreparedPanel,
    PreparedRow, PreprocessConfig,
};
pub use regime::{
    apply_scheme, load_regime_assignment, load_similarity, RegimeScheme, SchemeKind,
    SimilarityMatrix,
};
pub use transform::{
    minmax_normalize, quantile_type7, standardize, winsorize, MinMax, Standardizer, Winsorizer,
};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}: {message}")]
    Parse { row: u64, message: String },
    #[error("degenerate series: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("scheme error: {0}")]
    Scheme(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = PanelError> = std::result::Result<T, E>;

/// One country-year observation. Missing cells are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub country: String,
    pub year: i32,
    pub inst_quality: Option<f64>,
    pub complexity: Option<f64>,
    pub human_capital: Option<f64>,
    pub regime: String,
    pub gdp_pc: Option<f64>,
    pub hdi: Option<f64>,
    pub eci: Option<f64>,
    pub gini: Option<f64>,
}

impl PanelRecord {
    pub fn new(country: &str, year: i32, triplet: [f64; 3], regime: &str) -> Self {
        Self {
            country: country.to_string(),
            year,
            inst_quality: Some(triplet[0]),
            complexity: Some(triplet[1]),
            human_capital: Some(triplet[2]),
            regime: regime.to_string(),
            gdp_pc: None,
            hdi: None,
            eci: None,
            gini: None,
        }
    }

    pub fn get(&self, v: Variable) -> Option<f64> {
        match v {
            Variable::InstQuality => self.inst_quality,
            Variable::Complexity => self.complexity,
            Variable::HumanCapital => self.human_capital,
            Variable::GdpPc => self.gdp_pc,
            Variable::Hdi => self.hdi,
            Variable::Eci => self.eci,
            Variable::Gini => self.gini,
        }
    }

    pub fn set(&mut self, v: Variable, value: Option<f64>) {
        let slot = match v {
            Variable::InstQuality => &mut self.inst_quality,
            Variable::Complexity => &mut self.complexity,
            Variable::HumanCapital => &mut self.human_capital,
            Variable::GdpPc => &mut self.gdp_pc,
            Variable::Hdi => &mut self.hdi,
            Variable::Eci => &mut self.eci,
            Variable::Gini => &mut self.gini,
        };
        *slot = value;
    }

    /// The `(I, C, H)` triplet when all three are observed.
    pub fn triplet(&self) -> Option<[f64; 3]> {
        Some([self.inst_quality?, self.complexity?, self.human_capital?])
    }
}

/// Numeric panel columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    InstQuality,
    Complexity,
    HumanCapital,
    GdpPc,
    Hdi,
    Eci,
    Gini,
}

impl Variable {
    pub const ALL: [Variable; 7] = [
        Variable::InstQuality,
        Variable::Complexity,
        Variable::HumanCapital,
        Variable::GdpPc,
        Variable::Hdi,
        Variable::Eci,
        Variable::Gini,
    ];
    pub const TRIPLET: [Variable; 3] = [
        Variable::InstQuality,
        Variable::Complexity,
        Variable::HumanCapital,
    ];
    pub const OPTIONAL: [Variable; 4] =
        [Variable::GdpPc, Variable::Hdi, Variable::Eci, Variable::Gini];

    pub fn name(self) -> &'static str {
        match self {
            Variable::InstQuality => "inst_quality",
            Variable::Complexity => "complexity",
            Variable::HumanCapital => "human_capital",
            Variable::GdpPc => "gdp_pc",
            Variable::Hdi => "hdi",
            Variable::Eci => "eci",
            Variable::Gini => "gini",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| PanelError::Schema(format!("unknown variable `{s}`")))
    }
}

/// Maps canonical column names onto the header names of a source file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColumnMap {
    renames: BTreeMap<String, String>,
}

impl ColumnMap {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Reads canonical column `canonical` from the header named `header`.
    pub fn rename(mut self, canonical: &str, header: &str) -> Self {
        self.renames.insert(canonical.to_string(), header.to_string());
        self
    }

    fn header_for<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.renames.get(canonical).map_or(canonical, String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub records: Vec<PanelRecord>,
    pub schema_version: String,
}

impl Panel {
    /// Validates uniqueness of `(country, year)` and the record invariants.
    pub fn new(records: Vec<PanelRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            validate_country(&r.country).map_err(PanelError::Schema)?;
            if r.regime.is_empty() {
                return Err(PanelError::Schema(format!(
                    "{},{} has an empty regime label",
                    r.country, r.year
                )));
            }
            if !seen.insert((r.country.as_str(), r.year)) {
                return Err(PanelError::Schema(format!(
                    "duplicate (country, year) pair {},{}",
                    r.country, r.year
                )));
            }
        }
        Ok(Self {
            records,
            schema_version: SCHEMA_VERSION.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn countries(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.country.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn regimes(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.regime.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn records_of<'a>(&'a self, country: &'a str) -> impl Iterator<Item = &'a PanelRecord> + 'a {
        self.records.iter().filter(move |r| r.country == country)
    }

    /// Sub-panel keeping records that satisfy `keep`, in order.
    pub fn filter(&self, keep: impl Fn(&PanelRecord) -> bool) -> Panel {
        Panel {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            schema_version: self.schema_version.clone(),
        }
    }

    pub fn year_range(&self) -> Option<(i32, i32)> {
        let min = self.records.iter().map(|r| r.year).min()?;
        let max = self.records.iter().map(|r| r.year).max()?;
        Some((min, max))
    }
}

fn validate_country(code: &str) -> std::result::Result<(), String> {
    if code.len() == 3 && code.bytes().all(|b| b.is_ascii_uppercase()) {
        Ok(())
    } else {
        Err(format!("country code `{code}` is not three uppercase letters"))
    }
}

const REQUIRED: [&str; 6] = [
    "country",
    "year",
    "inst_quality",
    "complexity",
    "human_capital",
    "regime",
];

/// Reads a panel from CSV. Header names are matched through `columns`;
/// optional columns missing from the header leave their fields absent.
pub fn load_panel<R: Read>(source: R, columns: &ColumnMap) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| PanelError::Io(e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(PanelError::Empty("no header row".into()));
    }
    let index_of = |canonical: &str| {
        let name = columns.header_for(canonical);
        headers.iter().position(|h| h == name)
    };
    let mut required = [0usize; 6];
    for (slot, name) in required.iter_mut().zip(REQUIRED) {
        *slot = index_of(name).ok_or_else(|| {
            PanelError::Schema(format!(
                "header lacks required column `{}`",
                columns.header_for(name)
            ))
        })?;
    }
    let optional: Vec<(Variable, usize)> = Variable::OPTIONAL
        .into_iter()
        .filter_map(|v| index_of(v.name()).map(|i| (v, i)))
        .collect();

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| PanelError::Io(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = |i: usize| row.get(i).unwrap_or("");
        let parse_err = |message: String| PanelError::Parse { row: line, message };

        let country = cell(required[0]).to_string();
        validate_country(&country).map_err(parse_err)?;
        let year: i32 = cell(required[1])
            .parse()
            .map_err(|_| parse_err(format!("year `{}` is not an integer", cell(required[1]))))?;
        let regime = cell(required[5]).to_string();
        if regime.is_empty() {
            return Err(parse_err("empty regime label".into()));
        }
        let number = |i: usize, name: &str| -> Result<Option<f64>> {
            let raw = cell(i);
            if raw.is_empty() {
                return Ok(None);
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(PanelError::Parse {
                    row: line,
                    message: format!("column `{name}` holds non-numeric value `{raw}`"),
                }),
            }
        };
        let mut record = PanelRecord {
            inst_quality: number(required[2], "inst_quality")?,
            complexity: number(required[3], "complexity")?,
            human_capital: number(required[4], "human_capital")?,
            ..PanelRecord::new(&country, year, [0.0; 3], &regime)
        };
        for &(v, i) in &optional {
            record.set(v, number(i, v.name())?);
        }
        if !seen.insert((country.clone(), year)) {
            return Err(PanelError::Schema(format!(
                "duplicate (country, year) pair {country},{year}"
            )));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(PanelError::Empty("panel has no data rows".into()));
    }
    Ok(Panel {
        records,
        schema_version: SCHEMA_VERSION.to_string(),
    })
}

/// Writes the canonical CSV layout. Optional columns appear only when at
/// least one record carries a value; numbers use the shortest exact form.
pub fn write_panel<W: Write>(panel: &Panel, sink: W) -> Result<()> {
    let optional: Vec<Variable> = Variable::OPTIONAL
        .into_iter()
        .filter(|&v| panel.records.iter().any(|r| r.get(v).is_some()))
        .collect();
    let mut writer = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| PanelError::Io(e.to_string());
    let mut header: Vec<&str> = REQUIRED.to_vec();
    header.extend(optional.iter().map(|v| v.name()));
    writer.write_record(&header).map_err(io)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &panel.records {
        let mut row = vec![
            r.country.clone(),
            r.year.to_string(),
            fmt(r.inst_quality),
            fmt(r.complexity),
            fmt(r.human_capital),
            r.regime.clone(),
        ];
        row.extend(optional.iter().map(|&v| fmt(r.get(v))));
        writer.write_record(&row).map_err(io)?;
    }
    writer.flush().map_err(|e| PanelError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "country,year,inst_quality,complexity,human_capital,regime,gdp_pc,hdi\n\
ESP,1960,0.61,1.25,5.5,EUROPE,8123.5,\n\
ESP,1961,0.62,1.3,5.6,EUROPE,8600,0.7\n\
URY,1960,0.55,-0.2,6.1,LATAM,,0.66\n";

    #[test]
    fn fixture_round_trips_byte_exactly() {
        let panel = load_panel(FIXTURE.as_bytes(), &ColumnMap::identity()).unwrap();
        assert_eq!(panel.len(), 3);
        assert_eq!(panel.records[0].hdi, None);
        assert_eq!(panel.records[2].gdp_pc, None);
        assert_eq!(panel.records[2].complexity, Some(-0.2));
        let mut out = Vec::new();
        write_panel(&panel, &mut out).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), FIXTURE);
        let again = load_panel(out.as_slice(), &ColumnMap::identity()).unwrap();
        assert_eq!(again, panel);
    }

    #[test]
    fn header_only_is_empty_input() {
        let csv = "country,year,inst_quality,complexity,human_capital,regime\n";
        let err = load_panel(csv.as_bytes(), &ColumnMap::identity()).unwrap_err();
        assert!(matches!(err, PanelError::Empty(_)));
        let err = load_panel("".as_bytes(), &ColumnMap::identity()).unwrap_err();
        assert!(matches!(err, PanelError::Empty(_)));
    }

    #[test]
    fn duplicate_pair_is_named() {
        let csv = "country,year,inst_quality,complexity,human_capital,regime\n\
ESP,1960,1,1,1,EUROPE\nESP,1960,2,2,2,EUROPE\n";
        let err = load_panel(csv.as_bytes(), &ColumnMap::identity()).unwrap_err();
        assert!(matches!(err, PanelError::Schema(_)));
        assert!(err.to_string().contains("ESP,1960"), "{err}");
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let csv = "country,year,inst_quality,complexity,human_capital,regime\n\
ESP,1960,1,1,1,EUROPE\nESP,1961,x,1,1,EUROPE\n";
        let err = load_panel(csv.as_bytes(), &ColumnMap::identity()).unwrap_err();
        assert_eq!(
            err,
            PanelError::Parse {
                row: 3,
                message: "column `inst_quality` holds non-numeric value `x`".into()
            }
        );
    }

    #[test]
    fn bad_country_and_missing_column() {
        let csv = "country,year,inst_quality,complexity,human_capital,regime\nes,1960,1,1,1,EU\n";
        assert!(matches!(
            load_panel(csv.as_bytes(), &ColumnMap::identity()),
            Err(PanelError::Parse { row: 2, .. })
        ));
        let csv = "country,year,inst_quality,complexity,regime\nESP,1960,1,1,EU\n";
        let err = load_panel(csv.as_bytes(), &ColumnMap::identity()).unwrap_err();
        assert!(err.to_string().contains("human_capital"));
    }

    #[test]
    fn column_map_renames_headers() {
        let csv = "iso3,year,rule_of_law,eci_score,schooling,bloc\nESP,1960,1,2,3,EU\n";
        let map = ColumnMap::identity()
            .rename("country", "iso3")
            .rename("inst_quality", "rule_of_law")
            .rename("complexity", "eci_score")
            .rename("human_capital", "schooling")
            .rename("regime", "bloc");
        let panel = load_panel(csv.as_bytes(), &map).unwrap();
        assert_eq!(panel.records[0].triplet(), Some([1.0, 2.0, 3.0]));
        assert_eq!(panel.records[0].regime, "EU");
    }

    #[test]
    fn variable_ids() {
        assert_eq!("hdi".parse::<Variable>().unwrap(), Variable::Hdi);
        assert!(matches!("gdp".parse::<Variable>(), Err(PanelError::Schema(_))));
    }
}
