use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Panel, PanelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Geographic,
    Governance,
    Network,
    Custom,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Geographic => "geographic",
            SchemeKind::Governance => "governance",
            SchemeKind::Network => "network",
            SchemeKind::Custom => "custom",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geographic" => Ok(SchemeKind::Geographic),
            "governance" => Ok(SchemeKind::Governance),
            "network" => Ok(SchemeKind::Network),
            "custom" => Ok(SchemeKind::Custom),
            _ => Err(PanelError::Scheme(format!("unknown scheme `{s}`"))),
        }
    }
}

/// Pairwise institutional similarity, symmetric with unit diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub countries: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn new(countries: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = countries.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(PanelError::Scheme(format!(
                "similarity matrix is not {n}x{n}"
            )));
        }
        for i in 0..n {
            if (values[i][i] - 1.0).abs() > 1e-12 {
                return Err(PanelError::Scheme(format!(
                    "similarity diagonal for {} is {}, expected 1",
                    countries[i], values[i][i]
                )));
            }
            for j in 0..n {
                let v = values[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(PanelError::Scheme(format!(
                        "similarity {}-{} = {v} outside [0, 1]",
                        countries[i], countries[j]
                    )));
                }
                if (v - values[j][i]).abs() > 1e-12 {
                    return Err(PanelError::Scheme(format!(
                        "similarity is asymmetric at {}-{}",
                        countries[i], countries[j]
                    )));
                }
            }
        }
        Ok(Self { countries, values })
    }

    fn index(&self, country: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == country)
    }
}

/// A regime classification of countries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeScheme {
    pub name: SchemeKind,
    pub assignment: BTreeMap<String, String>,
    pub similarity: Option<SimilarityMatrix>,
}

impl RegimeScheme {
    pub fn new(name: SchemeKind, assignment: BTreeMap<String, String>) -> Self {
        Self {
            name,
            assignment,
            similarity: None,
        }
    }

    /// A network scheme. `anchors` label a subset of countries; every other
    /// country in the matrix takes the label of its most similar anchor,
    /// ties going to the alphabetically first anchor.
    pub fn network(anchors: BTreeMap<String, String>, similarity: SimilarityMatrix) -> Result<Self> {
        if anchors.is_empty() {
            return Err(PanelError::Scheme("network scheme has no labeled anchors".into()));
        }
        let mut anchor_idx = Vec::with_capacity(anchors.len());
        for (country, label) in &anchors {
            let i = similarity.index(country).ok_or_else(|| {
                PanelError::Scheme(format!("anchor {country} is missing from the similarity matrix"))
            })?;
            anchor_idx.push((i, label));
        }
        let mut assignment = anchors.clone();
        for (i, country) in similarity.countries.iter().enumerate() {
            if assignment.contains_key(country) {
                continue;
            }
            // Anchors iterate in alphabetical order; a strict comparison keeps the first on ties.
            let mut best: Option<(f64, &String)> = None;
            for &(a, label) in &anchor_idx {
                let s = similarity.values[i][a];
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, label));
                }
            }
            let (_, label) = best.expect("anchors are non-empty");
            assignment.insert(country.clone(), label.clone());
        }
        Ok(Self {
            name: SchemeKind::Network,
            assignment,
            similarity: Some(similarity),
        })
    }

    pub fn label_of(&self, country: &str) -> Option<&str> {
        self.assignment.get(country).map(String::as_str)
    }
}

/// Relabels every record of `panel` with its country's regime under `scheme`.
pub fn apply_scheme(panel: &Panel, scheme: &RegimeScheme) -> Result<Panel> {
    let mut out = panel.clone();
    for r in &mut out.records {
        r.regime = scheme
            .label_of(&r.country)
            .ok_or_else(|| {
                PanelError::Scheme(format!(
                    "{} scheme has no assignment for {}",
                    scheme.name, r.country
                ))
            })?
            .to_string();
    }
    Ok(out)
}

/// Reads `country,regime` rows. Rows with an empty regime are skipped, which
/// is how a network scheme file marks unlabeled countries.
pub fn load_regime_assignment<R: Read>(source: R) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| PanelError::Io(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::Schema(format!("regime file lacks `{name}` column")))
    };
    let (ci, ri) = (col("country")?, col("regime")?);
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| PanelError::Io(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let country = row.get(ci).unwrap_or("").to_string();
        let regime = row.get(ri).unwrap_or("").to_string();
        if regime.is_empty() {
            continue;
        }
        if out.insert(country.clone(), regime).is_some() {
            return Err(PanelError::Parse {
                row: line,
                message: format!("{country} is assigned twice"),
            });
        }
    }
    if out.is_empty() {
        return Err(PanelError::Empty("regime file assigns no country".into()));
    }
    Ok(out)
}

/// Reads a square matrix whose header row and first column are country codes.
pub fn load_similarity<R: Read>(source: R) -> Result<SimilarityMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| PanelError::Io(e.to_string()))?
        .clone();
    let countries: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut values = Vec::with_capacity(countries.len());
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| PanelError::Io(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.get(0) != countries.get(i).map(String::as_str) {
            return Err(PanelError::Parse {
                row: line,
                message: "row labels must repeat the header order".into(),
            });
        }
        let parsed: Result<Vec<f64>> = row
            .iter()
            .skip(1)
            .map(|cell| {
                cell.parse::<f64>().map_err(|_| PanelError::Parse {
                    row: line,
                    message: format!("similarity `{cell}` is not a number"),
                })
            })
            .collect();
        values.push(parsed?);
    }
    SimilarityMatrix::new(countries, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelRecord;

    fn block_similarity() -> SimilarityMatrix {
        // Two blocks {AAA, BBB, CCC} and {DDD, EEE}.
        let countries: Vec<String> = ["AAA", "BBB", "CCC", "DDD", "EEE"].map(String::from).to_vec();
        let block = |i: usize| usize::from(i >= 3);
        let values = (0..5)
            .map(|i| {
                (0..5)
                    .map(|j| if i == j { 1.0 } else if block(i) == block(j) { 0.9 } else { 0.1 })
                    .collect()
            })
            .collect();
        SimilarityMatrix::new(countries, values).unwrap()
    }

    #[test]
    fn network_recovers_block_structure() {
        let anchors = BTreeMap::from([
            ("AAA".to_string(), "EUROPE".to_string()),
            ("DDD".to_string(), "LATAM".to_string()),
        ]);
        let scheme = RegimeScheme::network(anchors, block_similarity()).unwrap();
        assert_eq!(scheme.label_of("CCC"), Some("EUROPE"));
        assert_eq!(scheme.label_of("EEE"), Some("LATAM"));
        assert_eq!(scheme.assignment.len(), 5);
    }

    #[test]
    fn nearest_anchor_ties_go_to_first_anchor() {
        let countries: Vec<String> = ["AAA", "BBB", "CCC"].map(String::from).to_vec();
        let values = vec![vec![1.0, 0.2, 0.5], vec![0.2, 1.0, 0.5], vec![0.5, 0.5, 1.0]];
        let sim = SimilarityMatrix::new(countries, values).unwrap();
        let anchors = BTreeMap::from([
            ("AAA".to_string(), "X".to_string()),
            ("BBB".to_string(), "Y".to_string()),
        ]);
        let scheme = RegimeScheme::network(anchors, sim).unwrap();
        assert_eq!(scheme.label_of("CCC"), Some("X"));
    }

    #[test]
    fn asymmetric_or_bad_diagonal_rejected() {
        let c: Vec<String> = ["AAA", "BBB"].map(String::from).to_vec();
        assert!(SimilarityMatrix::new(c.clone(), vec![vec![1.0, 0.3], vec![0.4, 1.0]]).is_err());
        assert!(SimilarityMatrix::new(c, vec![vec![0.9, 0.3], vec![0.3, 1.0]]).is_err());
    }

    #[test]
    fn apply_requires_every_country() {
        let panel = Panel::new(vec![
            PanelRecord::new("AAA", 2000, [0.1; 3], "OLD"),
            PanelRecord::new("BBB", 2000, [0.2; 3], "OLD"),
        ])
        .unwrap();
        let mut assignment = BTreeMap::from([("AAA".to_string(), "NEW".to_string())]);
        let scheme = RegimeScheme::new(SchemeKind::Geographic, assignment.clone());
        let err = apply_scheme(&panel, &scheme).unwrap_err();
        assert!(matches!(err, PanelError::Scheme(ref m) if m.contains("BBB")));
        assignment.insert("BBB".into(), "OTHER".into());
        let out = apply_scheme(&panel, &RegimeScheme::new(SchemeKind::Custom, assignment)).unwrap();
        assert_eq!(out.regimes(), vec!["NEW".to_string(), "OTHER".to_string()]);
    }

    #[test]
    fn loaders_parse_files() {
        let a = load_regime_assignment("country,regime\nAAA,EU\nBBB,\nCCC,LA\n".as_bytes()).unwrap();
        assert_eq!(a.len(), 2);
        let s = load_similarity("country,AAA,BBB\nAAA,1,0.25\nBBB,0.25,1\n".as_bytes()).unwrap();
        assert_eq!(s.values[0][1], 0.25);
        assert!(load_similarity("country,AAA,BBB\nBBB,1,0.25\nAAA,0.25,1\n".as_bytes()).is_err());
        assert!("planet".parse::<SchemeKind>().is_err());
    }
}
