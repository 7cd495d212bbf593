//! Validation battery: distribution tests, distances, correlation,
//! fixed-effects regression and resampling procedures.

mod bootstrap;
mod fe;
mod fidelity;
mod twosample;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bootstrap_draws, percentile_ci, sample_std, BootstrapDraws};
pub use fe::{fixed_effects_regression, FeDesign, FixedEffectsResult, INTERACTION};
pub use fidelity::{
    embedding_correlation, fidelity_battery, frechet_gaussian, mahalanobis, mean_and_covariance,
    EmbeddingCorrelation,
};
pub use twosample::{
    exact_rank_sum_distribution, js_divergence, kolmogorov_q, ks_two_sample, mad_outlier_screen,
    pearson_corr, wilcoxon_rank_sum, JsConfig, MadScreen,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample size: {0}")]
    SampleSize(String),
    #[error("degenerate series: {0}")]
    Degenerate(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("rank error: {0}")]
    Rank(String),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub details: BTreeMap<String, f64>,
}

impl TestResult {
    pub fn new(name: &str, statistic: f64, p_value: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            statistic,
            p_value: p_value.map(|p| p.clamp(0.0, 1.0)),
            details: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

/// Results keyed by test name, then by variable.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tests: BTreeMap<String, BTreeMap<String, TestResult>>,
}

impl ValidationReport {
    pub fn insert(&mut self, variable: &str, result: TestResult) {
        self.tests
            .entry(result.name.clone())
            .or_default()
            .insert(variable.to_string(), result);
    }

    pub fn get(&self, test: &str, variable: &str) -> Option<&TestResult> {
        self.tests.get(test)?.get(variable)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat `test,variable,statistic,p_value` rows.
    pub fn write_csv<W: Write>(&self, sink: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["test", "variable", "statistic", "p_value"])?;
        for (test, by_var) in &self.tests {
            for (var, r) in by_var {
                w.write_record([
                    test.clone(),
                    var.clone(),
                    r.statistic.to_string(),
                    r.p_value.map(|p| p.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()
    }
}
