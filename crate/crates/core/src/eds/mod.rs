//! Expected Developmental Shift: the mean counterfactual development index
//! of a country re-embedded in another regime, minus its observed mean.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use cforge_nn::{split, SeededRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{pca_fit, MinMax, PcaResult, PreparedPanel, Variable};
use crate::stats::{bootstrap_draws, sample_std, wilcoxon_rank_sum, BootstrapDraws, StatsError, TestResult};
use crate::wgan::{sample_latent, GanError, GanModel};

#[derive(Debug, Error)]
pub enum EdsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("results file: {0}")]
    Io(String),
}

pub type Result<T, E = EdsError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    #[default]
    EqualMean,
    PcaFirst,
}

impl fmt::Display for IndexMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexMode::EqualMean => "equal_mean",
            IndexMode::PcaFirst => "pca_first",
        })
    }
}

impl FromStr for IndexMode {
    type Err = EdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal_mean" => Ok(IndexMode::EqualMean),
            "pca_first" => Ok(IndexMode::PcaFirst),
            other => Err(EdsError::Scenario(format!(
                "unknown index mode `{other}` (expected equal_mean or pca_first)"
            ))),
        }
    }
}

/// Equal-weight development index of a normalized triplet.
pub fn development_index(triplet: [f64; 3]) -> Result<f64> {
    for (v, x) in Variable::TRIPLET.iter().zip(triplet) {
        if !(0.0..=1.0).contains(&x) {
            return Err(EdsError::Domain(format!("{v} = {x} lies outside [0, 1]")));
        }
    }
    Ok((triplet[0] + triplet[1] + triplet[2]) / 3.0)
}

/// A development index ready to score triplets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DevelopmentIndex {
    EqualMean,
    /// First principal component score of the training triplets, min-max
    /// scaled over the training panel and clamped to `[0, 1]` outside it.
    PcaFirst { pca: PcaResult, scale: MinMax },
}

impl DevelopmentIndex {
    pub fn fit(mode: IndexMode, training: &[[f64; 3]]) -> Result<Self> {
        match mode {
            IndexMode::EqualMean => Ok(DevelopmentIndex::EqualMean),
            IndexMode::PcaFirst => {
                let pca = pca_fit(training, 1).map_err(|e| EdsError::Data(e.to_string()))?;
                let scores: Vec<f64> = training.iter().map(|t| pca.project(t)[0]).collect();
                let scale = MinMax::fit(&scores, Default::default())
                    .map_err(|e| EdsError::Data(format!("first component: {e}")))?;
                Ok(DevelopmentIndex::PcaFirst { pca, scale })
            }
        }
    }

    pub fn mode(&self) -> IndexMode {
        match self {
            DevelopmentIndex::EqualMean => IndexMode::EqualMean,
            DevelopmentIndex::PcaFirst { .. } => IndexMode::PcaFirst,
        }
    }

    pub fn value(&self, triplet: [f64; 3]) -> Result<f64> {
        match self {
            DevelopmentIndex::EqualMean => development_index(triplet),
            DevelopmentIndex::PcaFirst { pca, scale } => {
                Ok(scale.apply(pca.project(&triplet)[0]).clamp(0.0, 1.0))
            }
        }
    }
}

/// Anything that can draw normalized triplets conditioned on a regime.
pub trait TripletGenerator {
    fn vocabulary(&self) -> &[String];

    fn sample(&self, n: usize, regime: &str, rng: &mut SeededRng) -> Result<Vec<[f64; 3]>>;
}

impl TripletGenerator for GanModel {
    fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    fn sample(&self, n: usize, regime: &str, rng: &mut SeededRng) -> Result<Vec<[f64; 3]>> {
        self.label_index(regime)?;
        let z = sample_latent(n, self.config.latent_dim, rng);
        Ok(self.generate(&z, regime)?)
    }
}

fn check_regime<G: TripletGenerator + ?Sized>(generator: &G, regime: &str) -> Result<()> {
    if generator.vocabulary().iter().any(|v| v == regime) {
        Ok(())
    } else {
        Err(GanError::Vocabulary {
            label: regime.to_string(),
            known: generator.vocabulary().to_vec(),
        }
        .into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub country: String,
    pub target_regime: String,
    pub n_draws: usize,
    pub index_mode: IndexMode,
}

pub const DEFAULT_DRAWS: usize = 1000;

impl Scenario {
    pub fn new(country: &str, target_regime: &str) -> Self {
        Self {
            country: country.to_string(),
            target_regime: target_regime.to_string(),
            n_draws: DEFAULT_DRAWS,
            index_mode: IndexMode::EqualMean,
        }
    }

    pub fn with_draws(mut self, n_draws: usize) -> Self {
        self.n_draws = n_draws;
        self
    }

    pub fn with_index(mut self, mode: IndexMode) -> Self {
        self.index_mode = mode;
        self
    }

    /// Stream for this scenario's Monte-Carlo draws under `seed`.
    pub fn rng(&self, seed: u64) -> SeededRng {
        split(seed, &["eds", &self.country, &self.target_regime])
    }
}

/// Index values of `n_draws` generated triplets.
pub fn monte_carlo_draws<G: TripletGenerator + ?Sized>(
    generator: &G,
    regime: &str,
    n_draws: usize,
    index: &DevelopmentIndex,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    check_regime(generator, regime)?;
    generator
        .sample(n_draws, regime, rng)?
        .into_iter()
        .map(|t| index.value(t))
        .collect()
}

/// `(1/N) sum_k D(G(z_k | regime))`.
pub fn monte_carlo_expectation<G: TripletGenerator + ?Sized>(
    generator: &G,
    regime: &str,
    n_draws: usize,
    index: &DevelopmentIndex,
    rng: &mut SeededRng,
) -> Result<f64> {
    let draws = monte_carlo_draws(generator, regime, n_draws, index, rng)?;
    Ok(draws.iter().sum::<f64>() / draws.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdsResult {
    pub country: String,
    /// Target regime label.
    pub scenario: String,
    pub eds: f64,
    pub variance: f64,
    pub mean_real: f64,
    pub mean_cf: f64,
    pub delta_development: f64,
    pub n_draws: usize,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// A result together with the per-draw index values behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct EdsOutcome {
    pub result: EdsResult,
    pub draws: Vec<f64>,
}

impl EdsOutcome {
    /// Per-draw shifts `D_k - mean_real`.
    pub fn deltas(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d - self.result.mean_real).collect()
    }

    /// Resamples the per-draw shifts and stores the percentile interval.
    pub fn bootstrap(&mut self, replications: usize, seed: u64) -> Result<BootstrapDraws> {
        let mut rng = split(seed, &["bootstrap", &self.result.country, &self.result.scenario]);
        let b = bootstrap_draws(&self.deltas(), replications, &mut rng)?;
        self.result.ci_low = Some(b.ci_low);
        self.result.ci_high = Some(b.ci_high);
        Ok(b)
    }
}

/// Mean index over the country's fully observed years (imputed cells are
/// excluded), summed in year order.
pub fn observed_mean(panel: &PreparedPanel, country: &str, index: &DevelopmentIndex) -> Result<f64> {
    let mut rows: Vec<_> = panel.rows.iter().filter(|r| r.country == country).collect();
    if rows.is_empty() {
        return Err(EdsError::Data(format!("country {country} is not in the panel")));
    }
    rows.retain(|r| {
        !Variable::TRIPLET
            .iter()
            .any(|&v| panel.imputation.was_imputed(&r.country, r.year, v))
    });
    if rows.is_empty() {
        return Err(EdsError::Data(format!("country {country} has no fully observed year")));
    }
    rows.sort_by_key(|r| r.year);
    let mut sum = 0.0;
    for r in &rows {
        sum += index.value(r.triplet)?;
    }
    Ok(sum / rows.len() as f64)
}

/// EDS for one scenario. The index is fitted on `panel`, which should be the
/// model's training panel; draws come from [`Scenario::rng`].
pub fn compute_eds<G: TripletGenerator + ?Sized>(
    generator: &G,
    panel: &PreparedPanel,
    scenario: &Scenario,
    seed: u64,
) -> Result<EdsOutcome> {
    let triplets: Vec<[f64; 3]> = panel.rows.iter().map(|r| r.triplet).collect();
    let index = DevelopmentIndex::fit(scenario.index_mode, &triplets)?;
    compute_eds_with(generator, panel, scenario, &index, seed)
}

pub fn compute_eds_with<G: TripletGenerator + ?Sized>(
    generator: &G,
    panel: &PreparedPanel,
    scenario: &Scenario,
    index: &DevelopmentIndex,
    seed: u64,
) -> Result<EdsOutcome> {
    if scenario.n_draws < 2 {
        return Err(EdsError::Scenario(format!(
            "n_draws must be at least 2, got {}",
            scenario.n_draws
        )));
    }
    check_regime(generator, &scenario.target_regime)?;
    let mean_real = observed_mean(panel, &scenario.country, index)?;
    let draws = monte_carlo_draws(
        generator,
        &scenario.target_regime,
        scenario.n_draws,
        index,
        &mut scenario.rng(seed),
    )?;
    let mean_cf = draws.iter().sum::<f64>() / draws.len() as f64;
    let eds = mean_cf - mean_real;
    let deltas: Vec<f64> = draws.iter().map(|d| d - mean_real).collect();
    let variance = sample_std(&deltas).powi(2);
    Ok(EdsOutcome {
        result: EdsResult {
            country: scenario.country.clone(),
            scenario: scenario.target_regime.clone(),
            eds,
            variance,
            mean_real,
            mean_cf,
            delta_development: eds,
            n_draws: draws.len(),
            ci_low: None,
            ci_high: None,
        },
        draws,
    })
}

/// Wilcoxon rank-sum comparison of the `eds` values of two groups.
pub fn group_eds_comparison(a: &[EdsResult], b: &[EdsResult]) -> Result<TestResult> {
    let xs: Vec<f64> = a.iter().map(|r| r.eds).collect();
    let ys: Vec<f64> = b.iter().map(|r| r.eds).collect();
    Ok(wilcoxon_rank_sum(&xs, &ys)?)
}

pub const RESULT_COLUMNS: [&str; 9] = [
    "country",
    "scenario",
    "eds",
    "variance",
    "mean_real",
    "mean_cf",
    "delta_development",
    "ci_low",
    "ci_high",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Results CSV at full (round-trip) precision.
pub fn write_results<W: Write>(results: &[EdsResult], sink: W) -> Result<()> {
    let io = |e: csv::Error| EdsError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(RESULT_COLUMNS).map_err(io)?;
    for r in results {
        w.write_record([
            r.country.clone(),
            r.scenario.clone(),
            r.eds.to_string(),
            r.variance.to_string(),
            r.mean_real.to_string(),
            r.mean_cf.to_string(),
            r.delta_development.to_string(),
            opt(r.ci_low),
            opt(r.ci_high),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| EdsError::Io(e.to_string()))
}

/// Reads a results CSV. `n_draws` is not part of the file and comes back 0.
pub fn read_results<R: Read>(source: R) -> Result<Vec<EdsResult>> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers().map_err(|e| EdsError::Io(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| EdsError::Io(format!("missing column `{name}`")))
    };
    let idx: Vec<usize> = RESULT_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| EdsError::Io(e.to_string()))?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let num = |k: usize| -> Result<f64> {
            field(k).parse().map_err(|_| {
                EdsError::Io(format!(
                    "row {}: column {} is not a number: `{}`",
                    line + 2,
                    RESULT_COLUMNS[k],
                    field(k)
                ))
            })
        };
        let maybe = |k: usize| -> Result<Option<f64>> {
            if field(k).is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        out.push(EdsResult {
            country: field(0).to_string(),
            scenario: field(1).to_string(),
            eds: num(2)?,
            variance: num(3)?,
            mean_real: num(4)?,
            mean_cf: num(5)?,
            delta_development: num(6)?,
            n_draws: 0,
            ci_low: maybe(7)?,
            ci_high: maybe(8)?,
        });
    }
    Ok(out)
}

pub fn results_to_json(results: &[EdsResult]) -> String {
    serde_json::to_string_pretty(results).expect("results serialize")
}
