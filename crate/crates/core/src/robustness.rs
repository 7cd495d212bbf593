//! Robustness procedures: retraining on country subsamples, rolling time
//! windows, alternative regime classifications, benchmark correlations and
//! the MAD outlier screen.

use std::collections::{BTreeMap, BTreeSet};

use cforge_nn::{derive_seed, split};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eds::{compute_eds, EdsError, EdsResult, IndexMode, Scenario};
use crate::panel::{apply_scheme, preprocess, Panel, PanelError, PreprocessConfig, RegimeScheme, Variable};
use crate::stats::{mad_outlier_screen, pearson_corr, percentile_ci, sample_std, StatsError};
use crate::wgan::{train, GanConfig, GanError, TrainingSet};

#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error("window {0}")]
    Window(String),
    #[error("procedure failed: {0}")]
    Procedure(String),
    #[error("invalid arguments: {0}")]
    Config(String),
    #[error(transparent)]
    Eds(#[from] EdsError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T, E = RobustnessError> = std::result::Result<T, E>;

/// Fits whatever model it wraps on a panel and evaluates scenarios with it.
pub trait EdsPipeline: Sync {
    fn evaluate(&self, panel: &Panel, scenarios: &[Scenario], seed: u64) -> Result<Vec<EdsResult>>;
}

/// Preprocess, train a WGAN-GP, then compute EDS per scenario.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanPipeline {
    pub preprocess: PreprocessConfig,
    pub gan: GanConfig,
}

impl EdsPipeline for GanPipeline {
    fn evaluate(&self, panel: &Panel, scenarios: &[Scenario], seed: u64) -> Result<Vec<EdsResult>> {
        let prepared = preprocess(panel, &self.preprocess)?;
        let data = TrainingSet::from_prepared(&prepared)?;
        let config = GanConfig {
            seed,
            ..self.gan.clone()
        };
        let model = train(&data, config)?;
        scenarios
            .iter()
            .map(|s| Ok(compute_eds(&model, &prepared, s, seed)?.result))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainSummary {
    /// `(replication, result)` for every replication that ran, in order.
    pub results: Vec<(usize, EdsResult)>,
    /// `(replication, reason)` for skipped replications.
    pub skipped: Vec<(usize, String)>,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RetrainSummary {
    pub fn eds_values(&self) -> Vec<f64> {
        self.results.iter().map(|(_, r)| r.eds).collect()
    }
}

/// Countries in replication `rep`: the scenario country plus a random
/// `round(frac * n) - 1` of the others, drawn without replacement.
pub fn subsample_countries(countries: &[String], keep: &str, frac: f64, seed: u64, rep: usize) -> Vec<String> {
    let mut others: Vec<&String> = countries.iter().filter(|c| *c != keep).collect();
    let target = ((frac * countries.len() as f64).round() as usize).clamp(1, countries.len());
    let mut rng = split(seed, &["subsample", &rep.to_string()]);
    others.shuffle(&mut rng);
    let mut chosen: Vec<String> = others.into_iter().take(target - 1).cloned().collect();
    chosen.push(keep.to_string());
    chosen.sort();
    chosen
}

/// Retrains on `replications` country subsamples and recomputes the
/// scenario's EDS each time. A subsample without the target regime is
/// skipped; more than half skipped is an error.
pub fn bootstrap_retrain<P: EdsPipeline + ?Sized>(
    pipeline: &P,
    panel: &Panel,
    scenario: &Scenario,
    replications: usize,
    subsample_frac: f64,
    seed: u64,
) -> Result<RetrainSummary> {
    if replications < 2 {
        return Err(RobustnessError::Config(format!(
            "bootstrap retraining needs at least 2 replications, got {replications}"
        )));
    }
    if !(subsample_frac > 0.0 && subsample_frac <= 1.0) {
        return Err(RobustnessError::Config(format!(
            "subsample fraction {subsample_frac} outside (0, 1]"
        )));
    }
    let countries = panel.countries();
    if !countries.contains(&scenario.country) {
        return Err(EdsError::Data(format!("country {} is not in the panel", scenario.country)).into());
    }

    let outcomes: Vec<Result<std::result::Result<EdsResult, String>>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let keep: BTreeSet<String> = subsample_countries(&countries, &scenario.country, subsample_frac, seed, rep)
                .into_iter()
                .collect();
            let sub = panel.filter(|r| keep.contains(&r.country));
            if !sub.records.iter().any(|r| r.regime == scenario.target_regime) {
                return Ok(Err(format!(
                    "subsample has no country in regime {}",
                    scenario.target_regime
                )));
            }
            let rep_seed = derive_seed(seed, &["retrain", &rep.to_string()]);
            let mut results = pipeline.evaluate(&sub, std::slice::from_ref(scenario), rep_seed)?;
            Ok(Ok(results.remove(0)))
        })
        .collect();

    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            Ok(r) => results.push((rep, r)),
            Err(reason) => {
                log::warn!("bootstrap replication {rep} skipped: {reason}");
                skipped.push((rep, reason));
            }
        }
    }
    if 2 * skipped.len() > replications {
        return Err(RobustnessError::Procedure(format!(
            "{} of {replications} bootstrap replications were skipped",
            skipped.len()
        )));
    }
    let values: Vec<f64> = results.iter().map(|(_, r)| r.eds).collect();
    let (ci_low, ci_high) = percentile_ci(&values, 0.95)?;
    Ok(RetrainSummary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        std: sample_std(&values),
        ci_low,
        ci_high,
        results,
        skipped,
    })
}

pub const DEFAULT_WINDOWS: [(i32, i32); 3] = [(1960, 1980), (1980, 2000), (2000, 2020)];

pub fn window_key(w: (i32, i32)) -> String {
    format!("{}-{}", w.0, w.1)
}

/// Windows must be increasing, each `start < end`, and may touch but not
/// overlap. A shared boundary year belongs to the later window.
pub fn validate_windows(windows: &[(i32, i32)]) -> Result<()> {
    if windows.is_empty() {
        return Err(RobustnessError::Window("list is empty".into()));
    }
    for w in windows {
        if w.0 >= w.1 {
            return Err(RobustnessError::Window(format!("{} has start >= end", window_key(*w))));
        }
    }
    for pair in windows.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(RobustnessError::Window(format!(
                "{} overlaps {}",
                window_key(pair[0]),
                window_key(pair[1])
            )));
        }
    }
    Ok(())
}

/// Records of `panel` falling in window `k` of `windows`.
fn window_panel(panel: &Panel, windows: &[(i32, i32)], k: usize) -> Panel {
    let (start, end) = windows[k];
    let last = k + 1 == windows.len();
    let shares_end = !last && windows[k + 1].0 == end;
    panel.filter(|r| r.year >= start && (r.year < end || (r.year == end && !shares_end)))
}

/// Independently fits and evaluates the scenario on each window. Every
/// window uses `seed` unchanged, so a single window spanning the panel
/// reproduces the full-sample run.
pub fn rolling_window_eds<P: EdsPipeline + ?Sized>(
    pipeline: &P,
    panel: &Panel,
    scenario: &Scenario,
    windows: &[(i32, i32)],
    seed: u64,
) -> Result<BTreeMap<String, EdsResult>> {
    validate_windows(windows)?;
    let subs: Vec<Panel> = (0..windows.len()).map(|k| window_panel(panel, windows, k)).collect();
    for (w, sub) in windows.iter().zip(&subs) {
        if sub.is_empty() {
            return Err(RobustnessError::Window(format!("{} contains no observations", window_key(*w))));
        }
        if sub.records_of(&scenario.country).next().is_none() {
            return Err(RobustnessError::Window(format!(
                "{} has no observation of {}",
                window_key(*w),
                scenario.country
            )));
        }
    }
    let results: Vec<Result<EdsResult>> = subs
        .par_iter()
        .map(|sub| Ok(pipeline.evaluate(sub, std::slice::from_ref(scenario), seed)?.remove(0)))
        .collect();
    windows
        .iter()
        .zip(results)
        .map(|(w, r)| Ok((window_key(*w), r?)))
        .collect()
}

/// A counterfactual defined across classifications: move `country` into
/// whatever regime `reference` belongs to under each scheme.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeScenario {
    pub country: String,
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSensitivity {
    pub schemes: Vec<String>,
    /// `eds[s][k]`: scenario `k` under scheme `s`.
    pub eds: Vec<Vec<f64>>,
    pub correlations: Vec<Vec<f64>>,
}

impl SchemeSensitivity {
    /// Off-diagonal correlations keyed `a~b`.
    pub fn pairs(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for i in 0..self.schemes.len() {
            for j in i + 1..self.schemes.len() {
                out.insert(format!("{}~{}", self.schemes[i], self.schemes[j]), self.correlations[i][j]);
            }
        }
        out
    }
}

fn scheme_names(schemes: &[RegimeScheme]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for s in schemes {
        let base = s.name.to_string();
        let mut name = base.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{base}_{k}");
            k += 1;
        }
        names.push(name);
    }
    names
}

/// Recomputes every scenario under each scheme and correlates the EDS vectors.
pub fn scheme_sensitivity<P: EdsPipeline + ?Sized>(
    pipeline: &P,
    panel: &Panel,
    scenarios: &[SchemeScenario],
    schemes: &[RegimeScheme],
    n_draws: usize,
    index_mode: IndexMode,
    seed: u64,
) -> Result<SchemeSensitivity> {
    if schemes.len() < 2 {
        return Err(RobustnessError::Config("scheme sensitivity needs at least 2 schemes".into()));
    }
    if scenarios.len() < 3 {
        return Err(RobustnessError::Config(
            "scheme sensitivity needs at least 3 scenarios to correlate".into(),
        ));
    }
    let eds: Vec<Result<Vec<f64>>> = schemes
        .par_iter()
        .map(|scheme| {
            let relabeled = apply_scheme(panel, scheme)?;
            let resolved = scenarios
                .iter()
                .map(|s| {
                    let target = scheme.label_of(&s.reference).ok_or_else(|| {
                        PanelError::Scheme(format!("{} scheme has no assignment for {}", scheme.name, s.reference))
                    })?;
                    let mut sc = Scenario::new(&s.country, target).with_draws(n_draws);
                    sc.index_mode = index_mode;
                    Ok(sc)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(pipeline.evaluate(&relabeled, &resolved, seed)?.iter().map(|r| r.eds).collect())
        })
        .collect();
    let eds: Vec<Vec<f64>> = eds.into_iter().collect::<Result<_>>()?;
    let k = schemes.len();
    let mut correlations = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let r = pearson_corr(&eds[i], &eds[j])?;
            correlations[i][j] = r;
            correlations[j][i] = r;
        }
    }
    Ok(SchemeSensitivity {
        schemes: scheme_names(schemes),
        eds,
        correlations,
    })
}

/// Mean EDS per country across its results.
pub fn eds_by_country(results: &[EdsResult]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in results {
        let e = acc.entry(r.country.clone()).or_default();
        e.0 += r.eds;
        e.1 += 1;
    }
    acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
}

pub const BENCHMARKS: [(&str, Variable); 3] = [
    ("hdi", Variable::Hdi),
    ("gdp", Variable::GdpPc),
    ("eci", Variable::Eci),
];

/// Pearson r between country EDS and the country mean of each benchmark.
/// Countries without a benchmark value are left out of that benchmark; a
/// benchmark with fewer than three countries is omitted.
pub fn benchmark_correlations(results: &[EdsResult], panel: &Panel) -> Result<BTreeMap<String, f64>> {
    let eds = eds_by_country(results);
    let mut out = BTreeMap::new();
    for (key, var) in BENCHMARKS {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (country, e) in &eds {
            let vals: Vec<f64> = panel.records_of(country).filter_map(|r| r.get(var)).collect();
            if !vals.is_empty() {
                xs.push(*e);
                ys.push(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        if xs.len() >= 3 {
            out.insert(key.to_string(), pearson_corr(&xs, &ys)?);
        }
    }
    Ok(out)
}

/// Countries whose mean EDS fails the MAD screen at `threshold`.
pub fn mad_excluded(results: &[EdsResult], threshold: f64) -> Result<Vec<String>> {
    let eds = eds_by_country(results);
    let (countries, values): (Vec<String>, Vec<f64>) = eds.into_iter().unzip();
    let screen = mad_outlier_screen(&values, threshold)?;
    Ok(screen.excluded.into_iter().map(|i| countries[i].clone()).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub rolling: BTreeMap<String, EdsResult>,
    pub bootstrap_std: Option<f64>,
    pub scheme_correlations: BTreeMap<String, f64>,
    pub benchmark_correlations: BTreeMap<String, f64>,
    pub mad_excluded: Vec<String>,
}

impl RobustnessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{PanelRecord, SchemeKind, SimilarityMatrix};

    /// EDS = mean complexity of the country minus mean complexity of the
    /// target regime; no training involved.
    struct Closed;

    impl EdsPipeline for Closed {
        fn evaluate(&self, panel: &Panel, scenarios: &[Scenario], _seed: u64) -> Result<Vec<EdsResult>> {
            let mean = |f: &dyn Fn(&PanelRecord) -> bool| {
                let v: Vec<f64> = panel.records.iter().filter(|r| f(r)).filter_map(|r| r.complexity).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            Ok(scenarios
                .iter()
                .map(|s| {
                    let real = mean(&|r: &PanelRecord| r.country == s.country);
                    let cf = mean(&|r: &PanelRecord| r.regime == s.target_regime);
                    EdsResult {
                        country: s.country.clone(),
                        scenario: s.target_regime.clone(),
                        eds: cf - real,
                        variance: 0.0,
                        mean_real: real,
                        mean_cf: cf,
                        delta_development: cf - real,
                        n_draws: s.n_draws,
                        ci_low: None,
                        ci_high: None,
                    }
                })
                .collect())
        }
    }

    struct Fixed;

    impl EdsPipeline for Fixed {
        fn evaluate(&self, _: &Panel, scenarios: &[Scenario], _: u64) -> Result<Vec<EdsResult>> {
            Closed.evaluate(&fixture(), scenarios, 0)
        }
    }

    fn code(i: usize) -> String {
        format!("C{}{}", (b'A' + (i / 26) as u8) as char, (b'A' + (i % 26) as u8) as char)
    }

    fn fixture() -> Panel {
        let mut records = Vec::new();
        for c in 0..20 {
            let regime = if c < 10 { "A" } else { "B" };
            for y in 1960..=2020 {
                let mut r = PanelRecord::new(&code(c), y, [0.5, c as f64 * 0.05, 0.5], regime);
                r.hdi = Some(c as f64 * 0.01 + 0.3);
                r.gdp_pc = Some(1000.0 * (c as f64 + 1.0));
                records.push(r);
            }
        }
        Panel::new(records).unwrap()
    }

    #[test]
    fn constant_pipeline_has_zero_spread() {
        let s = Scenario::new("CAA", "B");
        let summary = bootstrap_retrain(&Fixed, &fixture(), &s, 6, 0.8, 1).unwrap();
        assert_eq!(summary.results.len(), 6);
        assert_eq!(summary.std, 0.0);
    }

    #[test]
    fn skips_are_counted_and_bounded() {
        // Only one country in regime B: most subsamples lose it.
        let mut panel = fixture();
        for r in &mut panel.records {
            r.regime = if r.country == code(19) { "B".into() } else { "A".into() };
        }
        let s = Scenario::new("CAA", "B");
        let replications = 10;
        match bootstrap_retrain(&Closed, &panel, &s, replications, 0.5, 3) {
            Ok(summary) => {
                assert_eq!(summary.results.len(), replications - summary.skipped.len());
                assert!(!summary.skipped.is_empty());
            }
            Err(RobustnessError::Procedure(m)) => assert!(m.contains("skipped")),
            Err(e) => panic!("{e}"),
        }
        let summary = bootstrap_retrain(&Closed, &panel, &s, 10, 0.95, 3).unwrap();
        assert_eq!(summary.results.len() + summary.skipped.len(), 10);
    }

    #[test]
    fn subsample_keeps_scenario_country() {
        let countries = fixture().countries();
        for rep in 0..20 {
            let sub = subsample_countries(&countries, "CAT", 0.8, 5, rep);
            assert_eq!(sub.len(), 16);
            assert!(sub.contains(&"CAT".to_string()));
        }
        assert_ne!(
            subsample_countries(&countries, "CAT", 0.8, 5, 0),
            subsample_countries(&countries, "CAT", 0.8, 5, 1)
        );
    }

    #[test]
    fn windows_echo_keys_and_reduce_to_full_sample() {
        let panel = fixture();
        let s = Scenario::new("CAB", "B");
        let out = rolling_window_eds(&Closed, &panel, &s, &DEFAULT_WINDOWS, 7).unwrap();
        assert_eq!(out.keys().collect::<Vec<_>>(), ["1960-1980", "1980-2000", "2000-2020"]);
        let whole = rolling_window_eds(&Closed, &panel, &s, &[(1960, 2020)], 7).unwrap();
        let full = Closed.evaluate(&panel, std::slice::from_ref(&s), 7).unwrap();
        assert_eq!(whole["1960-2020"], full[0]);
    }

    #[test]
    fn window_boundaries() {
        let panel = fixture();
        let w = [(1960, 1980), (1980, 2000)];
        assert_eq!(window_panel(&panel, &w, 0).year_range(), Some((1960, 1979)));
        assert_eq!(window_panel(&panel, &w, 1).year_range(), Some((1980, 2000)));
        assert!(validate_windows(&[(1960, 1990), (1980, 2000)]).is_err());
        assert!(validate_windows(&[(1980, 1960)]).is_err());
        let err = rolling_window_eds(&Closed, &panel, &Scenario::new("CAA", "B"), &[(1900, 1950)], 0).unwrap_err();
        assert!(err.to_string().contains("1900-1950"), "{err}");
    }

    fn geographic() -> RegimeScheme {
        let countries = fixture().countries();
        let assignment = countries
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), if i < 10 { "A".to_string() } else { "B".to_string() }))
            .collect();
        RegimeScheme::new(SchemeKind::Geographic, assignment)
    }

    fn scheme_scenarios() -> Vec<SchemeScenario> {
        (0..6)
            .map(|i| SchemeScenario {
                country: code(i * 3),
                reference: code(if i * 3 < 10 { 19 } else { 0 }),
            })
            .collect()
    }

    #[test]
    fn identical_schemes_correlate_perfectly() {
        let panel = fixture();
        let out = scheme_sensitivity(&Closed, &panel, &scheme_scenarios(), &[geographic(), geographic()], 10, IndexMode::EqualMean, 0).unwrap();
        assert!((out.correlations[0][1] - 1.0).abs() < 1e-12);
        assert_eq!(out.schemes, ["geographic", "geographic_2"]);
        assert_eq!(out.pairs().len(), 1);
    }

    #[test]
    fn block_similarity_network_matches_geography() {
        let panel = fixture();
        let countries = panel.countries();
        let values = (0..20)
            .map(|i| (0..20).map(|j| if (i < 10) == (j < 10) { 1.0 } else { 0.0 }).collect())
            .collect();
        let similarity = SimilarityMatrix::new(countries.clone(), values).unwrap();
        let anchors = [(countries[0].clone(), "A".to_string()), (countries[15].clone(), "B".to_string())]
            .into_iter()
            .collect();
        let network = RegimeScheme::network(anchors, similarity).unwrap();
        assert_eq!(network.assignment, geographic().assignment);
        let out = scheme_sensitivity(&Closed, &panel, &scheme_scenarios(), &[geographic(), network], 10, IndexMode::EqualMean, 0).unwrap();
        for i in 0..2 {
            assert_eq!(out.correlations[i][i], 1.0);
        }
        assert_eq!(out.correlations[0][1], out.correlations[1][0]);
        assert!((out.correlations[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_country_is_a_scheme_error() {
        let panel = fixture();
        let mut partial = geographic();
        partial.assignment.remove(&code(4));
        let err = scheme_sensitivity(&Closed, &panel, &scheme_scenarios(), &[geographic(), partial], 10, IndexMode::EqualMean, 0).unwrap_err();
        assert!(matches!(err, RobustnessError::Panel(PanelError::Scheme(_))));
    }

    #[test]
    fn benchmarks_and_screen() {
        let panel = fixture();
        let scenarios: Vec<Scenario> = (0..20).map(|c| Scenario::new(&code(c), "B")).collect();
        let results = Closed.evaluate(&panel, &scenarios, 0).unwrap();
        let bench = benchmark_correlations(&results, &panel).unwrap();
        // EDS falls linearly in c while hdi rises linearly.
        assert!((bench["hdi"] + 1.0).abs() < 1e-12);
        assert!(!bench.contains_key("eci"));
        assert!(mad_excluded(&results, 3.0).unwrap().is_empty());
        let mut spiked = results.clone();
        spiked[4].eds = 40.0;
        assert_eq!(mad_excluded(&spiked, 3.0).unwrap(), [code(4)]);
    }
}
