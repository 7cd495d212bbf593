//! The `cforge` command line.
//!
//! Every subcommand writes into `<out>/<subcommand>/` and echoes the resolved
//! configuration there as `config.resolved`. Errors go to stderr as one line
//! `error[E_CODE]: <subcommand>: <message>`; the exit code is 1 for usage and
//! configuration problems and 2 for data or numeric failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::eds::{
    self, compute_eds_with, group_eds_comparison, results_to_json, write_results, DevelopmentIndex, EdsError,
    EdsResult, Scenario, TripletGenerator,
};
use crate::panel::{
    load_panel, load_regime_assignment, load_similarity, preprocess, ColumnMap, Panel, PanelError, PreparedPanel,
    RegimeScheme, SchemeKind, Variable,
};
use crate::report::config::OutputFormat;
use crate::report::{
    heatmap_grid, render_figure, sig6, table_json, write_table_csv, Arrow, ConfigError, FigureData, FigureKind,
    FigureSpec, ReportError, RunConfig, Series, TableLayout,
};
use crate::robustness::{
    benchmark_correlations, bootstrap_retrain, mad_excluded, rolling_window_eds, scheme_sensitivity, GanPipeline,
    RobustnessError, RobustnessReport, SchemeScenario,
};
use crate::stats::{fidelity_battery, fixed_effects_regression, FeDesign, StatsError};
use crate::synth;
use crate::wgan::{train, write_training_log, GanError, GanModel, TrainingSet};

pub const SEED_ENV: &str = "CFORGE_SEED";

#[derive(Debug, Parser)]
#[command(name = "cforge", version, about = "Counterfactual development scenarios from a conditional WGAN-GP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file and the CFORGE_SEED variable.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Format of result and table files.
    #[arg(long, global = true, value_name = "csv|json")]
    format: Option<String>,
}

#[derive(Clone, Copy, Debug, Subcommand)]
enum Command {
    /// Validate and summarize a panel.
    Ingest,
    /// Train the generator and write a checkpoint and training log.
    Train,
    /// Evaluate counterfactual scenarios with a trained checkpoint.
    Eds,
    /// Run the fidelity battery and the fixed-effects benchmark.
    Validate,
    /// Rolling windows, retraining, alternative schemes, benchmarks and the MAD screen.
    Robustness,
    /// Render tables and SVG figures from earlier outputs.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Eds => "eds",
            Command::Validate => "validate",
            Command::Robustness => "robustness",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Eds(#[from] EdsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Robustness(#[from] RobustnessError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Config(_) => "E_CONFIG",
            CliError::Io { .. } => "E_IO",
            CliError::Panel(_) => "E_PANEL",
            CliError::Gan(_) => "E_GAN",
            CliError::Eds(_) => "E_EDS",
            CliError::Stats(_) => "E_STATS",
            CliError::Robustness(_) => "E_ROBUSTNESS",
            CliError::Report(_) => "E_REPORT",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.render().to_string();
            let body = rendered.strip_prefix("error: ").unwrap_or(&rendered);
            eprint!("error[E_USAGE]: {body}");
            return 1;
        }
    };
    let name = cli.command.name();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {name}: {message}", e.code());
            e.exit_code()
        }
    }
}

/// Defaults, then the config file, then `CFORGE_SEED`, then flags.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        cfg.apply(&text)?;
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not a non-negative integer")))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(f) = &cli.format {
        cfg.format = f.parse().map_err(CliError::Usage)?;
    }
    cfg.gan.seed = cfg.seed;
    Ok(cfg)
}

struct Ctx {
    cfg: RunConfig,
    dir: PathBuf,
}

impl Ctx {
    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| io_err(&path, e))
    }

    fn stage(&self, stage: &str) -> PathBuf {
        Path::new(&self.cfg.out).join(stage)
    }

    fn panel(&self) -> Result<Panel> {
        if self.cfg.panel.is_empty() {
            return Ok(synth::bundled_panel());
        }
        let path = Path::new(&self.cfg.panel);
        let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        Ok(load_panel(file, &ColumnMap::identity())?)
    }

    fn model_path(&self) -> PathBuf {
        if self.cfg.model.is_empty() {
            self.stage("train").join("model.json")
        } else {
            PathBuf::from(&self.cfg.model)
        }
    }

    fn model(&self) -> Result<GanModel> {
        let path = self.model_path();
        let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
        Ok(GanModel::load(std::io::BufReader::new(file))?)
    }

    fn scenarios(&self) -> Result<Vec<Scenario>> {
        let pairs = if self.cfg.scenario_file.is_empty() {
            self.cfg.scenarios.clone()
        } else {
            read_pairs(Path::new(&self.cfg.scenario_file), ["country", "target_regime"])?
        };
        if pairs.is_empty() {
            return Err(CliError::Usage("no scenarios configured".into()));
        }
        Ok(pairs
            .iter()
            .map(|(c, r)| Scenario::new(c, r).with_draws(self.cfg.n_draws).with_index(self.cfg.index_mode))
            .collect())
    }

    fn csv_or_json(&self, stem: &str, csv: impl FnOnce() -> Result<Vec<u8>>, json: impl FnOnce() -> String) -> Result<()> {
        match self.cfg.format {
            OutputFormat::Csv => self.write(&format!("{stem}.csv"), csv()?),
            OutputFormat::Json => self.write(&format!("{stem}.json"), json() + "\n"),
        }
    }
}

fn read_pairs(path: &Path, header: [&str; 2]) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let h = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if h.len() < 2 || h[0] != *header[0] || h[1] != *header[1] {
        return Err(CliError::Io {
            path: path.display().to_string(),
            message: format!("expected header {},{}", header[0], header[1]),
        });
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| io_err(path, e))?;
            Ok((r[0].to_string(), r[1].to_string()))
        })
        .collect()
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let dir = Path::new(&cfg.out).join(cli.command.name());
    let ctx = Ctx { cfg, dir };
    ctx.write("config.resolved", ctx.cfg.echo())?;
    match cli.command {
        Command::Ingest => ingest(&ctx),
        Command::Train => run_train(&ctx),
        Command::Eds => run_eds(&ctx),
        Command::Validate => validate(&ctx),
        Command::Robustness => robustness(&ctx),
        Command::Report => report(&ctx),
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io {
        path: "<memory>".into(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Io {
        path: "<memory>".into(),
        message: e.to_string(),
    })
}

#[derive(Serialize)]
struct IngestSummary {
    records: usize,
    countries: usize,
    regimes: BTreeMap<String, usize>,
    years: Option<(i32, i32)>,
    missing: BTreeMap<String, usize>,
    imputed: usize,
    unresolved: usize,
    dropped: usize,
    training_rows: usize,
}

fn ingest(ctx: &Ctx) -> Result<()> {
    let panel = ctx.panel()?;
    let prepared = preprocess(&panel, &ctx.cfg.preprocess)?;
    let mut regimes = BTreeMap::new();
    for r in &prepared.rows {
        *regimes.entry(r.regime.clone()).or_insert(0) += 1;
    }
    let summary = IngestSummary {
        records: panel.len(),
        countries: panel.countries().len(),
        regimes,
        years: panel.year_range(),
        missing: Variable::TRIPLET
            .iter()
            .map(|&v| (v.name().to_string(), panel.records.iter().filter(|r| r.get(v).is_none()).count()))
            .collect(),
        imputed: prepared.imputation.imputed.len(),
        unresolved: prepared.imputation.unresolved.len(),
        dropped: prepared.dropped.len(),
        training_rows: prepared.rows.len(),
    };
    ctx.write("summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    let rows = prepared.rows.iter().map(|r| {
        vec![
            r.country.clone(),
            r.year.to_string(),
            r.regime.clone(),
            r.triplet[0].to_string(),
            r.triplet[1].to_string(),
            r.triplet[2].to_string(),
        ]
    });
    ctx.write(
        "prepared.csv",
        csv_bytes(&["country", "year", "regime", "inst_quality", "complexity", "human_capital"], rows)?,
    )?;
    println!(
        "{} records, {} countries, {} training rows ({} imputed cells, {} dropped rows)",
        summary.records, summary.countries, summary.training_rows, summary.imputed, summary.dropped
    );
    for (regime, n) in &summary.regimes {
        println!("  {regime}: {n} rows");
    }
    Ok(())
}

fn run_train(ctx: &Ctx) -> Result<()> {
    let panel = ctx.panel()?;
    let prepared = preprocess(&panel, &ctx.cfg.preprocess)?;
    let data = TrainingSet::from_prepared(&prepared)?;
    let model = train(&data, ctx.cfg.gan.clone())?;
    let mut buf = Vec::new();
    model.save(&mut buf)?;
    ctx.write("model.json", buf)?;
    let mut log = Vec::new();
    write_training_log(&model.training_log, &mut log)?;
    ctx.write("training_log.csv", log)?;
    if let Some(last) = model.training_log.last() {
        println!(
            "trained {} epochs on {} rows; final wasserstein estimate {}",
            model.epochs_completed(),
            data.len(),
            sig6(last.wasserstein_estimate)
        );
    }
    Ok(())
}

/// Index values of the prepared rows, fitted the way the eds stage fits them.
fn fitted_index(prepared: &PreparedPanel, ctx: &Ctx) -> Result<DevelopmentIndex> {
    let triplets: Vec<[f64; 3]> = prepared.rows.iter().map(|r| r.triplet).collect();
    Ok(DevelopmentIndex::fit(ctx.cfg.index_mode, &triplets)?)
}

fn run_eds(ctx: &Ctx) -> Result<()> {
    let model = ctx.model()?;
    let panel = ctx.panel()?;
    let prepared = preprocess(&panel, &ctx.cfg.preprocess)?;
    let index = fitted_index(&prepared, ctx)?;
    let seed = ctx.cfg.seed;

    let mut results = Vec::new();
    let mut draw_rows = Vec::new();
    let mut trajectory_rows = Vec::new();
    for scenario in ctx.scenarios()? {
        let mut outcome = compute_eds_with(&model, &prepared, &scenario, &index, seed)?;
        if ctx.cfg.bootstrap_replications > 0 {
            outcome.bootstrap(ctx.cfg.bootstrap_replications, seed)?;
        }
        // Same stream as the estimate, so these are exactly the draws behind it.
        let triplets = model.sample(scenario.n_draws, &scenario.target_regime, &mut scenario.rng(seed))?;
        for (k, (t, d)) in triplets.iter().zip(&outcome.draws).enumerate() {
            draw_rows.push(vec![
                scenario.country.clone(),
                scenario.target_regime.clone(),
                k.to_string(),
                t[0].to_string(),
                t[1].to_string(),
                t[2].to_string(),
                d.to_string(),
            ]);
        }
        let mut rows: Vec<_> = prepared.rows.iter().filter(|r| r.country == scenario.country).collect();
        rows.sort_by_key(|r| r.year);
        for r in rows {
            let d = index.value(r.triplet)?;
            trajectory_rows.push(vec![
                scenario.country.clone(),
                scenario.target_regime.clone(),
                r.year.to_string(),
                r.triplet[0].to_string(),
                r.triplet[1].to_string(),
                d.to_string(),
                (d + outcome.result.eds).to_string(),
            ]);
        }
        let r = &outcome.result;
        println!(
            "{} -> {}: eds {} (real {}, counterfactual {})",
            r.country,
            r.scenario,
            sig6(r.eds),
            sig6(r.mean_real),
            sig6(r.mean_cf)
        );
        results.push(outcome.result);
    }
    ctx.csv_or_json(
        "results",
        || {
            let mut buf = Vec::new();
            write_results(&results, &mut buf)?;
            Ok(buf)
        },
        || results_to_json(&results),
    )?;
    ctx.write(
        "draws.csv",
        csv_bytes(
            &["country", "scenario", "draw", "inst_quality", "complexity", "human_capital", "index"],
            draw_rows,
        )?,
    )?;
    ctx.write(
        "trajectories.csv",
        csv_bytes(
            &["country", "scenario", "year", "inst_quality", "complexity", "observed", "counterfactual"],
            trajectory_rows,
        )?,
    )?;
    ctx.write("alignment.csv", alignment(&model, &prepared, &index, ctx)?)?;
    Ok(())
}

/// Per country-year shift `E[D | regime] - D_t` into every other regime,
/// located at the row's normalized institutions and complexity.
fn alignment(model: &GanModel, prepared: &PreparedPanel, index: &DevelopmentIndex, ctx: &Ctx) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for regime in model.vocabulary() {
        let mut rng = cforge_nn::split(ctx.cfg.seed, &["alignment", regime]);
        let mean_cf = eds::monte_carlo_expectation(model, regime, ctx.cfg.n_draws, index, &mut rng)?;
        for r in prepared.rows.iter().filter(|r| &r.regime != regime) {
            rows.push(vec![
                r.country.clone(),
                r.year.to_string(),
                regime.clone(),
                r.triplet[0].to_string(),
                r.triplet[1].to_string(),
                (mean_cf - index.value(r.triplet)?).to_string(),
            ]);
        }
    }
    csv_bytes(
        &["country", "year", "target", "inst_quality", "complexity", "delta_development"],
        rows,
    )
}

fn validate(ctx: &Ctx) -> Result<()> {
    let model = ctx.model()?;
    let panel = ctx.panel()?;
    let prepared = preprocess(&panel, &ctx.cfg.preprocess)?;
    let mut real = Vec::new();
    let mut synthetic = Vec::new();
    for regime in prepared.regimes() {
        let rows: Vec<[f64; 3]> = prepared.rows.iter().filter(|r| r.regime == regime).map(|r| r.triplet).collect();
        let mut rng = cforge_nn::split(ctx.cfg.seed, &["validate", &regime]);
        synthetic.extend(model.sample(rows.len(), &regime, &mut rng)?);
        real.extend(rows);
    }
    let report = fidelity_battery(&real, &synthetic, ctx.cfg.js)?;
    ctx.csv_or_json(
        "validation",
        || {
            let mut buf = Vec::new();
            report.write_csv(&mut buf).map_err(|e| io_err(Path::new("validation.csv"), e))?;
            Ok(buf)
        },
        || report.to_json(),
    )?;
    for v in Variable::TRIPLET {
        let ks = report.get("ks", v.name());
        let js = report.get("js_divergence", v.name());
        if let (Some(ks), Some(js)) = (ks, js) {
            println!(
                "{}: ks {} (p {}), js {}",
                v.name(),
                sig6(ks.statistic),
                ks.p_value.map_or_else(|| "-".into(), sig6),
                sig6(js.statistic)
            );
        }
    }

    let dependent = ctx.cfg.fe_dependent;
    if panel.records.iter().any(|r| r.get(dependent).is_some()) {
        let design = FeDesign::from_panel(&panel, dependent, ctx.cfg.fe_interaction);
        let fe = fixed_effects_regression(&design)?;
        ctx.write("fixed_effects.json", serde_json::to_string_pretty(&fe).expect("fe serializes") + "\n")?;
        for (name, b) in &fe.beta {
            println!("fe {name}: beta {} (t {})", sig6(*b), sig6(fe.t_stats[name]));
        }
    } else {
        println!("fixed effects skipped: panel has no {} column", dependent.name());
    }
    Ok(())
}

fn schemes(ctx: &Ctx, panel: &Panel) -> Result<Vec<RegimeScheme>> {
    let bundled = ctx.cfg.panel.is_empty();
    let own = if bundled {
        synth::bundled_geographic()
    } else {
        let mut assignment = BTreeMap::new();
        let mut records: Vec<_> = panel.records.iter().collect();
        records.sort_by_key(|r| r.year);
        for r in records {
            assignment.insert(r.country.clone(), r.regime.clone());
        }
        RegimeScheme::new(SchemeKind::Custom, assignment)
    };
    let mut out = vec![own];
    if !ctx.cfg.governance_scheme.is_empty() {
        let path = Path::new(&ctx.cfg.governance_scheme);
        let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        out.push(RegimeScheme::new(SchemeKind::Governance, load_regime_assignment(file)?));
    } else if bundled {
        out.push(synth::bundled_governance(panel));
    }
    let (anchors, similarity) = (&ctx.cfg.network_anchors, &ctx.cfg.network_similarity);
    if !anchors.is_empty() && !similarity.is_empty() {
        let a = fs::File::open(anchors).map_err(|e| io_err(Path::new(anchors), e))?;
        let s = fs::File::open(similarity).map_err(|e| io_err(Path::new(similarity), e))?;
        out.push(RegimeScheme::network(load_regime_assignment(a)?, load_similarity(s)?)?);
    } else if bundled {
        out.push(RegimeScheme::network(synth::bundled_anchors(), synth::bundled_similarity(panel))?);
    }
    Ok(out)
}

fn robustness(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let panel = ctx.panel()?;
    let scenario = ctx.scenarios()?.remove(0);
    let pipeline = GanPipeline {
        preprocess: cfg.preprocess.clone(),
        gan: cfg.gan.clone(),
    };
    let mut report = RobustnessReport {
        rolling: rolling_window_eds(&pipeline, &panel, &scenario, &cfg.windows, cfg.seed)?,
        ..Default::default()
    };
    let retrain = bootstrap_retrain(&pipeline, &panel, &scenario, cfg.replications, cfg.subsample_frac, cfg.seed)?;
    report.bootstrap_std = Some(retrain.std);
    let mut rows: Vec<Vec<String>> = retrain
        .results
        .iter()
        .map(|(rep, r)| vec![rep.to_string(), r.eds.to_string(), String::new()])
        .collect();
    rows.extend(retrain.skipped.iter().map(|(rep, why)| vec![rep.to_string(), String::new(), why.clone()]));
    rows.sort_by_key(|r| r[0].parse::<usize>().unwrap_or(usize::MAX));
    ctx.write("retrain.csv", csv_bytes(&["replication", "eds", "skipped"], rows)?)?;

    let schemes = schemes(ctx, &panel)?;
    let scheme_scenarios: Vec<SchemeScenario> = cfg
        .scheme_scenarios
        .iter()
        .map(|(country, reference)| SchemeScenario {
            country: country.clone(),
            reference: reference.clone(),
        })
        .collect();
    if schemes.len() >= 2 && scheme_scenarios.len() >= 3 {
        let s = scheme_sensitivity(
            &pipeline,
            &panel,
            &scheme_scenarios,
            &schemes,
            cfg.n_draws,
            cfg.index_mode,
            cfg.seed,
        )?;
        report.scheme_correlations = s.pairs();
        ctx.write("schemes.json", serde_json::to_string_pretty(&s).expect("schemes serialize") + "\n")?;
    } else {
        println!("scheme sensitivity skipped: needs 2 schemes and 3 scheme scenarios");
    }

    // Benchmarks and the MAD screen use every country moved into every other
    // regime under the trained checkpoint.
    let model = ctx.model()?;
    let prepared = preprocess(&panel, &cfg.preprocess)?;
    let index = fitted_index(&prepared, ctx)?;
    let mut sweep: Vec<EdsResult> = Vec::new();
    for country in panel.countries() {
        let Some(own) = prepared.rows.iter().find(|r| r.country == country).map(|r| r.regime.clone()) else {
            continue;
        };
        for regime in model.vocabulary().iter().filter(|r| **r != own) {
            let s = Scenario::new(&country, regime).with_draws(cfg.n_draws).with_index(cfg.index_mode);
            match compute_eds_with(&model, &prepared, &s, &index, cfg.seed) {
                Ok(o) => sweep.push(o.result),
                Err(EdsError::Data(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    let mut buf = Vec::new();
    write_results(&sweep, &mut buf)?;
    ctx.write("sweep.csv", buf)?;

    // Rank-sum comparison of the sweep's EDS between each pair of target regimes.
    let mut by_target: BTreeMap<&str, Vec<EdsResult>> = BTreeMap::new();
    for r in &sweep {
        by_target.entry(r.scenario.as_str()).or_default().push(r.clone());
    }
    let targets: Vec<&str> = by_target.keys().copied().collect();
    let mut group_rows = Vec::new();
    for (i, a) in targets.iter().enumerate() {
        for b in &targets[i + 1..] {
            let (ga, gb) = (&by_target[a], &by_target[b]);
            let mut row = vec![a.to_string(), b.to_string(), ga.len().to_string(), gb.len().to_string()];
            match group_eds_comparison(ga, gb) {
                Ok(t) => {
                    row.push(t.statistic.to_string());
                    row.push(t.p_value.map_or(String::new(), |p| p.to_string()));
                }
                Err(EdsError::Stats(StatsError::SampleSize(_))) => row.extend([String::new(), String::new()]),
                Err(e) => return Err(e.into()),
            }
            group_rows.push(row);
        }
    }
    ctx.write(
        "groups.csv",
        csv_bytes(&["target_a", "target_b", "n_a", "n_b", "rank_sum", "p_value"], group_rows)?,
    )?;
    report.benchmark_correlations = benchmark_correlations(&sweep, &panel)?;
    report.mad_excluded = mad_excluded(&sweep, cfg.mad_threshold)?;
    ctx.write("report.json", report.to_json() + "\n")?;

    for (w, r) in &report.rolling {
        println!("window {w}: eds {}", sig6(r.eds));
    }
    println!(
        "retraining: mean {} std {} ({} skipped)",
        sig6(retrain.mean),
        sig6(retrain.std),
        retrain.skipped.len()
    );
    for (pair, r) in report.scheme_correlations.iter().chain(&report.benchmark_correlations) {
        println!("r[{pair}] = {}", sig6(*r));
    }
    println!("mad excluded: {}", report.mad_excluded.join(" "));
    Ok(())
}

fn read_results_any(path: &Path) -> Result<Vec<EdsResult>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_reader(file).map_err(|e| io_err(path, e))
    } else {
        Ok(eds::read_results(file)?)
    }
}

fn default_results(ctx: &Ctx) -> PathBuf {
    let dir = ctx.stage("eds");
    let csv = dir.join("results.csv");
    if csv.exists() {
        csv
    } else {
        dir.join("results.json")
    }
}

fn report(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let path = if cfg.results.is_empty() {
        default_results(ctx)
    } else {
        PathBuf::from(&cfg.results)
    };
    let mut tables = vec![("summary", TableLayout::Summary, read_results_any(&path)?)];
    if !cfg.validation_results.is_empty() {
        tables.push(("validation", TableLayout::Validation, read_results_any(Path::new(&cfg.validation_results))?));
    }
    for (stem, layout, results) in &tables {
        ctx.csv_or_json(
            &format!("tables/{stem}"),
            || {
                let mut buf = Vec::new();
                write_table_csv(results, *layout, &mut buf)?;
                Ok(buf)
            },
            || table_json(results, *layout),
        )?;
    }

    let eds_dir = ctx.stage("eds");
    if !eds_dir.join("trajectories.csv").exists() {
        println!("figures skipped: no eds outputs under {}", eds_dir.display());
        return Ok(());
    }
    let figures = build_figures(&eds_dir, cfg)?;
    for (spec, data) in figures {
        let svg = render_figure(&spec, &data)?;
        ctx.write(&format!("figures/{}.svg", spec.kind.file_stem()), svg)?;
    }
    println!("rendered {} table(s) and 4 figures", tables.len());
    Ok(())
}

fn read_csv_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    csv::Reader::from_reader(file)
        .records()
        .map(|r| r.map_err(|e| io_err(path, e)))
        .collect()
}

fn num(path: &Path, cell: &str) -> Result<f64> {
    cell.parse().map_err(|_| CliError::Io {
        path: path.display().to_string(),
        message: format!("`{cell}` is not a number"),
    })
}

type Key = (String, String);

fn build_figures(dir: &Path, cfg: &RunConfig) -> Result<Vec<(FigureSpec, FigureData)>> {
    let tpath = dir.join("trajectories.csv");
    let dpath = dir.join("draws.csv");
    let apath = dir.join("alignment.csv");

    // country,scenario,year,inst_quality,complexity,observed,counterfactual
    let mut traj: BTreeMap<Key, Vec<[f64; 5]>> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();
    for r in read_csv_rows(&tpath)? {
        let key = (r[0].to_string(), r[1].to_string());
        if !order.contains(&key) {
            order.push(key.clone());
        }
        let v = [num(&tpath, &r[2])?, num(&tpath, &r[3])?, num(&tpath, &r[4])?, num(&tpath, &r[5])?, num(&tpath, &r[6])?];
        traj.entry(key).or_default().push(v);
    }
    // country,scenario,draw,inst_quality,complexity,human_capital,index
    let mut draws: BTreeMap<Key, Vec<[f64; 3]>> = BTreeMap::new();
    for r in read_csv_rows(&dpath)? {
        let key = (r[0].to_string(), r[1].to_string());
        draws.entry(key).or_default().push([num(&dpath, &r[3])?, num(&dpath, &r[4])?, num(&dpath, &r[6])?]);
    }
    // country,year,target,inst_quality,complexity,delta_development
    let mut cells = Vec::new();
    let mut positions: BTreeMap<String, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    for r in read_csv_rows(&apath)? {
        let (i, c) = (num(&apath, &r[3])?, num(&apath, &r[4])?);
        cells.push((i, c, num(&apath, &r[5])?));
        positions.entry(r[0].to_string()).or_default().insert(r[1].to_string(), (i, c));
    }
    if order.is_empty() || cells.is_empty() {
        return Err(ReportError::Empty(format!("eds outputs under {} have no rows", dir.display())).into());
    }

    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        s / n as f64
    };

    let mut lines = Vec::new();
    for key in &order {
        let rows = &traj[key];
        let name = crate::report::country_name(&key.0);
        let years: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        lines.push(Series {
            name: format!("{name} observed"),
            x: years.clone(),
            y: rows.iter().map(|r| r[3]).collect(),
            dashed: false,
        });
        lines.push(Series {
            name: format!("{name} → {}", key.1),
            x: years,
            y: rows.iter().map(|r| r[4]).collect(),
            dashed: true,
        });
    }

    let mut arrows: Vec<Arrow> = Vec::new();
    for key in &order {
        let rows = &traj[key];
        let from = [mean(&mut rows.iter().map(|r| r[1])), mean(&mut rows.iter().map(|r| r[2]))];
        let to = draws
            .get(key)
            .map(|d| [mean(&mut d.iter().map(|t| t[0])), mean(&mut d.iter().map(|t| t[1]))]);
        arrows.push(Arrow {
            name: format!("{} → {}", key.0, key.1),
            from,
            to,
        });
    }
    for (country, years) in &positions {
        if order.iter().any(|k| &k.0 == country) {
            continue;
        }
        let from = [mean(&mut years.values().map(|p| p.0)), mean(&mut years.values().map(|p| p.1))];
        arrows.push(Arrow {
            name: country.clone(),
            from,
            to: None,
        });
    }

    let mut samples = vec![(
        "observed".to_string(),
        order.iter().flat_map(|k| traj[k].iter().map(|r| r[3])).collect::<Vec<f64>>(),
    )];
    for key in &order {
        if let Some(d) = draws.get(key) {
            samples.push((format!("{} → {}", key.0, key.1), d.iter().map(|t| t[2]).collect()));
        }
    }

    let grid = heatmap_grid(&cells, cfg.heatmap_bins, cfg.heatmap_bins)?;
    let mut density = FigureSpec::new(
        FigureKind::Density,
        "Development index: observed and counterfactual",
        "D",
        "density",
        samples.iter().map(|s| s.0.clone()).collect(),
    );
    density.density_points = cfg.density_points;
    Ok(vec![
        (
            FigureSpec::new(
                FigureKind::Trajectory,
                "Observed and counterfactual development",
                "year",
                "D",
                lines.iter().map(|s| s.name.clone()).collect(),
            ),
            FigureData::Lines(lines),
        ),
        (
            FigureSpec::new(
                FigureKind::EmbeddingMap,
                "Institutional embedding and counterfactual moves",
                "institutional quality",
                "economic complexity",
                arrows.iter().map(|a| a.name.clone()).collect(),
            ),
            FigureData::Arrows(arrows),
        ),
        (density, FigureData::Samples(samples)),
        (
            FigureSpec::new(
                FigureKind::Heatmap,
                "Mean ΔDevelopment by institutions and complexity",
                "institutional quality",
                "economic complexity",
                vec!["delta_development".into()],
            ),
            FigureData::Grid(grid),
        ),
    ])
}
