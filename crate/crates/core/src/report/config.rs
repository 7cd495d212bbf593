//! Flat `key = value` run configuration with `#` comments.
//!
//! Every key has a default; unknown keys are rejected. [`RunConfig::echo`]
//! writes the fully resolved configuration in the same format, so an echo
//! read back yields an identical configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use cforge_nn::Activation;
use thiserror::Error;

use crate::eds::IndexMode;
use crate::panel::{ConstantPolicy, Embedding, PreprocessConfig, Variable};
use crate::robustness::DEFAULT_WINDOWS;
use crate::stats::JsConfig;
use crate::wgan::GanConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {message}")]
    Value { key: String, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("expected csv or json, got `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Panel CSV; empty selects the bundled synthetic panel.
    pub panel: String,
    pub out: String,
    pub seed: u64,
    pub format: OutputFormat,
    /// Checkpoint path; empty means `<out>/train/model.json`.
    pub model: String,
    pub preprocess: PreprocessConfig,
    pub gan: GanConfig,
    /// `(country, target regime)` pairs.
    pub scenarios: Vec<(String, String)>,
    /// CSV with `country,target_regime` rows; overrides `scenarios` when set.
    pub scenario_file: String,
    pub n_draws: usize,
    pub index_mode: IndexMode,
    /// Per-draw bootstrap replications for result intervals; 0 disables.
    pub bootstrap_replications: usize,
    pub js: JsConfig,
    pub fe_dependent: Variable,
    pub fe_interaction: bool,
    pub windows: Vec<(i32, i32)>,
    pub replications: usize,
    pub subsample_frac: f64,
    pub mad_threshold: f64,
    pub governance_scheme: String,
    pub network_anchors: String,
    pub network_similarity: String,
    /// `(country, reference country)` pairs for scheme sensitivity.
    pub scheme_scenarios: Vec<(String, String)>,
    /// Results file for the report; empty means `<out>/eds/results.csv`.
    pub results: String,
    /// Optional second results file rendered in the validation layout.
    pub validation_results: String,
    pub heatmap_bins: usize,
    pub density_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            panel: String::new(),
            out: "out".into(),
            seed: 0,
            format: OutputFormat::Csv,
            model: String::new(),
            preprocess: PreprocessConfig::default(),
            gan: GanConfig::default(),
            scenarios: vec![("ESP".into(), "LATAM".into()), ("URY".into(), "EUROPE".into())],
            scenario_file: String::new(),
            n_draws: crate::eds::DEFAULT_DRAWS,
            index_mode: IndexMode::EqualMean,
            bootstrap_replications: 1000,
            js: JsConfig::default(),
            fe_dependent: Variable::Hdi,
            fe_interaction: true,
            windows: DEFAULT_WINDOWS.to_vec(),
            replications: 100,
            subsample_frac: 0.8,
            mad_threshold: 3.0,
            governance_scheme: String::new(),
            network_anchors: String::new(),
            network_similarity: String::new(),
            scheme_scenarios: vec![
                ("ESP".into(), "CHL".into()),
                ("URY".into(), "DEU".into()),
                ("KOR".into(), "BRA".into()),
            ],
            results: String::new(),
            validation_results: String::new(),
            heatmap_bins: 8,
            density_points: 200,
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn pairs(items: &[(String, String)]) -> String {
    items.iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(",")
}

fn activation(a: Activation) -> String {
    match a {
        Activation::Relu => "relu".into(),
        Activation::LeakyRelu { alpha } => format!("leaky_relu:{alpha}"),
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

fn parse<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_opt<T: FromStr>(v: &str) -> Result<Option<T>, String> {
    if v == "none" { Ok(None) } else { parse(v).map(Some) }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(s.trim())).collect()
}

fn parse_pairs(v: &str) -> Result<Vec<(String, String)>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let (a, b) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("expected COUNTRY:LABEL, got `{item}`"))?;
            Ok((a.trim().to_string(), b.trim().to_string()))
        })
        .collect()
}

fn parse_windows(v: &str) -> Result<Vec<(i32, i32)>, String> {
    v.split(',')
        .map(|w| {
            let (a, b) = w.trim().split_once('-').ok_or_else(|| format!("expected START-END, got `{w}`"))?;
            Ok((parse(a.trim())?, parse(b.trim())?))
        })
        .collect()
}

fn parse_activation(v: &str) -> Result<Activation, String> {
    match v.split_once(':') {
        None if v == "relu" => Ok(Activation::Relu),
        None if v == "leaky_relu" => Ok(Activation::LeakyRelu { alpha: 0.2 }),
        Some(("leaky_relu", a)) => Ok(Activation::LeakyRelu { alpha: parse(a)? }),
        _ => Err(format!("expected relu or leaky_relu[:ALPHA], got `{v}`")),
    }
}

fn embedding(e: Embedding) -> String {
    match e {
        Embedding::Raw => "raw".into(),
        Embedding::Pca { components } => format!("pca:{components}"),
    }
}

fn parse_embedding(v: &str) -> Result<Embedding, String> {
    match v.split_once(':') {
        None if v == "raw" => Ok(Embedding::Raw),
        None if v == "pca" => Ok(Embedding::Pca { components: 3 }),
        Some(("pca", k)) => Ok(Embedding::Pca { components: parse(k)? }),
        _ => Err(format!("expected raw or pca[:K], got `{v}`")),
    }
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.preprocess;
        let g = &self.gan;
        vec![
            ("panel", self.panel.clone()),
            ("out", self.out.clone()),
            ("seed", self.seed.to_string()),
            ("format", self.format.to_string()),
            ("model", self.model.clone()),
            ("preprocess.impute_window", opt(p.impute_window)),
            ("preprocess.winsor_pct", opt(p.winsor_pct)),
            (
                "preprocess.constant_policy",
                match p.constant_policy {
                    ConstantPolicy::Error => "error".into(),
                    ConstantPolicy::Midpoint => "midpoint".into(),
                },
            ),
            ("preprocess.embedding", embedding(p.embedding)),
            ("gan.latent_dim", g.latent_dim.to_string()),
            ("gan.generator_layers", join(&g.generator.layer_widths)),
            ("gan.generator_activation", activation(g.generator.activation)),
            ("gan.generator_batch_norm", g.generator.batch_norm.to_string()),
            ("gan.generator_dropout", g.generator.dropout_rate.to_string()),
            ("gan.critic_layers", join(&g.critic.layer_widths)),
            ("gan.critic_activation", activation(g.critic.activation)),
            ("gan.critic_batch_norm", g.critic.batch_norm.to_string()),
            ("gan.critic_dropout", g.critic.dropout_rate.to_string()),
            ("gan.gp_lambda", g.gp_lambda.to_string()),
            ("gan.n_critic", g.n_critic.to_string()),
            ("gan.batch_size", g.batch_size.to_string()),
            ("gan.epochs", g.epochs.to_string()),
            ("gan.learning_rate", g.adam.eta.to_string()),
            ("gan.beta1", g.adam.beta1.to_string()),
            ("gan.beta2", g.adam.beta2.to_string()),
            ("gan.adam_epsilon", g.adam.epsilon.to_string()),
            ("gan.weight_decay", g.adam.weight_decay.to_string()),
            ("gan.marginal_rescale", g.marginal_rescale.to_string()),
            ("eds.scenarios", pairs(&self.scenarios)),
            ("eds.scenario_file", self.scenario_file.clone()),
            ("eds.n_draws", self.n_draws.to_string()),
            ("eds.index_mode", self.index_mode.to_string()),
            ("eds.bootstrap_replications", self.bootstrap_replications.to_string()),
            ("validate.js_bins", self.js.bins.to_string()),
            ("validate.js_epsilon", self.js.epsilon.to_string()),
            ("validate.fe_dependent", self.fe_dependent.to_string()),
            ("validate.fe_interaction", self.fe_interaction.to_string()),
            (
                "robustness.windows",
                self.windows.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(","),
            ),
            ("robustness.replications", self.replications.to_string()),
            ("robustness.subsample_frac", self.subsample_frac.to_string()),
            ("robustness.mad_threshold", self.mad_threshold.to_string()),
            ("robustness.governance_scheme", self.governance_scheme.clone()),
            ("robustness.network_anchors", self.network_anchors.clone()),
            ("robustness.network_similarity", self.network_similarity.clone()),
            ("robustness.scheme_scenarios", pairs(&self.scheme_scenarios)),
            ("report.results", self.results.clone()),
            ("report.validation_results", self.validation_results.clone()),
            ("report.heatmap_bins", self.heatmap_bins.to_string()),
            ("report.density_points", self.density_points.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        let g = &mut self.gan;
        let p = &mut self.preprocess;
        let outcome: Result<(), String> = match key {
            "panel" => Ok(self.panel = v.to_string()),
            "out" => Ok(self.out = v.to_string()),
            "seed" => parse(v).map(|x| self.seed = x),
            "format" => v.parse().map(|x| self.format = x),
            "model" => Ok(self.model = v.to_string()),
            "preprocess.impute_window" => parse_opt(v).map(|x| p.impute_window = x),
            "preprocess.winsor_pct" => parse_opt(v).map(|x| p.winsor_pct = x),
            "preprocess.constant_policy" => match v {
                "error" => Ok(p.constant_policy = ConstantPolicy::Error),
                "midpoint" => Ok(p.constant_policy = ConstantPolicy::Midpoint),
                _ => Err(format!("expected error or midpoint, got `{v}`")),
            },
            "preprocess.embedding" => parse_embedding(v).map(|x| p.embedding = x),
            "gan.latent_dim" => parse(v).map(|x| g.latent_dim = x),
            "gan.generator_layers" => parse_list(v).map(|x| g.generator.layer_widths = x),
            "gan.generator_activation" => parse_activation(v).map(|x| g.generator.activation = x),
            "gan.generator_batch_norm" => parse_bool(v).map(|x| g.generator.batch_norm = x),
            "gan.generator_dropout" => parse(v).map(|x| g.generator.dropout_rate = x),
            "gan.critic_layers" => parse_list(v).map(|x| g.critic.layer_widths = x),
            "gan.critic_activation" => parse_activation(v).map(|x| g.critic.activation = x),
            "gan.critic_batch_norm" => parse_bool(v).map(|x| g.critic.batch_norm = x),
            "gan.critic_dropout" => parse(v).map(|x| g.critic.dropout_rate = x),
            "gan.gp_lambda" => parse(v).map(|x| g.gp_lambda = x),
            "gan.n_critic" => parse(v).map(|x| g.n_critic = x),
            "gan.batch_size" => parse(v).map(|x| g.batch_size = x),
            "gan.epochs" => parse(v).map(|x| g.epochs = x),
            "gan.learning_rate" => parse(v).map(|x| g.adam.eta = x),
            "gan.beta1" => parse(v).map(|x| g.adam.beta1 = x),
            "gan.beta2" => parse(v).map(|x| g.adam.beta2 = x),
            "gan.adam_epsilon" => parse(v).map(|x| g.adam.epsilon = x),
            "gan.weight_decay" => parse(v).map(|x| g.adam.weight_decay = x),
            "gan.marginal_rescale" => parse_bool(v).map(|x| g.marginal_rescale = x),
            "eds.scenarios" => parse_pairs(v).map(|x| self.scenarios = x),
            "eds.scenario_file" => Ok(self.scenario_file = v.to_string()),
            "eds.n_draws" => parse(v).map(|x| self.n_draws = x),
            "eds.index_mode" => v.parse().map(|x| self.index_mode = x).map_err(|e: crate::eds::EdsError| e.to_string()),
            "eds.bootstrap_replications" => parse(v).map(|x| self.bootstrap_replications = x),
            "validate.js_bins" => parse(v).map(|x| self.js.bins = x),
            "validate.js_epsilon" => parse(v).map(|x| self.js.epsilon = x),
            "validate.fe_dependent" => v.parse().map(|x| self.fe_dependent = x).map_err(|e: crate::panel::PanelError| e.to_string()),
            "validate.fe_interaction" => parse_bool(v).map(|x| self.fe_interaction = x),
            "robustness.windows" => parse_windows(v).map(|x| self.windows = x),
            "robustness.replications" => parse(v).map(|x| self.replications = x),
            "robustness.subsample_frac" => parse(v).map(|x| self.subsample_frac = x),
            "robustness.mad_threshold" => parse(v).map(|x| self.mad_threshold = x),
            "robustness.governance_scheme" => Ok(self.governance_scheme = v.to_string()),
            "robustness.network_anchors" => Ok(self.network_anchors = v.to_string()),
            "robustness.network_similarity" => Ok(self.network_similarity = v.to_string()),
            "robustness.scheme_scenarios" => parse_pairs(v).map(|x| self.scheme_scenarios = x),
            "report.results" => Ok(self.results = v.to_string()),
            "report.validation_results" => Ok(self.validation_results = v.to_string()),
            "report.heatmap_bins" => parse(v).map(|x| self.heatmap_bins = x),
            "report.density_points" => parse(v).map(|x| self.density_points = x),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        };
        outcome.map_err(|message| ConfigError::Value {
            key: key.to_string(),
            message,
        })
    }

    /// Applies `key = value` lines from `text` on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: k + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Syntax {
                    line: k + 1,
                    message: format!("key `{key}` given twice"),
                });
            }
            self.set(key, value.trim())?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply(text)?;
        Ok(c)
    }

    /// The resolved configuration in the input format.
    pub fn echo(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
