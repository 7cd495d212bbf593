//! Conditional WGAN-GP over `(I, C, H)` triplets.
//!
//! The regime label is one-hot encoded and appended to both the latent
//! input of the generator and the feature input of the critic.

mod rescale;
mod train;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use cforge_nn::{
    seeded, split, Activation, AdamConfig, AdamState, Mlp, MlpConfig, NnError, SeededRng, Tensor,
};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{FittedTransforms, PanelError, PreparedPanel};

pub use rescale::{marginal_rescale, Marginal};
pub use train::{critic_loss, gradient_penalty, train, EpochLog};

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("unknown regime `{label}`; known regimes: {}", known.join(", "))]
    Vocabulary { label: String, known: Vec<String> },
    #[error("numeric failure at epoch {epoch}: {message}")]
    Numeric { epoch: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = GanError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub generator: MlpConfig,
    pub critic: MlpConfig,
    pub gp_lambda: f64,
    pub n_critic: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub marginal_rescale: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            generator: MlpConfig {
                layer_widths: vec![128, 64, 32],
                activation: Activation::Relu,
                batch_norm: true,
                dropout_rate: 0.0,
            },
            critic: MlpConfig {
                layer_widths: vec![128, 64, 32],
                activation: Activation::LeakyRelu { alpha: 0.2 },
                batch_norm: false,
                dropout_rate: 0.3,
            },
            gp_lambda: 10.0,
            n_critic: 5,
            batch_size: 64,
            epochs: 15_000,
            adam: AdamConfig::default(),
            seed: 0,
            marginal_rescale: true,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GanError::Config(m.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.n_critic == 0 {
            return bad("n_critic must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.gp_lambda >= 0.0) {
            return bad("gp_lambda must be non-negative");
        }
        self.generator.validate()?;
        self.critic.validate()?;
        self.adam.validate()?;
        Ok(())
    }
}

/// Generator input rows: features, normalized triplets and regime indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub features: Tensor,
    pub triplets: Vec<[f64; 3]>,
    pub labels: Vec<usize>,
    pub vocabulary: Vec<String>,
    pub transforms: Option<FittedTransforms>,
}

impl TrainingSet {
    /// Vocabulary is the sorted set of labels present.
    pub fn from_triplets(triplets: &[[f64; 3]], regimes: &[String]) -> Result<Self> {
        if triplets.len() != regimes.len() {
            return Err(GanError::Data(format!(
                "{} triplets but {} regime labels",
                triplets.len(),
                regimes.len()
            )));
        }
        let features = Tensor::from_rows(triplets)?;
        Self::assemble(features, triplets.to_vec(), regimes, None)
    }

    pub fn from_prepared(prepared: &PreparedPanel) -> Result<Self> {
        let rows: Vec<&[f64]> = prepared.rows.iter().map(|r| r.features.as_slice()).collect();
        let features = Tensor::from_rows(&rows)?;
        let regimes: Vec<String> = prepared.rows.iter().map(|r| r.regime.clone()).collect();
        let triplets = prepared.rows.iter().map(|r| r.triplet).collect();
        Self::assemble(features, triplets, &regimes, Some(prepared.transforms.clone()))
    }

    fn assemble(
        features: Tensor,
        triplets: Vec<[f64; 3]>,
        regimes: &[String],
        transforms: Option<FittedTransforms>,
    ) -> Result<Self> {
        if triplets.is_empty() {
            return Err(GanError::Data("training set is empty".into()));
        }
        if !features.is_finite() {
            return Err(GanError::Data("training features are not finite".into()));
        }
        let mut vocabulary: Vec<String> = regimes.to_vec();
        vocabulary.sort();
        vocabulary.dedup();
        let labels = regimes
            .iter()
            .map(|r| vocabulary.binary_search(r).expect("label drawn from vocabulary"))
            .collect();
        Ok(Self {
            features,
            triplets,
            labels,
            vocabulary,
            transforms,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows of regime `k`, in order.
    pub fn stratum(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == k).collect()
    }
}

/// One-hot rows for `labels` over a vocabulary of `width` entries.
pub fn one_hot(labels: &[usize], width: usize) -> Tensor {
    let mut t = Tensor::zeros(labels.len(), width);
    for (r, &k) in labels.iter().enumerate() {
        t.set(r, k, 1.0);
    }
    t
}

/// `n x dim` standard normal draws.
pub fn sample_latent(n: usize, dim: usize, rng: &mut SeededRng) -> Tensor {
    let data = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(n, dim, data).expect("length matches shape")
}

/// Trained (or partially trained) generator and critic with everything
/// needed to resume training or generate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanModel {
    pub config: GanConfig,
    pub generator: Mlp,
    pub critic: Mlp,
    pub generator_opt: AdamState,
    pub critic_opt: AdamState,
    pub rng: SeededRng,
    pub vocabulary: Vec<String>,
    pub transforms: Option<FittedTransforms>,
    /// Per regime, the training marginals of each normalized triplet column.
    pub marginals: BTreeMap<String, [Marginal; 3]>,
    pub training_log: Vec<EpochLog>,
}

impl GanModel {
    /// Freshly initialized networks for `data`; no training.
    pub fn init(data: &TrainingSet, config: GanConfig) -> Result<Self> {
        config.validate()?;
        let k = data.vocabulary.len();
        let d = data.features.cols();
        for (label, name) in data.vocabulary.iter().enumerate() {
            if data.stratum(label).is_empty() {
                return Err(GanError::Data(format!("regime {name} has no training rows")));
            }
        }
        let mut init_rng = split(config.seed, &["init"]);
        let generator = Mlp::new(config.generator.clone(), config.latent_dim + k, d, &mut init_rng)?;
        let critic = Mlp::new(config.critic.clone(), d + k, 1, &mut init_rng)?;
        let generator_opt = AdamState::new(config.adam, generator.parameters());
        let critic_opt = AdamState::new(config.adam, critic.parameters());
        let marginals = data
            .vocabulary
            .iter()
            .enumerate()
            .map(|(label, name)| {
                let rows = data.stratum(label);
                let col = |j: usize| Marginal::fit(&rows.iter().map(|&i| data.triplets[i][j]).collect::<Vec<_>>());
                (name.clone(), [col(0), col(1), col(2)])
            })
            .collect();
        Ok(Self {
            rng: seeded(cforge_nn::derive_seed(config.seed, &["train"])),
            config,
            generator,
            critic,
            generator_opt,
            critic_opt,
            vocabulary: data.vocabulary.clone(),
            transforms: data.transforms.clone(),
            marginals,
            training_log: Vec::new(),
        })
    }

    pub fn epochs_completed(&self) -> usize {
        self.training_log.len()
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.vocabulary
            .iter()
            .position(|v| v == label)
            .ok_or_else(|| GanError::Vocabulary {
                label: label.to_string(),
                known: self.vocabulary.clone(),
            })
    }

    /// Raw generator output in feature space, eval mode.
    pub fn generate_features(&self, z: &Tensor, condition: &str) -> Result<Tensor> {
        let k = self.label_index(condition)?;
        if z.cols() != self.config.latent_dim {
            return Err(GanError::Data(format!(
                "latent batch has {} columns, model expects {}",
                z.cols(),
                self.config.latent_dim
            )));
        }
        let input = z.hstack(&one_hot(&vec![k; z.rows()], self.vocabulary.len()))?;
        Ok(self.generator.predict(&input)?)
    }

    /// Normalized `(I, C, H)` triplets for latent batch `z` under `condition`.
    /// With marginal rescaling each column is quantile-mapped onto the
    /// regime's training marginal; otherwise values are clamped to `[0, 1]`.
    pub fn generate(&self, z: &Tensor, condition: &str) -> Result<Vec<[f64; 3]>> {
        let features = self.generate_features(z, condition)?;
        let mut triplets: Vec<[f64; 3]> = (0..features.rows())
            .map(|r| match &self.transforms {
                Some(t) => t.unembed(features.row(r)),
                None => {
                    let f = features.row(r);
                    [f[0], f[1], f[2]]
                }
            })
            .collect();
        if self.config.marginal_rescale {
            let marginals = &self.marginals[condition];
            for j in 0..3 {
                let col: Vec<f64> = triplets.iter().map(|t| t[j]).collect();
                for (t, v) in triplets.iter_mut().zip(marginals[j].apply(&col)) {
                    t[j] = v;
                }
            }
        } else {
            for t in &mut triplets {
                t.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
        }
        Ok(triplets)
    }

    pub fn save<W: Write>(&self, sink: W) -> Result<()> {
        serde_json::to_writer(sink, self).map_err(|e| GanError::Checkpoint(e.to_string()))
    }

    pub fn load<R: Read>(source: R) -> Result<Self> {
        let model: Self =
            serde_json::from_reader(source).map_err(|e| GanError::Checkpoint(e.to_string()))?;
        if model.marginals.len() != model.vocabulary.len()
            || model.generator.input_dim() != model.config.latent_dim + model.vocabulary.len()
        {
            return Err(GanError::Checkpoint(
                "vocabulary does not match the network input widths".into(),
            ));
        }
        Ok(model)
    }
}

/// Training log as CSV.
pub fn write_training_log<W: Write>(log: &[EpochLog], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| GanError::Checkpoint(e.to_string());
    w.write_record([
        "epoch",
        "wasserstein_estimate",
        "critic_loss",
        "generator_loss",
        "gradient_penalty",
    ])
    .map_err(io)?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.wasserstein_estimate.to_string(),
            e.critic_loss.to_string(),
            e.generator_loss.to_string(),
            e.gradient_penalty.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| GanError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_shape_moments_and_determinism() {
        let z = sample_latent(64, 8, &mut seeded(1));
        assert_eq!(z.shape(), [64, 8]);
        let big = sample_latent(100_000, 1, &mut seeded(2));
        let mean = big.mean();
        let var = big.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e5;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        assert_eq!(sample_latent(10, 3, &mut seeded(9)), sample_latent(10, 3, &mut seeded(9)));
    }

    #[test]
    fn unknown_condition_lists_vocabulary() {
        let data = TrainingSet::from_triplets(
            &[[0.1; 3], [0.2; 3], [0.8; 3], [0.9; 3]],
            &["A", "A", "B", "B"].map(String::from),
        )
        .unwrap();
        let config = GanConfig {
            generator: MlpConfig { layer_widths: vec![4], ..GanConfig::default().generator },
            critic: MlpConfig { layer_widths: vec![4], ..GanConfig::default().critic },
            ..GanConfig::default()
        };
        let model = GanModel::init(&data, config).unwrap();
        let err = model.generate(&sample_latent(2, 8, &mut seeded(0)), "C").unwrap_err();
        assert_eq!(err.to_string(), "unknown regime `C`; known regimes: A, B");
    }

    #[test]
    fn config_validation() {
        let mut c = GanConfig::default();
        assert!(c.validate().is_ok());
        c.gp_lambda = -1.0;
        assert!(c.validate().is_err());
        c = GanConfig { n_critic: 0, ..GanConfig::default() };
        assert!(c.validate().is_err());
    }
}
