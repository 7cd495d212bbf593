use cforge_nn::{AdamState, Mlp, Mode, NnError, SeededRng, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{one_hot, sample_latent, GanConfig, GanError, GanModel, Result, TrainingSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's critic steps of `mean D(real) - mean D(fake)`.
    pub wasserstein_estimate: f64,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub gradient_penalty: f64,
}

/// `mean (|grad_x D(x_hat)| - 1)^2` over `x_hat = u real + (1 - u) fake`,
/// one `u ~ U(0, 1)` per row. `critic` must treat rows independently
/// (no batch statistics), and the result stays differentiable with respect
/// to whatever parameters `critic` closes over.
pub fn gradient_penalty<'t>(
    tape: &'t Tape,
    mut critic: impl FnMut(Var<'t>) -> std::result::Result<Var<'t>, NnError>,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut SeededRng,
) -> Result<Var<'t>> {
    real.expect_same_shape(fake)?;
    let mut mixed = real.clone();
    for r in 0..real.rows() {
        let u: f64 = rng.random();
        for c in 0..real.cols() {
            mixed.set(r, c, u * real.get(r, c) + (1.0 - u) * fake.get(r, c));
        }
    }
    let x_hat = tape.param(mixed);
    let scores = critic(x_hat)?.sum_all();
    let grad = tape.grad(scores, &[x_hat])?[0];
    Ok(grad.norm2_rows().add_scalar(-1.0).square().mean_all())
}

/// `mean D(fake) - mean D(real) + gp_lambda * penalty`.
pub fn critic_loss<'t>(
    d_real: Var<'t>,
    d_fake: Var<'t>,
    gp_lambda: f64,
    penalty: Var<'t>,
) -> Result<Var<'t>> {
    Ok(d_fake
        .mean_all()
        .sub(d_real.mean_all())?
        .add(penalty.scale(gp_lambda))?)
}

/// Initializes a model for `data` and trains it for `config.epochs` epochs.
pub fn train(data: &TrainingSet, config: GanConfig) -> Result<GanModel> {
    let epochs = config.epochs;
    let mut model = GanModel::init(data, config)?;
    model.train_epochs(data, epochs)?;
    Ok(model)
}

struct Parts<'a> {
    config: &'a GanConfig,
    generator: &'a mut Mlp,
    critic: &'a mut Mlp,
    generator_opt: &'a mut AdamState,
    critic_opt: &'a mut AdamState,
    rng: &'a mut SeededRng,
    width: usize,
    epoch: usize,
}

struct CriticStep {
    wasserstein: f64,
    loss: f64,
    penalty: f64,
}

impl Parts<'_> {
    fn numeric(&self, message: impl Into<String>) -> GanError {
        GanError::Numeric {
            epoch: self.epoch,
            message: message.into(),
        }
    }

    fn fake_input(&mut self, labels: &[usize]) -> Tensor {
        let z = sample_latent(labels.len(), self.config.latent_dim, self.rng);
        z.hstack(&one_hot(labels, self.width)).expect("row counts agree")
    }

    fn critic_step(&mut self, real: &Tensor, labels: &[usize]) -> Result<CriticStep> {
        let tape = Tape::new();
        let cond = tape.constant(one_hot(labels, self.width));
        let gen_bound = self.generator.bind(&tape, false);
        let gen_in = tape.constant(self.fake_input(labels));
        let fake = self
            .generator
            .forward(&gen_bound, gen_in, &mut Mode::Train(self.rng))?;
        let fake = (*fake.value()).clone();

        let bound = self.critic.bind(&tape, true);
        let real_v = tape.constant(real.clone()).concat_cols(cond)?;
        let fake_v = tape.constant(fake.clone()).concat_cols(cond)?;
        let d_real = self.critic.forward(&bound, real_v, &mut Mode::Train(self.rng))?;
        let d_fake = self.critic.forward(&bound, fake_v, &mut Mode::Train(self.rng))?;
        let critic = &mut *self.critic;
        let penalty = gradient_penalty(
            &tape,
            |x| critic.forward(&bound, x.concat_cols(cond)?, &mut Mode::Eval),
            real,
            &fake,
            self.rng,
        )?;
        let loss = critic_loss(d_real, d_fake, self.config.gp_lambda, penalty)?;
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(self.numeric(format!("critic loss is {value}")));
        }
        let grads = tape.gradients(loss, &bound.vars)?;
        self.critic_opt
            .step(&mut self.critic.parameters_mut(), &grads)
            .map_err(|e| self.numeric(format!("critic update: {e}")))?;
        Ok(CriticStep {
            wasserstein: d_real.value().mean() - d_fake.value().mean(),
            loss: value,
            penalty: penalty.value().item(),
        })
    }

    fn generator_step(&mut self, labels: &[usize]) -> Result<f64> {
        let tape = Tape::new();
        let cond = tape.constant(one_hot(labels, self.width));
        let gen_bound = self.generator.bind(&tape, true);
        let gen_in = tape.constant(self.fake_input(labels));
        let fake = self
            .generator
            .forward(&gen_bound, gen_in, &mut Mode::Train(self.rng))?;
        let critic_bound = self.critic.bind(&tape, false);
        let scores = self.critic.forward(
            &critic_bound,
            fake.concat_cols(cond)?,
            &mut Mode::Train(self.rng),
        )?;
        let loss = scores.mean_all().scale(-1.0);
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(self.numeric(format!("generator loss is {value}")));
        }
        let grads = tape.gradients(loss, &gen_bound.vars)?;
        self.generator_opt
            .step(&mut self.generator.parameters_mut(), &grads)
            .map_err(|e| self.numeric(format!("generator update: {e}")))?;
        Ok(value)
    }
}

impl GanModel {
    /// Runs `epochs` more epochs. An epoch is one shuffled pass over the
    /// mini-batches (a trailing batch of fewer than two rows is skipped); a
    /// generator step follows every `n_critic` critic steps, and once more at
    /// the end of the epoch if critic steps are left over.
    pub fn train_epochs(&mut self, data: &TrainingSet, epochs: usize) -> Result<()> {
        if data.vocabulary != self.vocabulary {
            return Err(GanError::Data(format!(
                "training set regimes {:?} differ from the model's {:?}",
                data.vocabulary, self.vocabulary
            )));
        }
        if data.features.cols() != self.critic.input_dim() - self.vocabulary.len() {
            return Err(GanError::Data(format!(
                "training set has {} feature columns, model expects {}",
                data.features.cols(),
                self.critic.input_dim() - self.vocabulary.len()
            )));
        }
        let n = data.len();
        if n < 2 {
            return Err(GanError::Data("training needs at least two rows".into()));
        }
        let batch_size = self.config.batch_size.min(n);
        let n_critic = self.config.n_critic;
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..epochs {
            let epoch = self.training_log.len() + 1;
            let mut parts = Parts {
                config: &self.config,
                generator: &mut self.generator,
                critic: &mut self.critic,
                generator_opt: &mut self.generator_opt,
                critic_opt: &mut self.critic_opt,
                rng: &mut self.rng,
                width: self.vocabulary.len(),
                epoch,
            };
            order.shuffle(parts.rng);
            let batches: Vec<&[usize]> = order.chunks(batch_size).filter(|b| b.len() >= 2).collect();

            let (mut w_sum, mut c_sum, mut gp_sum, mut g_sum) = (0.0, 0.0, 0.0, 0.0);
            let mut g_steps = 0usize;
            let mut labels = Vec::new();
            for (i, batch) in batches.iter().enumerate() {
                let real = data.features.select_rows(batch);
                labels = batch.iter().map(|&r| data.labels[r]).collect();
                let step = parts.critic_step(&real, &labels)?;
                w_sum += step.wasserstein;
                c_sum += step.loss;
                gp_sum += step.penalty;
                if (i + 1) % n_critic == 0 {
                    g_sum += parts.generator_step(&labels)?;
                    g_steps += 1;
                }
            }
            if batches.len() % n_critic != 0 {
                g_sum += parts.generator_step(&labels)?;
                g_steps += 1;
            }
            let c_steps = batches.len() as f64;
            self.training_log.push(EpochLog {
                epoch,
                wasserstein_estimate: w_sum / c_steps,
                critic_loss: c_sum / c_steps,
                generator_loss: g_sum / g_steps as f64,
                gradient_penalty: gp_sum / c_steps,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cforge_nn::gradcheck::{central_difference, relative_error};
    use cforge_nn::{seeded, Activation, MlpConfig};

    #[test]
    fn linear_critic_penalty_is_closed_form() {
        let mut rng = seeded(1);
        for w in [vec![0.6, 0.8], vec![2.0, -1.0], vec![0.1, 0.0]] {
            let tape = Tape::new();
            let wv = tape.constant(Tensor::new(2, 1, w.clone()).unwrap());
            let real = sample_latent(5, 2, &mut rng);
            let fake = sample_latent(5, 2, &mut rng);
            let gp = gradient_penalty(&tape, |x| x.matmul(wv), &real, &fake, &mut rng).unwrap();
            let norm = (w[0] * w[0] + w[1] * w[1]).sqrt();
            assert!((gp.value().item() - (norm - 1.0).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_gradient_matches_nested_differences() {
        let config = MlpConfig {
            layer_widths: vec![4],
            activation: Activation::LeakyRelu { alpha: 0.2 },
            batch_norm: false,
            dropout_rate: 0.0,
        };
        let critic = Mlp::new(config, 3, 1, &mut seeded(3)).unwrap();
        let real = sample_latent(6, 3, &mut seeded(4));
        let fake = sample_latent(6, 3, &mut seeded(5));
        let penalty_of = |params: &[Tensor]| -> (f64, Vec<Tensor>) {
            let tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
            let bound = cforge_nn::BoundMlp { vars: vars.clone() };
            let mut net = critic.clone();
            let gp = gradient_penalty(
                &tape,
                |x| net.forward(&bound, x, &mut Mode::Eval),
                &real,
                &fake,
                &mut seeded(6),
            )
            .unwrap();
            (gp.value().item(), tape.gradients(gp, &vars).unwrap())
        };
        let params: Vec<Tensor> = critic.parameters().into_iter().cloned().collect();
        let (_, analytic) = penalty_of(&params);
        let numeric = central_difference(|p| penalty_of(p).0, &params, 1e-5);
        let err = relative_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn critic_loss_vanishes_on_identical_batches() {
        let tape = Tape::new();
        let d = tape.constant(sample_latent(7, 1, &mut seeded(8)));
        let zero = tape.constant(Tensor::scalar(0.3));
        assert_eq!(critic_loss(d, d, 0.0, zero).unwrap().value().item(), 0.0);
    }
}
