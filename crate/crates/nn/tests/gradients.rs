//! Analytic gradients against central finite differences.

use cforge_nn::gradcheck::{central_difference, relative_error};
use cforge_nn::{
    affine, dropout, seeded, Activation, BatchNorm, Mlp, MlpConfig, Mode, SeededRng, Tape, Tensor,
    Var,
};
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Gradient of `sum(build(params) * weights)` by the tape and by finite
/// differences; returns the relative error between the two.
fn compare(
    params: Vec<Tensor>,
    weights: impl Fn([usize; 2]) -> Tensor,
    build: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
) -> f64 {
    let scalar = |tape: &Tape, p: &[Tensor]| -> f64 {
        let vars: Vec<Var> = p.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(tape, &vars);
        let w = weights(out.shape());
        out.value()
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&tape, &vars);
    let w = tape.constant(weights(out.shape()));
    let loss = out.mul(w).unwrap().sum_all();
    let analytic = tape.gradients(loss, &vars).unwrap();
    let numeric = central_difference(|p| scalar(&Tape::new(), p), &params, H);
    relative_error(&analytic, &numeric, 1e-6)
}

fn weight_fn(seed: u64) -> impl Fn([usize; 2]) -> Tensor {
    move |[r, c]| random(r, c, &mut seeded(seed ^ 0xabcdef))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn affine_layer(n in 1usize..6, d_in in 1usize..6, d_out in 1usize..6, seed: u64) {
        let mut rng = seeded(seed);
        let params = vec![random(n, d_in, &mut rng), random(d_in, d_out, &mut rng), random(1, d_out, &mut rng)];
        let err = compare(params, weight_fn(seed), |_, v| affine(v[0], v[1], v[2]).unwrap());
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn transposed_products(n in 1usize..5, k in 1usize..5, m in 1usize..5, seed: u64) {
        let mut rng = seeded(seed);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a = if ta { random(k, n, &mut rng) } else { random(n, k, &mut rng) };
            let b = if tb { random(m, k, &mut rng) } else { random(k, m, &mut rng) };
            let err = compare(vec![a, b], weight_fn(seed), move |_, v| v[0].matmul_t(ta, v[1], tb).unwrap());
            prop_assert!(err < TOL, "({ta},{tb}) relative error {err}");
        }
    }

    #[test]
    fn activations(n in 1usize..6, c in 1usize..6, alpha in 0.0f64..0.5, seed: u64) {
        let mut rng = seeded(seed);
        let x = random(n, c, &mut rng);
        // Keep away from the kink so the finite difference is valid.
        let x = x.map(|v| if v.abs() < 1e-3 { 0.1 } else { v });
        let err = compare(vec![x.clone()], weight_fn(seed), |_, v| v[0].relu());
        prop_assert!(err < TOL, "relu {err}");
        let err = compare(vec![x], weight_fn(seed), move |_, v| v[0].leaky_relu(alpha));
        prop_assert!(err < TOL, "leaky relu {err}");
    }

    #[test]
    fn batch_norm_training_mode(n in 2usize..7, c in 1usize..5, seed: u64) {
        let mut rng = seeded(seed);
        let params = vec![random(n, c, &mut rng), random(1, c, &mut rng), random(1, c, &mut rng)];
        let err = compare(params, weight_fn(seed), |_, v| {
            let mut bn = BatchNorm::new(v[0].shape()[1]);
            bn.forward(v[0], v[1], v[2], true).unwrap()
        });
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn dropout_with_fixed_mask(n in 1usize..6, c in 1usize..6, p in 0.05f64..0.8, seed: u64) {
        let x = random(n, c, &mut seeded(seed));
        let err = compare(vec![x], weight_fn(seed), move |_, v| {
            let mut rng = seeded(seed.wrapping_add(1));
            dropout(v[0], p, &mut Mode::Train(&mut rng)).unwrap()
        });
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn reductions_concat_and_norms(n in 1usize..6, c in 1usize..6, seed: u64) {
        let mut rng = seeded(seed);
        let a = random(n, c, &mut rng);
        let b = random(n, c + 1, &mut rng);
        let err = compare(vec![a.clone(), b], weight_fn(seed), |_, v| v[0].concat_cols(v[1]).unwrap());
        prop_assert!(err < TOL, "concat {err}");
        let err = compare(vec![a.clone()], weight_fn(seed), |_, v| v[0].mean_all());
        prop_assert!(err < TOL, "mean {err}");
        let err = compare(vec![a.clone()], weight_fn(seed), |_, v| v[0].norm2_rows());
        prop_assert!(err < TOL, "norm2 rows {err}");
        let err = compare(vec![a.clone()], weight_fn(seed), |_, v| v[0].sum_rows().broadcast_rows(3));
        prop_assert!(err < TOL, "broadcast {err}");
        let positive = a.map(|x| x.abs() + 0.5);
        let err = compare(vec![positive.clone()], weight_fn(seed), |_, v| v[0].sqrt());
        prop_assert!(err < TOL, "sqrt {err}");
        let err = compare(vec![positive], weight_fn(seed), |_, v| v[0].recip());
        prop_assert!(err < TOL, "recip {err}");
    }

    #[test]
    fn whole_mlp(n in 2usize..6, d_in in 1usize..4, seed: u64, bn: bool, leaky: bool) {
        let config = MlpConfig {
            layer_widths: vec![5, 3],
            activation: if leaky { Activation::LeakyRelu { alpha: 0.2 } } else { Activation::Relu },
            batch_norm: bn,
            dropout_rate: 0.2,
        };
        let mlp = Mlp::new(config, d_in, 2, &mut seeded(seed)).unwrap();
        let x = random(n, d_in, &mut seeded(seed ^ 1));
        let mut params: Vec<Tensor> = mlp.parameters().into_iter().cloned().collect();
        params.push(x);
        let err = compare(params, weight_fn(seed), move |tape, v| {
            let mut net = mlp.clone();
            let (x, p) = v.split_last().unwrap();
            let bound = cforge_nn::BoundMlp { vars: p.to_vec() };
            let mut rng = seeded(seed ^ 2);
            let _ = tape;
            net.forward(&bound, *x, &mut Mode::Train(&mut rng)).unwrap()
        });
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn second_order_through_an_input_gradient_norm(d in 1usize..6, seed: u64) {
        // g(w) = || d/dx (w.x)^2 ||^2 , differentiated with respect to w.
        let mut rng = seeded(seed);
        let w = random(d, 1, &mut rng);
        let x = random(1, d, &mut rng);

        let g_of = |w: &Tensor| -> (f64, Tensor) {
            let tape = Tape::new();
            let wv = tape.param(w.clone());
            let xv = tape.param(x.clone());
            let inner = xv.matmul(wv).unwrap().square().sum_all();
            let gx = tape.grad(inner, &[xv]).unwrap()[0];
            let g = gx.square().sum_all();
            let dw = tape.gradients(g, &[wv]).unwrap().remove(0);
            (g.value().item(), dw)
        };
        let (_, analytic) = g_of(&w);
        // Nested oracle: finite differences over w of the first-order gradient's norm.
        let numeric = central_difference(|p| g_of(&p[0]).0, std::slice::from_ref(&w), H);
        let err = relative_error(&[analytic], &numeric, 1e-6);
        prop_assert!(err < TOL, "relative error {err}");
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let config = MlpConfig {
        layer_widths: vec![8, 4],
        activation: Activation::LeakyRelu { alpha: 0.2 },
        batch_norm: true,
        dropout_rate: 0.3,
    };
    let run = || {
        let mut mlp = Mlp::new(config.clone(), 3, 1, &mut seeded(3)).unwrap();
        let tape = Tape::new();
        let bound = mlp.bind(&tape, true);
        let x = tape.constant(random(16, 3, &mut seeded(4)));
        let mut rng = seeded(5);
        let y = mlp.forward(&bound, x, &mut Mode::Train(&mut rng)).unwrap();
        tape.gradients(y.mean_all(), &bound.vars).unwrap()
    };
    let a = run();
    let b = run();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn dropout_rate_matches_bernoulli_expectation() {
    let p = 0.3;
    let n = 100_000usize;
    for seed in 0..5u64 {
        let tape = Tape::new();
        let x = tape.constant(Tensor::filled(1, n, 1.0));
        let mut rng = seeded(seed);
        let y = dropout(x, p, &mut Mode::Train(&mut rng)).unwrap();
        let zeros = y.value().data().iter().filter(|&&v| v == 0.0).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((zeros - n as f64 * p).abs() < 3.0 * sigma, "seed {seed}: {zeros} zeros");
    }
}

#[test]
fn batch_norm_training_output_is_standardized() {
    let mut rng = seeded(11);
    let x = random(32, 4, &mut rng).map(|v| 3.0 * v + 7.0);
    let tape = Tape::new();
    let mut bn = BatchNorm::new(4);
    let xv = tape.constant(x);
    let g = tape.constant(bn.gamma.clone());
    let b = tape.constant(bn.beta.clone());
    let y = bn.forward(xv, g, b, true).unwrap();
    let y = y.value();
    for c in 0..4 {
        let col = y.column(c);
        let mean = col.iter().sum::<f64>() / 32.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-6);
        // Only the epsilon in the denominator separates this from 1.
        assert!((var - 1.0).abs() < 1e-5, "variance {var}");
    }
    // Running statistics moved 10% of the way towards the batch.
    assert!(bn.running_mean.data().iter().all(|&m| m > 0.4 && m < 1.0));
}
