//! Finite-difference checks for every numeric primitive.

use mfusion::numeric::gradcheck::{central_difference, max_relative_error, DEFAULT_STEP};
use mfusion::numeric::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-scale..scale);
    }
    t
}

fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn with(t: &Tensor, flat: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), flat.to_vec()).unwrap()
}

/// FD gradient of `f` with respect to tensor `t`.
fn fd(t: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    central_difference(|flat| f(&with(t, flat)), t.data(), DEFAULT_STEP)
}

fn check_linear(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, &[3, 4], 1.0);
    let w = random(&mut rng, &[5, 4], 1.0);
    let b = random(&mut rng, &[5], 1.0);
    let r = random(&mut rng, &[3, 5], 1.0);
    let g = linear_backward(&x, &w, &r).unwrap();
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| weighted_sum(&linear(x, w, b).unwrap(), &r);
    [
        max_relative_error(g.dw.data(), &fd(&w, |w| loss(&x, w, &b))),
        max_relative_error(g.db.data(), &fd(&b, |b| loss(&x, &w, b))),
        max_relative_error(g.dx.data(), &fd(&x, |x| loss(x, &w, &b))),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[test]
fn linear_matches_finite_differences_seed_42() {
    let e = check_linear(42);
    assert!(e < 1e-6, "max rel err {e}");
}

#[test]
fn linear_vector_input_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = random(&mut rng, &[4], 1.0);
    let w = random(&mut rng, &[2, 4], 1.0);
    let b = random(&mut rng, &[2], 1.0);
    let r = random(&mut rng, &[2], 1.0);
    let g = linear_backward(&x, &w, &r).unwrap();
    let num = fd(&w, |w| weighted_sum(&linear(&x, w, &b).unwrap(), &r));
    assert!(max_relative_error(g.dw.data(), &num) < 1e-6);
    assert_eq!(g.dx.shape(), &[4]);
}

fn check_activations(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, &[3, 5], 2.0);
    let r = random(&mut rng, &[3, 5], 1.0);
    let mut worst: f64 = 0.0;

    // Keep relu inputs away from the kink.
    let xr = x.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    let a = relu_backward(&xr, &r).unwrap();
    worst = worst.max(max_relative_error(a.data(), &fd(&xr, |x| weighted_sum(&relu(x), &r))));

    let y = sigmoid(&x);
    let a = sigmoid_backward(&y, &r).unwrap();
    worst = worst.max(max_relative_error(a.data(), &fd(&x, |x| weighted_sum(&sigmoid(x), &r))));

    let y = tanh(&x);
    let a = tanh_backward(&y, &r).unwrap();
    worst = worst.max(max_relative_error(a.data(), &fd(&x, |x| weighted_sum(&tanh(x), &r))));

    let y = softmax(&x);
    let a = softmax_backward(&y, &r).unwrap();
    worst = worst.max(max_relative_error(a.data(), &fd(&x, |x| weighted_sum(&softmax(x), &r))));

    let xp = x.map(|v| v.abs() + 0.1);
    let p = normalize_sum(&xp);
    let a = normalize_sum_backward(&xp, &p, &r).unwrap();
    worst = worst.max(max_relative_error(
        a.data(),
        &fd(&xp, |x| weighted_sum(&normalize_sum(x), &r)),
    ));
    worst
}

fn check_layer_norm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, &[4, 6], 2.0);
    let gamma = random(&mut rng, &[6], 1.5);
    let beta = random(&mut rng, &[6], 1.0);
    let r = random(&mut rng, &[4, 6], 1.0);
    let (_, cache) = layer_norm(&x, &gamma, &beta).unwrap();
    let (dx, dg, db) = layer_norm_backward(&cache, &gamma, &r).unwrap();
    let loss = |x: &Tensor, g: &Tensor, b: &Tensor| weighted_sum(&layer_norm(x, g, b).unwrap().0, &r);
    [
        max_relative_error(dx.data(), &fd(&x, |x| loss(x, &gamma, &beta))),
        max_relative_error(dg.data(), &fd(&gamma, |g| loss(&x, g, &beta))),
        max_relative_error(db.data(), &fd(&beta, |b| loss(&x, &gamma, b))),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Random 4-in / 10-hidden LSTM over 3 steps, batch of 2.
fn check_lstm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_in, n_h, steps) = (4, 10, 3);
    let w = random(&mut rng, &[4 * n_h, n_in + n_h], 0.6);
    let b = random(&mut rng, &[4 * n_h], 0.5);
    let xs = random(&mut rng, &[2, steps, n_in], 1.0);
    let r = random(&mut rng, &[2, steps, n_h], 1.0);
    let (_, cache) = lstm_sequence(&xs, LstmParams { w: &w, b: &b }).unwrap();
    let (dxs, g) = lstm_sequence_backward(LstmParams { w: &w, b: &b }, &cache, &r).unwrap();
    let loss =
        |xs: &Tensor, w: &Tensor, b: &Tensor| weighted_sum(&lstm_sequence(xs, LstmParams { w, b }).unwrap().0, &r);
    [
        max_relative_error(g.dw.data(), &fd(&w, |w| loss(&xs, w, &b))),
        max_relative_error(g.db.data(), &fd(&b, |b| loss(&xs, &w, b))),
        max_relative_error(dxs.data(), &fd(&xs, |x| loss(x, &w, &b))),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[test]
fn lstm_cell_step_gradients_seed_7() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = random(&mut rng, &[40, 14], 0.6);
    let b = random(&mut rng, &[40], 0.5);
    let x = random(&mut rng, &[1, 4], 1.0);
    let h = random(&mut rng, &[1, 10], 0.5);
    let c = random(&mut rng, &[1, 10], 0.5);
    let rh = random(&mut rng, &[1, 10], 1.0);
    let rc = random(&mut rng, &[1, 10], 1.0);
    let loss = |x: &Tensor, h: &Tensor, c: &Tensor, w: &Tensor| {
        let (hn, cn, _) = lstm_cell(x, h, c, LstmParams { w, b: &b }).unwrap();
        weighted_sum(&hn, &rh) + weighted_sum(&cn, &rc)
    };
    let (_, _, cache) = lstm_cell(&x, &h, &c, LstmParams { w: &w, b: &b }).unwrap();
    let mut g = LstmGrads::zeros_for(LstmParams { w: &w, b: &b });
    let (dx, dh, dc) = lstm_cell_backward(LstmParams { w: &w, b: &b }, &cache, &rh, &rc, &mut g).unwrap();
    assert!(max_relative_error(g.dw.data(), &fd(&w, |w| loss(&x, &h, &c, w))) < 1e-5);
    assert!(max_relative_error(dx.data(), &fd(&x, |x| loss(x, &h, &c, &w))) < 1e-5);
    assert!(max_relative_error(dh.data(), &fd(&h, |h| loss(&x, h, &c, &w))) < 1e-5);
    assert!(max_relative_error(dc.data(), &fd(&c, |c| loss(&x, &h, c, &w))) < 1e-5);
}

#[test]
fn lstm_three_steps_seed_7() {
    let e = check_lstm(7);
    assert!(e < 1e-5, "max rel err {e}");
}

struct AttnWeights(Vec<Tensor>);

impl AttnWeights {
    fn random(rng: &mut ChaCha8Rng, d: usize) -> Self {
        Self(
            (0..8)
                .map(|k| {
                    if k % 2 == 0 {
                        random(rng, &[d, d], 0.5)
                    } else {
                        random(rng, &[d], 0.3)
                    }
                })
                .collect(),
        )
    }

    fn params(&self) -> AttentionParams<'_> {
        let t = &self.0;
        AttentionParams {
            wq: &t[0],
            bq: &t[1],
            wk: &t[2],
            bk: &t[3],
            wv: &t[4],
            bv: &t[5],
            wo: &t[6],
            bo: &t[7],
        }
    }
}

/// Random T=5, d=8, h=2 attention; two sequences in the batch.
fn check_attention(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, d, heads) = (5, 8, 2);
    let weights = AttnWeights::random(&mut rng, d);
    let x = random(&mut rng, &[2 * t, d], 1.0);
    let r = random(&mut rng, &[2 * t, d], 1.0);
    let (_, cache) = self_attention(&x, t, heads, weights.params()).unwrap();
    let g = self_attention_backward(weights.params(), &cache, &r).unwrap();
    let analytic = [&g.dwq, &g.dbq, &g.dwk, &g.dbk, &g.dwv, &g.dbv, &g.dwo, &g.dbo];
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let num = fd(&weights.0[k], |p| {
            let mut ws = AttnWeights(weights.0.clone());
            ws.0[k] = p.clone();
            weighted_sum(&self_attention(&x, t, heads, ws.params()).unwrap().0, &r)
        });
        worst = worst.max(max_relative_error(a.data(), &num));
    }
    let num = fd(&x, |x| {
        weighted_sum(&self_attention(x, t, heads, weights.params()).unwrap().0, &r)
    });
    worst.max(max_relative_error(g.dx.data(), &num))
}

#[test]
fn attention_seed_3() {
    let e = check_attention(3);
    assert!(e < 1e-5, "max rel err {e}");
}

fn check_softmax_cross_entropy(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random(&mut rng, &[5], 2.0);
    let label = rng.random_range(0..5);
    let loss = |z: &Tensor| cross_entropy(softmax(z).data(), label).unwrap().0;
    let p = softmax(&logits);
    let (_, dp) = cross_entropy(p.data(), label).unwrap();
    let dz = softmax_backward(&p, &Tensor::vector(dp)).unwrap();
    max_relative_error(dz.data(), &fd(&logits, loss))
}

#[test]
fn every_primitive_within_1e5_on_seeds_1_to_5() {
    for seed in 1..=5 {
        let checks = [
            ("linear", check_linear(seed)),
            ("activations", check_activations(seed)),
            ("layer_norm", check_layer_norm(seed)),
            ("lstm", check_lstm(seed)),
            ("attention", check_attention(seed)),
            ("cross_entropy", check_softmax_cross_entropy(seed)),
        ];
        for (name, e) in checks {
            assert!(e < 1e-5, "{name} seed {seed}: max rel err {e}");
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = AttnWeights::random(&mut rng, 8);
        let x = random(&mut rng, &[10, 8], 1.0);
        self_attention(&x, 5, 2, w.params()).unwrap().0
    };
    assert_eq!(run().data(), run().data());
}
