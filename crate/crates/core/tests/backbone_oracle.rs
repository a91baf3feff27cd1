//! LSTM forward pass against a scalar re-implementation, parameter-gradient
//! finite differences, and a NaN sweep over random inputs.

use prototraj::backbone::{backward, forward, BackboneParams, Mode};
use prototraj::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One unit at a time, straight from the gate equations.
fn scalar_forward(x: &[Vec<f64>], p: &BackboneParams) -> Vec<f64> {
    let mut seq: Vec<Vec<f64>> = x.to_vec();
    let mut finals = Vec::new();
    for layer in &p.layers {
        let hs = layer.w_hh.cols();
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        let mut out = Vec::new();
        for xt in &seq {
            let pre = |gate: usize, j: usize| {
                let r = gate * hs + j;
                let mut z = layer.bias.get(0, r);
                for (k, v) in xt.iter().enumerate() {
                    z += layer.w_ih.get(r, k) * v;
                }
                for (k, v) in h.iter().enumerate() {
                    z += layer.w_hh.get(r, k) * v;
                }
                z
            };
            let mut h_new = vec![0.0; hs];
            let mut c_new = vec![0.0; hs];
            for j in 0..hs {
                let i = sig(pre(0, j));
                let f = sig(pre(1, j));
                let g = pre(2, j).tanh();
                let o = sig(pre(3, j));
                c_new[j] = f * c[j] + i * g;
                h_new[j] = o * c_new[j].tanh();
            }
            h = h_new;
            c = c_new;
            out.push(h.clone());
        }
        finals.extend(h.iter().copied());
        seq = out;
    }
    (0..p.head_w.rows())
        .map(|k| {
            let z: f64 = p.head_b.get(0, k) + (0..finals.len()).map(|j| p.head_w.get(k, j) * finals[j]).sum::<f64>();
            sig(z)
        })
        .collect()
}

fn random_input(rng: &mut ChaCha8Rng, t: usize, k: usize) -> Matrix {
    Matrix::from_vec(t, k, (0..t * k).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn forward_matches_scalar_oracle() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, h, l, c) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..4), rng.gen_range(1..4));
        let t = rng.gen_range(1..7);
        let mut p = BackboneParams::init(k, h, l, c, seed).unwrap();
        // Larger weights than the init range exercise saturation.
        for m in p.tensors_mut() {
            m.scale(5.0);
        }
        let x = random_input(&mut rng, t, k);
        let rows: Vec<Vec<f64>> = x.iter_rows().map(<[f64]>::to_vec).collect();
        let got = forward(&x, &p, Mode::Eval).unwrap().y_hat;
        let want = scalar_forward(&rows, &p);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

fn objective(x: &Matrix, p: &BackboneParams, mode: Mode, w: &[f64]) -> f64 {
    let y = forward(x, p, mode).unwrap().y_hat;
    y.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

#[test]
fn parameter_and_input_gradients_match_finite_differences() {
    let h = 1e-6;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (k, hs, l, c, t) = (3, 4, 1 + (seed as usize % 3), 2, 5);
        let p = BackboneParams::init(k, hs, l, c, seed).unwrap();
        let x = random_input(&mut rng, t, k);
        let w: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mode = if seed % 2 == 0 {
            Mode::Eval
        } else {
            Mode::Train { dropout: 0.3, seed }
        };
        let cache = forward(&x, &p, mode).unwrap();
        let grads = backward(&cache, &p, &w);

        let names = p.tensor_names();
        let analytic: Vec<Vec<f64>> = grads.params.tensors().iter().map(|m| m.as_slice().to_vec()).collect();
        for (ti, name) in names.iter().enumerate() {
            for (i, &a) in analytic[ti].iter().enumerate() {
                let mut plus = p.clone();
                plus.tensors_mut()[ti].as_mut_slice()[i] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[ti].as_mut_slice()[i] -= h;
                let num = (objective(&x, &plus, mode, &w) - objective(&x, &minus, mode, &w)) / (2.0 * h);
                let e = rel_err(a, num);
                assert!(e < 1e-5, "seed {seed} {name}[{i}]: {a} vs {num}");
            }
        }
        for i in 0..x.as_slice().len() {
            let mut plus = x.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = x.clone();
            minus.as_mut_slice()[i] -= h;
            let num = (objective(&plus, &p, mode, &w) - objective(&minus, &p, mode, &w)) / (2.0 * h);
            let e = rel_err(grads.input.as_slice()[i], num);
            assert!(e < 1e-5, "seed {seed} input[{i}]");
        }
    }
}

#[test]
fn random_forward_passes_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000u64 {
        let (k, hs, l) = (rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(1..3));
        let mut p = BackboneParams::init(k, hs, l, 2, i).unwrap();
        let scale = rng.gen_range(0.1..50.0);
        for m in p.tensors_mut() {
            m.scale(scale);
        }
        let t = rng.gen_range(1..30);
        let mut x = random_input(&mut rng, t, k);
        x.scale(rng.gen_range(0.0..100.0));
        let y = forward(&x, &p, Mode::Train { dropout: 0.5, seed: i }).unwrap().y_hat;
        assert!(y.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)), "pass {i}: {y:?}");
    }
}

#[test]
fn eval_mode_ignores_dropout_and_train_mode_is_seeded() {
    let p = BackboneParams::init(3, 4, 2, 2, 1).unwrap();
    let x = random_input(&mut ChaCha8Rng::seed_from_u64(0), 4, 3);
    let a = forward(&x, &p, Mode::Train { dropout: 0.5, seed: 9 }).unwrap().y_hat;
    let b = forward(&x, &p, Mode::Train { dropout: 0.5, seed: 9 }).unwrap().y_hat;
    assert_eq!(a, b);
    let none = forward(&x, &p, Mode::Train { dropout: 0.0, seed: 9 }).unwrap().y_hat;
    assert_eq!(none, forward(&x, &p, Mode::Eval).unwrap().y_hat);
}
