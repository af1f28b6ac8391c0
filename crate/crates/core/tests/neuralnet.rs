mod oracles;

use gpn_core::neuralnet::*;
use gpn_core::rng;
use gpn_core::Error;
use proptest::prelude::*;
use rand::Rng;

use Activation::*;

/// Straight-line evaluation from the documented parameter layout: per layer
/// a row-major `out × in` weight block followed by the bias.
fn reference_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    let mut off = 0;
    for l in net.layers() {
        let p = net.params();
        let mut out = Vec::with_capacity(l.output);
        for o in 0..l.output {
            let mut s = p[off + l.input * l.output + o];
            for i in 0..l.input {
                s += p[off + o * l.input + i] * v[i];
            }
            out.push(match l.activation {
                Relu => s.max(0.0),
                Tanh => s.tanh(),
                Sigmoid => 1.0 / (1.0 + (-s).exp()),
                Identity => s,
            });
        }
        off += l.input * l.output + l.output;
        v = out;
    }
    v
}

fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn identity_and_relu_layers_by_hand() {
    let id = DenseNet::from_parts(vec![LayerShape { input: 2, output: 2, activation: Identity }], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(id.forward(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    let relu = DenseNet::from_parts(vec![LayerShape { input: 2, output: 2, activation: Relu }], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(relu.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut rng = rng::seeded(41);
    for _ in 0..50 {
        let dims = [rng.random_range(1..20), rng.random_range(1..40), rng.random_range(1..40), rng.random_range(1..10)];
        let net = DenseNet::new(&dims, &[Relu, Tanh, Sigmoid], &mut rng).unwrap();
        // Non-zero biases so the bias path is exercised.
        let mut net = net;
        let n = net.n_params();
        let noise = random_vec(&mut rng, n);
        net.params_mut().iter_mut().zip(&noise).for_each(|(p, e)| *p += 0.1 * e);
        let batch = 5;
        let x = random_vec(&mut rng, dims[0] * batch);
        let cache = net.forward_batch(&x, batch).unwrap();
        for b in 0..batch {
            let want = reference_forward(&net, &x[b * dims[0]..(b + 1) * dims[0]]);
            let got = &cache.output()[b * dims[3]..(b + 1) * dims[3]];
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_linear_neuron_gradients() {
    let net = DenseNet::from_parts(vec![LayerShape { input: 1, output: 1, activation: Identity }], vec![0.7, -0.2]).unwrap();
    let cache = net.forward_batch(&[1.5], 1).unwrap();
    let g = net.backward(&cache, &[1.0]).unwrap();
    assert_eq!(g.params, vec![1.5, 1.0]);
    assert_eq!(g.input, vec![0.7]);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = rng::seeded(42);
    let net = DenseNet::new(&[4, 8, 3], &[Tanh, Sigmoid], &mut rng).unwrap();
    let cache = net.forward_batch(&random_vec(&mut rng, 8), 2).unwrap();
    let g = net.backward(&cache, &[0.0; 6]).unwrap();
    assert!(g.params.iter().chain(&g.input).all(|&v| v == 0.0));
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = rng::seeded(43);
    let h = 1e-5;
    let mut checked = 0;
    for acts in [[Relu, Relu, Tanh, Sigmoid], [Tanh, Sigmoid, Relu, Identity], [Sigmoid, Tanh, Tanh, Tanh]] {
        let dims = [6, 16, 16, 12, 3];
        let mut net = DenseNet::new(&dims, &acts, &mut rng).unwrap();
        let n = net.n_params();
        let noise = random_vec(&mut rng, n);
        net.params_mut().iter_mut().zip(&noise).for_each(|(p, e)| *p += 0.05 * e);
        let batch = 4;
        let x = random_vec(&mut rng, dims[0] * batch);
        let r = random_vec(&mut rng, dims[4] * batch);
        let loss = |net: &DenseNet, x: &[f64]| -> f64 {
            net.forward_batch(x, batch).unwrap().output().iter().zip(&r).map(|(y, w)| y * w).sum()
        };
        let g = net.backward(&net.forward_batch(&x, batch).unwrap(), &r).unwrap();
        for i in 0..n {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            assert!(oracles::rel_err(g.params[i], fd, 1e-6) < 1e-4, "param {i}: {} vs {fd}", g.params[i]);
            checked += 1;
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!(oracles::rel_err(g.input[i], fd, 1e-6) < 1e-4);
        }
        assert_eq!(net.backward_params(&net.forward_batch(&x, batch).unwrap(), &r).unwrap(), g.params);
        assert_eq!(net.backward_input(&net.forward_batch(&x, batch).unwrap(), &r).unwrap(), g.input);
    }
    assert!(checked >= 1000, "{checked}");
}

#[test]
fn stale_cache_is_rejected() {
    let mut rng = rng::seeded(44);
    let mut net = DenseNet::new(&[3, 5, 2], &[Relu, Identity], &mut rng).unwrap();
    let cache = net.forward_batch(&[0.1, 0.2, 0.3], 1).unwrap();
    net.params_mut()[0] += 1.0;
    assert!(matches!(net.backward(&cache, &[1.0, 1.0]), Err(Error::InvalidCache)));
}

#[test]
fn dimension_mismatches_are_errors() {
    let mut rng = rng::seeded(45);
    let net = DenseNet::new(&[3, 5, 2], &[Relu, Identity], &mut rng).unwrap();
    assert!(net.forward(&[0.0; 4]).is_err());
    assert!(DenseNet::new(&[3, 5, 2], &[Relu], &mut rng).is_err());
    let cache = net.forward_batch(&[0.0; 3], 1).unwrap();
    assert!(net.backward(&cache, &[1.0]).is_err());
    let mut state = AdamState::new(net.n_params() + 1, AdamConfig::default());
    let mut p = net.params().to_vec();
    assert!(state.step(&mut p, &vec![0.0; net.n_params()]).is_err());
}

#[test]
fn initialization_is_seeded_and_glorot_bounded() {
    let a = DenseNet::new(&[10, 30, 5], &[Relu, Tanh], &mut rng::seeded(1)).unwrap();
    let b = DenseNet::new(&[10, 30, 5], &[Relu, Tanh], &mut rng::seeded(1)).unwrap();
    assert_eq!(a.params(), b.params());
    let l0 = 10 * 30;
    let bound = (6.0f64 / 40.0).sqrt();
    assert!(a.params()[..l0].iter().all(|w| w.abs() <= bound));
    assert!(a.params()[l0..l0 + 30].iter().all(|&v| v == 0.0));
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut p = vec![0.3, -1.2, 4.0];
    let mut s = AdamState::new(3, AdamConfig::default());
    s.step(&mut p, &[0.0; 3]).unwrap();
    assert_eq!(p, vec![0.3, -1.2, 4.0]);
    assert_eq!(s.step, 1);
}

#[test]
fn adam_first_step_closed_form() {
    let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
    let g = [0.5, -2.0, 1e-3];
    let mut p = vec![0.0; 3];
    AdamState::new(3, cfg).step(&mut p, &g).unwrap();
    for (pi, gi) in p.iter().zip(&g) {
        let want = -cfg.lr * gi / (gi.abs() + cfg.eps);
        assert!((pi - want).abs() < 1e-12);
    }
}

#[test]
fn adam_descends_a_quadratic() {
    let mut rng = rng::seeded(46);
    let mut p = random_vec(&mut rng, 20);
    let mut s = AdamState::new(20, AdamConfig { lr: 0.01, ..AdamConfig::default() });
    let loss = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>();
    let mut history = vec![loss(&p)];
    for _ in 0..100 {
        let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        s.step(&mut p, &g).unwrap();
        history.push(loss(&p));
    }
    assert!(history[5..].windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn bce_values() {
    for label in [0.0, 1.0] {
        assert!((binary_cross_entropy(0.5, label).0 - 2f64.ln()).abs() < 1e-15);
        assert!(binary_cross_entropy(label, label).0 <= 1e-6);
    }
    assert!(binary_cross_entropy(0.0, 1.0).0.is_finite());
}

proptest! {
    #[test]
    fn bce_gradient_matches_finite_difference(p in 0.01f64..0.99, label in prop::bool::ANY) {
        let y = if label { 1.0 } else { 0.0 };
        let h = 1e-6;
        let fd = (binary_cross_entropy(p + h, y).0 - binary_cross_entropy(p - h, y).0) / (2.0 * h);
        prop_assert!((binary_cross_entropy(p, y).1 - fd).abs() < 1e-6 * fd.abs().max(1.0));
    }

    #[test]
    fn fixed_seed_forward_is_reproducible(seed in any::<u64>()) {
        let a = DenseNet::new(&[4, 7, 2], &[Tanh, Sigmoid], &mut rng::seeded(seed)).unwrap();
        let b = DenseNet::new(&[4, 7, 2], &[Tanh, Sigmoid], &mut rng::seeded(seed)).unwrap();
        let x = [0.1, -0.4, 0.9, 0.0];
        prop_assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        prop_assert!(a.params().iter().all(|v| v.is_finite()));
    }
}
