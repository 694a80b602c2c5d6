//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharenet_core::graph::{LayerSpec, Network};
use sharenet_core::ops::{self, PoolKind};
use sharenet_core::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Checks `analytic` against the derivative of `f` with respect to every
/// element of `x` (or a random subset of `probes` elements).
fn check(
    what: &str,
    x: &Tensor,
    analytic: &Tensor,
    probes: usize,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&Tensor) -> f64,
) -> usize {
    assert_eq!(x.shape(), analytic.shape(), "{what}: gradient shape");
    let n = x.len();
    let picks: Vec<usize> = if n <= probes {
        (0..n).collect()
    } else {
        (0..probes).map(|_| rng.random_range(0..n)).collect()
    };
    for &i in &picks {
        let mut up = x.clone();
        up.data_mut()[i] += H;
        let mut down = x.clone();
        down.data_mut()[i] -= H;
        let numeric = (f(&up) - f(&down)) / (2.0 * H);
        let a = analytic.data()[i];
        assert!(
            rel_err(a, numeric) <= TOL || (a - numeric).abs() < 1e-9,
            "{what}[{i}]: analytic {a} vs numeric {numeric}"
        );
    }
    picks.len()
}

#[test]
fn conv_gradients() {
    let mut total = 0;
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let pad = rng.random_range(0..=1);
        let stride = rng.random_range(1..=2);
        let h = rng.random_range(k..=7);
        let w = rng.random_range(k..=7);
        let o = rng.random_range(1..=3);
        let x = random(&[c, h, w], &mut rng);
        let kern = random(&[o, c, k, k], &mut rng);
        let bias = random(&[o], &mut rng);
        let y = ops::conv2d_forward(&x, &kern, &bias, stride, pad).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = ops::conv2d_backward(&x, &kern, &r, stride, pad).unwrap();
        let loss = |x: &Tensor, kern: &Tensor, bias: &Tensor| {
            dot(&ops::conv2d_forward(x, kern, bias, stride, pad).unwrap(), &r)
        };
        total += check("conv input", &x, &g.input_grad, 40, &mut rng, |v| loss(v, &kern, &bias));
        total += check("conv kernel", &kern, &g.param_grads[0], 40, &mut rng, |v| loss(&x, v, &bias));
        total += check("conv bias", &bias, &g.param_grads[1], 40, &mut rng, |v| loss(&x, &kern, v));
        let only = ops::conv2d_backward_params(&x, &kern, &r, stride, pad).unwrap();
        assert_eq!(only[0], g.param_grads[0]);
    }
    assert!(total >= 100);
}

#[test]
fn fc_gradients() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(1..=12);
        let m = rng.random_range(1..=8);
        let x = random(&[n], &mut rng);
        let wt = random(&[m, n], &mut rng);
        let b = random(&[m], &mut rng);
        let r = random(&[m], &mut rng);
        let g = ops::fc_backward(&x, &wt, &r).unwrap();
        let loss = |x: &Tensor, wt: &Tensor, b: &Tensor| dot(&ops::fc_forward(x, wt, b).unwrap(), &r);
        check("fc input", &x, &g.input_grad, 40, &mut rng, |v| loss(v, &wt, &b));
        check("fc weights", &wt, &g.param_grads[0], 40, &mut rng, |v| loss(&x, v, &b));
        check("fc bias", &b, &g.param_grads[1], 40, &mut rng, |v| loss(&x, &wt, v));
    }
}

#[test]
fn activation_gradients() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let shape = [rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=5)];
        // Keep relu inputs away from the kink.
        let x = Tensor::from_fn(&shape, |_| {
            let v: f64 = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        });
        let r = random(&shape, &mut rng);
        let g = ops::relu_backward(&x, &r).unwrap();
        check("relu", &x, &g, 40, &mut rng, |v| dot(&ops::relu_forward(v), &r));
        let y = ops::sigmoid_forward(&x);
        let g = ops::sigmoid_backward(&y, &r).unwrap();
        check("sigmoid", &x, &g, 40, &mut rng, |v| dot(&ops::sigmoid_forward(v), &r));
    }
}

#[test]
fn pool_gradients() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let win = rng.random_range(1..=3);
        let shape = [rng.random_range(1..=3), win * rng.random_range(1..=3), win * rng.random_range(1..=3)];
        // Distinct values spaced well beyond the probe step, so no window
        // changes its maximum under perturbation.
        let n: usize = shape.iter().product();
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        for i in (1..n).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor::new(shape.to_vec(), vals).unwrap();
        for kind in [PoolKind::Max, PoolKind::Mean] {
            let (y, rec) = ops::pool_forward(&x, kind, win).unwrap();
            let r = random(y.shape(), &mut rng);
            let g = ops::pool_backward(&rec, &r).unwrap();
            check("pool", &x, &g, 40, &mut rng, |v| dot(&ops::pool_forward(v, kind, win).unwrap().0, &r));
        }
    }
}

#[test]
fn softmax_xent_gradient() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let n = rng.random_range(2..=10);
        let z = Tensor::from_fn(&[n], |_| rng.random_range(-3.0..3.0));
        let t = rng.random_range(0..n);
        let out = ops::softmax_xent(&z, t).unwrap();
        check("xent", &z, &out.logit_grad, 40, &mut rng, |v| ops::softmax_xent(v, t).unwrap().loss);
    }
}

#[test]
fn whole_network_gradients() {
    let specs: Vec<LayerSpec> = ["conv 3x3 3 pad 1", "sigmoid", "meanpool 2", "conv 3x3 2 stride 2", "relu", "fc 5", "sigmoid", "head 4"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let net = Network::build(&[2, 8, 8], &specs, seed).unwrap();
        let x = random(&[2, 8, 8], &mut rng);
        let t = rng.random_range(0..4);
        let (logits, caches) = net.forward_cached(&x).unwrap();
        let xent = ops::softmax_xent(&logits, t).unwrap();
        let (gx, grads) = net.backward(&caches, &xent.logit_grad, true).unwrap();
        let loss = |n: &Network, x: &Tensor| ops::softmax_xent(&n.forward(x).unwrap(), t).unwrap().loss;
        check("net input", &x, &gx.unwrap(), 30, &mut rng, |v| loss(&net, v));
        for (li, layer) in net.layers().iter().enumerate() {
            for (pi, p) in layer.params.iter().enumerate() {
                check(&format!("layer {li} param {pi}"), p, &grads[li][pi], 15, &mut rng, |v| {
                    let mut probe = net.clone();
                    probe.layers_mut()[li].params[pi] = v.clone();
                    loss(&probe, &x)
                });
            }
        }
    }
}
