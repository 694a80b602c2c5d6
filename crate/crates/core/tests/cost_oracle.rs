//! Analytic counts against what the kernels actually execute, and the
//! algebraic properties of the cost model.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharenet_core::cost::{
    count_layer, count_network, energy_estimate, mem_access_saving, resnet101_cifar, time_proxy, Conventions,
    CostLayer, CostNetwork, EnergyTable, Phase,
};
use sharenet_core::graph::{LayerSpec, Network, Topology};
use sharenet_core::ops::{counters, softmax_xent, PoolKind};
use sharenet_core::Tensor;

fn random_spec(rng: &mut ChaCha8Rng, kind: usize) -> (Vec<usize>, LayerSpec) {
    match kind {
        0 => {
            let k = rng.random_range(1..=4);
            let pad = rng.random_range(0..=2);
            let stride = rng.random_range(1..=3);
            let h = rng.random_range(k..=10);
            let w = rng.random_range(k..=10);
            let shape = vec![rng.random_range(1..=4), h, w];
            let spec = LayerSpec::Conv {
                kernel: k,
                out_channels: rng.random_range(1..=5),
                stride,
                padding: pad,
            };
            (shape, spec)
        }
        1 => (vec![rng.random_range(1..=40)], LayerSpec::Fc { out_features: rng.random_range(1..=12) }),
        2 => (vec![rng.random_range(1..=40)], LayerSpec::Head { classes: rng.random_range(1..=12) }),
        3 => {
            let win = rng.random_range(1..=3);
            let shape = vec![rng.random_range(1..=3), win * rng.random_range(1..=4), win * rng.random_range(1..=4)];
            let kind = if rng.random_bool(0.5) { PoolKind::Max } else { PoolKind::Mean };
            (shape, LayerSpec::Pool { kind, window: win })
        }
        4 => (vec![rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=6)], LayerSpec::Relu),
        _ => (vec![rng.random_range(1..=20)], LayerSpec::Sigmoid),
    }
}

/// Runs one layer for one sample in `phase` and returns the executed MACs
/// as (forward, backward input, backward weight, update).
fn execute(spec: LayerSpec, shape: &[usize], phase: Phase, momentum: f64, seed: u64) -> (u64, u64, u64, u64) {
    let mut net = Network::build(shape, &[spec], seed).unwrap();
    let x = Tensor::from_fn(shape, |i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.5);
    counters::reset();
    let (y, caches) = net.forward_cached(&x).unwrap();
    if matches!(phase, Phase::TrainActive | Phase::TrainFirst) {
        let og = Tensor::from_fn(y.shape(), |i| (i % 5) as f64 * 0.1 - 0.2);
        let (_, grads) = net.backward(&caches, &og, phase == Phase::TrainActive).unwrap();
        let mut vel = net.zero_like_params();
        net.apply_sgd(&grads, &mut vel, 0.01, momentum).unwrap();
    }
    let c = counters::snapshot();
    (c.macs_forward, c.macs_backward_input, c.macs_backward_weight, c.macs_update)
}

#[test]
fn layer_counts_match_execution() {
    let mut shapes = 0;
    for kind in 0..6 {
        for i in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(kind as u64 * 1000 + i);
            let (shape, spec) = random_spec(&mut rng, kind);
            let layer = CostLayer::from_spec(&spec, &shape).unwrap();
            for phase in [Phase::Inference, Phase::TrainShared, Phase::TrainActive, Phase::TrainFirst] {
                for (momentum, per_param) in [(0.0, 1), (0.9, 2)] {
                    let conv = Conventions {
                        update_macs_per_param: per_param,
                        ..Conventions::default()
                    };
                    let c = count_layer(&layer, phase, &conv);
                    let ran = execute(spec, &shape, phase, momentum, i);
                    assert_eq!(
                        (c.macs_forward, c.macs_backward_input, c.macs_backward_weight, c.macs_update),
                        ran,
                        "{spec} on {shape:?} in {phase}"
                    );
                }
            }
            let params = Network::build(&shape, &[spec], 0).unwrap().param_count() as u64;
            assert_eq!(layer.params(), params);
            shapes += 1;
        }
    }
    assert_eq!(shapes, 300);
}

#[test]
fn worked_conv_example() {
    let layer = CostLayer::from_spec(&"conv 5x5 4".parse().unwrap(), &[4, 12, 12]).unwrap();
    // Direct nested-loop count over output positions, kernels and taps.
    let mut macs = 0u64;
    for _o in 0..4 {
        for _y in 0..8 {
            for _x in 0..8 {
                for _c in 0..4 {
                    macs += 25;
                }
            }
        }
    }
    assert_eq!(layer.forward_macs(), macs);
    assert_eq!(macs, 25_600);
}

/// One SGD step of a branch above `split`, counted against the network report.
#[test]
fn branch_step_matches_network_report() {
    let topo = Topology::parse(
        vec![1, 28, 28],
        &["conv 5x5 4 stride 2", "sigmoid", "conv 5x5 4 stride 2", "sigmoid", "fc 16", "relu", "head 10"],
    )
    .unwrap();
    let cost = CostNetwork::from_topology("desk", &topo).unwrap();
    let base = Network::build(topo.input_shape(), topo.layers(), 3).unwrap();
    for &split in [0].iter().chain(topo.split_candidates()) {
        let conv = Conventions {
            update_macs_per_param: 2,
            ..Conventions::default()
        };
        let report = count_network(&cost, split, &conv).unwrap();
        let trunk = Network::from_layers(topo.input_shape().to_vec(), base.layers()[..split].to_vec()).unwrap();
        let mut tail = Network::from_layers(topo.shape_at(split).to_vec(), base.layers()[split..].to_vec()).unwrap();
        let x = Tensor::from_fn(&[1, 28, 28], |i| (i % 13) as f64 / 13.0);
        counters::reset();
        let features = trunk.forward(&x).unwrap();
        let (logits, caches) = tail.forward_cached(&features).unwrap();
        let xent = softmax_xent(&logits, 3).unwrap();
        let (_, grads) = tail.backward(&caches, &xent.logit_grad, false).unwrap();
        let mut vel = tail.zero_like_params();
        tail.apply_sgd(&grads, &mut vel, 0.01, 0.9).unwrap();
        let ran = counters::snapshot();
        let t = report.total_with;
        assert_eq!(
            (t.macs_forward, t.macs_backward_input, t.macs_backward_weight, t.macs_update),
            (ran.macs_forward, ran.macs_backward_input, ran.macs_backward_weight, ran.macs_update),
            "split {split}"
        );
    }
}

fn chain(widths: &[usize], hw: usize) -> CostNetwork {
    let mut layers = Vec::new();
    let mut c = 1;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(CostLayer::conv(format!("conv{i}"), [c, hw, hw], w, 3, 1, 1).unwrap());
        layers.push(CostLayer::batch_norm(format!("bn{i}"), [w, hw, hw]));
        layers.push(CostLayer::elementwise(format!("relu{i}"), w * hw * hw, w * hw * hw));
        c = w;
    }
    layers.push(CostLayer::fc("fc", c * hw * hw, 10));
    let boundaries = (1..widths.len() + 1).map(|i| 3 * i).collect();
    CostNetwork::new("chain", layers, boundaries).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn totals_decompose_and_shrink_with_sharing(
        widths in prop::collection::vec(1usize..8, 1..5),
        hw in 2usize..8,
        batch in 1u64..4,
        bn in 0u64..3,
    ) {
        let net = chain(&widths, hw);
        let conv = Conventions { batch_size: batch, bn_macs_per_element: bn, ..Conventions::default() };
        let table = EnergyTable::default();
        let mut splits = vec![0];
        splits.extend(net.boundaries.iter().copied());
        let mut prev: Option<(f64, u64, u64, u64)> = None;
        for split in splits {
            let r = count_network(&net, split, &conv).unwrap();
            let sum: sharenet_core::cost::OpCounts = r.with_sharing.iter().map(|l| l.counts).sum();
            prop_assert_eq!(sum, r.total_with);
            prop_assert_eq!(r.total_with.macs_forward, r.total_without.macs_forward);
            prop_assert!(r.total_with.macs_backward() <= r.total_without.macs_backward());
            prop_assert!(r.total_with.macs_update <= r.total_without.macs_update);
            prop_assert!(r.total_with.mem_reads <= r.total_without.mem_reads);
            prop_assert!(r.total_with.mem_writes <= r.total_without.mem_writes);
            for l in &r.with_sharing {
                prop_assert!(l.counts.macs_update <= l.counts.params * conv.update_macs_per_param);
            }
            let e = energy_estimate(&r, &table).unwrap();
            let trained: u64 = r.with_sharing.iter()
                .filter(|l| l.phase != Phase::TrainShared)
                .map(|l| l.counts.params)
                .sum();
            let now = (e.with_sharing, r.total_with.mem_writes, trained, r.total_with.macs_forward);
            if let Some(p) = prev {
                prop_assert!(now.0 <= p.0 && now.1 <= p.1 && now.2 <= p.2);
                prop_assert_eq!(now.3, p.3);
            }
            prev = Some(now);
            if split == 0 {
                prop_assert_eq!(r.total_with, r.total_without);
                prop_assert_eq!(e.ratio, 1.0);
                prop_assert_eq!(mem_access_saving(&r), 0.0);
            }
        }
    }

    #[test]
    fn ratios_ignore_uniform_scaling(k in 0.001f64..1000.0, frac in 0.0f64..0.99) {
        let net = resnet101_cifar(100).unwrap();
        let split = net.split_near(frac).unwrap();
        let r = count_network(&net, split, &Conventions::default()).unwrap();
        let t = EnergyTable::default();
        let a = energy_estimate(&r, &t).unwrap().ratio;
        let b = energy_estimate(&r, &t.scaled(k)).unwrap().ratio;
        prop_assert!((a - b).abs() <= 1e-12 * a);
        let ta = time_proxy(&r, 1e9, 1e9).unwrap().ratio;
        let tb = time_proxy(&r, 1e9 * k, 1e9 * k).unwrap().ratio;
        prop_assert!((ta - tb).abs() <= 1e-12 * ta);
    }
}

#[test]
fn energy_homogeneity_and_limits() {
    let net = chain(&[3, 4], 5);
    let r = count_network(&net, 3, &Conventions::default()).unwrap();
    let tiny = 1e-300;
    let t1 = EnergyTable { e_mac: 1.0, e_read: tiny, e_write: tiny, word_bytes: 4 };
    let t2 = EnergyTable { e_mac: 2.0, ..t1 };
    let (a, b) = (energy_estimate(&r, &t1).unwrap(), energy_estimate(&r, &t2).unwrap());
    assert!((b.with_sharing - 2.0 * a.with_sharing).abs() <= 1e-9 * a.with_sharing);
    assert!((a.ratio - b.ratio).abs() < 1e-12);
    // With memory nearly free the time proxy is the MAC ratio.
    let t = time_proxy(&r, 1.0, f64::MAX).unwrap();
    assert!((t.ratio - r.mac_ratio()).abs() < 1e-12);

    let macless = CostNetwork::new(
        "relus",
        vec![CostLayer::elementwise("a", 8, 8), CostLayer::elementwise("b", 8, 4)],
        vec![1],
    )
    .unwrap();
    let r = count_network(&macless, 1, &Conventions::default()).unwrap();
    let e = energy_estimate(&r, &EnergyTable::default()).unwrap();
    assert_eq!(r.total_with.macs_total(), 0);
    assert_eq!(e.with_sharing, 5.0 * r.total_with.accesses() as f64);
}
