mod common;

use common::*;
use foilbox::attribution::{
    channel_reduce, deeplift_contributions, explain_deeplift, explain_grad_times_input,
    explain_gradient, explain_guided_backprop, explain_lrp, lrp_relevance, DeepLiftConfig,
    LrpConfig, ReduceMode,
};
use foilbox::net::{BackwardRule, Layer, Network, OutputTarget};
use foilbox::Tensor;
use rand::Rng;

#[test]
fn deeplift_equals_grad_times_input_on_linear_net() {
    let mut r = rng(1);
    for _ in 0..10 {
        let net = dense_net(&mut r, &[1, 4, 4], &[8, 5, 3], false);
        let x = uniform_tensor(&mut r, &[1, 4, 4], 0.0, 1.0);
        let cfg = DeepLiftConfig::zero_reference(&[1, 4, 4]).unwrap();
        let a = explain_deeplift(&net, &x, 1, &cfg).unwrap();
        let b = explain_grad_times_input(&net, &x, 1).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert!((p - q).abs() <= 1e-9, "{p} vs {q}");
        }
    }
}

#[test]
fn guided_equals_gradient_without_relu() {
    let mut r = rng(2);
    let net = dense_net(&mut r, &[2, 3, 3], &[6, 4], false);
    for _ in 0..10 {
        let x = uniform_tensor(&mut r, &[2, 3, 3], 0.0, 1.0);
        assert_eq!(
            explain_guided_backprop(&net, &x, 3).unwrap(),
            explain_gradient(&net, &x, 3).unwrap()
        );
    }
}

#[test]
fn gradient_of_linear_net_is_weight_row_and_matches_fd_on_fixture() {
    let mut r = rng(3);
    let net = dense_net(&mut r, &[1, 3, 4], &[2], false);
    let Layer::Linear(l) = &net.layers()[1] else {
        unreachable!()
    };
    let map = explain_gradient(&net, &uniform_tensor(&mut r, &[1, 3, 4], 0.0, 1.0), 1).unwrap();
    assert_eq!(map.values(), &l.weight().data()[12..24]);

    let fx = fixture();
    let x = random_image(&mut r);
    let map = explain_gradient(&fx.net, &x, 0).unwrap();
    for _ in 0..20 {
        let i = r.random_range(0..256);
        let fd = fd_logit(&fx.net, &x, 0, i, 1e-4);
        assert!(relative_error(map.values()[i], fd) <= 1e-4 || (map.values()[i] - fd).abs() < 1e-9);
    }
}

#[test]
fn grad_times_input_identities() {
    let fx = fixture();
    let zero = Tensor::zeros(&[1, 16, 16]);
    assert!(explain_grad_times_input(&fx.net, &zero, 2)
        .unwrap()
        .values()
        .iter()
        .all(|&v| v == 0.0));
    let mut r = rng(4);
    let x = random_image(&mut r);
    let g = explain_gradient(&fx.net, &x, 2).unwrap();
    let gi = explain_grad_times_input(&fx.net, &x, 2).unwrap();
    for ((a, b), c) in gi.values().iter().zip(g.values()).zip(x.data()) {
        assert_eq!(*a, b * c);
    }
}

#[test]
fn blocked_relus_give_zero_map() {
    let mut r = rng(5);
    let mut net = dense_net(&mut r, &[1, 2, 2], &[3, 2], true);
    // Force every hidden pre-activation negative for non-negative inputs.
    let layers: Vec<Layer> = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| match (i, layer) {
            (1, Layer::Linear(_)) => Layer::Linear(
                foilbox::net::Linear::new(Tensor::full(&[3, 4], -1.0), Tensor::full(&[3], -0.5))
                    .unwrap(),
            ),
            (_, other) => other.clone(),
        })
        .collect();
    net = Network::new(vec![1, 2, 2], layers).unwrap();
    let x = uniform_tensor(&mut r, &[1, 2, 2], 0.0, 1.0);
    assert!(explain_gradient(&net, &x, 0)
        .unwrap()
        .values()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn guided_signal_is_nonnegative_after_every_relu() {
    let fx = fixture();
    let mut r = rng(6);
    for _ in 0..50 {
        let x = random_image(&mut r);
        let class = r.random_range(0..4);
        let fwd = fx.net.forward(&x).unwrap();
        let seed = fx
            .net
            .output_seed(&fwd.trace, class, OutputTarget::Logit)
            .unwrap();
        let mut checked = 0;
        fx.net
            .backward_with_hook(&fwd.trace, seed, BackwardRule::Guided, |i, signal| {
                if matches!(fx.net.layers()[i], Layer::Relu) {
                    assert!(
                        signal.data().iter().all(|&v| v >= 0.0),
                        "negative signal after layer {i}"
                    );
                    checked += 1;
                }
            })
            .unwrap();
        assert_eq!(checked, 3);
    }
}

#[test]
fn lrp_conserves_the_logit_on_fixture_inputs() {
    let fx = fixture();
    let cfg = LrpConfig {
        epsilon: 1e-6,
        ..LrpConfig::default()
    };
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let x = fx.test.image(i).unwrap();
        let y = fx.test.label(i).unwrap();
        let logit = fx.net.logits(&x).unwrap().data()[y];
        let total = lrp_relevance(&fx.net, &x, y, &cfg).unwrap().sum();
        worst = worst.max((total - logit).abs() / logit.abs());
        let map = explain_lrp(&fx.net, &x, y, &cfg).unwrap();
        assert!((map.values().iter().sum::<f64>() - total).abs() <= 1e-9 * total.abs().max(1.0));
    }
    assert!(worst <= 1e-3, "worst relative leakage {worst}");
}

#[test]
fn deeplift_sums_to_delta_on_relu_nets() {
    let mut r = rng(7);
    let net = dense_net(&mut r, &[1, 4, 4], &[12, 8, 4], true);
    let reference = uniform_tensor(&mut r, &[1, 4, 4], 0.0, 1.0);
    let cfg = DeepLiftConfig {
        reference: reference.clone(),
        stability_tau: 1e-9,
    };
    for _ in 0..50 {
        let x = uniform_tensor(&mut r, &[1, 4, 4], 0.0, 1.0);
        let class = r.random_range(0..4);
        let delta =
            net.logits(&x).unwrap().data()[class] - net.logits(&reference).unwrap().data()[class];
        let total = deeplift_contributions(&net, &x, class, &cfg).unwrap().sum();
        assert!(
            (total - delta).abs() <= 1e-6 * delta.abs().max(1e-12),
            "{total} vs {delta}"
        );
    }
}

#[test]
fn three_channel_reduction_matches_pixel_loop() {
    let mut r = rng(8);
    let t = uniform_tensor(&mut r, &[3, 5, 4], -1.0, 1.0);
    for mode in [ReduceMode::Sum, ReduceMode::SumAbs] {
        let map = channel_reduce(&t, mode).unwrap();
        for row in 0..5 {
            for col in 0..4 {
                let mut acc = 0.0;
                for c in 0..3 {
                    let v = t.data()[(c * 5 + row) * 4 + col];
                    acc += if mode == ReduceMode::Sum { v } else { v.abs() };
                }
                assert!((map.get(row, col) - acc).abs() < 1e-15);
            }
        }
    }
}
