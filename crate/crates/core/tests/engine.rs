mod common;

use common::*;
use foilbox::fixtures::{
    generate_dataset, init_network, train_fixture, train_fixture_logged, Arch, TrainConfig,
};
use foilbox::net::{BackwardRule, Layer, Network};
use foilbox::{Error, Tensor};
use rand::Rng;

#[test]
fn backward_input_matches_finite_differences_on_fixture() {
    let fx = fixture();
    let mut r = rng(101);
    let x = random_image(&mut r);
    let fwd = fx.net.forward(&x).unwrap();
    let grad = fx.net.backward_input(&fwd.trace, 2).unwrap();
    for _ in 0..20 {
        let i = r.random_range(0..x.len());
        let fd = fd_logit(&fx.net, &x, 2, i, 1e-4);
        let err = relative_error(grad.data()[i], fd);
        assert!(
            err <= 1e-4 || (grad.data()[i] - fd).abs() < 1e-9,
            "coord {i}: {} vs {fd}",
            grad.data()[i]
        );
    }
}

/// Direct loops over the layer definitions, sharing no code with the engine.
fn straight_line_logits(net: &Network, x: &Tensor) -> Vec<f64> {
    let mut dims = x.dims().to_vec();
    let mut v = x.data().to_vec();
    for layer in net.layers() {
        match layer {
            Layer::Conv2d(c) => {
                let (cin, h, w) = (dims[0], dims[1], dims[2]);
                let wd = c.weight().dims();
                let (cout, kh, kw) = (wd[0], wd[2], wd[3]);
                let (s, p) = (c.stride() as isize, c.padding() as isize);
                let oh = ((h as isize + 2 * p - kh as isize) / s + 1) as usize;
                let ow = ((w as isize + 2 * p - kw as isize) / s + 1) as usize;
                let mut out = vec![0.0; cout * oh * ow];
                for o in 0..cout {
                    for r in 0..oh {
                        for q in 0..ow {
                            let mut acc = c.bias().data()[o];
                            for ci in 0..cin {
                                for a in 0..kh {
                                    for b in 0..kw {
                                        let y = r as isize * s + a as isize - p;
                                        let z = q as isize * s + b as isize - p;
                                        if y < 0 || z < 0 || y >= h as isize || z >= w as isize {
                                            continue;
                                        }
                                        let wi = ((o * cin + ci) * kh + a) * kw + b;
                                        acc += c.weight().data()[wi]
                                            * v[(ci * h + y as usize) * w + z as usize];
                                    }
                                }
                            }
                            out[(o * oh + r) * ow + q] = acc;
                        }
                    }
                }
                v = out;
                dims = vec![cout, oh, ow];
            }
            Layer::Relu => v.iter_mut().for_each(|a| *a = a.max(0.0)),
            Layer::MaxPool2d(m) => {
                let (ch, h, w) = (dims[0], dims[1], dims[2]);
                let (k, s) = (m.window, m.stride);
                let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
                let mut out = vec![f64::NEG_INFINITY; ch * oh * ow];
                for c in 0..ch {
                    for r in 0..oh {
                        for q in 0..ow {
                            for a in 0..k {
                                for b in 0..k {
                                    let val = v[(c * h + r * s + a) * w + q * s + b];
                                    let slot = &mut out[(c * oh + r) * ow + q];
                                    *slot = slot.max(val);
                                }
                            }
                        }
                    }
                }
                v = out;
                dims = vec![ch, oh, ow];
            }
            Layer::Flatten => dims = vec![v.len()],
            Layer::Linear(l) => {
                let (m, n) = (l.weight().dims()[0], l.weight().dims()[1]);
                v = (0..m)
                    .map(|i| {
                        l.bias().data()[i]
                            + (0..n)
                                .map(|j| l.weight().data()[i * n + j] * v[j])
                                .sum::<f64>()
                    })
                    .collect();
                dims = vec![m];
            }
            Layer::Softmax => return v,
        }
    }
    panic!("network without softmax")
}

#[test]
fn zero_input_logits_match_straight_line_reimplementation() {
    let fx = fixture();
    let x = Tensor::zeros(&[1, 16, 16]);
    let engine = fx.net.logits(&x).unwrap();
    let oracle = straight_line_logits(&fx.net, &x);
    for (a, b) in engine.data().iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
    }
    let mut r = rng(5);
    let x = random_image(&mut r);
    let engine = fx.net.logits(&x).unwrap();
    for (a, b) in engine.data().iter().zip(&straight_line_logits(&fx.net, &x)) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn plain_rule_equals_backward_input_bit_exactly() {
    let fx = fixture();
    let x = random_image(&mut rng(9));
    let fwd = fx.net.forward(&x).unwrap();
    for class in 0..4 {
        let a = fx.net.backward_input(&fwd.trace, class).unwrap();
        let b = fx
            .net
            .backward_modified(&fwd.trace, class, BackwardRule::Plain)
            .unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn save_load_round_trip_preserves_logits() {
    let fx = fixture();
    let dir = scratch_dir();
    let path = dir.path().join("m.anet");
    fx.net.save(&path).unwrap();
    let loaded = Network::load(&path).unwrap();
    let mut r = rng(17);
    for _ in 0..10 {
        let x = random_image(&mut r);
        assert_eq!(fx.net.logits(&x).unwrap(), loaded.logits(&x).unwrap());
    }
}

#[test]
fn truncated_and_mislabelled_model_files_are_rejected() {
    let fx = fixture();
    let mut bytes = Vec::new();
    fx.net.write_anet(&mut bytes).unwrap();
    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Network::read_anet(&bytes[..cut]), Err(Error::Format(_))),
            "cut {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    match Network::read_anet(&bad[..]) {
        Err(Error::Format(msg)) => assert!(msg.contains("ANET"), "{msg}"),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn fixture_accuracy_and_loss_curve() {
    let fx = fixture();
    let acc = fx.held_out_accuracy().unwrap();
    assert!(acc >= 0.90, "held-out accuracy {acc}");
    let l = &fx.log.epoch_losses;
    assert_eq!(l.len(), 20);
    assert!(l[0] > l[1] && l[1] > l[2], "first epochs {:?}", &l[..3]);
}

#[test]
fn dataset_files_are_deterministic() {
    let dir = scratch_dir();
    generate_dataset(3, 40)
        .unwrap()
        .save(dir.path().join("a"))
        .unwrap();
    generate_dataset(3, 40)
        .unwrap()
        .save(dir.path().join("b"))
        .unwrap();
    for f in ["images.tnsr", "labels.lbls"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let ds = generate_dataset(3, 40).unwrap();
    for class in 0..4 {
        assert_eq!(ds.labels.iter().filter(|&&l| l == class).count(), 10);
    }
}

#[test]
fn training_is_deterministic_and_zero_epochs_is_init() {
    let ds = generate_dataset(11, 64).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    train_fixture(&ds, Arch::TinyConvNet, &cfg)
        .unwrap()
        .write_anet(&mut a)
        .unwrap();
    train_fixture(&ds, Arch::TinyConvNet, &cfg)
        .unwrap()
        .write_anet(&mut b)
        .unwrap();
    assert_eq!(a, b);

    let zero = TrainConfig { epochs: 0, ..cfg };
    let (net, log) = train_fixture_logged(&ds, Arch::TinyMlp, &zero).unwrap();
    assert!(log.epoch_losses.is_empty());
    assert_eq!(net, init_network(Arch::TinyMlp, zero.seed).unwrap());
}

#[test]
fn diverging_training_names_the_epoch() {
    let ds = generate_dataset(11, 32).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 1e200,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train_fixture(&ds, Arch::TinyMlp, &cfg),
        Err(Error::Training { epoch: 0 })
    ));
}
