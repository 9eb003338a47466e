use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{SyntheticDataset, IMAGE_SIDE, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::net::{BackwardRule, Conv2d, Layer, Linear, MaxPool2d, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    TinyConvNet,
    TinyMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 7,
        }
    }
}

/// Per-epoch mean cross-entropy, recorded while training.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

fn he_tensor(rng: &mut ChaCha8Rng, dims: &[usize], fan_in: usize) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| normal.sample(rng) as f32 as f64).collect();
    Tensor::new(dims.to_vec(), data).expect("init dims")
}

/// Seeded He-initialised network of the requested architecture.
pub fn init_network(arch: Arch, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = IMAGE_SIDE;
    let layers = match arch {
        Arch::TinyConvNet => vec![
            Layer::Conv2d(Conv2d::new(
                he_tensor(&mut rng, &[8, 1, 3, 3], 9),
                Tensor::zeros(&[8]),
                1,
                1,
            )?),
            Layer::Relu,
            Layer::MaxPool2d(MaxPool2d::new(2, 2)?),
            Layer::Conv2d(Conv2d::new(
                he_tensor(&mut rng, &[16, 8, 3, 3], 72),
                Tensor::zeros(&[16]),
                1,
                1,
            )?),
            Layer::Relu,
            Layer::MaxPool2d(MaxPool2d::new(2, 2)?),
            Layer::Flatten,
            Layer::Linear(Linear::new(
                he_tensor(&mut rng, &[32, 256], 256),
                Tensor::zeros(&[32]),
            )?),
            Layer::Relu,
            Layer::Linear(Linear::new(
                he_tensor(&mut rng, &[NUM_CLASSES, 32], 32),
                Tensor::zeros(&[NUM_CLASSES]),
            )?),
            Layer::Softmax,
        ],
        Arch::TinyMlp => vec![
            Layer::Flatten,
            Layer::Linear(Linear::new(
                he_tensor(&mut rng, &[64, side * side], side * side),
                Tensor::zeros(&[64]),
            )?),
            Layer::Relu,
            Layer::Linear(Linear::new(
                he_tensor(&mut rng, &[NUM_CLASSES, 64], 64),
                Tensor::zeros(&[NUM_CLASSES]),
            )?),
            Layer::Softmax,
        ],
    };
    Network::new(vec![1, side, side], layers)
}

type ParamGrads = Vec<Option<(Tensor, Tensor)>>;

/// Cross-entropy loss of one example and the parameter gradients, accumulated into `acc`.
fn accumulate_example(
    net: &Network,
    x: &Tensor,
    label: usize,
    acc: &mut ParamGrads,
) -> Result<f64> {
    let fwd = net.forward(x)?;
    let p = fwd.probs.data();
    // Clamp exact zeros only; a NaN must survive so divergence is detected.
    let loss = -(if p[label] == 0.0 { 1e-300 } else { p[label] }).ln();
    let mut signal = fwd.probs.clone();
    signal.data_mut()[label] -= 1.0;
    for i in (0..net.layers().len() - 1).rev() {
        let input = &fwd.trace.inputs[i];
        let grads = match &net.layers()[i] {
            Layer::Conv2d(c) => Some(c.param_grads(input, &signal)),
            Layer::Linear(l) => Some(l.param_grads(input, &signal)),
            _ => None,
        };
        if let Some((gw, gb)) = grads {
            match &mut acc[i] {
                Some((aw, ab)) => {
                    *aw = aw.add(&gw)?;
                    *ab = ab.add(&gb)?;
                }
                slot => *slot = Some((gw, gb)),
            }
        }
        if i > 0 {
            signal = net.backward_layer(i, &fwd.trace, &signal, BackwardRule::Plain);
        }
    }
    Ok(loss)
}

fn apply_update(net: &mut Network, acc: &ParamGrads, scale: f64) {
    for (layer, g) in net.layers_mut().iter_mut().zip(acc) {
        let Some((gw, gb)) = g else { continue };
        let (w, b) = match layer {
            Layer::Conv2d(c) => c.params_mut(),
            Layer::Linear(l) => l.params_mut(),
            _ => continue,
        };
        for (p, d) in w.data_mut().iter_mut().zip(gw.data()) {
            *p -= scale * d;
        }
        for (p, d) in b.data_mut().iter_mut().zip(gb.data()) {
            *p -= scale * d;
        }
    }
}

fn round_params(net: &mut Network) {
    for layer in net.layers_mut() {
        let (w, b) = match layer {
            Layer::Conv2d(c) => c.params_mut(),
            Layer::Linear(l) => l.params_mut(),
            _ => continue,
        };
        for v in w.data_mut().iter_mut().chain(b.data_mut().iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

/// Train with plain minibatch SGD on cross-entropy. Parameters are rounded to `f32`
/// at the end so the model survives an `ANET` round trip unchanged.
pub fn train_fixture(dataset: &SyntheticDataset, arch: Arch, cfg: &TrainConfig) -> Result<Network> {
    Ok(train_fixture_logged(dataset, arch, cfg)?.0)
}

pub fn train_fixture_logged(
    dataset: &SyntheticDataset,
    arch: Arch,
    cfg: &TrainConfig,
) -> Result<(Network, TrainLog)> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::config(
            "batch size and learning rate must be positive",
        ));
    }
    if dataset.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    let mut net = init_network(arch, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: ParamGrads = vec![None; net.layers().len()];
            for &i in batch {
                total += accumulate_example(&net, &dataset.image(i)?, dataset.label(i)?, &mut acc)?;
            }
            apply_update(&mut net, &acc, cfg.learning_rate / batch.len() as f64);
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training { epoch });
        }
        log.epoch_losses.push(mean);
    }
    round_params(&mut net);
    Ok((net, log))
}

/// Fraction of `dataset` classified correctly.
pub fn accuracy(net: &Network, dataset: &SyntheticDataset) -> Result<f64> {
    let mut correct = 0;
    for i in 0..dataset.len() {
        if net.forward(&dataset.image(i)?)?.probs.argmax() == dataset.label(i)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}
