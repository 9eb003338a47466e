#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use foilbox::fixtures::{build_fixture, Fixture, FixtureSpec};
use foilbox::net::{Layer, Linear, Network};
use foilbox::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The pinned fixture, trained once per test binary.
pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| build_fixture(&FixtureSpec::default()).expect("fixture builds"))
}

/// Fixture model and held-out split written to disk: `(model.anet, test dir)`.
pub fn fixture_files() -> &'static (PathBuf, PathBuf) {
    static FILES: OnceLock<(PathBuf, PathBuf)> = OnceLock::new();
    FILES.get_or_init(|| {
        let fx = fixture();
        let dir = tempfile::Builder::new()
            .prefix("fixture-")
            .tempdir_in(env!("CARGO_TARGET_TMPDIR"))
            .expect("tempdir")
            .keep();
        let model = dir.join("model.anet");
        let test = dir.join("test");
        fx.net.save(&model).expect("save model");
        fx.test.save(&test).expect("save dataset");
        (model, test)
    })
}

pub fn scratch_dir() -> tempfile::TempDir {
    tempfile::Builder::new()
        .prefix("run-")
        .tempdir_in(env!("CARGO_TARGET_TMPDIR"))
        .expect("tempdir")
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(
        dims.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite difference of logit `class` along input coordinate `i`.
pub fn fd_logit(net: &Network, x: &Tensor, class: usize, i: usize, h: f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[i] += h;
    let mut minus = x.clone();
    minus.data_mut()[i] -= h;
    let lp = net.logits(&plus).unwrap().data()[class];
    let lm = net.logits(&minus).unwrap().data()[class];
    (lp - lm) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Flatten then a stack of Linear layers, with a ReLU between consecutive ones when `relu`.
pub fn dense_net(
    rng: &mut ChaCha8Rng,
    input_dims: &[usize],
    widths: &[usize],
    relu: bool,
) -> Network {
    let mut layers = vec![Layer::Flatten];
    let mut fan_in: usize = input_dims.iter().product();
    for (k, &w) in widths.iter().enumerate() {
        let weight = uniform_tensor(rng, &[w, fan_in], -1.0, 1.0);
        let bias = uniform_tensor(rng, &[w], -0.5, 0.5);
        layers.push(Layer::Linear(Linear::new(weight, bias).unwrap()));
        if relu && k + 1 < widths.len() {
            layers.push(Layer::Relu);
        }
        fan_in = w;
    }
    layers.push(Layer::Softmax);
    Network::new(input_dims.to_vec(), layers).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng) -> Tensor {
    uniform_tensor(rng, &[1, 16, 16], 0.0, 1.0)
}
