//! Self-contained stand-ins for pretrained models and image datasets.

mod dataset;
mod train;

pub use dataset::{
    generate_dataset, read_labels, write_labels, SyntheticDataset, IMAGES_FILE, IMAGE_SIDE,
    LABELS_FILE, LBLS_MAGIC, LBLS_VERSION, NOISE_AMPLITUDE, NUM_CLASSES,
};
pub use train::{
    accuracy, init_network, train_fixture, train_fixture_logged, Arch, TrainConfig, TrainLog,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::Network;

/// Everything needed to reproduce the pinned fixture classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub data_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub arch: Arch,
    pub train: TrainConfig,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            data_seed: 2024,
            n_train: 800,
            n_test: 200,
            arch: Arch::TinyConvNet,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub train: SyntheticDataset,
    pub test: SyntheticDataset,
    pub net: Network,
    pub log: TrainLog,
}

impl Fixture {
    pub fn held_out_accuracy(&self) -> Result<f64> {
        accuracy(&self.net, &self.test)
    }
}

/// Generate train/test sets (the test set uses the next seed) and train the classifier.
pub fn build_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    let train = generate_dataset(spec.data_seed, spec.n_train)?;
    let test = generate_dataset(spec.data_seed.wrapping_add(1), spec.n_test)?;
    let (net, log) = train_fixture_logged(&train, spec.arch, &spec.train)?;
    Ok(Fixture {
        train,
        test,
        net,
        log,
    })
}
