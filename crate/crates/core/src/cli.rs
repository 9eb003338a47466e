//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::attack::{AttackConfig, Sampling, DEFAULT_DECAY};
use crate::attribution::{ExplanationMap, XaiKind, XaiMethod};
use crate::error::{Error, Result};
use crate::fixtures::{
    accuracy, generate_dataset, train_fixture_logged, Arch, SyntheticDataset, TrainConfig,
};
use crate::harness::{
    attack_pair, run_experiment, summarize, write_json, ExperimentConfig, PairJob, SUMMARY_FILE,
};
use crate::net::Network;
use crate::oracle::DEFAULT_BUDGET;
use crate::render::{save_pgm, save_ppm};
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const MODEL_FILE: &str = "model.anet";
pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";

#[derive(Debug, Parser)]
#[command(
    name = "foilbox",
    version,
    about = "Black-box evolutionary attacks on explanation maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and train the fixture classifier
    TrainFixture(TrainFixtureArgs),
    /// Compute the explanation map of one image
    Explain(ExplainArgs),
    /// Attack a single image pair
    Attack(AttackArgs),
    /// Attack a batch of random image pairs and summarise the results
    Experiment(ExperimentArgs),
    /// Convert a TNSR file to PGM (2-D map) or PPM (3-D image)
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Conv,
    Mlp,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::Conv => Arch::TinyConvNet,
            ArchArg::Mlp => Arch::TinyMlp,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainFixtureArgs {
    /// Directory receiving model.anet, train/ and test/
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Dataset generator seed (the test split uses seed + 1)
    #[arg(long, default_value_t = 2024)]
    pub data_seed: u64,
    /// Training images (multiple of 4)
    #[arg(long, default_value_t = 800)]
    pub n_train: usize,
    /// Held-out images (multiple of 4)
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    /// Network architecture
    #[arg(long, value_enum, default_value_t = ArchArg::Conv)]
    pub arch: ArchArg,
    /// Training epochs
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Minibatch size
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// SGD learning rate
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    /// Initialisation and shuffling seed
    #[arg(long, default_value_t = 7)]
    pub train_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum XaiArg {
    Gradient,
    Gxi,
    Gbp,
    Lrp,
    Deeplift,
}

impl From<XaiArg> for XaiKind {
    fn from(a: XaiArg) -> XaiKind {
        match a {
            XaiArg::Gradient => XaiKind::Gradient,
            XaiArg::Gxi => XaiKind::Gxi,
            XaiArg::Gbp => XaiKind::Gbp,
            XaiArg::Lrp => XaiKind::Lrp,
            XaiArg::Deeplift => XaiKind::Deeplift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    Iid,
    Lhs,
}

impl From<SamplingArg> for Sampling {
    fn from(a: SamplingArg) -> Sampling {
        match a {
            SamplingArg::Iid => Sampling::Iid,
            SamplingArg::Lhs => Sampling::Lhs,
        }
    }
}

/// Loss-weight presets. `desk` suits the 16x16 fixture; the others carry published
/// values for full-size models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// alpha=1e3, beta=1
    Desk,
    /// alpha=1e11, beta=1e6
    Imagenet,
    /// alpha=1e7, beta=1e6
    Cifar,
}

impl Preset {
    pub fn weights(self) -> (f64, f64) {
        match self {
            Preset::Desk => (1e3, 1.0),
            Preset::Imagenet => (1e11, 1e6),
            Preset::Cifar => (1e7, 1e6),
        }
    }
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Classifier in ANET format
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding images.tnsr and labels.lbls
    #[arg(long)]
    pub dataset: PathBuf,
    /// Index of the image to explain
    #[arg(long)]
    pub image_idx: usize,
    /// Explanation method
    #[arg(long, value_enum, default_value_t = XaiArg::Gradient)]
    pub xai: XaiArg,
    /// Class to explain [default: the image's label]
    #[arg(long)]
    pub class: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// Search and output flags shared by `attack` and `experiment`.
#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Classifier in ANET format
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding images.tnsr and labels.lbls
    #[arg(long)]
    pub dataset: PathBuf,
    /// Explanation method
    #[arg(long, value_enum, default_value_t = XaiArg::Gradient)]
    pub xai: XaiArg,
    /// Maximum number of generations
    #[arg(long, default_value_t = 1000)]
    pub generations: usize,
    /// Population size per generation
    #[arg(long, default_value_t = 50)]
    pub pop_size: usize,
    /// Initial search standard deviation
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Explanation-loss weight [default: from --preset]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Prediction-loss weight [default: from --preset]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Loss-weight preset
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Attack-vector learning rate
    #[arg(long, default_value_t = 0.01)]
    pub lr_v: f64,
    /// Sigma learning rate
    #[arg(long, default_value_t = 0.0)]
    pub lr_sigma: f64,
    /// Per-generation multiplier on sigma and the learning rate
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    pub decay: f64,
    /// Population sampling scheme
    #[arg(long, value_enum, default_value_t = SamplingArg::Iid)]
    pub sampling: SamplingArg,
    /// Oracle query budget (per pair)
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    /// Master random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads
    #[arg(long, env = "FOILBOX_WORKERS", default_value_t = 1)]
    pub workers: usize,
    /// Print the resolved configuration as JSON and exit
    #[arg(long)]
    pub dry_run: bool,
}

impl SearchArgs {
    pub fn attack_config(&self) -> AttackConfig {
        let (alpha, beta) = self.preset.weights();
        AttackConfig {
            generations: self.generations,
            pop_size: self.pop_size,
            sigma0: self.sigma,
            alpha: self.alpha.unwrap_or(alpha),
            beta: self.beta.unwrap_or(beta),
            lr_v: self.lr_v,
            lr_sigma: self.lr_sigma,
            decay: self.decay,
            sampling: self.sampling.into(),
            seed: self.seed,
            budget: self.budget,
            ..AttackConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    /// Index of the image to perturb
    #[arg(long)]
    pub image_idx: usize,
    /// Index of the image whose explanation is the target
    #[arg(long)]
    pub target_idx: usize,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    /// Number of distinct image pairs
    #[arg(long, default_value_t = 100)]
    pub n_pairs: usize,
    /// Only pair images with different labels
    #[arg(long)]
    pub different_class: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// TNSR file holding a [h, w] map or a [c, h, w] image
    #[arg(long)]
    pub input: PathBuf,
    /// Output path; a 2-D input becomes PGM, a 3-D input PPM
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Serialize)]
struct DryRun<'a> {
    xai: XaiKind,
    model: &'a Path,
    dataset: &'a Path,
    out_dir: &'a Path,
    workers: usize,
    attack: AttackConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_pairs: Option<usize>,
}

/// Parse `args` (including the program name) and run. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::TrainFixture(a) => train_fixture_cmd(&a),
        Command::Explain(a) => explain_cmd(&a),
        Command::Attack(a) => attack_cmd(&a),
        Command::Experiment(a) => experiment_cmd(&a),
        Command::Render(a) => render_cmd(&a),
    }
}

fn train_fixture_cmd(a: &TrainFixtureArgs) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.train_seed,
    };
    let train = generate_dataset(a.data_seed, a.n_train)?;
    let test = generate_dataset(a.data_seed.wrapping_add(1), a.n_test)?;
    let (net, log) = train_fixture_logged(&train, a.arch.into(), &cfg)?;
    train.save(a.out_dir.join(TRAIN_DIR))?;
    test.save(a.out_dir.join(TEST_DIR))?;
    net.save(a.out_dir.join(MODEL_FILE))?;
    let acc = accuracy(&net, &test)?;
    write_json(
        &serde_json::json!({ "epoch_losses": log.epoch_losses, "held_out_accuracy": acc }),
        a.out_dir.join("training.json"),
    )?;
    println!("held-out accuracy {acc:.4}");
    Ok(())
}

fn load_inputs(model: &Path, dataset: &Path) -> Result<(Network, SyntheticDataset)> {
    let net = Network::load(model)
        .map_err(|e| Error::config(format!("cannot load model {}: {e}", model.display())))?;
    let ds = SyntheticDataset::load(dataset)
        .map_err(|e| Error::config(format!("cannot load dataset {}: {e}", dataset.display())))?;
    Ok((net, ds))
}

fn explain_cmd(a: &ExplainArgs) -> Result<()> {
    let (net, ds) = load_inputs(&a.model, &a.dataset)?;
    let x = ds.image(a.image_idx)?;
    let class = match a.class {
        Some(c) => c,
        None => ds.label(a.image_idx)?,
    };
    let method = XaiMethod::with_defaults(a.xai.into(), x.dims())?;
    let map = method.explain(&net, &x, class)?;
    let probs = net.forward(&x)?.probs;
    fs::create_dir_all(&a.out_dir)?;
    map.save(a.out_dir.join("map.tnsr"))?;
    save_pgm(&map, a.out_dir.join("map.pgm"))?;
    println!(
        "{}",
        serde_json::json!({ "method": method.variant(), "class": class, "probs": probs.data() })
    );
    Ok(())
}

fn dry_run(s: &SearchArgs, n_pairs: Option<usize>) -> Result<()> {
    let dump = DryRun {
        xai: s.xai.into(),
        model: &s.model,
        dataset: &s.dataset,
        out_dir: &s.out_dir,
        workers: s.workers,
        attack: s.attack_config(),
        n_pairs,
    };
    println!("{}", serde_json::to_string_pretty(&dump)?);
    Ok(())
}

fn attack_cmd(a: &AttackArgs) -> Result<()> {
    let s = &a.search;
    if s.dry_run {
        return dry_run(s, None);
    }
    let cfg = s.attack_config();
    cfg.validate()?;
    let (net, ds) = load_inputs(&s.model, &s.dataset)?;
    let job = PairJob {
        pair_id: 0,
        image_index: a.image_idx,
        target_index: a.target_idx,
    };
    let record = attack_pair(
        job,
        &ds,
        &net,
        s.xai.into(),
        &cfg,
        &s.out_dir,
        s.workers.max(1),
    )?;
    println!(
        "explanation mse {:.6e} -> {:.6e}, prediction preserved: {}, queries {}",
        record.mse_expl_initial, record.mse_expl_final, record.pred_preserved, record.queries_used
    );
    Ok(())
}

fn experiment_cmd(a: &ExperimentArgs) -> Result<()> {
    let s = &a.search;
    if s.dry_run {
        return dry_run(s, Some(a.n_pairs));
    }
    let cfg = ExperimentConfig {
        dataset: s.dataset.clone(),
        model: s.model.clone(),
        xai: s.xai.into(),
        n_pairs: a.n_pairs,
        attack: s.attack_config(),
        out_dir: s.out_dir.clone(),
        different_class: a.different_class,
    };
    let records = run_experiment(&cfg, s.workers.max(1))?;
    let summary = summarize(&records)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("wrote {}", cfg.run_dir().join(SUMMARY_FILE).display());
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    let t = Tensor::load(&a.input)?;
    match t.dims().len() {
        2 => save_pgm(&ExplanationMap::from_tensor(&t)?, &a.output),
        3 => save_ppm(&t, &a.output),
        _ => Err(Error::shape(format!(
            "cannot render a tensor of dims {:?}",
            t.dims()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn explicit_weights_override_preset() {
        let cli = Cli::try_parse_from([
            "foilbox",
            "attack",
            "--model",
            "m",
            "--dataset",
            "d",
            "--image-idx",
            "0",
            "--target-idx",
            "1",
            "--preset",
            "imagenet",
            "--beta",
            "3",
        ])
        .unwrap();
        let Command::Attack(a) = cli.command else {
            panic!("wrong subcommand")
        };
        let cfg = a.search.attack_config();
        assert_eq!((cfg.alpha, cfg.beta), (1e11, 3.0));
    }
}
