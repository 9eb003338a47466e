//! Experiment protocol: random image pairs, one attack per pair, persisted statistics.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, write_trace_csv, AttackConfig};
use crate::attribution::{ExplanationMap, XaiKind, XaiMethod};
use crate::error::{Error, Result};
use crate::fixtures::SyntheticDataset;
use crate::net::Network;
use crate::oracle::{BlackBox, Oracle};
use crate::render::{save_pgm, save_ppm};
use crate::tensor::Tensor;

pub const SUMMARY_FILE: &str = "summary.json";
pub const RECORDS_FILE: &str = "records.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub xai: XaiKind,
    pub n_pairs: usize,
    pub attack: AttackConfig,
    pub out_dir: PathBuf,
    /// Only draw pairs whose images carry different labels.
    pub different_class: bool,
}

impl ExperimentConfig {
    /// Directory holding every artifact of this run.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir
            .join(format!("{}-seed-{}", self.xai, self.attack.seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub pair_id: usize,
    pub image_index: usize,
    pub target_index: usize,
    pub image_label: usize,
    pub xai_method: XaiKind,
    pub xai_variant: String,
    pub cfg: AttackConfig,
    pub mse_expl_initial: f64,
    pub mse_expl_final: f64,
    pub mse_input: f64,
    pub pred_preserved: bool,
    pub probs_initial: Vec<f64>,
    pub probs_adv: Vec<f64>,
    pub queries_used: u64,
    pub generations_completed: usize,
    /// Relative to the directory holding the record.
    pub trace_path: String,
}

impl RunRecord {
    /// Largest absolute change of any class probability.
    pub fn prob_shift_inf(&self) -> f64 {
        self.probs_initial
            .iter()
            .zip(&self.probs_adv)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Result<Stats> {
        if values.is_empty() {
            return Err(Error::config("statistics of an empty sample"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Ok(Stats {
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            min: v[0],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: XaiKind,
    pub n_pairs: usize,
    pub mse_expl_final: Stats,
    pub mse_input: Stats,
    pub pred_preserved_fraction: f64,
    pub total_queries: u64,
}

/// Anything with a flat value buffer and a shape.
pub trait Values {
    fn shape(&self) -> Vec<usize>;
    fn flat(&self) -> &[f64];
}

impl Values for Tensor {
    fn shape(&self) -> Vec<usize> {
        self.dims().to_vec()
    }

    fn flat(&self) -> &[f64] {
        self.data()
    }
}

impl Values for ExplanationMap {
    fn shape(&self) -> Vec<usize> {
        vec![self.height(), self.width()]
    }

    fn flat(&self) -> &[f64] {
        self.values()
    }
}

/// Mean of squared elementwise differences.
pub fn mse<T: Values>(a: &T, b: &T) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "mse of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (x, y) = (a.flat(), b.flat());
    Ok(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64)
}

pub fn summarize(records: &[RunRecord]) -> Result<Summary> {
    let first = records
        .first()
        .ok_or_else(|| Error::config("cannot summarise zero records"))?;
    if records.iter().any(|r| r.xai_method != first.xai_method) {
        return Err(Error::config("records mix explanation methods"));
    }
    let finals: Vec<f64> = records.iter().map(|r| r.mse_expl_final).collect();
    let inputs: Vec<f64> = records.iter().map(|r| r.mse_input).collect();
    let preserved = records.iter().filter(|r| r.pred_preserved).count();
    Ok(Summary {
        method: first.xai_method,
        n_pairs: records.len(),
        mse_expl_final: Stats::of(&finals)?,
        mse_input: Stats::of(&inputs)?,
        pred_preserved_fraction: preserved as f64 / records.len() as f64,
        total_queries: records.iter().map(|r| r.queries_used).sum(),
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Seed for pair `index`, derived from the master seed on its own stream.
pub fn pair_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

pub fn pair_dir_name(pair_id: usize) -> String {
    format!("pair-{pair_id:03}")
}

/// Draw `n` distinct ordered pairs `(image, target)` with `image != target`.
pub fn draw_pairs(
    dataset: &SyntheticDataset,
    n: usize,
    seed: u64,
    different_class: bool,
) -> Result<Vec<(usize, usize)>> {
    let len = dataset.len();
    let admissible =
        |i: usize, j: usize| i != j && (!different_class || dataset.labels[i] != dataset.labels[j]);
    let capacity: usize = if different_class {
        (0..len)
            .map(|i| (0..len).filter(|&j| admissible(i, j)).count())
            .sum()
    } else {
        len * len.saturating_sub(1)
    };
    if n > capacity {
        return Err(Error::config(format!(
            "cannot draw {n} distinct pairs from {len} images"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let i = rng.random_range(0..len);
        let j = rng.random_range(0..len);
        if admissible(i, j) && seen.insert((i, j)) {
            pairs.push((i, j));
        }
    }
    Ok(pairs)
}

/// One image pair of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairJob {
    pub pair_id: usize,
    pub image_index: usize,
    pub target_index: usize,
}

/// Attack one pair with a private oracle whose budget is `cfg.budget`. The record and
/// all artifacts are written into `pair_dir`.
pub fn attack_pair(
    job: PairJob,
    dataset: &SyntheticDataset,
    net: &Network,
    xai: XaiKind,
    cfg: &AttackConfig,
    pair_dir: &Path,
    workers: usize,
) -> Result<RunRecord> {
    let PairJob {
        pair_id,
        image_index,
        target_index,
    } = job;
    let x = dataset.image(image_index)?;
    let x_target = dataset.image(target_index)?;
    let y = dataset.label(image_index)?;
    let method = XaiMethod::with_defaults(xai, x.dims())?;
    let variant = method.variant();
    let oracle = Oracle::new(net.clone(), method, cfg.budget)?;

    // Two bookkeeping queries, charged against the same budget.
    let target_map = oracle.query(&x_target, y)?.expl;
    let base = oracle.query(&x, y)?;

    let result = run_attack(cfg, &oracle, &x, y, &target_map, &base.probs, workers)?;
    let adv_probs = result
        .adv_probs
        .clone()
        .unwrap_or_else(|| base.probs.clone());
    let adv_map = result.adv_expl.clone().unwrap_or_else(|| base.expl.clone());

    fs::create_dir_all(pair_dir)?;
    let mut w = BufWriter::new(fs::File::create(pair_dir.join(TRACE_FILE))?);
    write_trace_csv(&result.trace, &mut w)?;
    w.flush()?;
    x.save(pair_dir.join("x.tnsr"))?;
    x_target.save(pair_dir.join("x_target.tnsr"))?;
    result.x_adv.save(pair_dir.join("x_adv.tnsr"))?;
    target_map.save(pair_dir.join("target_map.tnsr"))?;
    base.expl.save(pair_dir.join("initial_map.tnsr"))?;
    adv_map.save(pair_dir.join("adv_map.tnsr"))?;
    save_ppm(&x, pair_dir.join("x.ppm"))?;
    save_ppm(&result.x_adv, pair_dir.join("x_adv.ppm"))?;
    save_pgm(&target_map, pair_dir.join("target_map.pgm"))?;
    save_pgm(&adv_map, pair_dir.join("adv_map.pgm"))?;

    let record = RunRecord {
        pair_id,
        image_index,
        target_index,
        image_label: y,
        xai_method: xai,
        xai_variant: variant,
        cfg: cfg.clone(),
        mse_expl_initial: mse(&base.expl, &target_map)?,
        mse_expl_final: mse(&adv_map, &target_map)?,
        mse_input: mse(&x, &result.x_adv)?,
        pred_preserved: adv_probs.argmax() == base.probs.argmax(),
        probs_initial: base.probs.data().to_vec(),
        probs_adv: adv_probs.data().to_vec(),
        queries_used: oracle.queries_used(),
        generations_completed: result.generations_completed,
        trace_path: TRACE_FILE.to_string(),
    };
    write_json(&record, pair_dir.join(RECORD_FILE))?;
    Ok(record)
}

/// Run every pair (optionally on `workers` threads) and write records plus summary.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<RunRecord>> {
    if cfg.n_pairs == 0 {
        return Err(Error::config("n_pairs must be at least 1"));
    }
    cfg.attack.validate()?;
    let dataset = SyntheticDataset::load(&cfg.dataset).map_err(|e| {
        Error::config(format!(
            "cannot load dataset {}: {e}",
            cfg.dataset.display()
        ))
    })?;
    let net = Network::load(&cfg.model)
        .map_err(|e| Error::config(format!("cannot load model {}: {e}", cfg.model.display())))?;
    if dataset.images.dims()[1..] != *net.input_dims() {
        return Err(Error::config(format!(
            "dataset images {:?} do not fit model input {:?}",
            &dataset.images.dims()[1..],
            net.input_dims()
        )));
    }
    let pairs = draw_pairs(&dataset, cfg.n_pairs, cfg.attack.seed, cfg.different_class)?;
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir)?;

    let job = |(pair_id, &(image_index, target_index)): (usize, &(usize, usize))| {
        let attack = AttackConfig {
            seed: pair_seed(cfg.attack.seed, pair_id),
            ..cfg.attack.clone()
        };
        let job = PairJob {
            pair_id,
            image_index,
            target_index,
        };
        attack_pair(
            job,
            &dataset,
            &net,
            cfg.xai,
            &attack,
            &run_dir.join(pair_dir_name(pair_id)),
            1,
        )
    };
    let results: Vec<Result<RunRecord>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| pairs.par_iter().enumerate().map(job).collect())
    } else {
        pairs.iter().enumerate().map(job).collect()
    };
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_json(&records, run_dir.join(RECORDS_FILE))?;
    write_json(&summarize(&records)?, run_dir.join(SUMMARY_FILE))?;
    Ok(records)
}
