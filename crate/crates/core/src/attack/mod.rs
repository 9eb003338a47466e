//! Evolutionary black-box attack on explanation maps.
//!
//! A Gaussian search distribution is centred on `x + V`. Each generation draws a
//! population of offsets, scores every perturbed image through the oracle, converts
//! the losses to centered-rank utilities (best = +0.5) and moves `V` and `σ` along the
//! estimated search gradients. Because the best candidate carries the largest
//! utility, the ascent step on utilities descends the loss.

mod nes;
mod sampling;

pub use nes::{estimate_gradients, rank_normalize};
pub use sampling::{
    lhs_uniforms, sample_population, standard_normal_cdf, standard_normal_quantile, Sampling,
};

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::ExplanationMap;
use crate::error::{Error, Result};
use crate::oracle::{BlackBox, DEFAULT_BUDGET};
use crate::tensor::Tensor;

/// Valid pixel range; every perturbed image is clamped into it.
pub const PIXEL_MIN: f64 = 0.0;
pub const PIXEL_MAX: f64 = 1.0;

pub const DEFAULT_DECAY: f64 = 0.999;

/// σ never drops below this fraction of its initial value.
pub const SIGMA_FLOOR_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub generations: usize,
    pub pop_size: usize,
    pub sigma0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr_v: f64,
    pub lr_sigma: f64,
    pub decay: f64,
    /// Apply `decay` to σ each generation.
    pub decay_sigma: bool,
    /// Apply `decay` to the attack-vector learning rate each generation.
    pub decay_lr: bool,
    pub sampling: Sampling,
    pub seed: u64,
    pub budget: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            generations: 1000,
            pop_size: 50,
            sigma0: 0.05,
            alpha: 1e3,
            beta: 1.0,
            lr_v: 0.01,
            lr_sigma: 0.0,
            decay: DEFAULT_DECAY,
            decay_sigma: true,
            decay_lr: true,
            sampling: Sampling::Iid,
            seed: 0,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma0", self.sigma0),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lr_v", self.lr_v),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.lr_sigma >= 0.0 && self.lr_sigma.is_finite()) {
            return Err(Error::config("lr_sigma must be non-negative"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.pop_size < 2 {
            return Err(Error::config("pop_size must be at least 2"));
        }
        if self.budget == 0 {
            return Err(Error::config("budget must be positive"));
        }
        Ok(())
    }

    pub fn sigma_floor(&self) -> f64 {
        SIGMA_FLOOR_FRACTION * self.sigma0
    }
}

/// One scored population member.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub z: Tensor,
    pub loss: f64,
    pub expl_loss: f64,
    pub pred_loss: f64,
    /// `V + z` at evaluation time.
    pub offset: Tensor,
    pub probs: Tensor,
    pub expl: ExplanationMap,
}

/// Mutable search state owned by the generation loop.
#[derive(Debug, Clone)]
pub struct AttackState {
    pub v: Tensor,
    pub sigma: f64,
    pub lr_v: f64,
    pub generation: usize,
    pub best: Option<Candidate>,
    rng: ChaCha8Rng,
}

impl AttackState {
    pub fn new(cfg: &AttackConfig, dims: &[usize]) -> Self {
        AttackState {
            v: Tensor::zeros(dims),
            sigma: cfg.sigma0,
            lr_v: cfg.lr_v,
            generation: 0,
            best: None,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |c| c.loss)
    }

    /// Keep the lowest-loss candidate seen so far; earlier candidates win ties.
    pub fn observe(&mut self, candidates: &[Candidate]) {
        for c in candidates {
            if c.loss < self.best_loss() {
                self.best = Some(c.clone());
            }
        }
    }

    /// Apply one search-gradient update.
    pub fn step(&mut self, grad_v: &Tensor, grad_sigma: f64, cfg: &AttackConfig) -> Result<()> {
        let lr = self.lr_v;
        self.v = self.v.zip_with(grad_v, |v, g| v + lr * g)?;
        let decay_s = if cfg.decay_sigma { cfg.decay } else { 1.0 };
        self.sigma = (self.sigma + cfg.lr_sigma * grad_sigma).max(cfg.sigma_floor()) * decay_s;
        if cfg.decay_lr {
            self.lr_v *= cfg.decay;
        }
        self.generation += 1;
        Ok(())
    }
}

/// Perturbed image `clamp(x + offset)` where `offset = V + z`.
pub fn perturb(x: &Tensor, offset: &Tensor) -> Result<Tensor> {
    x.zip_with(offset, |a, d| (a + d).clamp(PIXEL_MIN, PIXEL_MAX))
}

/// Score `x + V + z` with one oracle query.
#[allow(clippy::too_many_arguments)]
pub fn fitness(
    z: &Tensor,
    v: &Tensor,
    x: &Tensor,
    class_idx: usize,
    oracle: &dyn BlackBox,
    target_expl: &ExplanationMap,
    base_probs: &Tensor,
    alpha: f64,
    beta: f64,
) -> Result<Candidate> {
    let offset = v.add(z)?;
    let x_hat = perturb(x, &offset)?;
    let resp = oracle.query(&x_hat, class_idx)?;
    let expl_loss = resp.expl.squared_distance(target_expl)?;
    let pred_loss: f64 = resp
        .probs
        .sub(base_probs)?
        .data()
        .iter()
        .map(|d| d * d)
        .sum();
    Ok(Candidate {
        z: z.clone(),
        loss: alpha * expl_loss + beta * pred_loss,
        expl_loss,
        pred_loss,
        offset,
        probs: resp.probs,
        expl: resp.expl,
    })
}

/// One row of the per-generation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_loss: f64,
    pub mean_loss: f64,
    pub expl_loss: f64,
    pub pred_loss: f64,
    pub sigma: f64,
    pub queries_used: u64,
}

pub const TRACE_HEADER: &str =
    "generation,best_loss,mean_loss,expl_loss,pred_loss,sigma,queries_used";

pub fn write_trace_csv<W: Write>(trace: &[GenerationStats], mut w: W) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for s in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.generation,
            s.best_loss,
            s.mean_loss,
            s.expl_loss,
            s.pred_loss,
            s.sigma,
            s.queries_used
        )?;
    }
    Ok(())
}

pub fn read_trace_csv(text: &str) -> Result<Vec<GenerationStats>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::format("trace CSV header mismatch"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::format(format!("trace row has {} fields", f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::format(format!("{s:?}: {e}")))
            };
            let int = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| Error::format(format!("{s:?}: {e}")))
            };
            Ok(GenerationStats {
                generation: int(f[0])? as usize,
                best_loss: num(f[1])?,
                mean_loss: num(f[2])?,
                expl_loss: num(f[3])?,
                pred_loss: num(f[4])?,
                sigma: num(f[5])?,
                queries_used: int(f[6])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    /// `clamp(x + best_v)`; the original image if no generation completed.
    pub x_adv: Tensor,
    pub best_v: Tensor,
    pub final_v: Tensor,
    pub best_loss: f64,
    /// Best loss within the last completed generation.
    pub final_loss: f64,
    pub best_expl_loss: f64,
    pub best_pred_loss: f64,
    /// Oracle outputs at `x_adv`, when a candidate was evaluated.
    pub adv_probs: Option<Tensor>,
    pub adv_expl: Option<ExplanationMap>,
    pub trace: Vec<GenerationStats>,
    pub generations_completed: usize,
    pub queries_used: u64,
}

/// Run the generation loop until `cfg.generations` or the oracle budget runs out.
///
/// All perturbations of a generation are drawn before any is evaluated, so the result
/// does not depend on `workers`.
pub fn run_attack(
    cfg: &AttackConfig,
    oracle: &dyn BlackBox,
    x: &Tensor,
    class_idx: usize,
    target_expl: &ExplanationMap,
    base_probs: &Tensor,
    workers: usize,
) -> Result<AttackResult> {
    cfg.validate()?;
    if x.dims() != oracle.input_dims() {
        return Err(Error::shape(format!(
            "image dims {:?} do not match oracle input {:?}",
            x.dims(),
            oracle.input_dims()
        )));
    }
    if base_probs.dims() != [oracle.num_classes()] {
        return Err(Error::shape(
            "base probabilities do not match the class count",
        ));
    }
    let pool = if workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?,
        )
    } else {
        None
    };

    let mut state = AttackState::new(cfg, x.dims());
    let mut trace = Vec::new();
    let mut final_loss = f64::INFINITY;

    for _ in 0..cfg.generations {
        if oracle.peek_remaining() < cfg.pop_size as u64 {
            break;
        }
        let sigma_used = state.sigma;
        let samples = sample_population(
            &mut state.rng,
            cfg.pop_size,
            state.sigma,
            x.dims(),
            cfg.sampling,
        )?;
        let eval = |z: &Tensor| {
            fitness(
                z,
                &state.v,
                x,
                class_idx,
                oracle,
                target_expl,
                base_probs,
                cfg.alpha,
                cfg.beta,
            )
        };
        let results: Vec<Result<Candidate>> = match &pool {
            Some(p) => p.install(|| samples.par_iter().map(eval).collect()),
            None => samples.iter().map(eval).collect(),
        };
        let mut candidates = Vec::with_capacity(results.len());
        let mut exhausted = false;
        for r in results {
            match r {
                Ok(c) => candidates.push(c),
                Err(Error::BudgetExhausted { .. }) => exhausted = true,
                Err(e) => return Err(e),
            }
        }
        if exhausted {
            // Partial generation: keep its candidates for best-so-far, skip the update.
            state.observe(&candidates);
            break;
        }

        let losses: Vec<f64> = candidates.iter().map(|c| c.loss).collect();
        let utilities = rank_normalize(&losses);
        let (grad_v, grad_sigma) = estimate_gradients(&samples, &utilities, state.sigma)?;
        state.observe(&candidates);
        final_loss = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let best = state.best.as_ref().expect("at least one candidate");
        trace.push(GenerationStats {
            generation: state.generation + 1,
            best_loss: best.loss,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            expl_loss: best.expl_loss,
            pred_loss: best.pred_loss,
            sigma: sigma_used,
            queries_used: oracle.queries_used(),
        });
        state.step(&grad_v, grad_sigma, cfg)?;
    }

    let (x_adv, best_v, adv_probs, adv_expl, best_expl_loss, best_pred_loss) = match &state.best {
        Some(b) => (
            perturb(x, &b.offset)?,
            b.offset.clone(),
            Some(b.probs.clone()),
            Some(b.expl.clone()),
            b.expl_loss,
            b.pred_loss,
        ),
        None => (
            x.clone(),
            Tensor::zeros(x.dims()),
            None,
            None,
            f64::INFINITY,
            f64::INFINITY,
        ),
    };
    Ok(AttackResult {
        x_adv,
        best_v,
        final_v: state.v.clone(),
        best_loss: state.best_loss(),
        final_loss,
        best_expl_loss,
        best_pred_loss,
        adv_probs,
        adv_expl,
        generations_completed: trace.len(),
        trace,
        queries_used: oracle.queries_used(),
    })
}
