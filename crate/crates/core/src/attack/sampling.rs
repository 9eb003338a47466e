use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Iid,
    Lhs,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Sampling::Iid),
            "lhs" => Ok(Sampling::Lhs),
            other => Err(Error::config(format!("unknown sampling mode {other:?}"))),
        }
    }
}

/// Inverse CDF of the standard normal distribution.
pub fn standard_normal_quantile(u: f64) -> f64 {
    Normal::standard().inverse_cdf(u)
}

pub fn standard_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Latin hypercube uniforms: `out[k][j]` for sample `k`, coordinate `j`. For each
/// coordinate the `pop` values fall in distinct strata `[i/pop, (i+1)/pop)`.
#[allow(clippy::needless_range_loop)]
pub fn lhs_uniforms<R: Rng + ?Sized>(rng: &mut R, pop: usize, coords: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; coords]; pop];
    let mut strata: Vec<usize> = (0..pop).collect();
    for j in 0..coords {
        strata.shuffle(rng);
        for (k, &s) in strata.iter().enumerate() {
            let jitter: f64 = rng.sample(Open01);
            out[k][j] = (s as f64 + jitter) / pop as f64;
        }
    }
    out
}

/// Draw `pop` zero-mean perturbations of shape `dims` with standard deviation `sigma`.
pub fn sample_population<R: Rng + ?Sized>(
    rng: &mut R,
    pop: usize,
    sigma: f64,
    dims: &[usize],
    mode: Sampling,
) -> Result<Vec<Tensor>> {
    if pop < 2 {
        return Err(Error::config(format!(
            "population size must be at least 2, got {pop}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let n: usize = dims.iter().product();
    let rows: Vec<Vec<f64>> = match mode {
        Sampling::Iid => (0..pop)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        sigma * e
                    })
                    .collect()
            })
            .collect(),
        Sampling::Lhs => lhs_uniforms(rng, pop, n)
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|u| sigma * standard_normal_quantile(u))
                    .collect()
            })
            .collect(),
    };
    rows.into_iter()
        .map(|row| Tensor::new(dims.to_vec(), row))
        .collect()
}
