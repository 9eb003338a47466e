//! Gradient-based explanation methods producing `height x width` maps.

mod deeplift;
mod lrp;

pub use deeplift::{deeplift_contributions, DeepLiftConfig};
pub use lrp::{lrp_relevance, LrpConfig, WeightTransform};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{BackwardRule, Network, OutputTarget};
use crate::tensor::Tensor;

/// Per-pixel attribution scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ExplanationMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape(format!(
                "map {height}x{width} cannot hold {} values",
                values.len()
            )));
        }
        Ok(ExplanationMap {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ExplanationMap {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sum of squared differences.
    pub fn squared_distance(&self, other: &ExplanationMap) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn check_same_dims(&self, other: &ExplanationMap) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(format!(
                "map dims {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width], self.values.clone()).expect("map dims")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.dims() {
            [h, w] => ExplanationMap::new(h, w, t.data().to_vec()),
            [1, h, w] => ExplanationMap::new(h, w, t.data().to_vec()),
            _ => Err(Error::shape(format!(
                "expected a [h, w] map, got {:?}",
                t.dims()
            ))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ExplanationMap::from_tensor(&Tensor::load(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceMode {
    #[default]
    Sum,
    SumAbs,
}

/// Collapse a `[c, h, w]` attribution tensor to an `h x w` map.
pub fn channel_reduce(map3d: &Tensor, mode: ReduceMode) -> Result<ExplanationMap> {
    let &[c, h, w] = map3d.dims() else {
        return Err(Error::shape(format!(
            "expected [c, h, w], got {:?}",
            map3d.dims()
        )));
    };
    let plane = h * w;
    let d = map3d.data();
    let values = (0..plane)
        .map(|p| {
            (0..c)
                .map(|ch| d[ch * plane + p])
                .map(|v| match mode {
                    ReduceMode::Sum => v,
                    ReduceMode::SumAbs => v.abs(),
                })
                .sum()
        })
        .collect();
    ExplanationMap::new(h, w, values)
}

/// The five explanation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XaiKind {
    Gradient,
    Gxi,
    Gbp,
    Lrp,
    Deeplift,
}

impl XaiKind {
    pub const ALL: [XaiKind; 5] = [
        XaiKind::Gradient,
        XaiKind::Gxi,
        XaiKind::Gbp,
        XaiKind::Lrp,
        XaiKind::Deeplift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            XaiKind::Gradient => "gradient",
            XaiKind::Gxi => "gxi",
            XaiKind::Gbp => "gbp",
            XaiKind::Lrp => "lrp",
            XaiKind::Deeplift => "deeplift",
        }
    }
}

impl fmt::Display for XaiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for XaiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        XaiKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown explanation method {s:?}")))
    }
}

/// A configured explanation method.
#[derive(Debug, Clone)]
pub enum XaiMethod {
    Gradient,
    GradTimesInput,
    GuidedBackprop,
    Lrp(LrpConfig),
    DeepLift(DeepLiftConfig),
}

impl XaiMethod {
    /// Method with default settings for images of `input_dims`.
    pub fn with_defaults(kind: XaiKind, input_dims: &[usize]) -> Result<Self> {
        Ok(match kind {
            XaiKind::Gradient => XaiMethod::Gradient,
            XaiKind::Gxi => XaiMethod::GradTimesInput,
            XaiKind::Gbp => XaiMethod::GuidedBackprop,
            XaiKind::Lrp => XaiMethod::Lrp(LrpConfig::default()),
            XaiKind::Deeplift => XaiMethod::DeepLift(DeepLiftConfig::zero_reference(input_dims)?),
        })
    }

    pub fn kind(&self) -> XaiKind {
        match self {
            XaiMethod::Gradient => XaiKind::Gradient,
            XaiMethod::GradTimesInput => XaiKind::Gxi,
            XaiMethod::GuidedBackprop => XaiKind::Gbp,
            XaiMethod::Lrp(_) => XaiKind::Lrp,
            XaiMethod::DeepLift(_) => XaiKind::Deeplift,
        }
    }

    /// Short description of the rule variant, for run metadata.
    pub fn variant(&self) -> String {
        match self {
            XaiMethod::Lrp(cfg) => format!(
                "lrp-epsilon(eps={:e},bias_in_denominator={})+zB",
                cfg.epsilon, cfg.bias_in_denominator
            ),
            XaiMethod::DeepLift(cfg) => format!("deeplift-rescale(tau={:e})", cfg.stability_tau),
            other => other.kind().as_str().to_string(),
        }
    }

    pub fn explain(&self, net: &Network, x: &Tensor, class_idx: usize) -> Result<ExplanationMap> {
        match self {
            XaiMethod::Gradient => explain_gradient(net, x, class_idx),
            XaiMethod::GradTimesInput => explain_grad_times_input(net, x, class_idx),
            XaiMethod::GuidedBackprop => explain_guided_backprop(net, x, class_idx),
            XaiMethod::Lrp(cfg) => explain_lrp(net, x, class_idx, cfg),
            XaiMethod::DeepLift(cfg) => explain_deeplift(net, x, class_idx, cfg),
        }
    }
}

fn check_image(x: &Tensor) -> Result<()> {
    if x.dims().len() != 3 {
        return Err(Error::shape(format!(
            "explanations need a [c, h, w] image, got {:?}",
            x.dims()
        )));
    }
    Ok(())
}

/// Input gradient of the chosen output for `class_idx`, still `[c, h, w]`.
pub fn input_gradient(
    net: &Network,
    x: &Tensor,
    class_idx: usize,
    target: OutputTarget,
    rule: BackwardRule,
) -> Result<Tensor> {
    let fwd = net.forward(x)?;
    let seed = net.output_seed(&fwd.trace, class_idx, target)?;
    net.backward_with_hook(&fwd.trace, seed, rule, |_, _| {})
}

pub fn explain_gradient(net: &Network, x: &Tensor, class_idx: usize) -> Result<ExplanationMap> {
    check_image(x)?;
    let g = input_gradient(net, x, class_idx, OutputTarget::Logit, BackwardRule::Plain)?;
    channel_reduce(&g, ReduceMode::Sum)
}

pub fn explain_grad_times_input(
    net: &Network,
    x: &Tensor,
    class_idx: usize,
) -> Result<ExplanationMap> {
    check_image(x)?;
    let g = input_gradient(net, x, class_idx, OutputTarget::Logit, BackwardRule::Plain)?;
    channel_reduce(&g.mul(x)?, ReduceMode::Sum)
}

pub fn explain_guided_backprop(
    net: &Network,
    x: &Tensor,
    class_idx: usize,
) -> Result<ExplanationMap> {
    check_image(x)?;
    let g = input_gradient(net, x, class_idx, OutputTarget::Logit, BackwardRule::Guided)?;
    channel_reduce(&g, ReduceMode::Sum)
}

pub fn explain_lrp(
    net: &Network,
    x: &Tensor,
    class_idx: usize,
    cfg: &LrpConfig,
) -> Result<ExplanationMap> {
    check_image(x)?;
    channel_reduce(&lrp_relevance(net, x, class_idx, cfg)?, ReduceMode::Sum)
}

pub fn explain_deeplift(
    net: &Network,
    x: &Tensor,
    class_idx: usize,
    cfg: &DeepLiftConfig,
) -> Result<ExplanationMap> {
    check_image(x)?;
    channel_reduce(
        &deeplift_contributions(net, x, class_idx, cfg)?,
        ReduceMode::Sum,
    )
}
