use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{unpool, Layer, Network};
use crate::tensor::Tensor;

/// Below this denominator magnitude a relevance share is treated as undefined.
const DEGENERATE_DENOMINATOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightTransform {
    #[default]
    Identity,
}

impl WeightTransform {
    fn apply(self, w: &Tensor) -> Tensor {
        match self {
            WeightTransform::Identity => w.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    pub epsilon: f64,
    /// Per-channel pixel lower bounds; a single value applies to every channel.
    pub input_low: Vec<f64>,
    pub input_high: Vec<f64>,
    pub weight_transform: WeightTransform,
    /// Count the bias as an extra input neuron in the ε-rule normaliser. The bias then
    /// absorbs its share of relevance and conservation at the input no longer holds.
    pub bias_in_denominator: bool,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            epsilon: 1e-6,
            input_low: vec![0.0],
            input_high: vec![1.0],
            weight_transform: WeightTransform::Identity,
            bias_in_denominator: false,
        }
    }
}

impl LrpConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("lrp epsilon must be positive"));
        }
        for bounds in [&self.input_low, &self.input_high] {
            if bounds.len() != 1 && bounds.len() != channels {
                return Err(Error::config(format!(
                    "lrp bounds need 1 or {channels} values, got {}",
                    bounds.len()
                )));
            }
        }
        for ch in 0..channels {
            if self.low(ch) > self.high(ch) {
                return Err(Error::config(format!(
                    "lrp bounds inverted for channel {ch}"
                )));
            }
        }
        Ok(())
    }

    fn low(&self, ch: usize) -> f64 {
        self.input_low[ch.min(self.input_low.len() - 1)]
    }

    fn high(&self, ch: usize) -> f64 {
        self.input_high[ch.min(self.input_high.len() - 1)]
    }

    fn bound_image(&self, dims: &[usize], high: bool) -> Tensor {
        let plane: usize = dims[1..].iter().product();
        let mut t = Tensor::zeros(dims);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            let ch = i / plane;
            *v = if high { self.high(ch) } else { self.low(ch) };
        }
        t
    }
}

/// Index of the parametric layer that sees raw pixels (only flattens before it).
fn pixel_layer(net: &Network) -> Option<usize> {
    net.layers()
        .iter()
        .position(|l| !matches!(l, Layer::Flatten))
        .filter(|&i| matches!(net.layers()[i], Layer::Conv2d(_) | Layer::Linear(_)))
}

fn stabilise(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// `relevance / denominator`, with 0/0 taken as 0.
fn shares(relevance: &Tensor, denom: &Tensor, layer: usize) -> Result<Tensor> {
    let mut out = relevance.clone();
    for (s, &d) in out.data_mut().iter_mut().zip(denom.data()) {
        if *s == 0.0 {
            continue;
        }
        if d.abs() < DEGENERATE_DENOMINATOR {
            return Err(Error::NumericDegeneracy {
                layer,
                magnitude: d.abs(),
            });
        }
        *s /= d;
    }
    Ok(out)
}

/// Relevance of every input element for logit `class_idx`, shaped like `x`.
///
/// The output relevance is the class logit (one-hot). Dense and convolutional layers use
/// the ε-rule with a sign-matched stabiliser, the layer touching pixels uses the bounded
/// z^B rule, ReLU masks, and max-pool routes relevance to the selected input.
pub fn lrp_relevance(
    net: &Network,
    x: &Tensor,
    class_idx: usize,
    cfg: &LrpConfig,
) -> Result<Tensor> {
    let channels = if x.dims().len() == 3 { x.dims()[0] } else { 1 };
    cfg.validate(channels)?;
    let fwd = net.forward(x)?;
    net.check_class(class_idx)?;
    let n = net.layers().len();
    let pixel = pixel_layer(net);

    let mut relevance = Tensor::zeros(&[net.num_classes()]);
    relevance.data_mut()[class_idx] = fwd.logits.data()[class_idx];

    for i in (0..n - 1).rev() {
        let a = &fwd.trace.inputs[i];
        let in_dims = net.layer_input_dims(i);
        relevance = match &net.layers()[i] {
            Layer::Conv2d(_) | Layer::Linear(_) if Some(i) == pixel => {
                let low = cfg.bound_image(x.dims(), false).reshape(in_dims)?;
                let high = cfg.bound_image(x.dims(), true).reshape(in_dims)?;
                zb_rule(net, i, a, &low, &high, &relevance, cfg)?
            }
            Layer::Conv2d(_) | Layer::Linear(_) => epsilon_rule(net, i, a, &relevance, cfg)?,
            Layer::Relu => a.zip_with(&relevance, |v, r| if v > 0.0 { r } else { 0.0 })?,
            Layer::MaxPool2d(_) => {
                let sw = fwd.trace.switches[i].as_ref().expect("pool switches");
                unpool(&relevance, sw, in_dims)
            }
            Layer::Flatten => relevance.reshape(in_dims)?,
            Layer::Softmax => unreachable!("softmax only at the end"),
        };
    }
    Ok(relevance)
}

struct Affine<'a> {
    layer: &'a Layer,
    in_dims: &'a [usize],
}

impl Affine<'_> {
    fn weight(&self) -> &Tensor {
        match self.layer {
            Layer::Conv2d(c) => c.weight(),
            Layer::Linear(l) => l.weight(),
            _ => unreachable!(),
        }
    }

    fn forward(&self, w: &Tensor, x: &Tensor, with_bias: bool) -> Tensor {
        match self.layer {
            Layer::Conv2d(c) => c.apply(w, x, with_bias),
            Layer::Linear(l) => l.apply(w, x, with_bias),
            _ => unreachable!(),
        }
    }

    fn transpose(&self, w: &Tensor, s: &Tensor) -> Tensor {
        match self.layer {
            Layer::Conv2d(c) => c.apply_transpose(w, s, self.in_dims),
            Layer::Linear(l) => l.apply_transpose(w, s),
            _ => unreachable!(),
        }
    }
}

fn epsilon_rule(
    net: &Network,
    i: usize,
    a: &Tensor,
    relevance: &Tensor,
    cfg: &LrpConfig,
) -> Result<Tensor> {
    let aff = Affine {
        layer: &net.layers()[i],
        in_dims: net.layer_input_dims(i),
    };
    let w = cfg.weight_transform.apply(aff.weight());
    let z = aff.forward(&w, a, cfg.bias_in_denominator);
    let denom = z.map(|v| stabilise(v, cfg.epsilon));
    let s = shares(relevance, &denom, i)?;
    a.mul(&aff.transpose(&w, &s))
}

fn zb_rule(
    net: &Network,
    i: usize,
    a: &Tensor,
    low: &Tensor,
    high: &Tensor,
    relevance: &Tensor,
    cfg: &LrpConfig,
) -> Result<Tensor> {
    let aff = Affine {
        layer: &net.layers()[i],
        in_dims: net.layer_input_dims(i),
    };
    let w = cfg.weight_transform.apply(aff.weight());
    let w_pos = w.map(|v| v.max(0.0));
    let w_neg = w.map(|v| v.min(0.0));
    let z = aff
        .forward(&w, a, false)
        .sub(&aff.forward(&w_pos, low, false))?
        .sub(&aff.forward(&w_neg, high, false))?;
    let s = shares(relevance, &z, i)?;
    a.mul(&aff.transpose(&w, &s))?
        .sub(&low.mul(&aff.transpose(&w_pos, &s))?)?
        .sub(&high.mul(&aff.transpose(&w_neg, &s))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Linear;

    fn single_neuron(eps: f64) -> Tensor {
        // Linear(1 <- 2) with w = (1, 1) behind a ReLU so the layer is not the pixel layer.
        let lin = Linear::new(
            Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let net = Network::new(
            vec![1, 1, 2],
            vec![
                Layer::Relu,
                Layer::Flatten,
                Layer::Linear(lin),
                Layer::Softmax,
            ],
        )
        .unwrap();
        let cfg = LrpConfig {
            epsilon: eps,
            ..LrpConfig::default()
        };
        lrp_relevance(
            &net,
            &Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap(),
            0,
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn epsilon_rule_proportional_share() {
        // logit = 3; shares a_i w_i / (eps + 3) * 3
        let r = single_neuron(1e-12);
        assert!((r.data()[0] - 1.0).abs() < 1e-9);
        assert!((r.data()[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn epsilon_one_absorbs_a_quarter() {
        let r = single_neuron(1.0);
        assert!((r.data()[0] - 0.75).abs() < 1e-15);
        assert!((r.data()[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zb_rule_conserves_exactly() {
        let lin = Linear::new(
            Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, -0.3, 0.8, 0.1]).unwrap(),
            Tensor::vector(&[0.2, -0.1]),
        )
        .unwrap();
        let net = Network::new(
            vec![1, 1, 3],
            vec![Layer::Flatten, Layer::Linear(lin), Layer::Softmax],
        )
        .unwrap();
        let x = Tensor::new(vec![1, 1, 3], vec![0.2, 0.7, 0.9]).unwrap();
        let logit = net.forward(&x).unwrap().logits.data()[0];
        let r = lrp_relevance(&net, &x, 0, &LrpConfig::default()).unwrap();
        assert!((r.sum() - logit).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let cfg = LrpConfig {
            epsilon: 0.0,
            ..LrpConfig::default()
        };
        assert!(cfg.validate(1).is_err());
        let cfg = LrpConfig {
            input_low: vec![2.0],
            ..LrpConfig::default()
        };
        assert!(cfg.validate(1).is_err());
        let cfg = LrpConfig {
            input_low: vec![0.0, 0.0],
            ..LrpConfig::default()
        };
        assert!(cfg.validate(3).is_err());
    }
}
