use crate::error::{Error, Result};
use crate::net::{unpool, Layer, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepLiftConfig {
    pub reference: Tensor,
    /// Differences at or below this magnitude fall back to the plain gradient.
    pub stability_tau: f64,
}

impl DeepLiftConfig {
    pub fn zero_reference(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::shape(format!("invalid reference dims {dims:?}")));
        }
        Ok(DeepLiftConfig {
            reference: Tensor::zeros(dims),
            stability_tau: 1e-9,
        })
    }
}

/// Rescale-rule contributions of every input element to `logit(x) - logit(reference)`.
pub fn deeplift_contributions(
    net: &Network,
    x: &Tensor,
    class_idx: usize,
    cfg: &DeepLiftConfig,
) -> Result<Tensor> {
    if !(cfg.stability_tau > 0.0) {
        return Err(Error::config("deeplift stability_tau must be positive"));
    }
    x.check_same_dims(&cfg.reference).map_err(|_| {
        Error::shape(format!(
            "reference dims {:?} do not match input {:?}",
            cfg.reference.dims(),
            x.dims()
        ))
    })?;
    let fx = net.forward(x)?;
    let fr = net.forward(&cfg.reference)?;
    net.check_class(class_idx)?;
    let tau = cfg.stability_tau;

    let mut mult = Tensor::zeros(&[net.num_classes()]);
    mult.data_mut()[class_idx] = 1.0;
    for i in (0..net.layers().len() - 1).rev() {
        let in_dims = net.layer_input_dims(i);
        mult = match &net.layers()[i] {
            Layer::Conv2d(c) => c.apply_transpose(c.weight(), &mult, in_dims),
            Layer::Linear(l) => l.apply_transpose(l.weight(), &mult),
            Layer::Relu => {
                let (xin, rin) = (fx.trace.inputs[i].data(), fr.trace.inputs[i].data());
                let (xout, rout) = (fx.trace.outputs[i].data(), fr.trace.outputs[i].data());
                let mut m = mult.clone();
                for (j, v) in m.data_mut().iter_mut().enumerate() {
                    let d_in = xin[j] - rin[j];
                    let slope = if d_in.abs() > tau {
                        (xout[j] - rout[j]) / d_in
                    } else if xin[j] > 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                    *v *= slope;
                }
                m
            }
            Layer::MaxPool2d(_) => {
                // Route to the input's selected element, rescaled so that each pooled
                // difference is reproduced by that element's difference.
                let sw = fx.trace.switches[i].as_ref().expect("pool switches");
                let (xin, rin) = (fx.trace.inputs[i].data(), fr.trace.inputs[i].data());
                let (xout, rout) = (fx.trace.outputs[i].data(), fr.trace.outputs[i].data());
                let mut m = mult.clone();
                for (o, v) in m.data_mut().iter_mut().enumerate() {
                    let d_in = xin[sw[o]] - rin[sw[o]];
                    if d_in.abs() > tau {
                        *v *= (xout[o] - rout[o]) / d_in;
                    }
                }
                unpool(&m, sw, in_dims)
            }
            Layer::Flatten => mult.reshape(in_dims)?,
            Layer::Softmax => unreachable!("softmax only at the end"),
        };
    }
    mult.mul(&x.sub(&cfg.reference)?)
}
