//! Feed-forward network engine: inference, input gradients and rule-modified backward passes.

mod io;
mod layer;

pub use io::{ANET_MAGIC, ANET_VERSION};
pub(crate) use layer::unpool;
pub use layer::{softmax, Conv2d, Layer, Linear, MaxPool2d};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered layer stack ending in a softmax over `num_classes`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_dims: Vec<usize>,
    /// Output dims of every layer.
    dims: Vec<Vec<usize>>,
}

/// Activations recorded during one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub inputs: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
    /// Pooling switches (flat input index per output element) for max-pool layers.
    pub switches: Vec<Option<Vec<usize>>>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Tensor,
    pub probs: Tensor,
    pub trace: ForwardTrace,
}

/// How a backward signal crosses ReLU stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardRule {
    Plain,
    /// Zero the signal where the forward pre-activation or the incoming signal is non-positive.
    Guided,
}

/// Which scalar output the backward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTarget {
    #[default]
    Logit,
    Probability,
}

impl Network {
    pub fn new(input_dims: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_dims.is_empty() || input_dims.contains(&0) {
            return Err(Error::shape(format!("invalid input dims {input_dims:?}")));
        }
        match layers.last() {
            Some(Layer::Softmax) => {}
            _ => return Err(Error::shape("network must end with a softmax layer")),
        }
        let mut dims = Vec::with_capacity(layers.len());
        let mut cur = input_dims.clone();
        for (i, layer) in layers.iter().enumerate() {
            if i + 1 < layers.len() && matches!(layer, Layer::Softmax) {
                return Err(Error::shape("softmax is only allowed as the final layer"));
            }
            cur = layer
                .output_dims(&cur)
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", layer.kind_name())))?;
            dims.push(cur.clone());
        }
        Ok(Network {
            layers,
            input_dims,
            dims,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn num_classes(&self) -> usize {
        self.dims.last().map(|d| d[0]).unwrap_or(0)
    }

    /// Input dims of layer `i`.
    pub fn layer_input_dims(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_dims
        } else {
            &self.dims[i - 1]
        }
    }

    pub fn layer_output_dims(&self, i: usize) -> &[usize] {
        &self.dims[i]
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.dims() != self.input_dims.as_slice() {
            return Err(Error::shape(format!(
                "input dims {:?} do not match network input {:?}",
                x.dims(),
                self.input_dims
            )));
        }
        Ok(())
    }

    pub fn check_class(&self, class_idx: usize) -> Result<()> {
        if class_idx >= self.num_classes() {
            return Err(Error::Index {
                index: class_idx,
                len: self.num_classes(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        let mut switches = Vec::with_capacity(n);
        let mut cur = x.clone();
        for layer in &self.layers {
            let (out, sw) = forward_layer(layer, &cur);
            inputs.push(cur);
            outputs.push(out.clone());
            switches.push(sw);
            cur = out;
        }
        let logits = inputs[n - 1].clone();
        let probs = cur;
        Ok(ForwardPass {
            logits,
            probs,
            trace: ForwardTrace {
                inputs,
                outputs,
                switches,
            },
        })
    }

    /// Pre-softmax outputs only.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.logits)
    }

    /// Gradient of logit `class_idx` with respect to the input.
    pub fn backward_input(&self, trace: &ForwardTrace, class_idx: usize) -> Result<Tensor> {
        self.backward_modified(trace, class_idx, BackwardRule::Plain)
    }

    pub fn backward_modified(
        &self,
        trace: &ForwardTrace,
        class_idx: usize,
        rule: BackwardRule,
    ) -> Result<Tensor> {
        let seed = self.output_seed(trace, class_idx, OutputTarget::Logit)?;
        self.backward_with_hook(trace, seed, rule, |_, _| {})
    }

    /// Signal in logit space whose backpropagation yields the gradient of `target` for `class_idx`.
    pub fn output_seed(
        &self,
        trace: &ForwardTrace,
        class_idx: usize,
        target: OutputTarget,
    ) -> Result<Tensor> {
        self.check_class(class_idx)?;
        self.check_trace(trace)?;
        let k = self.num_classes();
        let mut seed = Tensor::zeros(&[k]);
        match target {
            OutputTarget::Logit => seed.data_mut()[class_idx] = 1.0,
            OutputTarget::Probability => {
                let p = trace.outputs[self.layers.len() - 1].data();
                for (j, s) in seed.data_mut().iter_mut().enumerate() {
                    let delta = if j == class_idx { 1.0 } else { 0.0 };
                    *s = p[class_idx] * (delta - p[j]);
                }
            }
        }
        Ok(seed)
    }

    /// Backpropagate a logit-space `seed` to the input. `hook(i, signal)` sees the signal
    /// leaving layer `i` towards the input after the layer's rule has been applied.
    pub fn backward_with_hook(
        &self,
        trace: &ForwardTrace,
        seed: Tensor,
        rule: BackwardRule,
        mut hook: impl FnMut(usize, &Tensor),
    ) -> Result<Tensor> {
        self.check_trace(trace)?;
        let n = self.layers.len();
        if seed.dims() != [self.num_classes()] {
            return Err(Error::shape(format!(
                "seed dims {:?} must be [{}]",
                seed.dims(),
                self.num_classes()
            )));
        }
        let mut signal = seed;
        // Softmax is skipped: the seed already lives in logit space.
        for i in (0..n - 1).rev() {
            signal = self.backward_layer(i, trace, &signal, rule);
            hook(i, &signal);
        }
        Ok(signal)
    }

    pub(crate) fn backward_layer(
        &self,
        i: usize,
        trace: &ForwardTrace,
        signal: &Tensor,
        rule: BackwardRule,
    ) -> Tensor {
        let in_dims = self.layer_input_dims(i);
        match &self.layers[i] {
            Layer::Conv2d(c) => c.apply_transpose(c.weight(), signal, in_dims),
            Layer::Linear(l) => l.apply_transpose(l.weight(), signal),
            Layer::Relu => {
                let pre = &trace.inputs[i];
                match rule {
                    BackwardRule::Plain => pre
                        .zip_with(signal, |a, g| if a > 0.0 { g } else { 0.0 })
                        .expect("relu dims"),
                    BackwardRule::Guided => pre
                        .zip_with(signal, |a, g| if a > 0.0 && g > 0.0 { g } else { 0.0 })
                        .expect("relu dims"),
                }
            }
            Layer::MaxPool2d(_) => {
                let sw = trace.switches[i].as_ref().expect("pool switches recorded");
                unpool(signal, sw, in_dims)
            }
            Layer::Flatten => signal.clone().reshape(in_dims).expect("flatten dims"),
            Layer::Softmax => unreachable!("softmax is never backpropagated"),
        }
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.len() != self.layers.len() || trace.outputs.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "trace has {} entries for a {}-layer network",
                trace.len(),
                self.layers.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn forward_layer(layer: &Layer, x: &Tensor) -> (Tensor, Option<Vec<usize>>) {
    match layer {
        Layer::Conv2d(c) => (c.apply(c.weight(), x, true), None),
        Layer::Linear(l) => (l.apply(l.weight(), x, true), None),
        Layer::Relu => (x.map(|v| v.max(0.0)), None),
        Layer::MaxPool2d(p) => {
            let (out, sw) = p.forward_with_switches(x);
            (out, Some(sw))
        }
        Layer::Flatten => (x.clone().reshape(&[x.len()]).expect("flatten"), None),
        Layer::Softmax => (Tensor::vector(&softmax(x.data())), None),
    }
}
