use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 2-D convolution with zero padding. Weight dims are `[out, in, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if weight.dims().len() != 4 {
            return Err(Error::shape(format!(
                "conv weight must be 4-D, got {:?}",
                weight.dims()
            )));
        }
        if bias.dims() != [weight.dims()[0]] {
            return Err(Error::shape(format!(
                "conv bias {:?} does not match {} output channels",
                bias.dims(),
                weight.dims()[0]
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv stride must be positive"));
        }
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.weight, &mut self.bias)
    }

    fn kernel(&self) -> (usize, usize, usize, usize) {
        let d = self.weight.dims();
        (d[0], d[1], d[2], d[3])
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (out_c, in_c, kh, kw) = self.kernel();
        if input.len() != 3 || input[0] != in_c {
            return Err(Error::shape(format!(
                "conv expects [{in_c}, h, w] input, got {input:?}"
            )));
        }
        let (h, w) = (input[1] + 2 * self.padding, input[2] + 2 * self.padding);
        if h < kh || w < kw {
            return Err(Error::shape(format!(
                "conv kernel {kh}x{kw} larger than padded input {h}x{w}"
            )));
        }
        Ok(vec![
            out_c,
            (h - kh) / self.stride + 1,
            (w - kw) / self.stride + 1,
        ])
    }

    /// Convolve `x` with an arbitrary same-shaped `weight`, optionally adding the bias.
    pub(crate) fn apply(&self, weight: &Tensor, x: &Tensor, with_bias: bool) -> Tensor {
        let (out_c, in_c, kh, kw) = self.kernel();
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let od = self
            .output_dims(x.dims())
            .expect("dims validated at network construction");
        let (oh, ow) = (od[1], od[2]);
        let (s, p) = (self.stride as isize, self.padding as isize);
        let xd = x.data();
        let wd = weight.data();
        let mut out = vec![0.0; out_c * oh * ow];
        for o in 0..out_c {
            let b = if with_bias { self.bias.data()[o] } else { 0.0 };
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    for i in 0..in_c {
                        for ky in 0..kh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = (i * h + iy as usize) * w;
                            let wrow = ((o * in_c + i) * kh + ky) * kw;
                            for kx in 0..kw {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += wd[wrow + kx] * xd[xrow + ix as usize];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Tensor::new(od, out).expect("conv output length")
    }

    /// Transposed convolution: maps an output-shaped signal back onto `input_dims`.
    pub(crate) fn apply_transpose(
        &self,
        weight: &Tensor,
        grad_out: &Tensor,
        input_dims: &[usize],
    ) -> Tensor {
        let (out_c, in_c, kh, kw) = self.kernel();
        let (h, w) = (input_dims[1], input_dims[2]);
        let (oh, ow) = (grad_out.dims()[1], grad_out.dims()[2]);
        let (s, p) = (self.stride as isize, self.padding as isize);
        let gd = grad_out.data();
        let wd = weight.data();
        let mut gx = vec![0.0; in_c * h * w];
        for o in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gd[(o * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..in_c {
                        for ky in 0..kh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = (i * h + iy as usize) * w;
                            let wrow = ((o * in_c + i) * kh + ky) * kw;
                            for kx in 0..kw {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                gx[xrow + ix as usize] += wd[wrow + kx] * g;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(input_dims.to_vec(), gx).expect("conv input length")
    }

    /// Weight and bias gradients given the layer input and the output gradient.
    pub(crate) fn param_grads(&self, x: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
        let (out_c, in_c, kh, kw) = self.kernel();
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let (oh, ow) = (grad_out.dims()[1], grad_out.dims()[2]);
        let (s, p) = (self.stride as isize, self.padding as isize);
        let xd = x.data();
        let gd = grad_out.data();
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; out_c];
        for o in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gd[(o * oh + oy) * ow + ox];
                    gb[o] += g;
                    for i in 0..in_c {
                        for ky in 0..kh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = (i * h + iy as usize) * w;
                            let wrow = ((o * in_c + i) * kh + ky) * kw;
                            for kx in 0..kw {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                gw[wrow + kx] += g * xd[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        (
            Tensor::new(self.weight.dims().to_vec(), gw).expect("weight grad"),
            Tensor::new(vec![out_c], gb).expect("bias grad"),
        )
    }
}

/// Fully connected layer, weight dims `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.dims().len() != 2 {
            return Err(Error::shape(format!(
                "linear weight must be 2-D, got {:?}",
                weight.dims()
            )));
        }
        if bias.dims() != [weight.dims()[0]] {
            return Err(Error::shape(format!(
                "linear bias {:?} does not match {} outputs",
                bias.dims(),
                weight.dims()[0]
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.weight, &mut self.bias)
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input != [self.in_features()] {
            return Err(Error::shape(format!(
                "linear expects [{}] input, got {input:?}",
                self.in_features()
            )));
        }
        Ok(vec![self.out_features()])
    }

    pub(crate) fn apply(&self, weight: &Tensor, x: &Tensor, with_bias: bool) -> Tensor {
        let (n_out, n_in) = (self.out_features(), self.in_features());
        let wd = weight.data();
        let xd = x.data();
        let out = (0..n_out)
            .map(|o| {
                let row = &wd[o * n_in..(o + 1) * n_in];
                let b = if with_bias { self.bias.data()[o] } else { 0.0 };
                row.iter().zip(xd).fold(b, |acc, (w, v)| acc + w * v)
            })
            .collect();
        Tensor::new(vec![n_out], out).expect("linear output")
    }

    pub(crate) fn apply_transpose(&self, weight: &Tensor, grad_out: &Tensor) -> Tensor {
        let (n_out, n_in) = (self.out_features(), self.in_features());
        let wd = weight.data();
        let mut gx = vec![0.0; n_in];
        for (o, &g) in grad_out.data().iter().enumerate().take(n_out) {
            if g == 0.0 {
                continue;
            }
            for (acc, w) in gx.iter_mut().zip(&wd[o * n_in..(o + 1) * n_in]) {
                *acc += w * g;
            }
        }
        Tensor::new(vec![n_in], gx).expect("linear input")
    }

    pub(crate) fn param_grads(&self, x: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
        let n_in = self.in_features();
        let mut gw = vec![0.0; self.weight.len()];
        for (o, &g) in grad_out.data().iter().enumerate() {
            for (acc, v) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x.data()) {
                *acc = g * v;
            }
        }
        (
            Tensor::new(self.weight.dims().to_vec(), gw).expect("weight grad"),
            grad_out.clone(),
        )
    }
}

/// Max pooling over square windows without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
}

impl MaxPool2d {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::shape("pool window and stride must be positive"));
        }
        Ok(MaxPool2d { window, stride })
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[1] < self.window || input[2] < self.window {
            return Err(Error::shape(format!(
                "maxpool {0}x{0} cannot apply to {input:?}",
                self.window
            )));
        }
        Ok(vec![
            input[0],
            (input[1] - self.window) / self.stride + 1,
            (input[2] - self.window) / self.stride + 1,
        ])
    }

    /// Pooled output plus, per output element, the flat index of the selected input.
    /// The first maximum in row-major window order wins ties.
    pub(crate) fn forward_with_switches(&self, x: &Tensor) -> (Tensor, Vec<usize>) {
        let od = self
            .output_dims(x.dims())
            .expect("dims validated at network construction");
        let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let (oh, ow) = (od[1], od[2]);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut switches = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = (ch * h + oy * self.stride) * w + ox * self.stride;
                    for ky in 0..self.window {
                        for kx in 0..self.window {
                            let idx = (ch * h + oy * self.stride + ky) * w + ox * self.stride + kx;
                            if xd[idx] > xd[best_idx] {
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(xd[best_idx]);
                    switches.push(best_idx);
                }
            }
        }
        (Tensor::new(od, out).expect("pool output"), switches)
    }
}

/// Route an output-shaped signal back to the selected pooling inputs.
pub(crate) fn unpool(signal: &Tensor, switches: &[usize], input_dims: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(input_dims);
    let od = out.data_mut();
    for (&idx, &v) in switches.iter().zip(signal.data()) {
        od[idx] += v;
    }
    out
}

/// One network stage.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Linear(Linear),
    Relu,
    MaxPool2d(MaxPool2d),
    Flatten,
    Softmax,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Linear(_) => "linear",
            Layer::Relu => "relu",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Softmax => "softmax",
        }
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => c.output_dims(input),
            Layer::Linear(l) => l.output_dims(input),
            Layer::MaxPool2d(p) => p.output_dims(input),
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Softmax => {
                if input.len() != 1 {
                    return Err(Error::shape(format!(
                        "softmax expects a vector, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Linear(_) | Layer::Flatten)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
