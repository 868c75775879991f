use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a sequential network. Parameterised layers store their
/// weights first and their biases second inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded), stride-1 square convolution over a C×H×W input.
    /// Weights are laid out `[out][in][ky][kx]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// Fully connected layer over the flattened input, weights `[out][in]`.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Sigmoid,
    /// C×H×W → C spatial mean.
    GlobalAvgPool,
}

impl LayerSpec {
    pub fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => out_channels * in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, outputs } => inputs * outputs,
            _ => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { out_channels, .. } => out_channels,
            LayerSpec::Dense { outputs, .. } => outputs,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    /// Fan-in used for weight initialisation.
    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => match input {
                &[c, h, w] if c == in_channels && h >= kernel && w >= kernel && kernel > 0 => {
                    Ok(vec![out_channels, h - kernel + 1, w - kernel + 1])
                }
                _ => Err(Error::Architecture(format!(
                    "conv {in_channels}->{out_channels} k{kernel} cannot take input {input:?}"
                ))),
            },
            LayerSpec::Dense { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != inputs {
                    return Err(Error::Architecture(format!(
                        "dense layer expects {inputs} inputs, got shape {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::GlobalAvgPool => match input {
                &[c, _, _] => Ok(vec![c]),
                _ => Err(Error::Architecture(format!(
                    "global average pool needs a C×H×W input, got {input:?}"
                ))),
            },
        }
    }

    /// Compute the layer output. `input_shape` has already been validated.
    pub(crate) fn forward(
        &self,
        params: &[f64],
        input: &[f64],
        input_shape: &[usize],
        out: &mut [f64],
    ) {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let (h, w) = (input_shape[1], input_shape[2]);
                let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                let (weights, bias) = params.split_at(self.weight_count());
                for o in 0..out_channels {
                    let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
                    plane.iter_mut().for_each(|v| *v = bias[o]);
                    for c in 0..in_channels {
                        let src = &input[c * h * w..(c + 1) * h * w];
                        let kbase = (o * in_channels + c) * kernel * kernel;
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let wv = weights[kbase + ky * kernel + kx];
                                for y in 0..oh {
                                    let srow = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                                    let drow = &mut plane[y * ow..(y + 1) * ow];
                                    for (d, s) in drow.iter_mut().zip(srow) {
                                        *d += wv * s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                let (weights, bias) = params.split_at(inputs * outputs);
                for (o, slot) in out.iter_mut().enumerate().take(outputs) {
                    let row = &weights[o * inputs..(o + 1) * inputs];
                    *slot = bias[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            LayerSpec::Relu => {
                for (d, &s) in out.iter_mut().zip(input) {
                    *d = s.max(0.0);
                }
            }
            LayerSpec::Sigmoid => {
                for (d, &s) in out.iter_mut().zip(input) {
                    *d = sigmoid(s);
                }
            }
            LayerSpec::GlobalAvgPool => {
                let hw = input_shape[1] * input_shape[2];
                for (c, d) in out.iter_mut().enumerate() {
                    *d = input[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64;
                }
            }
        }
    }

    /// Accumulate parameter gradients into `param_grad` and write the
    /// gradient with respect to the layer input into `input_grad`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        input_shape: &[usize],
        output: &[f64],
        out_grad: &[f64],
        param_grad: &mut [f64],
        input_grad: &mut [f64],
    ) {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let (h, w) = (input_shape[1], input_shape[2]);
                let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                let wc = self.weight_count();
                let weights = &params[..wc];
                let (gw, gb) = param_grad.split_at_mut(wc);
                input_grad.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..out_channels {
                    let g = &out_grad[o * oh * ow..(o + 1) * oh * ow];
                    gb[o] += g.iter().sum::<f64>();
                    for c in 0..in_channels {
                        let src = &input[c * h * w..(c + 1) * h * w];
                        let dst = &mut input_grad[c * h * w..(c + 1) * h * w];
                        let kbase = (o * in_channels + c) * kernel * kernel;
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let wv = weights[kbase + ky * kernel + kx];
                                let mut acc = 0.0;
                                for y in 0..oh {
                                    let off = (y + ky) * w + kx;
                                    let grow = &g[y * ow..(y + 1) * ow];
                                    let srow = &src[off..off + ow];
                                    acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                                    let drow = &mut dst[off..off + ow];
                                    for (d, gv) in drow.iter_mut().zip(grow) {
                                        *d += wv * gv;
                                    }
                                }
                                gw[kbase + ky * kernel + kx] += acc;
                            }
                        }
                    }
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                let weights = &params[..inputs * outputs];
                let (gw, gb) = param_grad.split_at_mut(inputs * outputs);
                input_grad.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..outputs {
                    let go = out_grad[o];
                    gb[o] += go;
                    if go == 0.0 {
                        continue;
                    }
                    let row = &weights[o * inputs..(o + 1) * inputs];
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for ((gwv, &x), (ig, &wv)) in grow
                        .iter_mut()
                        .zip(input)
                        .zip(input_grad.iter_mut().zip(row))
                    {
                        *gwv += go * x;
                        *ig += go * wv;
                    }
                }
            }
            LayerSpec::Relu => {
                for ((d, &x), &g) in input_grad.iter_mut().zip(input).zip(out_grad) {
                    *d = if x > 0.0 { g } else { 0.0 };
                }
            }
            LayerSpec::Sigmoid => {
                for ((d, &y), &g) in input_grad.iter_mut().zip(output).zip(out_grad) {
                    *d = g * y * (1.0 - y);
                }
            }
            LayerSpec::GlobalAvgPool => {
                let hw = input_shape[1] * input_shape[2];
                for (c, &g) in out_grad.iter().enumerate() {
                    let v = g / hw as f64;
                    input_grad[c * hw..(c + 1) * hw]
                        .iter_mut()
                        .for_each(|d| *d = v);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
