use super::layer::LayerSpec;
use super::params::{param_count, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape-checked sequential architecture. Stateless: parameters and the
/// recorded activations are passed in, so one architecture can serve any
/// number of parameter vectors concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    specs: Vec<LayerSpec>,
    /// `shapes[0]` is the input shape, `shapes[i + 1]` the output of layer `i`.
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    /// Aligned with the flat parameter vector.
    pub params: Vec<f64>,
    /// `activations[i]` is the gradient with respect to the recorded
    /// activation `i` (index 0 is the network input).
    pub activations: Vec<Tensor>,
}

impl Sequential {
    pub fn new(specs: Vec<LayerSpec>, input_shape: Vec<usize>) -> Result<Self> {
        let mut shapes = vec![input_shape];
        let mut offsets = Vec::with_capacity(specs.len() + 1);
        let mut offset = 0;
        for spec in &specs {
            let next = spec.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
            offsets.push(offset);
            offset += spec.param_count();
        }
        offsets.push(offset);
        Ok(Self {
            specs,
            shapes,
            offsets,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    /// Shape of recorded activation `i` (0 = input).
    pub fn activation_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.specs)
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.specs() != self.specs.as_slice() {
            return Err(Error::Architecture(
                "parameters were built for a different layer layout".into(),
            ));
        }
        Ok(())
    }

    fn layer_params<'a>(&self, params: &'a [f64], i: usize) -> &'a [f64] {
        &params[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Run the network, returning every activation (input first).
    pub fn forward(&self, params: &[f64], input: &Tensor) -> Result<Vec<Tensor>> {
        if params.len() != self.param_count() {
            return Err(Error::Alignment {
                what: "model parameters",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        if input.shape() != self.input_shape() {
            return Err(Error::Shape {
                expected: self.input_shape().to_vec(),
                actual: input.shape().to_vec(),
            });
        }
        let mut acts = Vec::with_capacity(self.specs.len() + 1);
        acts.push(input.clone());
        for (i, spec) in self.specs.iter().enumerate() {
            let mut out = Tensor::zeros(self.shapes[i + 1].clone());
            let prev = &acts[i];
            spec.forward(
                self.layer_params(params, i),
                prev.data(),
                &self.shapes[i],
                out.data_mut(),
            );
            acts.push(out);
        }
        Ok(acts)
    }

    /// Backpropagate `out_grad` (gradient of the loss with respect to the
    /// network output) through recorded activations.
    pub fn backward(
        &self,
        params: &[f64],
        acts: &[Tensor],
        out_grad: &Tensor,
    ) -> Result<GradientTape> {
        let mut param_grad = vec![0.0; self.param_count()];
        let activations = self.backward_into(params, acts, out_grad, &mut param_grad)?;
        Ok(GradientTape {
            params: param_grad,
            activations,
        })
    }

    /// Like [`Sequential::backward`] but accumulates parameter gradients into
    /// an existing buffer, which lets mini-batch training sum per-sample
    /// gradients without extra allocation.
    pub fn backward_into(
        &self,
        params: &[f64],
        acts: &[Tensor],
        out_grad: &Tensor,
        param_grad: &mut [f64],
    ) -> Result<Vec<Tensor>> {
        if acts.len() != self.specs.len() + 1
            || acts
                .iter()
                .zip(&self.shapes)
                .any(|(a, s)| a.shape() != s.as_slice())
        {
            return Err(Error::Architecture(
                "recorded activations do not belong to this network".into(),
            ));
        }
        if out_grad.shape() != self.output_shape() {
            return Err(Error::Shape {
                expected: self.output_shape().to_vec(),
                actual: out_grad.shape().to_vec(),
            });
        }
        if param_grad.len() != self.param_count() || params.len() != self.param_count() {
            return Err(Error::Alignment {
                what: "gradient buffer",
                expected: self.param_count(),
                actual: param_grad.len().min(params.len()),
            });
        }
        let n = self.specs.len();
        let mut grads: Vec<Tensor> = Vec::with_capacity(n + 1);
        grads.push(out_grad.clone());
        for i in (0..n).rev() {
            let mut input_grad = Tensor::zeros(self.shapes[i].clone());
            let upstream = grads.last().expect("non-empty");
            self.specs[i].backward(
                self.layer_params(params, i),
                acts[i].data(),
                &self.shapes[i],
                acts[i + 1].data(),
                upstream.data(),
                &mut param_grad[self.offsets[i]..self.offsets[i + 1]],
                input_grad.data_mut(),
            );
            grads.push(input_grad);
        }
        grads.reverse();
        Ok(grads)
    }
}

/// A network bound to one parameter vector, remembering its last forward
/// pass so that `backward` can be called afterwards.
#[derive(Debug, Clone)]
pub struct Net {
    arch: Sequential,
    params: ModelParams,
    trace: Option<Vec<Tensor>>,
}

impl Net {
    pub fn new(arch: Sequential, params: ModelParams) -> Result<Self> {
        arch.check_params(&params)?;
        Ok(Self {
            arch,
            params,
            trace: None,
        })
    }

    pub fn arch(&self) -> &Sequential {
        &self.arch
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn set_params(&mut self, params: ModelParams) -> Result<()> {
        self.arch.check_params(&params)?;
        self.params = params;
        self.trace = None;
        Ok(())
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<&Tensor> {
        let acts = self.arch.forward(self.params.values(), input)?;
        let trace = self.trace.insert(acts);
        Ok(trace.last().expect("non-empty"))
    }

    pub fn activations(&self) -> Option<&[Tensor]> {
        self.trace.as_deref()
    }

    pub fn backward(&self, loss_grad: &Tensor) -> Result<GradientTape> {
        let acts = self.trace.as_ref().ok_or(Error::NoForwardPass)?;
        self.arch.backward(self.params.values(), acts, loss_grad)
    }
}

/// Image classifier architecture: convolutional trunk followed by a head that
/// ends in a logit vector. The output of the last convolution (before its
/// activation) is the feature map used for class activation maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierArch {
    seq: Sequential,
    feature_layer: usize,
    num_classes: usize,
}

impl ClassifierArch {
    /// conv3×3(c→8) ReLU, conv3×3(8→16) ReLU, global average pool, FC(16→classes).
    pub fn desk(channels: usize, side: usize, num_classes: usize) -> Result<Self> {
        Self::new(
            vec![
                LayerSpec::Conv2d {
                    in_channels: channels,
                    out_channels: 8,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::Conv2d {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    inputs: 16,
                    outputs: num_classes,
                },
            ],
            vec![channels, side, side],
        )
    }

    pub fn new(specs: Vec<LayerSpec>, input_shape: Vec<usize>) -> Result<Self> {
        let feature_layer = specs
            .iter()
            .rposition(|s| matches!(s, LayerSpec::Conv2d { .. }))
            .ok_or_else(|| Error::Architecture("classifier needs a convolution".into()))?;
        let seq = Sequential::new(specs, input_shape)?;
        let out = seq.output_shape();
        if out.len() != 1 || out[0] < 2 {
            return Err(Error::Architecture(format!(
                "classifier must end in a logit vector, got {out:?}"
            )));
        }
        let num_classes = out[0];
        Ok(Self {
            seq,
            feature_layer,
            num_classes,
        })
    }

    pub fn seq(&self) -> &Sequential {
        &self.seq
    }

    pub fn specs(&self) -> &[LayerSpec] {
        self.seq.specs()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Index into the recorded activations of the last conv layer's output.
    pub fn feature_index(&self) -> usize {
        self.feature_layer + 1
    }

    /// `[K, H, B]` of the feature map.
    pub fn feature_shape(&self) -> &[usize] {
        self.seq.activation_shape(self.feature_index())
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        ModelParams::init(self.specs().to_vec(), &mut crate::seeding::rng(seed))
    }

    pub fn logits(&self, params: &ModelParams, image: &Tensor) -> Result<Tensor> {
        self.seq.check_params(params)?;
        let mut acts = self.seq.forward(params.values(), image)?;
        Ok(acts.pop().expect("non-empty"))
    }
}

/// Result of a classifier forward pass.
#[derive(Debug)]
pub struct Forward<'a> {
    pub logits: &'a Tensor,
    pub activations: &'a [Tensor],
}

#[derive(Debug, Clone)]
pub struct ClassifierNet {
    arch: ClassifierArch,
    net: Net,
}

impl ClassifierNet {
    pub fn new(arch: ClassifierArch, params: ModelParams) -> Result<Self> {
        let net = Net::new(arch.seq.clone(), params)?;
        Ok(Self { arch, net })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn params(&self) -> &ModelParams {
        self.net.params()
    }

    pub fn forward(&mut self, image: &Tensor) -> Result<Forward<'_>> {
        self.net.forward(image)?;
        let acts = self.net.activations().expect("just recorded");
        Ok(Forward {
            logits: acts.last().expect("non-empty"),
            activations: acts,
        })
    }

    /// Last conv layer output of the most recent forward pass.
    pub fn feature_map(&self) -> Option<&Tensor> {
        self.net
            .activations()
            .map(|a| &a[self.arch.feature_index()])
    }

    pub fn backward(&self, loss_grad: &Tensor) -> Result<GradientTape> {
        self.net.backward(loss_grad)
    }
}
