use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CGMP";
const VERSION: u32 = 1;

/// Flat parameter vector of a sequential network: every parameterised
/// layer's weights followed by its biases, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    specs: Vec<LayerSpec>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    layers: Vec<LayerSpec>,
    count: usize,
}

pub fn param_count(specs: &[LayerSpec]) -> usize {
    specs.iter().map(LayerSpec::param_count).sum()
}

impl ModelParams {
    pub fn new(specs: Vec<LayerSpec>, values: Vec<f64>) -> Result<Self> {
        let expected = param_count(&specs);
        if values.len() != expected {
            return Err(Error::Alignment {
                what: "model parameters",
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { specs, values })
    }

    pub fn zeros(specs: Vec<LayerSpec>) -> Self {
        let n = param_count(&specs);
        Self {
            specs,
            values: vec![0.0; n],
        }
    }

    /// Uniform initialisation in ±1/sqrt(fan_in) for weights and biases.
    pub fn init<R: Rng + ?Sized>(specs: Vec<LayerSpec>, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(param_count(&specs));
        for spec in &specs {
            if spec.param_count() == 0 {
                continue;
            }
            let bound = 1.0 / (spec.fan_in() as f64).sqrt();
            for _ in 0..spec.param_count() {
                values.push(rng.random_range(-bound..bound));
            }
        }
        Self { specs, values }
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.specs.clone(), values)
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.specs == other.specs
    }

    pub(crate) fn check_layout(&self, other: &ModelParams) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Architecture(
                "model parameters have different layer layouts".into(),
            ))
        }
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.values)
    }

    pub fn distance(&self, other: &ModelParams) -> f64 {
        linalg::dist(&self.values, &other.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Per-layer `(weights, biases)` tensors. Weight tensors carry the
    /// natural layer shape (`[out, in, k, k]` or `[out, in]`).
    pub fn unflatten(&self) -> Vec<(Tensor, Tensor)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for spec in &self.specs {
            let (wc, bc) = (spec.weight_count(), spec.bias_count());
            if wc + bc == 0 {
                continue;
            }
            let wshape = match *spec {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => vec![out_channels, in_channels, kernel, kernel],
                LayerSpec::Dense { inputs, outputs } => vec![outputs, inputs],
                _ => unreachable!("only parameterised layers reach here"),
            };
            let w = Tensor::new(wshape, self.values[offset..offset + wc].to_vec())
                .expect("layer weight shape matches its count");
            let b = Tensor::from_vec(self.values[offset + wc..offset + wc + bc].to_vec());
            out.push((w, b));
            offset += wc + bc;
        }
        out
    }

    /// Inverse of [`ModelParams::unflatten`].
    pub fn flatten(specs: Vec<LayerSpec>, layers: &[(Tensor, Tensor)]) -> Result<Self> {
        let mut values = Vec::with_capacity(param_count(&specs));
        for (w, b) in layers {
            values.extend_from_slice(w.data());
            values.extend_from_slice(b.data());
        }
        Self::new(specs, values)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            layers: self.specs.clone(),
            count: self.values.len(),
        })?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model snapshot".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported snapshot version {version}"
            )));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        if header.count != param_count(&header.layers) {
            return Err(Error::Format(format!(
                "header declares {} values but layers need {}",
                header.count,
                param_count(&header.layers)
            )));
        }
        let mut values = Vec::with_capacity(header.count);
        let mut buf = [0u8; 8];
        for _ in 0..header.count {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Self::new(header.layers, values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}
