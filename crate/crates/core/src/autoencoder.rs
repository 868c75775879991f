//! Dense autoencoder over flattened heat maps and the reconstruction-error
//! threshold that turns its scores into per-round verdicts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, LayerSpec, ModelParams, Sequential};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeActivation {
    #[default]
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub activation: AeActivation,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 200,
            lr: 1e-3,
            weight_decay: 1e-5,
            activation: AeActivation::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    arch: Sequential,
    params: ModelParams,
}

impl Autoencoder {
    /// Encoder FC(dim→hidden) and decoder FC(hidden→dim), each followed by
    /// the chosen activation.
    pub fn init(dim: usize, hidden: usize, activation: AeActivation, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::InvalidParameter(
                "autoencoder dimensions must be ≥ 1".into(),
            ));
        }
        let mut specs = vec![LayerSpec::Dense {
            inputs: dim,
            outputs: hidden,
        }];
        if activation == AeActivation::Sigmoid {
            specs.push(LayerSpec::Sigmoid);
        }
        specs.push(LayerSpec::Dense {
            inputs: hidden,
            outputs: dim,
        });
        if activation == AeActivation::Sigmoid {
            specs.push(LayerSpec::Sigmoid);
        }
        let arch = Sequential::new(specs.clone(), vec![dim])?;
        let params = ModelParams::init(specs, &mut crate::seeding::rng(seed));
        Ok(Self { arch, params })
    }

    pub fn dim(&self) -> usize {
        self.arch.input_shape()[0]
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn reconstruct(&self, row: &[f64]) -> Result<Vec<f64>> {
        let mut acts = self
            .arch
            .forward(self.params.values(), &Tensor::from_vec(row.to_vec()))?;
        Ok(acts.pop().expect("non-empty").into_data())
    }

    /// Mean over rows of the summed squared reconstruction error, and its
    /// gradient.
    fn loss_and_grad(&self, rows: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        let n = rows.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for row in rows {
            let acts = self
                .arch
                .forward(self.params.values(), &Tensor::from_vec(row.clone()))?;
            let out = acts.last().expect("non-empty");
            let g: Vec<f64> = out
                .data()
                .iter()
                .zip(row)
                .map(|(o, x)| {
                    loss += (o - x) * (o - x) / n;
                    2.0 * (o - x) / n
                })
                .collect();
            self.arch.backward_into(
                self.params.values(),
                &acts,
                &Tensor::from_vec(g),
                &mut grad,
            )?;
        }
        Ok((loss, grad))
    }
}

/// Train a fresh autoencoder on `rows` with full-batch Adam, one step per
/// epoch. Returns the model and the loss measured at every epoch.
pub fn train_ae(rows: &[Vec<f64>], cfg: &AeConfig, seed: u64) -> Result<(Autoencoder, Vec<f64>)> {
    let dim = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidParameter("autoencoder needs at least one row".into()))?;
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Alignment {
            what: "heat-map row",
            expected: dim,
            actual: bad.len(),
        });
    }
    let mut ae = Autoencoder::init(dim, cfg.hidden, cfg.activation, seed)?;
    let adam = AdamConfig::new(cfg.lr).with_weight_decay(cfg.weight_decay);
    let mut state = AdamState::default();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = ae.loss_and_grad(rows)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "autoencoder loss at epoch {epoch}"
            )));
        }
        losses.push(loss);
        adam_step(&mut state, ae.params.values_mut(), &grad, &adam)?;
    }
    Ok((ae, losses))
}

/// Mean absolute difference between each row and its reconstruction.
pub fn score(ae: &Autoencoder, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|row| {
            let rec = ae.reconstruct(row)?;
            Ok(mean_abs_diff(row, &rec))
        })
        .collect()
}

pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundVerdicts {
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `errors`.
    pub std: f64,
    pub threshold: f64,
    /// `true` (benign) iff the error does not exceed the threshold.
    pub benign: Vec<bool>,
}

/// Threshold `mean + alpha·std` over all clients' errors.
pub fn threshold_and_verdicts(errors: &[f64], alpha: f64) -> Result<RoundVerdicts> {
    if errors.is_empty() {
        return Err(Error::InvalidParameter(
            "no reconstruction errors to threshold".into(),
        ));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let std = (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
    let threshold = mean + alpha * std;
    Ok(RoundVerdicts {
        errors: errors.to_vec(),
        mean,
        std,
        threshold,
        benign: errors.iter().map(|&e| e <= threshold).collect(),
    })
}
