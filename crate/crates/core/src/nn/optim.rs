use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{Error, Result};

fn check_aligned(params: usize, grad: usize) -> Result<()> {
    if params != grad {
        return Err(Error::Alignment {
            what: "gradient",
            expected: params,
            actual: grad,
        });
    }
    Ok(())
}

/// `params − lr·grad`.
pub fn sgd_step(params: &ModelParams, grad: &[f64], lr: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    sgd_step_in_place(next.values_mut(), grad, lr)?;
    Ok(next)
}

pub fn sgd_step_in_place(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    check_aligned(params.len(), grad.len())?;
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay; zero gives plain Adam.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates. Empty until the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn steps(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
    cfg: &AdamConfig,
) -> Result<()> {
    check_aligned(params.len(), grad.len())?;
    if state.step == 0 {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
    } else {
        check_aligned(params.len(), state.m.len())?;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut finite = true;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        finite &= m.is_finite() && v.is_finite();
        if cfg.weight_decay != 0.0 {
            *p -= cfg.lr * cfg.weight_decay * *p;
        }
        *p -= cfg.lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
    }
    if !finite {
        return Err(Error::NonFinite(format!(
            "adam moments at step {}",
            state.step
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    #[test]
    fn sgd_arithmetic() {
        let specs = vec![LayerSpec::Dense {
            inputs: 1,
            outputs: 1,
        }];
        let p = ModelParams::new(specs, vec![1.0, 2.0]).unwrap();
        let q = sgd_step(&p, &[1.0, 1.0], 0.5).unwrap();
        assert_eq!(q.values(), &[0.5, 1.5]);
        assert_eq!(sgd_step(&p, &[9.0, -3.0], 0.0).unwrap(), p);
        assert!(matches!(
            sgd_step(&p, &[1.0], 0.1),
            Err(Error::Alignment { .. })
        ));
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        // f(x) = Σ a_i (x_i − c_i)², minimiser c.
        let a = [1.0, 3.0, 0.5];
        let c = [2.0, -1.0, 4.0];
        let mut x = vec![0.0; 3];
        for _ in 0..2000 {
            let g: Vec<f64> = (0..3).map(|i| 2.0 * a[i] * (x[i] - c[i])).collect();
            sgd_step_in_place(&mut x, &g, 0.1).unwrap();
        }
        for i in 0..3 {
            assert!((x[i] - c[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = AdamConfig::new(0.01);
        let mut state = AdamState::default();
        let mut p = vec![1.0, 1.0, 1.0];
        let g = [0.5, -2.0, 1e-3];
        adam_step(&mut state, &mut p, &g, &cfg).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        for i in 0..3 {
            let expected = 1.0 - 0.01 * g[i] / (g[i].abs() + cfg.eps);
            assert!((p[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut state = AdamState::default();
        let mut p = vec![0.3, -0.7];
        adam_step(&mut state, &mut p, &[0.0, 0.0], &AdamConfig::new(0.1)).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_matches_scalar_reference_on_quadratic() {
        // Straight-line scalar Adam on f(x) = (x − 3)².
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=200 {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            reference.push(x);
        }

        let cfg = AdamConfig::new(lr);
        let mut state = AdamState::default();
        let mut p = vec![0.0];
        for want in reference {
            let g = [2.0 * (p[0] - 3.0)];
            adam_step(&mut state, &mut p, &g, &cfg).unwrap();
            assert!((p[0] - want).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut state = AdamState::default();
        let mut p = vec![0.0];
        let err = adam_step(&mut state, &mut p, &[f64::INFINITY], &AdamConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }
}
