//! Class activation maps of uploaded models on a fixed probe image.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{ClassifierArch, ModelParams};
use crate::seeding::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamKind {
    /// Element-wise ReLU'd gradients weight every activation.
    LayerCam,
    /// Spatially pooled gradients weight every channel.
    GradCam,
}

/// Non-negative H×B map for one upload.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    /// Row-major, `height * width` entries.
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub client: usize,
    pub round: usize,
    pub target_class: usize,
}

impl HeatMap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    /// 8-bit binary PGM of the min-max normalised map.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = min_max_normalize(&self.values)
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

/// Image the server renders every upload on, with the class it targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeImage {
    pub image: Tensor,
    pub class: usize,
}

impl ProbeImage {
    /// Uniformly random image of the server's test set.
    pub fn pick(test: &Dataset, seed: u64) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::Configuration(
                "probe needs a non-empty test set".into(),
            ));
        }
        let mut rng = seeding::rng(seeding::derive(seed, Stream::Probe, &[]));
        let i = rng.random_range(0..test.len());
        Ok(Self {
            image: test.images[i].clone(),
            class: test.labels[i],
        })
    }
}

fn check_pair(acts: &Tensor, grads: &Tensor) -> Result<(usize, usize)> {
    if acts.shape() != grads.shape() || acts.shape().len() != 3 {
        return Err(Error::Shape {
            expected: acts.shape().to_vec(),
            actual: grads.shape().to_vec(),
        });
    }
    let s = acts.shape();
    Ok((s[0], s[1] * s[2]))
}

/// `ReLU(Σ_k ReLU(∂Y/∂A_k(i,j)) · A_k(i,j))` for a K×H×B activation and its
/// gradient.
pub fn layercam_from(acts: &Tensor, grads: &Tensor) -> Result<Vec<f64>> {
    let (k, hw) = check_pair(acts, grads)?;
    let (a, g) = (acts.data(), grads.data());
    let mut map = vec![0.0; hw];
    for c in 0..k {
        for (p, m) in map.iter_mut().enumerate() {
            let idx = c * hw + p;
            *m += g[idx].max(0.0) * a[idx];
        }
    }
    map.iter_mut().for_each(|m| *m = m.max(0.0));
    Ok(map)
}

/// `ReLU(Σ_k mean_ij(∂Y/∂A_k) · A_k(i,j))`.
pub fn gradcam_from(acts: &Tensor, grads: &Tensor) -> Result<Vec<f64>> {
    let (k, hw) = check_pair(acts, grads)?;
    let (a, g) = (acts.data(), grads.data());
    let mut map = vec![0.0; hw];
    for c in 0..k {
        let w = g[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64;
        for (p, m) in map.iter_mut().enumerate() {
            *m += w * a[c * hw + p];
        }
    }
    map.iter_mut().for_each(|m| *m = m.max(0.0));
    Ok(map)
}

/// Feature map of the last convolution and the gradient of the pre-softmax
/// score of `class` with respect to it.
pub fn class_score_gradients(
    arch: &ClassifierArch,
    params: &ModelParams,
    image: &Tensor,
    class: usize,
) -> Result<(Tensor, Tensor)> {
    arch.seq().check_params(params)?;
    if class >= arch.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "target class {class} out of {} classes",
            arch.num_classes()
        )));
    }
    let mut acts = arch.seq().forward(params.values(), image)?;
    let mut seed = Tensor::zeros(vec![arch.num_classes()]);
    seed.data_mut()[class] = 1.0;
    let mut scratch = vec![0.0; params.len()];
    let mut grads = arch
        .seq()
        .backward_into(params.values(), &acts, &seed, &mut scratch)?;
    let idx = arch.feature_index();
    Ok((acts.swap_remove(idx), grads.swap_remove(idx)))
}

pub fn cam_map(
    kind: CamKind,
    arch: &ClassifierArch,
    params: &ModelParams,
    probe: &ProbeImage,
) -> Result<HeatMap> {
    let (acts, grads) = class_score_gradients(arch, params, &probe.image, probe.class)?;
    let values = match kind {
        CamKind::LayerCam => layercam_from(&acts, &grads)?,
        CamKind::GradCam => gradcam_from(&acts, &grads)?,
    };
    let s = acts.shape();
    Ok(HeatMap {
        values,
        height: s[1],
        width: s[2],
        client: 0,
        round: 0,
        target_class: probe.class,
    })
}

pub fn layercam_map(
    arch: &ClassifierArch,
    params: &ModelParams,
    probe: &ProbeImage,
) -> Result<HeatMap> {
    cam_map(CamKind::LayerCam, arch, params, probe)
}

pub fn gradcam_map(
    arch: &ClassifierArch,
    params: &ModelParams,
    probe: &ProbeImage,
) -> Result<HeatMap> {
    cam_map(CamKind::GradCam, arch, params, probe)
}

/// Scale to [0, 1]; constant input maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}

/// One min-max normalised, row-major flattened map per client.
pub fn flatten_maps(maps: &[HeatMap]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = maps.first() else {
        return Ok(Vec::new());
    };
    let dims = [first.height, first.width];
    maps.iter()
        .map(|m| {
            if [m.height, m.width] != dims || m.values.len() != m.height * m.width {
                return Err(Error::Shape {
                    expected: dims.to_vec(),
                    actual: vec![m.height, m.width],
                });
            }
            Ok(min_max_normalize(&m.values))
        })
        .collect()
}

/// Inverse of flattening one row.
pub fn reshape_row(row: &[f64], height: usize, width: usize) -> Result<Vec<Vec<f64>>> {
    if row.len() != height * width {
        return Err(Error::Alignment {
            what: "heat-map row",
            expected: height * width,
            actual: row.len(),
        });
    }
    Ok(row.chunks(width).map(<[f64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn negative_gradients_kill_layercam() {
        let a = t(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.5, 0.5, 0.5]);
        let g = t(
            vec![2, 2, 2],
            vec![-1.0, 0.0, -0.3, -2.0, -1.0, -1.0, 0.0, -5.0],
        );
        assert_eq!(layercam_from(&a, &g).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn unit_gradient_returns_activation() {
        let a = t(vec![1, 2, 2], vec![0.0, 1.5, 2.0, 0.25]);
        let g = t(vec![1, 2, 2], vec![1.0; 4]);
        assert_eq!(layercam_from(&a, &g).unwrap(), a.data());
        let neg = t(vec![1, 2, 2], vec![-1.0, 1.5, 2.0, -0.25]);
        assert_eq!(gradcam_from(&neg, &g).unwrap(), vec![0.0, 1.5, 2.0, 0.0]);
    }

    #[test]
    fn uniform_gradients_make_cams_coincide() {
        let a = t(vec![2, 1, 3], vec![0.2, -0.4, 1.0, 0.7, 0.1, -0.3]);
        let g = t(vec![2, 1, 3], vec![0.5, 0.5, 0.5, 0.25, 0.25, 0.25]);
        assert_eq!(
            layercam_from(&a, &g).unwrap(),
            gradcam_from(&a, &g).unwrap()
        );
    }

    #[test]
    fn min_max_rows() {
        let m = HeatMap {
            values: vec![1.0, 2.0, 3.0, 4.0],
            height: 2,
            width: 2,
            client: 0,
            round: 1,
            target_class: 0,
        };
        let mut flat = m.clone();
        flat.values = vec![7.0; 4];
        let rows = flatten_maps(&[m, flat]).unwrap();
        assert_eq!(rows[0], vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(rows[1], vec![0.0; 4]);
        let back = reshape_row(&rows[0], 2, 2).unwrap();
        assert_eq!(back, vec![vec![0.0, 1.0 / 3.0], vec![2.0 / 3.0, 1.0]]);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let a = HeatMap {
            values: vec![0.0; 4],
            height: 2,
            width: 2,
            client: 0,
            round: 0,
            target_class: 0,
        };
        let b = HeatMap {
            values: vec![0.0; 6],
            height: 2,
            width: 3,
            ..a.clone()
        };
        assert!(matches!(flatten_maps(&[a, b]), Err(Error::Shape { .. })));
    }

    #[test]
    fn pgm_header_and_payload() {
        let m = HeatMap {
            values: vec![0.0, 1.0, 2.0, 4.0],
            height: 2,
            width: 2,
            client: 3,
            round: 1,
            target_class: 0,
        };
        let mut buf = Vec::new();
        m.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&buf[buf.len() - 4..], &[0, 64, 128, 255]);
    }
}
