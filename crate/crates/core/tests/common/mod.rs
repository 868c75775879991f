//! Independent numerical oracles shared by the integration targets.
#![allow(dead_code)]

use camguard::cam::{class_score_gradients, gradcam_map, layercam_map, ProbeImage};
use camguard::nn::{param_count, Sequential};
use camguard::seeding;
use camguard::{ClassifierArch, LayerSpec, ModelParams, Tensor};
use rand::Rng;

pub fn random_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let l2 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = l2(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = l2(&mut a.iter().copied()).max(l2(&mut b.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Small nets that between them contain every layer kind.
pub fn grad_check_nets() -> Vec<(Vec<LayerSpec>, Vec<usize>)> {
    vec![
        (
            vec![
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::Conv2d {
                    in_channels: 3,
                    out_channels: 4,
                    kernel: 2,
                },
                LayerSpec::Sigmoid,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 3,
                },
            ],
            vec![2, 7, 6],
        ),
        (
            vec![
                LayerSpec::Dense {
                    inputs: 5,
                    outputs: 6,
                },
                LayerSpec::Sigmoid,
                LayerSpec::Dense {
                    inputs: 6,
                    outputs: 4,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 2,
                },
            ],
            vec![5],
        ),
    ]
}

/// `Σ c_i · out_i` for fixed `c`.
fn linear_loss(seq: &Sequential, params: &[f64], x: &Tensor, c: &[f64]) -> f64 {
    let acts = seq.forward(params, x).unwrap();
    acts.last()
        .unwrap()
        .data()
        .iter()
        .zip(c)
        .map(|(o, w)| o * w)
        .sum()
}

/// Relative error of backprop against central differences for every
/// parameterised layer and the input, labelled for diagnostics.
pub fn backward_fd_errors(
    specs: &[LayerSpec],
    input_shape: &[usize],
    seed: u64,
) -> Vec<(String, f64)> {
    const H: f64 = 1e-5;
    let seq = Sequential::new(specs.to_vec(), input_shape.to_vec()).unwrap();
    let mut rng = seeding::rng(1000 + seed);
    let params = ModelParams::init(specs.to_vec(), &mut rng);
    let x = random_tensor(input_shape.to_vec(), &mut rng);
    let out_len: usize = seq.output_shape().iter().product();
    let c: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();

    let acts = seq.forward(params.values(), &x).unwrap();
    let mut analytic = vec![0.0; params.len()];
    let input_grads = seq
        .backward_into(
            params.values(),
            &acts,
            &Tensor::new(seq.output_shape().to_vec(), c.clone()).unwrap(),
            &mut analytic,
        )
        .unwrap();

    let mut p = params.values().to_vec();
    let numeric: Vec<f64> = (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + H;
            let up = linear_loss(&seq, &p, &x, &c);
            p[i] = orig - H;
            let down = linear_loss(&seq, &p, &x, &c);
            p[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect();

    let mut out = Vec::new();
    let mut offset = 0;
    for (li, spec) in specs.iter().enumerate() {
        let n = spec.param_count();
        if n > 0 {
            let e = rel_err(&analytic[offset..offset + n], &numeric[offset..offset + n]);
            out.push((format!("layer {li} {spec:?}"), e));
        }
        offset += n;
    }

    let mut xin = x.clone();
    let numeric_in: Vec<f64> = (0..x.len())
        .map(|i| {
            let orig = xin.data()[i];
            xin.data_mut()[i] = orig + H;
            let up = linear_loss(&seq, params.values(), &xin, &c);
            xin.data_mut()[i] = orig - H;
            let down = linear_loss(&seq, params.values(), &xin, &c);
            xin.data_mut()[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect();
    out.push(("input".into(), rel_err(input_grads[0].data(), &numeric_in)));
    out
}

/// Runs the layers after the feature map on a (perturbed) feature map and
/// returns the class score.
fn tail_score(arch: &ClassifierArch, params: &ModelParams, feature: &Tensor, class: usize) -> f64 {
    let split = arch.feature_index();
    let specs = arch.specs();
    let offset = param_count(&specs[..split]);
    let tail = Sequential::new(specs[split..].to_vec(), feature.shape().to_vec()).unwrap();
    let acts = tail.forward(&params.values()[offset..], feature).unwrap();
    acts.last().unwrap().data()[class]
}

/// Class-score gradient w.r.t. the feature map by perturbing each activation.
fn perturbation_gradient(
    arch: &ClassifierArch,
    params: &ModelParams,
    feature: &Tensor,
    class: usize,
) -> Vec<f64> {
    const H: f64 = 1e-6;
    let mut f = feature.clone();
    (0..f.len())
        .map(|i| {
            let orig = f.data()[i];
            f.data_mut()[i] = orig + H;
            let up = tail_score(arch, params, &f, class);
            f.data_mut()[i] = orig - H;
            let down = tail_score(arch, params, &f, class);
            f.data_mut()[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub struct CamOracleErrors {
    pub feature_gradient: f64,
    pub layercam: f64,
    pub gradcam: f64,
}

/// Compares the CAM maps of a seeded desk net against maps rebuilt from
/// perturbation gradients.
pub fn cam_oracle_errors(seed: u64) -> CamOracleErrors {
    let arch = ClassifierArch::desk(1, 16, 10).unwrap();
    let mut rng = seeding::rng(77 + seed);
    let params = arch.init_params(seed);
    let probe = ProbeImage {
        image: random_tensor(vec![1, 16, 16], &mut rng),
        class: rng.random_range(0..10),
    };
    let (acts, grads) = class_score_gradients(&arch, &params, &probe.image, probe.class).unwrap();
    let numeric = perturbation_gradient(&arch, &params, &acts, probe.class);

    let (k, hw) = (acts.shape()[0], acts.shape()[1] * acts.shape()[2]);
    let a = acts.data();
    let mut layer = vec![0.0; hw];
    let mut grad = vec![0.0; hw];
    for c in 0..k {
        let pooled: f64 = numeric[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64;
        for p in 0..hw {
            layer[p] += numeric[c * hw + p].max(0.0) * a[c * hw + p];
            grad[p] += pooled * a[c * hw + p];
        }
    }
    layer
        .iter_mut()
        .chain(grad.iter_mut())
        .for_each(|v| *v = v.max(0.0));

    CamOracleErrors {
        feature_gradient: rel_err(grads.data(), &numeric),
        layercam: rel_err(
            &layercam_map(&arch, &params, &probe).unwrap().values,
            &layer,
        ),
        gradcam: rel_err(&gradcam_map(&arch, &params, &probe).unwrap().values, &grad),
    }
}
