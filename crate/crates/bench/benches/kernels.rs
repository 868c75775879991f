use std::hint::black_box;

use camguard::autoencoder::{train_ae, AeConfig};
use camguard::baselines::multi_krum;
use camguard::cam::{layercam_map, ProbeImage};
use camguard::data::{class_template, SIDE};
use camguard::{ClassifierArch, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk() -> ClassifierArch {
    ClassifierArch::desk(1, SIDE, 10).unwrap()
}

fn conv_net(c: &mut Criterion) {
    let arch = desk();
    let params = arch.init_params(7);
    let image = class_template(3);
    c.bench_function("forward", |b| {
        b.iter(|| {
            arch.seq()
                .forward(params.values(), black_box(&image))
                .unwrap()
        })
    });
    let acts = arch.seq().forward(params.values(), &image).unwrap();
    let seed = Tensor::from_vec(vec![0.1; 10]);
    let mut grad = vec![0.0; params.len()];
    c.bench_function("backward", |b| {
        b.iter(|| {
            arch.seq()
                .backward_into(params.values(), black_box(&acts), &seed, &mut grad)
                .unwrap()
        })
    });
    let probe = ProbeImage { image, class: 3 };
    c.bench_function("layercam_map", |b| {
        b.iter(|| layercam_map(&arch, black_box(&params), &probe).unwrap())
    });
}

fn detector(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..24)
        .map(|_| (0..144).map(|_| rng.random::<f64>()).collect())
        .collect();
    let cfg = AeConfig {
        epochs: 20,
        ..AeConfig::default()
    };
    c.bench_function("ae_train_20_epochs", |b| {
        b.iter(|| train_ae(black_box(&rows), &cfg, 3).unwrap())
    });

    let uploads: Vec<Vec<f64>> = (0..24)
        .map(|_| (0..1418).map(|_| rng.random::<f64>()).collect())
        .collect();
    c.bench_function("multi_krum_24x1418", |b| {
        b.iter(|| multi_krum(black_box(&uploads), 3, 21).unwrap())
    });
}

criterion_group!(benches, conv_net, detector);
criterion_main!(benches);
