use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use swreg_bench::{labelled_pair, smooth_field};
use swreg_core::atlas::population_diversity;
use swreg_core::loss::weak_supervision_loss_with_grad;
use swreg_core::model::{forward, predict};
use swreg_core::{compose_ddf, resample_volume, ArchConfig, Dims, ModelParams};

fn warping(c: &mut Criterion) {
    let dims = Dims::new(32, 32, 16);
    let pair = labelled_pair(dims);
    let u = smooth_field(dims);
    c.bench_function("resample_volume_32x32x16", |b| {
        b.iter(|| resample_volume(black_box(&pair.moving), black_box(&u)).unwrap())
    });
    c.bench_function("compose_ddf_32x32x16", |b| {
        b.iter(|| compose_ddf(black_box(&u), black_box(&u)).unwrap())
    });
    let fields: Vec<_> = (0..5)
        .map(|k| {
            let mut f = u.clone();
            f.data_mut()
                .iter_mut()
                .for_each(|v| *v *= 1.0 + 0.1 * k as f64);
            f
        })
        .collect();
    c.bench_function("population_diversity_n5", |b| {
        b.iter(|| population_diversity(black_box(&fields)).unwrap())
    });
}

fn registrar(c: &mut Criterion) {
    let dims = Dims::new(32, 32, 16);
    let pair = labelled_pair(dims);
    let mut params = ModelParams::init(ArchConfig::for_grid(dims, 2).unwrap(), 0).unwrap();
    for v in params.block_mut("head.weight").unwrap() {
        *v = 0.05;
    }
    c.bench_function("predict_32x32x16", |b| {
        b.iter(|| predict(black_box(&params), &pair.moving, &pair.fixed).unwrap())
    });
    let (mm, fm) = (
        pair.moving_masks.as_ref().unwrap(),
        pair.fixed_masks.as_ref().unwrap(),
    );
    c.bench_function("weak_step_32x32x16", |b| {
        b.iter(|| {
            let mut f = forward(&params, &pair).unwrap();
            let (_, du) = weak_supervision_loss_with_grad(mm, fm, &f.ddf).unwrap();
            f.backward(&params, &du).unwrap()
        })
    });
}

criterion_group!(benches, warping, registrar);
criterion_main!(benches);
