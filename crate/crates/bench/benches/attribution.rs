use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::{Array1, Array2};
use trq_bench::random_mlp;
use trq_core::explainer::{exact_shapley, gradient_shap, ExplainConfig, LinearModel};
use trq_core::filters::{
    apply_shap_crop, apply_shap_noise, standardize_shap, CropConfig, GlobalShapVector, NoiseConfig,
};

fn classifier(c: &mut Criterion) {
    let mut group = c.benchmark_group("classifier");
    for width in [128usize, 512] {
        let dims = [80, width, width / 2, width / 4, 20];
        let (params, x) = random_mlp(dims, 256, 1);
        group.bench_with_input(BenchmarkId::new("forward_256", width), &width, |b, _| {
            b.iter(|| params.forward_batch(black_box(x.view())).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("gradient_256", width), &width, |b, _| {
            b.iter(|| params.input_gradient_batch(black_box(x.view()), 3).unwrap())
        });
    }
    group.finish();
}

fn explainer(c: &mut Criterion) {
    let mut group = c.benchmark_group("explainer");
    group.sample_size(10);
    let (params, x) = random_mlp([80, 512, 256, 128, 20], 16, 2);
    let baselines = x.clone();
    let classes: Vec<usize> = (0..x.nrows()).map(|i| i % 20).collect();
    let config = ExplainConfig {
        n_path_samples: 200,
        ..ExplainConfig::default()
    };
    group.bench_function("gradient_shap_16rows_200paths", |b| {
        b.iter(|| gradient_shap(&params, x.view(), &classes, baselines.view(), &config).unwrap())
    });

    let p = 12;
    let model = LinearModel {
        weights: Array1::from_shape_fn(p, |j| j as f64 - 5.5),
        bias: 0.3,
    };
    let xs: Vec<f64> = (0..p).map(|j| (j as f64).sin()).collect();
    let base = vec![0.0; p];
    group.bench_function("exact_shapley_p12", |b| {
        b.iter(|| exact_shapley(|z| model.eval(ndarray::ArrayView1::from(z)), black_box(&xs), &base).unwrap())
    });
    group.finish();
}

fn filters(c: &mut Criterion) {
    let mut group = c.benchmark_group("filters");
    let d_c = 1024;
    let content = Array2::from_shape_fn((300, d_c), |(f, j)| ((f * 7 + j) % 13) as f32 / 13.0);
    let shap = GlobalShapVector {
        values: Array1::from_shape_fn(d_c, |j| ((j * 37) % 101) as f64 / 101.0 - 0.4),
        source: "bench".into(),
    };
    let n_shap = standardize_shap(&shap).unwrap();
    let noise = NoiseConfig {
        sigma_scale: -1.0,
        mu_offset: 0.0,
    };
    let crop = CropConfig {
        ratio_r: 0.2,
        w_cut: 10.0,
    };
    group.bench_function("noise_300x1024", |b| {
        b.iter(|| apply_shap_noise(black_box(content.view()), n_shap.view(), &noise).unwrap())
    });
    group.bench_function("crop_300x1024", |b| {
        b.iter(|| apply_shap_crop(black_box(content.view()), &shap, &crop).unwrap())
    });
    group.finish();
}

criterion_group!(benches, classifier, explainer, filters);
criterion_main!(benches);
