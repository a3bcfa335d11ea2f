//! Hot-path benchmarks at the reference problem size (n = 16, L = 500):
//! attention forwards, the training gradient over one 80-prompt batch,
//! energy descent, posterior-mean baselines, and prompt sampling.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use denoise_core::attention::{forward_linear, forward_softmax, grad_mse, ideal_weights};
use denoise_core::baselines::{self, BaselineKind};
use denoise_core::energy::{descend, EnergyModel};
use denoise_core::numerics::bessel_ratio;
use denoise_core::tasks::{sample_dataset_with_tasks, sample_prompt, sample_task, TaskSpec};
use denoise_core::{AttentionKind, Prompt, RngStream, TaskInstance};

fn case1() -> TaskSpec {
    TaskSpec::linear_subspace(16, 8, 2.0, 1.0)
}

fn case2() -> TaskSpec {
    TaskSpec::sphere(16, 8, 1.0, 0.1)
}

fn dataset(spec: &TaskSpec, count: usize, seed: u64) -> Vec<(TaskInstance, Prompt)> {
    sample_dataset_with_tasks(spec, count, 500, RngStream::new(seed)).unwrap()
}

fn bench_forward(c: &mut Criterion) {
    let spec1 = case1();
    let spec2 = case2();
    let (_, p1) = &dataset(&spec1, 1, 1)[0];
    let (_, p2) = &dataset(&spec2, 1, 2)[0];
    let linear = ideal_weights(&spec1, AttentionKind::Linear).unwrap();
    let softmax = ideal_weights(&spec2, AttentionKind::Softmax).unwrap();

    c.bench_function("forward_linear_n16_L500", |b| {
        b.iter(|| forward_linear(black_box(&linear), black_box(p1)).unwrap())
    });
    c.bench_function("forward_softmax_n16_L500", |b| {
        b.iter(|| forward_softmax(black_box(&softmax), black_box(p2)).unwrap())
    });
}

fn bench_gradient(c: &mut Criterion) {
    let spec = case1();
    let pairs = dataset(&spec, 80, 3);
    let prompts: Vec<&Prompt> = pairs.iter().map(|(_, p)| p).collect();
    let linear = ideal_weights(&spec, AttentionKind::Linear).unwrap();
    let softmax = ideal_weights(&case2(), AttentionKind::Softmax).unwrap();
    let pairs2 = dataset(&case2(), 80, 4);
    let prompts2: Vec<&Prompt> = pairs2.iter().map(|(_, p)| p).collect();

    let mut g = c.benchmark_group("grad_mse_batch80_n16_L500");
    g.sample_size(30);
    g.bench_function("linear", |b| {
        b.iter(|| grad_mse(black_box(&linear), black_box(&prompts)).unwrap())
    });
    g.bench_function("softmax", |b| {
        b.iter(|| grad_mse(black_box(&softmax), black_box(&prompts2)).unwrap())
    });
    g.finish();
}

fn bench_energy(c: &mut Criterion) {
    let spec = TaskSpec::sphere(2, 1, 1.0, 10.0);
    let task = sample_task(&spec, RngStream::new(6)).unwrap();
    let prompt = sample_prompt(&task, 20, RngStream::new(7)).unwrap();
    let model = EnergyModel::log_sum_exp(prompt.context.clone(), 1.0, 0.1).unwrap();
    c.bench_function("descend_20_steps_n2_L20", |b| {
        b.iter(|| descend(black_box(&model), prompt.query.view(), 1.0, 20).unwrap())
    });
}

fn bench_baselines(c: &mut Criterion) {
    let spec = case2();
    let (task, prompt) = dataset(&spec, 1, 8).into_iter().next().unwrap();
    c.bench_function("bayes_sphere_predict_n16_L500", |b| {
        b.iter(|| baselines::predict(BaselineKind::BayesSphere, black_box(&task), black_box(&prompt)).unwrap())
    });
    c.bench_function("bessel_ratio", |b| {
        b.iter(|| bessel_ratio(black_box(3.5), black_box(7.0)).unwrap())
    });
}

fn bench_sampling(c: &mut Criterion) {
    let spec = case1();
    let task = sample_task(&spec, RngStream::new(9)).unwrap();
    c.bench_function("sample_prompt_n16_L500", |b| {
        b.iter(|| sample_prompt(black_box(&task), 500, RngStream::new(10)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_forward,
    bench_gradient,
    bench_energy,
    bench_baselines,
    bench_sampling
);
criterion_main!(benches);
