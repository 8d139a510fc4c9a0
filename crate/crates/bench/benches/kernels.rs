use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use lowrank_core::autograd::{conv2d_forward, conv2d_grad_weight_exact, conv2d_grad_weight_hosvd};
use lowrank_core::{hosvd_compress, svd, ConvSpec, ConvWeights, Matrix, Tensor4};

fn tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
    Tensor4::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

/// Low-rank-plus-noise activation, closer to what trained layers produce
/// than i.i.d. noise.
fn activation(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
    let [b, c, h, w] = dims;
    let pb: Vec<f64> = (0..b).map(|_| rng.random_range(0.5..1.5)).collect();
    let pc: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ph: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pw: Vec<f64> = (0..w).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor4::from_fn(dims, |[i, j, k, l]| pb[i] * pc[j] * ph[k] * pw[l] + 0.05 * rng.random_range(-1.0..1.0))
}

fn bench_svd(c: &mut Criterion) {
    let mut group = c.benchmark_group("svd");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (m, n) in [(16, 256), (32, 512), (64, 64)] {
        let a = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        group.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{n}")), &a, |b, a| {
            b.iter(|| svd(black_box(a)).unwrap())
        });
    }
    group.finish();
}

fn bench_hosvd(c: &mut Criterion) {
    let mut group = c.benchmark_group("hosvd");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for dims in [[16, 8, 16, 16], [32, 16, 8, 8]] {
        let x = activation(&mut rng, dims);
        for eps in [0.8, 0.9] {
            let id = format!("{dims:?}/eps={eps}");
            group.bench_with_input(BenchmarkId::from_parameter(id), &x, |b, x| {
                b.iter(|| hosvd_compress(black_box(x), eps).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_grad_weight(c: &mut Criterion) {
    let mut group = c.benchmark_group("grad_weight");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [32, 16, 16, 16];
    let spec = ConvSpec::new(3, 1, 1, 1, 1).unwrap();
    let x = activation(&mut rng, dims);
    let w = ConvWeights::new(tensor(&mut rng, [16, 16, 3, 3])).unwrap();
    let y = conv2d_forward(&x, &w, &spec).unwrap();
    let gy = tensor(&mut rng, y.dims());
    group.bench_function("exact", |b| b.iter(|| conv2d_grad_weight_exact(black_box(&x), &gy, &spec).unwrap()));
    for eps in [0.8, 0.9] {
        let compressed = hosvd_compress(&x, eps).unwrap();
        group.bench_function(format!("hosvd/eps={eps}"), |b| {
            b.iter(|| conv2d_grad_weight_hosvd(black_box(&compressed), &gy, &spec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_svd, bench_hosvd, bench_grad_weight);
criterion_main!(benches);
