//! Forward-pass throughput: baseline vs class-regularized network, blocked vs
//! reference convolution, and 1 thread vs all threads (rayon builds only).

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use classreg::layers::{conv3d_forward, conv3d_forward_reference, Conv3d};
use classreg::rng::SplitMix64;
use classreg::synth::{make_split, ClipSpec};
use classreg::{Network, NetworkSpec};

fn spec() -> NetworkSpec {
    let d = ClipSpec::default();
    NetworkSpec {
        input: d.geometry(),
        classes: d.classes,
        layers: NetworkSpec::default_layers(),
        classreg: NetworkSpec::default_classreg(),
    }
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let all = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut counts = vec![1];
    if all > 1 {
        counts.push(all);
    }
    counts
        .into_iter()
        .map(|n| (format!("{n}t"), rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()))
        .collect()
}

#[cfg(feature = "parallel")]
fn run_in<R: Send>(pool: &rayon::ThreadPool, f: impl FnOnce() -> R + Send) -> R {
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn pools() -> Vec<(String, ())> {
    vec![("seq".into(), ())]
}

#[cfg(not(feature = "parallel"))]
fn run_in<R>(_: &(), f: impl FnOnce() -> R) -> R {
    f()
}

fn network_forward(c: &mut Criterion) {
    let (train, _) = make_split(&ClipSpec::default(), 16, 1).unwrap();
    let (batch, _) = train.batch(&(0..16).collect::<Vec<_>>()).unwrap();
    let mut group = c.benchmark_group("network_forward_b16");
    for (label, pool) in pools() {
        for (arm, s) in [("baseline", spec().without_classreg()), ("classreg", spec())] {
            let mut net = Network::new(&s, 0).unwrap();
            group.bench_function(BenchmarkId::new(arm, &label), |b| {
                b.iter(|| run_in(&pool, || black_box(net.forward(&batch).unwrap())))
            });
        }
    }
    group.finish();
}

fn conv_kernels(c: &mut Criterion) {
    let mut rng = SplitMix64::new(1);
    let mut conv = Conv3d::new(8, 16, [3, 3, 3], [1, 1, 1], [1, 1, 1]).unwrap();
    conv.init_kaiming(&mut rng);
    let x = classreg::Tensor::from_vec(&[4, 8, 4, 8, 8], (0..4 * 8 * 256).map(|_| rng.normal()).collect()).unwrap();
    let mut group = c.benchmark_group("conv3d_8to16_k3");
    group.bench_function("reference", |b| b.iter(|| black_box(conv3d_forward_reference(&conv, &x).unwrap())));
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("blocked", &label), |b| {
            b.iter(|| run_in(&pool, || black_box(conv3d_forward(&conv, &x).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, network_forward, conv_kernels);
criterion_main!(benches);
