//! Single-thread versus full-pool timings of the data-parallel kernels.
//! Run with `--no-default-features` for the sequential build.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pzd_core::channel::{ChannelParams, PolarPoint};
use pzd_core::constellation::RingConstellation;
use pzd_core::infomath::{conditional_entropy_ring, expansion_for, mutual_information, GridSpec, QuadratureGrid};
use pzd_core::montecarlo::{sample_outputs, SimConfig};

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, Option<rayon::ThreadPool>)> {
    let mut sizes = vec![1];
    let full = rayon::current_num_threads();
    if full > 1 {
        sizes.push(full);
    }
    sizes
        .into_iter()
        .map(|n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            (format!("{n}-threads"), Some(pool))
        })
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn pools() -> Vec<(String, Option<()>)> {
    vec![("sequential".to_string(), None)]
}

fn kernels(c: &mut Criterion) {
    let p = ChannelParams::default();
    let spec = GridSpec::default();
    let exp = expansion_for(p, 1e-12, 3.0, &spec).unwrap();
    let grid = QuadratureGrid::new(&exp, &spec).unwrap();
    let rings = RingConstellation::new(vec![0.0, 1.5, 3.0], vec![0.3, 0.3, 0.4]).unwrap();
    let sim = SimConfig::new(p, 16_384, 1).unwrap();
    let x0 = PolarPoint::new(1.5, 0.0).unwrap();

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (name, pool) in pools() {
        let run = |f: &mut (dyn FnMut() + Send)| match &pool {
            #[cfg(feature = "parallel")]
            Some(pool) => pool.install(f),
            _ => f(),
        };
        g.bench_function(BenchmarkId::new("conditional_entropy", &name), |b| {
            b.iter(|| run(&mut || {
                conditional_entropy_ring(&exp, 2.0, &grid).unwrap();
            }))
        });
        g.bench_function(BenchmarkId::new("mutual_information", &name), |b| {
            b.iter(|| run(&mut || {
                mutual_information(&exp, &rings, &grid).unwrap();
            }))
        });
        g.bench_function(BenchmarkId::new("simulate_16k", &name), |b| {
            b.iter(|| run(&mut || {
                sample_outputs(&sim, x0).unwrap();
            }))
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
