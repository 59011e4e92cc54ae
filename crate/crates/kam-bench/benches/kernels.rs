//! Benchmarks of the four kernels the solver spends its time in: matrix
//! series products, small-divisor cohomology solves, one quasi-Newton
//! correction, and the splitting-closing graph transform.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;

use kam_core::cocycle::{close_splitting, TrichotomySplitting};
use kam_core::newton::{map_cocycle, newton_step, solve_cohomology};
use kam_core::{ConformalMapFamily, FourierSeries, ModelConfig, SolverConfig, TorusEmbedding};

fn benchmark_family(eps: f64) -> ConformalMapFamily {
    ConformalMapFamily::standard_4d(&ModelConfig::default()).with_eps(Complex64::new(eps, 0.0))
}

fn coordinate_seed(fam: &ConformalMapFamily, n_modes: usize) -> TrichotomySplitting {
    TrichotomySplitting::coordinate(&fam.coordinate_splitting_basis(), fam.splitting_dims(), n_modes)
        .unwrap()
}

/// Deterministic full-band 1 x 1 series with unit coefficients decaying as
/// 1/(1+|k|), Hermitian so the real flag is honest.
fn dense_rhs(n_modes: usize) -> FourierSeries {
    let mut eta = FourierSeries::zeros(1, 1, n_modes);
    let one = nalgebra::DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
    eta.set_coeff(0, &one);
    for k in 1..=n_modes as i64 {
        let c = Complex64::new(1.0 / (1.0 + k as f64), 0.3 / (1.0 + k as f64));
        eta.set_coeff(k, &nalgebra::DMatrix::from_element(1, 1, c));
        eta.set_coeff(-k, &nalgebra::DMatrix::from_element(1, 1, c.conj()));
    }
    eta
}

fn bench_series_product(c: &mut Criterion) {
    let mut group = c.benchmark_group("series_product_4x4");
    for &n_modes in &[32usize, 128, 256] {
        let fam = benchmark_family(0.05);
        let k = TorusEmbedding::flat(&fam, n_modes, 0.005);
        let cocycle = map_cocycle(&fam, &k).unwrap();
        let m = cocycle.generator();
        group.bench_with_input(BenchmarkId::from_parameter(n_modes), &n_modes, |b, _| {
            b.iter(|| m.product(m).unwrap())
        });
    }
    group.finish();
}

fn bench_cohomology(c: &mut Criterion) {
    let mut group = c.benchmark_group("cohomology_solve");
    let omega = ModelConfig::default().omega;
    for &n_modes in &[256usize, 1024] {
        let eta = dense_rhs(n_modes);
        group.bench_with_input(BenchmarkId::from_parameter(n_modes), &n_modes, |b, _| {
            b.iter(|| solve_cohomology(&eta, Complex64::new(0.9, 0.0), omega).unwrap())
        });
    }
    group.finish();
}

fn bench_newton_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("newton_step");
    group.sample_size(10);
    for &n_modes in &[32usize, 128] {
        let fam = benchmark_family(0.02);
        let k = TorusEmbedding::flat(&fam, n_modes, 0.005);
        let cocycle = map_cocycle(&fam, &k).unwrap();
        let seed = coordinate_seed(&fam, n_modes);
        let (splitting, _) = close_splitting(&cocycle, &seed, k.rho, 1e-9, 200).unwrap();
        let cfg = SolverConfig {
            n_modes,
            ..SolverConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(n_modes), &n_modes, |b, _| {
            b.iter(|| newton_step(&fam, &k, &splitting, 3e-4, &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_close_splitting(c: &mut Criterion) {
    let mut group = c.benchmark_group("close_splitting");
    group.sample_size(10);
    for &n_modes in &[32usize, 128] {
        let fam = benchmark_family(0.02);
        let k = TorusEmbedding::flat(&fam, n_modes, 0.005);
        let cocycle = map_cocycle(&fam, &k).unwrap();
        let seed = coordinate_seed(&fam, n_modes);
        group.bench_with_input(BenchmarkId::from_parameter(n_modes), &n_modes, |b, _| {
            b.iter(|| close_splitting(&cocycle, &seed, k.rho, 1e-11, 200).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    kernels,
    bench_series_product,
    bench_cohomology,
    bench_newton_step,
    bench_close_splitting
);
criterion_main!(kernels);
