use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ktboost::harness::SimFunction;
use ktboost::kernels::{fit_kernel_gradient, fit_kernel_newton, GradientKernel, KernelBasis, KernelConfig};
use ktboost::trees::fit_tree;
use ktboost::{fit, BoostConfig, Dataset, KernelParams, Learners, RhoSpec, TreeParams};

fn data(n: usize) -> Dataset {
    SimFunction::new(1).simulate(n, 2).expect("simulated data")
}

/// Squared-loss gradient at the zero score and unit Hessians.
fn grad_hess(d: &Dataset) -> (Vec<f64>, Vec<f64>) {
    (d.targets().iter().map(|y| -y).collect(), vec![1.0; d.n_rows()])
}

fn trees(c: &mut Criterion) {
    let d = data(2000);
    let (g, h) = grad_hess(&d);
    let mut group = c.benchmark_group("tree_fit");
    for depth in [1, 5] {
        let params = TreeParams {
            max_depth: depth,
            min_samples_leaf: 1,
        };
        group.bench_with_input(BenchmarkId::from_parameter(depth), &params, |b, p| {
            b.iter(|| fit_tree(d.features(), black_box(&g), &h, p).unwrap())
        });
    }
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel");
    group.sample_size(20);

    let d = data(500);
    let (g, h) = grad_hess(&d);
    let exact = KernelConfig::exact(0.1, 1.0);
    let cache = GradientKernel::new(KernelBasis::new(d.features(), &exact).unwrap()).unwrap();
    group.bench_function("gradient_cached_500", |b| {
        b.iter(|| fit_kernel_gradient(&cache, black_box(&g)).unwrap())
    });
    group.bench_function("newton_exact_500", |b| {
        b.iter(|| fit_kernel_newton(d.features(), black_box(&g), &h, &exact).unwrap())
    });

    let big = data(5000);
    let (g, h) = grad_hess(&big);
    let nystrom = KernelConfig {
        nystrom_samples: Some(500),
        ..exact
    };
    group.bench_function("newton_nystrom_5000_500", |b| {
        b.iter(|| fit_kernel_newton(big.features(), black_box(&g), &h, &nystrom).unwrap())
    });
    group.finish();
}

fn boosting(c: &mut Criterion) {
    let d = data(1000);
    let mut group = c.benchmark_group("boost_10_iterations");
    group.sample_size(10);
    for learners in [Learners::Tree, Learners::Kernel, Learners::Ktboost] {
        let config = BoostConfig {
            iterations: 10,
            learners,
            kernel: KernelParams {
                rho: RhoSpec::Fixed { rho: 0.1 },
                ..KernelParams::default()
            },
            standardize: false,
            ..BoostConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(learners), &config, |b, cfg| {
            b.iter(|| fit(&d, cfg, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, trees, kernels, boosting);
criterion_main!(benches);
