use criterion::{black_box, criterion_group, criterion_main, Criterion};

use tvws_bench::{params, price_points, quick_bargaining, schemes, sensing};
use tvws_market::bargaining::solve_bargaining;
use tvws_market::benchmarks::sensing_market_equilibrium;
use tvws_market::competition::solve_stage2;
use tvws_market::dynamics::{solve_equilibrium, uniqueness_certificate};
use tvws_market::validation::{monte_carlo_utilities, InterferenceModel};
use tvws_market::{SchemeKind, Stage2Options};

fn stage3(c: &mut Criterion) {
    let p = params();
    let prices = price_points();
    c.bench_function("solve_equilibrium", |b| {
        b.iter(|| {
            for pr in &prices {
                black_box(solve_equilibrium(pr, &p, 1e-12).unwrap());
            }
        })
    });
    c.bench_function("uniqueness_certificate_0.01", |b| {
        b.iter(|| black_box(uniqueness_certificate(&prices[0], &p, 0.01).unwrap()))
    });
}

fn stage2(c: &mut Criterion) {
    let p = params();
    let opts = Stage2Options::default();
    for scheme in schemes() {
        c.bench_function(&format!("solve_stage2 {}", scheme.kind().label()), |b| {
            b.iter(|| black_box(solve_stage2(&scheme, &p, &opts).unwrap()))
        });
    }
}

fn stage1(c: &mut Criterion) {
    let p = params();
    let opts = quick_bargaining();
    let mut group = c.benchmark_group("bargaining");
    group.sample_size(10);
    group.bench_function("rss", |b| {
        b.iter(|| black_box(solve_bargaining(SchemeKind::RevenueShare, &p, &opts).unwrap()))
    });
    group.bench_function("sensing_rss", |b| {
        b.iter(|| black_box(sensing_market_equilibrium(&p, &sensing(), SchemeKind::RevenueShare, &opts).unwrap()))
    });
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let model = InterferenceModel {
        samples: 100_000,
        ..InterferenceModel::default()
    };
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    group.bench_function("utilities_1e5", |b| b.iter(|| black_box(monte_carlo_utilities(&model, 0.3, 0.3).unwrap())));
    group.finish();
}

criterion_group!(benches, stage3, stage2, stage1, monte_carlo);
criterion_main!(benches);
