use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snapslam::baseline::{grid_search, TrialGrid};
use snapslam::engine::{filter_weighted, Factor, FilterSettings, Incoming, Variable};
use snapslam::particles::{resample, Kde, Proposal, ProposalRegion};
use snapslam::*;

fn observations() -> (Scenario, Observations) {
    let sc = Scenario::benchmark();
    let noise = NoiseSpec::uniform(3, 0.2, 1f64.to_radians(), 1f64.to_radians()).unwrap();
    let obs = sample_observations(&sc, &noise, 1).unwrap();
    (sc, obs)
}

fn particles(c: &mut Criterion) {
    let region = ProposalRegion::disk(Point2::ORIGIN, 50.0).unwrap();
    let ps = snapslam::particles::sample_proposal(&region, 2000, 1).unwrap();
    c.bench_function("resample_2000", |b| b.iter(|| resample(black_box(&ps), 7)));
    let kde = Kde::new(ps.clone(), 1.0).unwrap();
    let xs: Vec<f64> = ps.samples().to_vec();
    let mut out = vec![0.0; ps.len()];
    c.bench_function("kde_2000x2000", |b| b.iter(|| kde.density_many(black_box(&xs), &mut out)));
}

fn filtering(c: &mut Criterion) {
    let (sc, obs) = observations();
    let region = ProposalRegion::disk(Point2::ORIGIN, obs.max_distance()).unwrap();
    let p = snapslam::particles::sample_proposal(&region, 2000, 2).unwrap();
    let incoming = [Incoming::new(Variable::Position, p, 1.0)];
    let proposal = Proposal::Region(ProposalRegion::disk(Point2::ORIGIN, obs.triplets[0].d).unwrap());
    let mut group = c.benchmark_group("filter_distance_to_s");
    for m in [128, 512] {
        let settings = FilterSettings::new(2000, m);
        group.bench_with_input(BenchmarkId::from_parameter(m), &settings, |b, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            b.iter(|| {
                filter_weighted(Factor::distance(0), Variable::Incidence(0), &incoming, &obs, sc.base_station, &proposal, s, &mut rng)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn end_to_end(c: &mut Criterion) {
    let (sc, obs) = observations();
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    for n in [250, 1000] {
        let cfg = EngineConfig {
            n_iterations: 2,
            ..EngineConfig::with_particles(n)
        };
        group.bench_with_input(BenchmarkId::from_parameter(n), &cfg, |b, cfg| {
            b.iter(|| run(&obs, sc.base_station, cfg).unwrap())
        });
    }
    group.finish();
    let grid = TrialGrid::default();
    c.bench_function("ls_grid_search", |b| b.iter(|| grid_search(black_box(&obs), sc.base_station, &grid).unwrap()));
}

criterion_group!(benches, particles, filtering, end_to_end);
criterion_main!(benches);
