//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snapslam::engine::{filter_weighted, Factor, FilterSettings, Incoming, Variable};
use snapslam::particles::{effective_sample_size, Proposal, ProposalRegion};
use snapslam::*;

/// Benchmark observations without noise, paired with a noise spec that the
/// engine uses for its likelihoods.
pub fn exact_observations(sc: &Scenario, noise: &NoiseSpec) -> Observations {
    let triplets = (0..sc.n_paths()).map(|j| true_path_parameters(sc, j).unwrap()).collect();
    Observations::new(triplets, noise.clone()).unwrap()
}

pub fn benchmark_noise(sigma_d: f64, sigma_angle: f64) -> NoiseSpec {
    NoiseSpec::uniform(3, sigma_d, sigma_angle, sigma_angle).unwrap()
}

/// Outcome of one bounded check.
#[derive(Debug, Clone)]
pub struct Check {
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(value: f64, bound: f64) -> Self {
        Check {
            value,
            bound,
            pass: value <= bound,
        }
    }
}

fn disk(radius: f64) -> Proposal {
    Proposal::Region(ProposalRegion::disk(Point2::ORIGIN, radius).unwrap())
}

/// One weighted message with near-Dirac conditioning at the truth.
pub fn shape_message(
    factor: Factor,
    target: Variable,
    incoming: &[Incoming],
    obs: &Observations,
    n: usize,
    seed: u64,
) -> ParticleSet {
    let proposal = match target {
        Variable::Orientation => Proposal::Region(ProposalRegion::full_circle()),
        Variable::Incidence(j) => disk(obs.triplets[j].d),
        _ => disk(obs.max_distance()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = FilterSettings::new(n, n.min(512));
    filter_weighted(factor, target, incoming, obs, Point2::ORIGIN, &proposal, &settings, &mut rng).unwrap()
}

fn circular_mean(ps: &ParticleSet, f: impl Fn(usize) -> f64) -> f64 {
    let (mut c, mut s) = (0.0, 0.0);
    for (k, w) in ps.weights().iter().enumerate() {
        c += w * f(k).cos();
        s += w * f(k).sin();
    }
    s.atan2(c)
}

/// AOD(0) -> S(0): weighted circular-mean bearing against `3 sigma / sqrt(N_eff)`.
pub fn aod_cone(obs: &Observations, n: usize, seed: u64) -> Check {
    let ps = shape_message(Factor::aod(0), Variable::Incidence(0), &[], obs, n, seed);
    let bearing = circular_mean(&ps, |k| ps.point(k).y.atan2(ps.point(k).x));
    let err = wrap_angle(bearing - obs.triplets[0].theta_tx).abs();
    Check::at_most(err, 3.0 * obs.noise.paths[0].sigma_tx / effective_sample_size(&ps).sqrt())
}

/// Largest residual among particles carrying weight, for a resampled view.
fn max_residual(ps: &ParticleSet, residual: impl Fn(Point2) -> f64) -> f64 {
    ps.points()
        .zip(ps.weights())
        .filter(|(_, w)| **w > 1e-12)
        .map(|(x, _)| residual(x).abs())
        .fold(0.0, f64::max)
}

fn resampled(ps: &ParticleSet, seed: u64) -> ParticleSet {
    snapslam::particles::resample(ps, seed)
}

/// D(0) -> S(0) with P at the truth: every resampled particle lies within
/// `4 sigma_d` of the ellipse.
pub fn distance_ellipse(sc: &Scenario, obs: &Observations, n: usize, seed: u64) -> Check {
    let p = sc.mobile.position;
    let incoming = [Incoming::dirac_point(Variable::Position, p)];
    let ps = resampled(&shape_message(Factor::distance(0), Variable::Incidence(0), &incoming, obs, n, seed), seed);
    let d = obs.triplets[0].d;
    let r = max_residual(&ps, |s| s.norm() + s.distance(p) - d);
    Check::at_most(r, 4.0 * obs.noise.paths[0].sigma_d)
}

/// D(0) -> P with S(0) at the truth: every resampled particle lies within
/// `4 sigma_d` of the circle around `s`.
pub fn distance_circle(sc: &Scenario, obs: &Observations, n: usize, seed: u64) -> Check {
    let s = sc.incidence_points[0];
    let incoming = [Incoming::dirac_point(Variable::Incidence(0), s)];
    let ps = resampled(&shape_message(Factor::distance(0), Variable::Position, &incoming, obs, n, seed), seed);
    let radius = obs.triplets[0].d - s.norm();
    let r = max_residual(&ps, |x| s.distance(x) - radius);
    Check::at_most(r, 4.0 * obs.noise.paths[0].sigma_d)
}

/// AOA(0) -> ALPHA with P and S(0) at the truth: mean within
/// `4 sigma / sqrt(N)` and standard deviation within 10 % of sigma.
pub fn aoa_orientation(sc: &Scenario, obs: &Observations, n: usize, seed: u64) -> (Check, Check) {
    let incoming = [
        Incoming::dirac_point(Variable::Position, sc.mobile.position),
        Incoming::dirac_point(Variable::Incidence(0), sc.incidence_points[0]),
    ];
    let ps = resampled(&shape_message(Factor::aoa(0), Variable::Orientation, &incoming, obs, n, seed), seed);
    let sigma = obs.noise.paths[0].sigma_rx;
    // The message peaks where the observed arrival angle is reproduced.
    let centre = wrap_angle(sc.mobile.position.bearing_to(sc.incidence_points[0]) - obs.triplets[0].theta_rx);
    let devs: Vec<f64> = (0..ps.len()).map(|k| wrap_angle(ps.angle(k) - centre)).collect();
    let mean = devs.iter().sum::<f64>() / n as f64;
    let sd = (devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    (
        Check::at_most(mean.abs(), 4.0 * sigma / (n as f64).sqrt()),
        Check::at_most((sd / sigma - 1.0).abs(), 0.1),
    )
}

/// Two-sample energy distance between planar samples.
pub fn energy_distance(a: &[Point2], b: &[Point2]) -> f64 {
    let mean = |x: &[Point2], y: &[Point2]| {
        let mut s = 0.0;
        for p in x {
            for q in y {
                s += p.distance(*q);
            }
        }
        s / (x.len() * y.len()) as f64
    };
    2.0 * mean(a, b) - mean(a, a) - mean(b, b)
}

/// Permutation p-value of the energy distance.
pub fn energy_test(a: &[Point2], b: &[Point2], permutations: usize, seed: u64) -> f64 {
    let observed = energy_distance(a, b);
    let mut pooled: Vec<Point2> = a.iter().chain(b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut at_least = 0;
    for _ in 0..permutations {
        for i in (1..pooled.len()).rev() {
            let j = rng.random_range(0..=i);
            pooled.swap(i, j);
        }
        if energy_distance(&pooled[..a.len()], &pooled[a.len()..]) >= observed {
            at_least += 1;
        }
    }
    (at_least + 1) as f64 / (permutations + 1) as f64
}

/// Brute-force posterior mean of P on a grid: 2 m cells for p over the area
/// of interest, `alpha_step` for the orientation, 2 m cells for every s_j
/// inside its AOD cone. The sum over each s_j factorizes given (p, alpha).
pub fn grid_posterior_mean(obs: &Observations, cell: f64, alpha_step: f64) -> Point2 {
    let r_max = obs.max_distance();
    let n_alpha = (std::f64::consts::TAU / alpha_step).round() as usize;
    let alphas: Vec<f64> = (0..n_alpha).map(|k| -std::f64::consts::PI + (k as f64 + 0.5) * alpha_step).collect();
    // Per path: s-cells with their AOD likelihood.
    let cones: Vec<Vec<(Point2, f64)>> = (0..obs.n_paths())
        .map(|j| {
            let t = obs.triplets[j];
            let n = obs.noise.paths[j];
            let half = (t.d / cell).ceil() as i64;
            let mut cells = Vec::new();
            for ix in -half..=half {
                for iy in -half..=half {
                    let s = Point2::new((ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell);
                    if s.norm() > t.d {
                        continue;
                    }
                    let r = wrap_angle(t.theta_tx - s.y.atan2(s.x));
                    if r.abs() <= 6.0 * n.sigma_tx {
                        cells.push((s, (-0.5 * (r / n.sigma_tx).powi(2)).exp()));
                    }
                }
            }
            cells
        })
        .collect();
    let half = (r_max / cell).ceil() as i64;
    let (mut wsum, mut mx, mut my) = (0.0, 0.0, 0.0);
    let mut path_sum = vec![0.0; n_alpha];
    for ix in -half..=half {
        for iy in -half..=half {
            let p = Point2::new((ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell);
            if p.norm() > r_max {
                continue;
            }
            let mut joint = vec![1.0; n_alpha];
            for (j, cone) in cones.iter().enumerate() {
                let t = obs.triplets[j];
                let n = obs.noise.paths[j];
                path_sum.iter_mut().for_each(|v| *v = 0.0);
                for &(s, w_aod) in cone {
                    let rd = t.d - s.norm() - s.distance(p);
                    if rd.abs() > 6.0 * n.sigma_d {
                        continue;
                    }
                    let w = w_aod * (-0.5 * (rd / n.sigma_d).powi(2)).exp();
                    let bearing = p.bearing_to(s);
                    for (k, a) in alphas.iter().enumerate() {
                        let ra = wrap_angle(t.theta_rx - bearing + a);
                        if ra.abs() <= 6.0 * n.sigma_rx {
                            path_sum[k] += w * (-0.5 * (ra / n.sigma_rx).powi(2)).exp();
                        }
                    }
                }
                for (v, s) in joint.iter_mut().zip(&path_sum) {
                    *v *= s;
                }
            }
            let m: f64 = joint.iter().sum();
            wsum += m;
            mx += m * p.x;
            my += m * p.y;
        }
    }
    Point2::new(mx / wsum, my / wsum)
}
