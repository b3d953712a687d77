//! Grid-search least-squares benchmark.
//!
//! For a fixed trial orientation every path gives two linear equations in
//! `(p, r_0, .., r_{J-1})`, with `r_j = |s_j - q|`:
//! `p - r_j [u(tx_j) + u(rx_j + alpha)] = q - d_j u(rx_j + alpha)`.
//! The trial with the smallest residual wins.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Observations, Point2, Pose, StateVector, MIN_PATHS};

/// Trial step used in the reference experiments, radians.
pub const DEFAULT_DELTA_ALPHA: f64 = 0.01;

/// Relative singular-value threshold for rank deficiency.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialGrid {
    delta_alpha: f64,
    values: Vec<f64>,
}

impl TrialGrid {
    /// `ceil(2 pi / delta)` orientations `pi - k delta`, sorted ascending, all in (-pi, pi].
    pub fn new(delta_alpha: f64) -> Result<Self> {
        if !(delta_alpha > 0.0 && delta_alpha <= 2.0 * PI) {
            return Err(Error::InvalidInput(format!(
                "trial step must lie in (0, 2 pi], got {delta_alpha}"
            )));
        }
        let n = (2.0 * PI / delta_alpha).ceil() as usize;
        let mut values: Vec<f64> = (0..n).map(|k| PI - k as f64 * delta_alpha).collect();
        values.reverse();
        Ok(TrialGrid { delta_alpha, values })
    }

    pub fn delta_alpha(&self) -> f64 {
        self.delta_alpha
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid value closest to `alpha` on the circle.
    pub fn nearest(&self, alpha: f64) -> f64 {
        *self
            .values
            .iter()
            .min_by(|a, b| {
                wrap_angle(**a - alpha)
                    .abs()
                    .total_cmp(&wrap_angle(**b - alpha).abs())
            })
            .expect("grid is never empty")
    }
}

impl Default for TrialGrid {
    fn default() -> Self {
        TrialGrid::new(DEFAULT_DELTA_ALPHA).expect("default step is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub p_hat: Point2,
    pub r_hat: Vec<f64>,
    pub alpha_trial: f64,
    pub residual_norm: f64,
    /// Every `r_hat[j]` lies in `[0, d_j]`.
    pub valid: bool,
}

/// Solves the linear problem for one trial orientation.
pub fn solve_trial(obs: &Observations, q_star: Point2, alpha: f64) -> Result<LsSolution> {
    let j_n = obs.n_paths();
    if j_n < MIN_PATHS {
        return Err(Error::InsufficientPaths { found: j_n });
    }
    let mut a = DMatrix::<f64>::zeros(2 * j_n, j_n + 2);
    let mut b = DVector::<f64>::zeros(2 * j_n);
    for (j, t) in obs.triplets.iter().enumerate() {
        let u_tx = Point2::from_angle(t.theta_tx);
        let u_rx = Point2::from_angle(t.theta_rx + alpha);
        let g = u_tx + u_rx;
        let rhs = q_star - u_rx * t.d;
        a[(2 * j, 0)] = 1.0;
        a[(2 * j + 1, 1)] = 1.0;
        a[(2 * j, 2 + j)] = -g.x;
        a[(2 * j + 1, 2 + j)] = -g.y;
        b[2 * j] = rhs.x;
        b[2 * j + 1] = rhs.y;
    }

    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min <= RANK_TOL * s_max {
        return Err(Error::SingularGeometry { alpha });
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|_| Error::SingularGeometry { alpha })?;
    let residual_norm = (&a * &x - &b).norm();
    let r_hat: Vec<f64> = (0..j_n).map(|j| x[2 + j]).collect();
    let valid = r_hat
        .iter()
        .zip(&obs.triplets)
        .all(|(r, t)| *r >= 0.0 && *r <= t.d);
    Ok(LsSolution {
        p_hat: Point2::new(x[0], x[1]),
        r_hat,
        alpha_trial: alpha,
        residual_norm,
        valid,
    })
}

/// Full result of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct LsOutcome {
    pub estimate: StateVector,
    pub best: LsSolution,
    pub n_evaluated: usize,
    pub n_singular: usize,
    /// False when no trial passed the validity filter and the overall minimum was used.
    pub from_valid: bool,
}

/// Picks the minimum-residual solution; ties go to the smallest orientation.
fn select<'a>(solutions: impl Iterator<Item = &'a LsSolution>) -> Option<&'a LsSolution> {
    solutions.fold(None, |best: Option<&LsSolution>, s| match best {
        Some(b)
            if b.residual_norm < s.residual_norm
                || (b.residual_norm == s.residual_norm && b.alpha_trial <= s.alpha_trial) =>
        {
            Some(b)
        }
        _ => Some(s),
    })
}

pub fn grid_search_detailed(obs: &Observations, q_star: Point2, grid: &TrialGrid) -> Result<LsOutcome> {
    obs.validate()?;
    let results: Vec<Result<LsSolution>> = grid
        .values()
        .par_iter()
        .map(|&alpha| solve_trial(obs, q_star, alpha))
        .collect();
    let mut solutions = Vec::with_capacity(results.len());
    let mut n_singular = 0;
    for r in results {
        match r {
            Ok(s) => solutions.push(s),
            Err(Error::SingularGeometry { .. }) => n_singular += 1,
            Err(e) => return Err(e),
        }
    }
    if solutions.is_empty() {
        return Err(Error::EstimationFailed(format!(
            "all {} trial orientations gave singular systems",
            grid.len()
        )));
    }
    let (best, from_valid) = match select(solutions.iter().filter(|s| s.valid)) {
        Some(b) => (b.clone(), true),
        None => (select(solutions.iter()).expect("non-empty").clone(), false),
    };
    let incidence_points = best
        .r_hat
        .iter()
        .zip(&obs.triplets)
        .map(|(r, t)| q_star + Point2::from_angle(t.theta_tx) * *r)
        .collect();
    Ok(LsOutcome {
        estimate: StateVector {
            mobile: Pose::new(best.p_hat, best.alpha_trial),
            incidence_points,
        },
        best,
        n_evaluated: grid.len(),
        n_singular,
        from_valid,
    })
}

/// Minimum-residual estimate over every trial orientation of `grid`.
pub fn grid_search(obs: &Observations, q_star: Point2, grid: &TrialGrid) -> Result<StateVector> {
    grid_search_detailed(obs, q_star, grid).map(|o| o.estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{true_path_parameters, NoiseSpec, PathTriple, Scenario};
    use proptest::prelude::*;

    fn exact_obs(sc: &Scenario) -> Observations {
        let triplets = (0..sc.n_paths())
            .map(|j| true_path_parameters(sc, j).unwrap())
            .collect();
        Observations::new(triplets, NoiseSpec::uniform(sc.n_paths(), 1e-3, 1e-3, 1e-3).unwrap()).unwrap()
    }

    #[test]
    fn grid_count_and_range() {
        let g = TrialGrid::default();
        assert_eq!(g.len(), 629);
        assert!(g.values().iter().all(|a| *a > -PI && *a <= PI));
        assert_eq!(*g.values().last().unwrap(), PI);
        for w in g.values().windows(2) {
            assert!((w[1] - w[0] - 0.01).abs() < 1e-12);
        }
        assert_eq!(TrialGrid::new(PI / 2.0).unwrap().len(), 4);
        assert!(TrialGrid::new(0.0).is_err());
    }

    #[test]
    fn exact_at_true_orientation() {
        let sc = Scenario::benchmark();
        let sol = solve_trial(&exact_obs(&sc), sc.base_station, PI / 4.0).unwrap();
        assert!(sol.residual_norm < 1e-9, "{}", sol.residual_norm);
        assert!((sol.r_hat[0] - 22.360680).abs() < 1e-6, "{}", sol.r_hat[0]);
        assert!(sol.p_hat.distance(Point2::new(70.0, 70.0)) < 1e-9);
        assert!(sol.valid);
    }

    #[test]
    fn nearest_grid_value() {
        let sc = Scenario::benchmark();
        let obs = exact_obs(&sc);
        let g = TrialGrid::default();
        let a = g.nearest(PI / 4.0);
        let sol = solve_trial(&obs, sc.base_station, a).unwrap();
        // The true (p, r) leave an error of (d_j - r_j) |u(x + eps) - u(x)| on path j.
        let eps = wrap_angle(a - PI / 4.0).abs();
        let bound: f64 = sc
            .incidence_points
            .iter()
            .map(|s| (s.distance(sc.mobile.position) * 2.0 * (eps / 2.0).sin()).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(sol.residual_norm <= bound, "{} > {bound}", sol.residual_norm);
        assert!(sol.p_hat.distance(sc.mobile.position) <= 1.0);
    }

    #[test]
    fn zero_noise_grid_search() {
        let sc = Scenario::benchmark();
        let out = grid_search_detailed(&exact_obs(&sc), sc.base_station, &TrialGrid::default()).unwrap();
        assert_eq!(out.n_evaluated, 629);
        assert!(out.from_valid);
        assert!(wrap_angle(out.estimate.mobile.orientation() - PI / 4.0).abs() <= 0.005);
        for (j, s) in out.estimate.incidence_points.iter().enumerate() {
            let tx = exact_obs(&sc).triplets[j].theta_tx;
            assert!(wrap_angle(sc.base_station.bearing_to(*s) - tx).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_geometry_is_singular() {
        // q at the origin, p at (100, 0), every s_j between them on the x axis.
        let q = Point2::ORIGIN;
        let triplets = [20.0, 40.0, 60.0]
            .iter()
            .map(|x| PathTriple {
                d: x + (100.0 - x),
                theta_tx: 0.0,
                theta_rx: PI,
            })
            .collect();
        let obs = Observations::new(triplets, NoiseSpec::uniform(3, 0.1, 0.01, 0.01).unwrap()).unwrap();
        assert!(matches!(solve_trial(&obs, q, 0.0), Err(Error::SingularGeometry { .. })));
    }

    #[test]
    fn all_singular_fails() {
        let triplets = vec![
            PathTriple {
                d: 100.0,
                theta_tx: 0.0,
                theta_rx: PI
            };
            3
        ];
        let obs = Observations::new(triplets, NoiseSpec::uniform(3, 0.1, 0.01, 0.01).unwrap()).unwrap();
        let grid = TrialGrid::new(2.0 * PI).unwrap();
        assert_eq!(grid.values(), &[PI]);
        // u(rx + pi) = (1, 0), so every path column is (-2, 0).
        assert!(matches!(
            grid_search(&obs, Point2::ORIGIN, &grid),
            Err(Error::EstimationFailed(_))
        ));
    }

    #[test]
    fn ties_prefer_smallest_alpha() {
        let mk = |a: f64| LsSolution {
            p_hat: Point2::ORIGIN,
            r_hat: vec![],
            alpha_trial: a,
            residual_norm: 1.0,
            valid: true,
        };
        let sols = [mk(0.3), mk(-0.2), mk(0.1)];
        assert_eq!(select(sols.iter()).unwrap().alpha_trial, -0.2);
        let rev: Vec<_> = sols.iter().rev().cloned().collect();
        assert_eq!(select(rev.iter()).unwrap().alpha_trial, -0.2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn zero_noise_minimum_at_nearest_grid_point(
            px in 30.0f64..90.0, py in 30.0f64..90.0, alpha in -3.0f64..3.0,
            s in proptest::collection::vec((-60.0f64..60.0, -60.0f64..60.0), 3),
        ) {
            let sc = Scenario::new(
                Point2::ORIGIN,
                Pose::new(Point2::new(px, py), alpha),
                s.iter().map(|(x, y)| Point2::new(*x, *y)).collect(),
            );
            prop_assume!(sc.is_ok());
            let sc = sc.unwrap();
            let obs = exact_obs(&sc);
            let grid = TrialGrid::new(0.05).unwrap();
            let best = grid
                .values()
                .iter()
                .filter_map(|a| solve_trial(&obs, sc.base_station, *a).ok())
                .min_by(|a, b| a.residual_norm.total_cmp(&b.residual_norm));
            prop_assume!(best.is_some());
            prop_assert_eq!(best.unwrap().alpha_trial, grid.nearest(alpha));
        }
    }
}
