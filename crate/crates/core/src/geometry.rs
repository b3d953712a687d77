//! Scenario geometry, the single-bounce NLOS measurement model and the three
//! per-path likelihood factors.
//!
//! Every path `j` leaves the base station `q`, bounces once at the point of
//! incidence `s_j` and reaches the mobile at `p`, which is rotated by `alpha`.
//! A path is observed as a triplet of total travelled distance, angle of
//! departure (global frame) and angle of arrival (mobile frame).

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Minimum number of NLOS paths for the joint problem to be identifiable.
pub const MIN_PATHS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    /// Unit vector at angle `phi`.
    pub fn from_angle(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Point2 { x: c, y: s }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Four-quadrant bearing of `to` as seen from `self`.
    pub fn bearing_to(self, to: Point2) -> f64 {
        (to.y - self.y).atan2(to.x - self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle to the half-open interval (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Converts a time of arrival to a travelled distance.
pub fn toa_to_distance(tau_s: f64) -> f64 {
    SPEED_OF_LIGHT * tau_s
}

pub fn distance_to_toa(d_m: f64) -> f64 {
    d_m / SPEED_OF_LIGHT
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Point2,
    orientation: f64,
}

impl Pose {
    pub fn new(position: Point2, orientation: f64) -> Self {
        Pose {
            position,
            orientation: wrap_angle(orientation),
        }
    }

    /// Orientation in (-pi, pi].
    pub fn orientation(&self) -> f64 {
        self.orientation
    }
}

/// Ground-truth geometry of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub base_station: Point2,
    pub mobile: Pose,
    pub incidence_points: Vec<Point2>,
}

impl Scenario {
    pub fn new(base_station: Point2, mobile: Pose, incidence_points: Vec<Point2>) -> Result<Self> {
        let sc = Scenario {
            base_station,
            mobile,
            incidence_points,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// The two-dimensional benchmark geometry: three correlated scatterers and
    /// a mobile 45 degrees off the x axis.
    pub fn benchmark() -> Self {
        Scenario {
            base_station: Point2::ORIGIN,
            mobile: Pose::new(Point2::new(70.0, 70.0), 45f64.to_radians()),
            incidence_points: vec![
                Point2::new(20.0, 10.0),
                Point2::new(80.0, -10.0),
                Point2::new(40.0, 0.0),
            ],
        }
    }

    pub fn n_paths(&self) -> usize {
        self.incidence_points.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths() < MIN_PATHS {
            return Err(Error::InsufficientPaths {
                found: self.n_paths(),
            });
        }
        let q = self.base_station;
        let p = self.mobile.position;
        if !q.is_finite() || !p.is_finite() || !self.mobile.orientation.is_finite() {
            return Err(Error::InvalidInput("non-finite base station or mobile pose".into()));
        }
        if q == p {
            return Err(Error::DegenerateGeometry("mobile coincides with base station".into()));
        }
        for (j, s) in self.incidence_points.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::InvalidInput(format!("incidence point {j} is not finite")));
            }
            if *s == q || *s == p {
                return Err(Error::DegenerateGeometry(format!(
                    "incidence point {j} coincides with a terminal"
                )));
            }
        }
        Ok(())
    }

    /// Ground truth as a state vector.
    pub fn state(&self) -> StateVector {
        StateVector {
            mobile: self.mobile,
            incidence_points: self.incidence_points.clone(),
        }
    }

    /// Same geometry shifted by `t`.
    pub fn translated(&self, t: Point2) -> Scenario {
        Scenario {
            base_station: self.base_station + t,
            mobile: Pose::new(self.mobile.position + t, self.mobile.orientation),
            incidence_points: self.incidence_points.iter().map(|s| *s + t).collect(),
        }
    }
}

/// Per-path measurement noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathNoise {
    pub sigma_d: f64,
    pub sigma_tx: f64,
    pub sigma_rx: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub paths: Vec<PathNoise>,
}

impl NoiseSpec {
    pub fn new(paths: Vec<PathNoise>) -> Result<Self> {
        let spec = NoiseSpec { paths };
        spec.validate()?;
        Ok(spec)
    }

    /// Identical noise on every one of `n_paths` paths.
    pub fn uniform(n_paths: usize, sigma_d: f64, sigma_tx: f64, sigma_rx: f64) -> Result<Self> {
        NoiseSpec::new(vec![
            PathNoise {
                sigma_d,
                sigma_tx,
                sigma_rx
            };
            n_paths
        ])
    }

    pub fn validate(&self) -> Result<()> {
        for (j, n) in self.paths.iter().enumerate() {
            for (name, v) in [("sigma_d", n.sigma_d), ("sigma_tx", n.sigma_tx), ("sigma_rx", n.sigma_rx)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "path {j}: {name} must be positive and finite, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Distance, AOD and AOA of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTriple {
    pub d: f64,
    pub theta_tx: f64,
    pub theta_rx: f64,
}

/// The measurement vector of one snapshot together with its noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub triplets: Vec<PathTriple>,
    pub noise: NoiseSpec,
}

impl Observations {
    pub fn new(triplets: Vec<PathTriple>, noise: NoiseSpec) -> Result<Self> {
        let obs = Observations { triplets, noise };
        obs.validate()?;
        Ok(obs)
    }

    pub fn n_paths(&self) -> usize {
        self.triplets.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.triplets.len() < MIN_PATHS {
            return Err(Error::InsufficientPaths {
                found: self.triplets.len(),
            });
        }
        if self.noise.paths.len() != self.triplets.len() {
            return Err(Error::InvalidInput(format!(
                "{} triplets but {} noise entries",
                self.triplets.len(),
                self.noise.paths.len()
            )));
        }
        self.noise.validate()?;
        for (j, t) in self.triplets.iter().enumerate() {
            if !(t.d > 0.0 && t.d.is_finite()) {
                return Err(Error::InvalidInput(format!("path {j}: distance must be positive")));
            }
            if !t.theta_tx.is_finite() || !t.theta_rx.is_finite() {
                return Err(Error::InvalidInput(format!("path {j}: non-finite angle")));
            }
        }
        Ok(())
    }

    /// Largest observed path distance; radius of the mobile's area of interest.
    pub fn max_distance(&self) -> f64 {
        self.triplets.iter().map(|t| t.d).fold(0.0, f64::max)
    }
}

/// Joint estimate (or truth) of mobile pose and all incidence points.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub mobile: Pose,
    pub incidence_points: Vec<Point2>,
}

/// Noiseless distance, AOD and AOA of path `j`.
pub fn true_path_parameters(scenario: &Scenario, j: usize) -> Result<PathTriple> {
    let s = *scenario.incidence_points.get(j).ok_or_else(|| {
        Error::InvalidInput(format!(
            "path index {j} out of range for {} paths",
            scenario.n_paths()
        ))
    })?;
    let q = scenario.base_station;
    let p = scenario.mobile.position;
    if s == q || s == p {
        return Err(Error::DegenerateGeometry(format!(
            "incidence point {j} coincides with a terminal"
        )));
    }
    Ok(PathTriple {
        d: q.distance(s) + s.distance(p),
        theta_tx: q.bearing_to(s),
        theta_rx: wrap_angle(p.bearing_to(s) - scenario.mobile.orientation),
    })
}

/// Draws one noisy snapshot: every component gets independent zero-mean
/// Gaussian noise with the configured standard deviation.
pub fn sample_observations(scenario: &Scenario, noise: &NoiseSpec, seed: u64) -> Result<Observations> {
    scenario.validate()?;
    noise.validate()?;
    if noise.paths.len() != scenario.n_paths() {
        return Err(Error::InvalidInput(format!(
            "noise spec has {} paths, scenario has {}",
            noise.paths.len(),
            scenario.n_paths()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(scenario.n_paths());
    for (j, n) in noise.paths.iter().enumerate() {
        let t = true_path_parameters(scenario, j)?;
        let e_d: f64 = StandardNormal.sample(&mut rng);
        let e_tx: f64 = StandardNormal.sample(&mut rng);
        let e_rx: f64 = StandardNormal.sample(&mut rng);
        triplets.push(PathTriple {
            d: t.d + n.sigma_d * e_d,
            theta_tx: wrap_angle(t.theta_tx + n.sigma_tx * e_tx),
            theta_rx: wrap_angle(t.theta_rx + n.sigma_rx * e_rx),
        });
    }
    Observations::new(triplets, noise.clone())
}

#[inline]
fn gaussian_exponent(residual: f64, sigma: f64) -> f64 {
    let z = residual / sigma;
    -0.5 * z * z
}

/// Distance residual `d_hat - |q - s| - |s - p|`.
#[inline]
pub fn distance_residual(d_hat: f64, p: Point2, q: Point2, s: Point2) -> f64 {
    d_hat - q.distance(s) - s.distance(p)
}

/// Wrapped AOD residual.
#[inline]
pub fn aod_residual(theta_hat: f64, q: Point2, s: Point2) -> f64 {
    wrap_angle(theta_hat - q.bearing_to(s))
}

/// Wrapped AOA residual.
#[inline]
pub fn aoa_residual(theta_hat: f64, p: Point2, s: Point2, alpha: f64) -> f64 {
    wrap_angle(theta_hat - p.bearing_to(s) + alpha)
}

/// Unnormalized log-likelihood of a distance observation.
pub fn log_factor_distance(d_hat: f64, p: Point2, q: Point2, s: Point2, sigma: f64) -> f64 {
    gaussian_exponent(distance_residual(d_hat, p, q, s), sigma)
}

/// Unnormalized log-likelihood of an AOD observation.
pub fn log_factor_aod(theta_hat: f64, q: Point2, s: Point2, sigma: f64) -> f64 {
    gaussian_exponent(aod_residual(theta_hat, q, s), sigma)
}

/// Unnormalized log-likelihood of an AOA observation.
pub fn log_factor_aoa(theta_hat: f64, p: Point2, s: Point2, alpha: f64, sigma: f64) -> f64 {
    gaussian_exponent(aoa_residual(theta_hat, p, s, alpha), sigma)
}
