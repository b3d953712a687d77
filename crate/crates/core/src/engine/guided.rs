//! Factor-guided proposals for filtering.
//!
//! For each incoming tuple the target of a factor lies on a simple shape: a
//! cone from the base station (AOD), a circle around the incidence point or a
//! confocal ellipse around q and p (distance), a wedge from the other end of
//! the path or a wrapped normal (AOA). The guide is the tuple-weighted mixture
//! of those shapes, with exact densities so it can serve as an importance
//! sampling proposal.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;

use super::filter::Tuples;
use super::graph::{Factor, FactorKind, Variable};
use crate::geometry::{wrap_angle, PathNoise, PathTriple, Point2};
use crate::particles::systematic_indices;

const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7;

/// Beyond this many standard deviations a component is treated as zero.
const CUTOFF2: f64 = 2.0 * 40.0;

fn normal_pdf(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    INV_SQRT_TAU / sigma * (-0.5 * z * z).exp()
}

/// Wrapped normal density at the wrapped offset `delta`.
fn wrapped_normal_pdf(delta: f64, sigma: f64) -> f64 {
    if sigma >= 4.0 {
        return 1.0 / TAU;
    }
    let terms = if sigma < 0.6 {
        0
    } else if sigma < 1.5 {
        1
    } else {
        3
    };
    (-terms..=terms)
        .map(|k| normal_pdf(delta + TAU * f64::from(k), sigma))
        .sum()
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub(super) enum Guide {
    /// AOD to S: bearing from q wrapped-normal, uniform by area out to `radius`.
    Cone {
        q: Point2,
        bearing: f64,
        sigma: f64,
        radius: f64,
    },
    /// Distance to P: circles of radius `mean[k]` around `centers[k]`.
    Circles {
        centers: Vec<Point2>,
        mean: Vec<f64>,
        sigma: f64,
    },
    /// Distance to S: ellipses with foci q and `foci[k]`, focal-distance sum `d`.
    Ellipses {
        q: Point2,
        foci: Vec<Point2>,
        d: f64,
        sigma: f64,
    },
    /// AOA to P or S: `x = apex + sign * rho * u(phi)` with `rho` uniform on
    /// `(0, radius)` and `phi` wrapped-normal around `dir[k]`.
    Wedges {
        apex: Vec<Point2>,
        dir: Vec<f64>,
        sign: f64,
        radius: f64,
        /// Angular variance independent of `rho`.
        s2: f64,
        /// Positional bandwidth squared, contributing `h2 / rho^2`.
        h2: f64,
    },
    /// AOA to ALPHA: wrapped normals.
    Angles { mean: Vec<f64>, sigma: Vec<f64> },
}

pub(super) struct Guided {
    guide: Guide,
    weights: Vec<f64>,
}

impl Guided {
    /// Guide for `factor -> target`. `radius` is the target's area-of-interest radius.
    pub(super) fn new(
        factor: Factor,
        target: Variable,
        tuples: &Tuples,
        obs: PathTriple,
        noise: PathNoise,
        q: Point2,
        radius: f64,
    ) -> Guided {
        let n = tuples.len();
        let guide = match (factor.kind, target) {
            (FactorKind::Aod, _) => Guide::Cone {
                q,
                bearing: obs.theta_tx,
                sigma: noise.sigma_tx,
                radius,
            },
            (FactorKind::Distance, Variable::Position) => Guide::Circles {
                centers: tuples.s.clone(),
                mean: tuples.s.iter().map(|s| obs.d - q.distance(*s)).collect(),
                sigma: (noise.sigma_d.powi(2) + 2.0 * tuples.bw_s.powi(2)).sqrt(),
            },
            (FactorKind::Distance, _) => Guide::Ellipses {
                q,
                foci: tuples.p.clone(),
                d: obs.d,
                sigma: (noise.sigma_d.powi(2) + tuples.bw_p.powi(2)).sqrt(),
            },
            (FactorKind::Aoa, Variable::Orientation) => {
                let s2 = noise.sigma_rx.powi(2);
                let h2 = tuples.bw_p.powi(2) + tuples.bw_s.powi(2);
                let (mean, sigma) = (0..n)
                    .map(|k| {
                        let (p, s) = (tuples.p[k], tuples.s[k]);
                        let rho2 = (s - p).norm_sq().max(1e-12);
                        (
                            wrap_angle(p.bearing_to(s) - obs.theta_rx),
                            (s2 + h2 / rho2).sqrt().min(4.0),
                        )
                    })
                    .unzip();
                Guide::Angles { mean, sigma }
            }
            (FactorKind::Aoa, _) => {
                let to_p = target == Variable::Position;
                let (apex, h) = if to_p {
                    (tuples.s.clone(), tuples.bw_s)
                } else {
                    (tuples.p.clone(), tuples.bw_p)
                };
                Guide::Wedges {
                    apex,
                    dir: tuples.a.iter().map(|a| obs.theta_rx + a).collect(),
                    sign: if to_p { -1.0 } else { 1.0 },
                    radius,
                    s2: noise.sigma_rx.powi(2) + tuples.bw_a.powi(2),
                    h2: h * h,
                }
            }
        };
        Guided {
            guide,
            weights: tuples.w.clone(),
        }
    }

    pub(super) fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<f64>) {
        let comps = systematic_indices(&self.weights, n, rng);
        for k in comps {
            match &self.guide {
                Guide::Cone {
                    q,
                    bearing,
                    sigma,
                    radius,
                } => {
                    let phi = bearing + sigma * normal(rng);
                    let r = radius * rng.random::<f64>().sqrt();
                    let x = *q + Point2::from_angle(phi) * r;
                    out.extend([x.x, x.y]);
                }
                Guide::Circles { centers, mean, sigma } => {
                    let rho = (mean[k] + sigma * normal(rng)).abs();
                    let x = centers[k] + Point2::from_angle(TAU * rng.random::<f64>()) * rho;
                    out.extend([x.x, x.y]);
                }
                Guide::Ellipses { q, foci, d, sigma } => {
                    let p = foci[k];
                    let l = q.distance(p);
                    let mut c = d + sigma * normal(rng);
                    if c < l {
                        c = 2.0 * l - c;
                    }
                    let nu = TAU * rng.random::<f64>();
                    let x = if l < 1e-9 {
                        *q + Point2::from_angle(nu) * (0.5 * c)
                    } else {
                        let f = 0.5 * l;
                        let ch = c / l;
                        let sh = (ch * ch - 1.0).max(0.0).sqrt();
                        let (lx, ly) = (f * ch * nu.cos(), f * sh * nu.sin());
                        let axis = (p - *q) * (1.0 / l);
                        let mid = (*q + p) * 0.5;
                        Point2::new(mid.x + axis.x * lx - axis.y * ly, mid.y + axis.y * lx + axis.x * ly)
                    };
                    out.extend([x.x, x.y]);
                }
                Guide::Wedges {
                    apex,
                    dir,
                    sign,
                    radius,
                    s2,
                    h2,
                } => {
                    let rho = radius * (1.0 - rng.random::<f64>());
                    let sigma = (s2 + h2 / (rho * rho)).sqrt().min(4.0);
                    let phi = dir[k] + sigma * normal(rng);
                    let x = apex[k] + Point2::from_angle(phi) * (sign * rho);
                    out.extend([x.x, x.y]);
                }
                Guide::Angles { mean, sigma } => {
                    out.push(wrap_angle(mean[k] + sigma[k] * normal(rng)));
                }
            }
        }
    }

    pub(super) fn density(&self, x: &[f64]) -> f64 {
        let w = &self.weights;
        match &self.guide {
            Guide::Cone {
                q,
                bearing,
                sigma,
                radius,
            } => {
                let v = Point2::new(x[0], x[1]) - *q;
                if v.norm_sq() > radius * radius {
                    return 0.0;
                }
                let delta = wrap_angle(v.y.atan2(v.x) - bearing);
                2.0 * wrapped_normal_pdf(delta, *sigma) / (radius * radius)
            }
            Guide::Circles { centers, mean, sigma } => {
                let inv = 0.5 / (sigma * sigma);
                let norm = INV_SQRT_TAU / sigma / TAU;
                let mut acc = 0.0;
                for k in 0..centers.len() {
                    let dx = x[0] - centers[k].x;
                    let dy = x[1] - centers[k].y;
                    let rho = (dx * dx + dy * dy).sqrt();
                    let a = (rho - mean[k]).powi(2) * inv;
                    let b = (rho + mean[k]).powi(2) * inv;
                    if a < 0.5 * CUTOFF2 || b < 0.5 * CUTOFF2 {
                        acc += w[k] * norm * ((-a).exp() + (-b).exp()) / rho.max(1e-12);
                    }
                }
                acc
            }
            Guide::Ellipses { q, foci, d, sigma } => {
                let xp = Point2::new(x[0], x[1]);
                let rq = xp.distance(*q);
                let inv = 0.5 / (sigma * sigma);
                let norm = INV_SQRT_TAU / sigma;
                let mut acc = 0.0;
                for k in 0..foci.len() {
                    let p = foci[k];
                    let l = q.distance(p);
                    let rp = xp.distance(p);
                    let c = rq + rp;
                    let a = (c - d).powi(2) * inv;
                    let b = (2.0 * l - c - d).powi(2) * inv;
                    if a >= 0.5 * CUTOFF2 && b >= 0.5 * CUTOFF2 {
                        continue;
                    }
                    let pc = norm * ((-a).exp() + (-b).exp());
                    if l < 1e-9 {
                        acc += w[k] * pc * 2.0 / (TAU * rq.max(1e-12));
                    } else {
                        let ch = c / l;
                        let sh2 = (ch * ch - 1.0).max(0.0);
                        let cn = ((rq - rp) / l).clamp(-1.0, 1.0);
                        let sn2 = 1.0 - cn * cn;
                        let den = PI * 0.5 * l * (sh2 + sn2);
                        if den > 0.0 {
                            acc += w[k] * pc * sh2.sqrt() / den;
                        }
                    }
                }
                acc
            }
            Guide::Wedges {
                apex,
                dir,
                sign,
                radius,
                s2,
                h2,
            } => {
                let mut acc = 0.0;
                let r2max = radius * radius;
                for k in 0..apex.len() {
                    let vx = sign * (x[0] - apex[k].x);
                    let vy = sign * (x[1] - apex[k].y);
                    let rho2 = vx * vx + vy * vy;
                    if rho2 > r2max || rho2 == 0.0 {
                        continue;
                    }
                    let var = (s2 + h2 / rho2).min(16.0);
                    let (sd, cd) = dir[k].sin_cos();
                    let cross = cd * vy - sd * vx;
                    // |delta| >= |sin delta|
                    if cross * cross / (rho2 * var) >= CUTOFF2 && var < 0.36 {
                        continue;
                    }
                    let delta = cross.atan2(cd * vx + sd * vy);
                    let rho = rho2.sqrt();
                    acc += w[k] * wrapped_normal_pdf(delta, var.sqrt()) / (radius * rho);
                }
                acc
            }
            Guide::Angles { mean, sigma } => {
                let mut acc = 0.0;
                for k in 0..mean.len() {
                    let delta = wrap_angle(x[0] - mean[k]);
                    if delta * delta / (sigma[k] * sigma[k]) >= CUTOFF2 && sigma[k] < 0.6 {
                        continue;
                    }
                    acc += w[k] * wrapped_normal_pdf(delta, sigma[k]);
                }
                acc
            }
        }
    }
}
