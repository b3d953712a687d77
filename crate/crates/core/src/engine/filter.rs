//! Factor-to-variable messages by importance sampling.
//!
//! Samples are drawn from a proposal over the target variable and weighted by
//! the factor likelihood marginalized over the incoming messages, divided by
//! the proposal density. The marginalization is a Monte Carlo sum over tuples
//! of incoming particles.
//!
//! An incoming message with a positive bandwidth is treated as its kernel
//! density estimate rather than as a sum of Diracs: each kernel is pushed
//! through the linearized residual, which widens the factor's Gaussian from
//! `sigma^2` to `sigma^2 + |grad r|^2 h^2` and scales it by `sigma/sigma_eff`.
//! A zero bandwidth reproduces the plain particle sum.

use rand::Rng;

use crate::engine::graph::{Factor, FactorKind, Variable};
use crate::engine::guided::Guided;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Observations, PathNoise, PathTriple, Point2};
use crate::particles::{normalize_log, resample_with, shuffle, systematic_indices, ParticleSet, Proposal, Support, EXP_UNDERFLOW};

/// A message arriving at a factor from one of its variables.
#[derive(Debug, Clone)]
pub struct Incoming {
    pub from: Variable,
    pub particles: ParticleSet,
    /// Kernel width of the message; 0 means exact particles.
    pub bandwidth: f64,
}

impl Incoming {
    pub fn new(from: Variable, particles: ParticleSet, bandwidth: f64) -> Self {
        Incoming {
            from,
            particles,
            bandwidth,
        }
    }

    pub fn dirac_point(from: Variable, p: Point2) -> Self {
        Incoming::new(from, ParticleSet::dirac_point(p), 0.0)
    }

    pub fn dirac_angle(from: Variable, a: f64) -> Self {
        Incoming::new(from, ParticleSet::dirac_angle(a), 0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FilterSettings {
    /// Output particle count `N_s`.
    pub n_samples: usize,
    /// Number of incoming tuples `M` in the marginalization sum.
    pub subsample: usize,
    /// Share of samples drawn from the caller's proposal; the rest follow the
    /// factor-guided mixture.
    pub base_fraction: f64,
}

impl FilterSettings {
    pub fn new(n_samples: usize, subsample: usize) -> Self {
        FilterSettings {
            n_samples,
            subsample,
            base_fraction: DEFAULT_BASE_FRACTION,
        }
    }
}

pub const DEFAULT_BASE_FRACTION: f64 = 0.25;

/// Mixture components kept in a sampling guide. Any subset still gives an
/// exact proposal density; fewer components only make it coarser.
const GUIDE_COMPONENTS: usize = 128;

/// Incoming particles arranged as `n` tuples, one column per variable.
pub(super) struct Tuples {
    pub(super) p: Vec<Point2>,
    pub(super) s: Vec<Point2>,
    pub(super) a: Vec<f64>,
    pub(super) w: Vec<f64>,
    pub(super) bw_p: f64,
    pub(super) bw_s: f64,
    pub(super) bw_a: f64,
}

impl Tuples {
    fn build<R: Rng + ?Sized>(
        needed: &[Variable],
        incoming: &[Incoming],
        subsample: usize,
        rng: &mut R,
    ) -> Result<Tuples> {
        let msgs: Vec<&Incoming> = needed
            .iter()
            .map(|v| {
                incoming.iter().find(|m| m.from == *v).ok_or_else(|| {
                    Error::InvalidInput(format!("missing incoming message from {v}"))
                })
            })
            .collect::<Result<_>>()?;
        for m in &msgs {
            let want = if m.from == Variable::Orientation {
                Support::Circle
            } else {
                Support::Plane
            };
            if m.particles.support() != want {
                return Err(Error::InvalidInput(format!("message from {} has wrong support", m.from)));
            }
            if !(m.bandwidth >= 0.0 && m.bandwidth.is_finite()) {
                return Err(Error::InvalidInput(format!("bad bandwidth on message from {}", m.from)));
            }
        }

        let multi: Vec<usize> = msgs.iter().map(|m| m.particles.len()).filter(|n| *n > 1).collect();
        // Exact weighted sum when a single message fits the budget; otherwise M
        // resampled tuples, randomly paired across messages.
        let (n, exact) = match multi.as_slice() {
            [] => (1, true),
            [k] if *k <= subsample => (*k, true),
            _ => (subsample.max(1), false),
        };

        let mut t = Tuples {
            p: Vec::new(),
            s: Vec::new(),
            a: Vec::new(),
            w: Vec::new(),
            bw_p: 0.0,
            bw_s: 0.0,
            bw_a: 0.0,
        };
        let mut weights = None;
        for m in msgs {
            let rows: ParticleSet = if m.particles.len() == 1 {
                m.particles.clone()
            } else if exact {
                weights = Some(m.particles.weights().to_vec());
                m.particles.clone()
            } else {
                let r = resample_with(&m.particles, n, rng);
                let mut idx: Vec<usize> = (0..n).collect();
                shuffle(&mut idx, rng);
                let samples: Vec<f64> = idx.iter().flat_map(|&i| r.sample(i).to_vec()).collect();
                ParticleSet::from_parts_unchecked(r.support(), samples, vec![1.0 / n as f64; n])
            };
            let at = |k: usize| if rows.len() == 1 { 0 } else { k };
            match m.from {
                Variable::Position => {
                    t.p = (0..n).map(|k| rows.point(at(k))).collect();
                    t.bw_p = m.bandwidth;
                }
                Variable::Incidence(_) => {
                    t.s = (0..n).map(|k| rows.point(at(k))).collect();
                    t.bw_s = m.bandwidth;
                }
                Variable::Orientation => {
                    t.a = (0..n).map(|k| rows.angle(at(k))).collect();
                    t.bw_a = m.bandwidth;
                }
                Variable::BaseStation => unreachable!("Q is never a tuple column"),
            }
        }
        t.w = weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        Ok(t)
    }

    pub(super) fn len(&self) -> usize {
        self.w.len()
    }

    /// At most `k` equally weighted tuples drawn by systematic resampling.
    fn thinned<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Tuples {
        let pick = |col: &Vec<Point2>, idx: &[usize]| -> Vec<Point2> {
            if col.len() == self.len() {
                idx.iter().map(|&i| col[i]).collect()
            } else {
                col.clone()
            }
        };
        if self.len() <= k {
            return Tuples {
                p: self.p.clone(),
                s: self.s.clone(),
                a: self.a.clone(),
                w: self.w.clone(),
                ..*self
            };
        }
        let idx = systematic_indices(&self.w, k, rng);
        Tuples {
            p: pick(&self.p, &idx),
            s: pick(&self.s, &idx),
            a: if self.a.len() == self.len() {
                idx.iter().map(|&i| self.a[i]).collect()
            } else {
                self.a.clone()
            },
            w: vec![1.0 / k as f64; k],
            ..*self
        }
    }
}

/// Smoothed Gaussian contribution of one residual.
#[inline]
fn smoothed(r: f64, sigma2: f64, sigma_eff2: f64) -> f64 {
    let e = 0.5 * r * r / sigma_eff2;
    if e >= EXP_UNDERFLOW {
        0.0
    } else {
        (sigma2 / sigma_eff2).sqrt() * (-e).exp()
    }
}

fn check_target(factor: Factor, target: Variable) -> Result<()> {
    if target == Variable::BaseStation {
        return Err(Error::InvalidInput("messages are never sent to the base station".into()));
    }
    if !factor.touches(target) {
        return Err(Error::InvalidInput(format!("{target} is not adjacent to {factor}")));
    }
    Ok(())
}

/// Marginal likelihood of `factor` at each candidate `x` of `target`.
fn marginal_likelihood(
    factor: Factor,
    target: Variable,
    tuples: &Tuples,
    obs: PathTriple,
    noise: PathNoise,
    q: Point2,
    xs: &[f64],
) -> Vec<f64> {
    let n = tuples.len();
    match (factor.kind, target) {
        (FactorKind::Aod, _) => {
            let s2 = noise.sigma_tx * noise.sigma_tx;
            xs.chunks_exact(2)
                .map(|x| {
                    let r = wrap_angle(obs.theta_tx - q.bearing_to(Point2::new(x[0], x[1])));
                    smoothed(r, s2, s2)
                })
                .collect()
        }
        (FactorKind::Distance, Variable::Incidence(_)) => {
            // d - |q - s| - |s - p|; the gradient wrt p is a unit vector.
            let s2 = noise.sigma_d * noise.sigma_d;
            let eff = s2 + tuples.bw_p * tuples.bw_p;
            let scale = (s2 / eff).sqrt();
            let inv = 0.5 / eff;
            xs.chunks_exact(2)
                .map(|x| {
                    let s = Point2::new(x[0], x[1]);
                    let base = obs.d - q.distance(s);
                    let mut acc = 0.0;
                    for k in 0..n {
                        let p = tuples.p[k];
                        let r = base - ((s.x - p.x).powi(2) + (s.y - p.y).powi(2)).sqrt();
                        let e = r * r * inv;
                        if e < EXP_UNDERFLOW {
                            acc += tuples.w[k] * (-e).exp();
                        }
                    }
                    acc * scale
                })
                .collect()
        }
        (FactorKind::Distance, Variable::Position) => {
            let s2 = noise.sigma_d * noise.sigma_d;
            let h2 = tuples.bw_s * tuples.bw_s;
            let pre: Vec<(f64, Point2)> = tuples
                .s
                .iter()
                .map(|&s| {
                    let v = s - q;
                    let l = v.norm();
                    let u = if l > 0.0 { v * (1.0 / l) } else { Point2::ORIGIN };
                    (l, u)
                })
                .collect();
            xs.chunks_exact(2)
                .map(|x| {
                    let mut acc = 0.0;
                    for k in 0..n {
                        let s = tuples.s[k];
                        let (qs, u) = pre[k];
                        let vx = s.x - x[0];
                        let vy = s.y - x[1];
                        let rho = (vx * vx + vy * vy).sqrt();
                        let r = obs.d - qs - rho;
                        let eff = if h2 > 0.0 && rho > 0.0 {
                            // |u_qs + u_ps|^2 = 2 + 2 u_qs . u_ps
                            s2 + h2 * (2.0 + 2.0 * (u.x * vx + u.y * vy) / rho)
                        } else {
                            s2
                        };
                        acc += tuples.w[k] * smoothed(r, s2, eff);
                    }
                    acc
                })
                .collect()
        }
        (FactorKind::Aoa, Variable::Orientation) => {
            let s2 = noise.sigma_rx * noise.sigma_rx;
            let h2 = tuples.bw_p * tuples.bw_p + tuples.bw_s * tuples.bw_s;
            let pre: Vec<(f64, f64)> = (0..n)
                .map(|k| {
                    let (p, s) = (tuples.p[k], tuples.s[k]);
                    let rho2 = (s - p).norm_sq();
                    let eff = if rho2 > 0.0 { s2 + h2 / rho2 } else { f64::INFINITY };
                    (obs.theta_rx - p.bearing_to(s), eff)
                })
                .collect();
            xs.iter()
                .map(|&a| {
                    let mut acc = 0.0;
                    for k in 0..n {
                        let (base, eff) = pre[k];
                        if eff.is_finite() {
                            acc += tuples.w[k] * smoothed(wrap_angle(base + a), s2, eff);
                        }
                    }
                    acc
                })
                .collect()
        }
        (FactorKind::Aoa, _) => {
            // Target is P (other end S) or S (other end P). The predicted
            // arrival direction in the global frame is theta_rx + alpha.
            let s2 = noise.sigma_rx * noise.sigma_rx;
            let to_p = target == Variable::Position;
            let (others, h_pos) = if to_p {
                (&tuples.s, tuples.bw_s)
            } else {
                (&tuples.p, tuples.bw_p)
            };
            let ha2 = tuples.bw_a * tuples.bw_a;
            let hp2 = h_pos * h_pos;
            let dirs: Vec<Point2> = tuples.a.iter().map(|a| Point2::from_angle(obs.theta_rx + a)).collect();
            xs.chunks_exact(2)
                .map(|x| {
                    let mut acc = 0.0;
                    for k in 0..n {
                        let o = others[k];
                        // Vector from the mobile to the incidence point.
                        let (vx, vy) = if to_p { (o.x - x[0], o.y - x[1]) } else { (x[0] - o.x, x[1] - o.y) };
                        let rho2 = vx * vx + vy * vy;
                        if rho2 <= 0.0 {
                            continue;
                        }
                        let u = dirs[k];
                        let cross = u.x * vy - u.y * vx;
                        let dot = u.x * vx + u.y * vy;
                        let eff = s2 + hp2 / rho2 + ha2;
                        // |r| >= |sin r| = |cross| / rho
                        if 0.5 * cross * cross / (rho2 * eff) >= EXP_UNDERFLOW {
                            continue;
                        }
                        let r = cross.atan2(dot);
                        acc += tuples.w[k] * smoothed(r, s2, eff);
                    }
                    acc
                })
                .collect()
        }
        (FactorKind::Distance, _) => unreachable!("checked by check_target"),
    }
}

/// A factor-to-variable message as a function: the tuple-marginalized factor
/// likelihood. It can be evaluated anywhere, which products use instead of a
/// kernel density estimate of the message's particles.
pub struct FactorMessage {
    factor: Factor,
    target: Variable,
    tuples: Tuples,
    obs: PathTriple,
    noise: PathNoise,
    q: Point2,
    guide: Guided,
}

impl FactorMessage {
    pub fn factor(&self) -> Factor {
        self.factor
    }

    pub fn target(&self) -> Variable {
        self.target
    }

    pub fn support(&self) -> Support {
        if self.target == Variable::Orientation {
            Support::Circle
        } else {
            Support::Plane
        }
    }

    /// Unnormalized message values at every point of `xs`.
    pub fn evaluate(&self, xs: &[f64]) -> Vec<f64> {
        marginal_likelihood(self.factor, self.target, &self.tuples, self.obs, self.noise, self.q, xs)
    }

    /// Draws `n` points from the message's sampling guide.
    pub(super) fn draw_guided<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<f64>) {
        self.guide.draw(n, rng, out);
    }

    /// Density of the sampling guide at `x`.
    pub(super) fn guide_density(&self, x: &[f64]) -> f64 {
        self.guide.density(x)
    }
}

impl std::fmt::Debug for FactorMessage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FactorMessage({}->{}, {} tuples)", self.factor, self.target, self.tuples.len())
    }
}

/// Importance-weighted (not resampled) message together with its functional form.
#[allow(clippy::too_many_arguments)]
pub fn filter_full<R: Rng + ?Sized>(
    factor: Factor,
    target: Variable,
    incoming: &[Incoming],
    obs: &Observations,
    q_star: Point2,
    proposal: &Proposal,
    settings: &FilterSettings,
    rng: &mut R,
) -> Result<(ParticleSet, FactorMessage)> {
    check_target(factor, target)?;
    let j = factor.path;
    if j >= obs.n_paths() {
        return Err(Error::InvalidInput(format!("{factor} has no observation")));
    }
    let want = if target == Variable::Orientation {
        Support::Circle
    } else {
        Support::Plane
    };
    if proposal.support() != want {
        return Err(Error::InvalidInput(format!("proposal support does not match {target}")));
    }
    if settings.n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&settings.base_fraction) {
        return Err(Error::InvalidInput("base_fraction must lie in [0, 1]".into()));
    }
    let needed: Vec<Variable> = factor
        .variables()
        .into_iter()
        .filter(|v| *v != target && *v != Variable::BaseStation)
        .collect();
    let tuples = Tuples::build(&needed, incoming, settings.subsample, rng)?;
    let guide = Guided::new(factor, target, &tuples.thinned(GUIDE_COMPONENTS, rng), obs.triplets[j], obs.noise.paths[j], q_star, obs.triplets[j].d);
    let message = FactorMessage {
        factor,
        target,
        tuples,
        obs: obs.triplets[j],
        noise: obs.noise.paths[j],
        q: q_star,
        guide,
    };

    let n = settings.n_samples;
    let n_base = (settings.base_fraction * n as f64).round() as usize;
    let eps = n_base as f64 / n as f64;
    let guide = &message.guide;
    let (mut xs, _) = proposal.draw(n_base, rng);
    guide.draw(n - n_base, rng, &mut xs);
    let q_dens: Vec<f64> = xs
        .chunks_exact(want.dim())
        .map(|x| {
            let b = if eps > 0.0 { eps * proposal.density(x) } else { 0.0 };
            let g = if eps < 1.0 { (1.0 - eps) * guide.density(x) } else { 0.0 };
            b + g
        })
        .collect();
    let lik = message.evaluate(&xs);
    let logw: Vec<f64> = lik
        .iter()
        .zip(&q_dens)
        .map(|(l, q)| if *l > 0.0 && *q > 0.0 { l.ln() - q.ln() } else { f64::NEG_INFINITY })
        .collect();
    let w = normalize_log(&logw)
        .map_err(|_| Error::DegenerateWeights(format!("{factor}->{target}: every sample has zero likelihood")))?;
    Ok((ParticleSet::from_parts_unchecked(want, xs, w), message))
}

/// Importance-weighted (not resampled) factor-to-variable message.
#[allow(clippy::too_many_arguments)]
pub fn filter_weighted<R: Rng + ?Sized>(
    factor: Factor,
    target: Variable,
    incoming: &[Incoming],
    obs: &Observations,
    q_star: Point2,
    proposal: &Proposal,
    settings: &FilterSettings,
    rng: &mut R,
) -> Result<ParticleSet> {
    filter_full(factor, target, incoming, obs, q_star, proposal, settings, rng).map(|(ps, _)| ps)
}

/// Factor-to-variable message, normalized and resampled to uniform weights.
#[allow(clippy::too_many_arguments)]
pub fn filter_message<R: Rng + ?Sized>(
    factor: Factor,
    target: Variable,
    incoming: &[Incoming],
    obs: &Observations,
    q_star: Point2,
    proposal: &Proposal,
    settings: &FilterSettings,
    rng: &mut R,
) -> Result<ParticleSet> {
    let weighted = filter_weighted(factor, target, incoming, obs, q_star, proposal, settings, rng)?;
    Ok(resample_with(&weighted, settings.n_samples, rng))
}
