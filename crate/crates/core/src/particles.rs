//! Weighted particle sets and the primitives built on them: weight
//! normalization, systematic resampling, Gaussian kernel density estimates,
//! MMSE extraction and uniform proposal samplers.
//!
//! Positions live on the plane; the orientation lives on the circle and is
//! handled with wrapped kernel arguments and circular means.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point2};

/// `exp(-x)` underflows to zero in f64 beyond this.
pub(crate) const EXP_UNDERFLOW: f64 = 745.0;

/// Domain a particle set lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Support {
    /// Two-dimensional positions, meters.
    Plane,
    /// Angles in (-pi, pi], radians.
    Circle,
}

impl Support {
    pub fn dim(self) -> usize {
        match self {
            Support::Plane => 2,
            Support::Circle => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    support: Support,
    /// Row-major, `dim` values per particle.
    samples: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleSet {
    /// Builds a set from raw samples and already normalized weights.
    pub fn new(support: Support, samples: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let dim = support.dim();
        if weights.is_empty() || samples.len() != dim * weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} sample values for {} weights in {} dimensions",
                samples.len(),
                weights.len(),
                dim
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("weights sum to {sum}, not 1")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        let samples = match support {
            Support::Plane => samples,
            Support::Circle => samples.into_iter().map(wrap_angle).collect(),
        };
        Ok(ParticleSet {
            support,
            samples,
            weights,
        })
    }

    /// Equal weights `1/n`.
    pub fn uniform(support: Support, samples: Vec<f64>) -> Result<Self> {
        let n = samples.len() / support.dim();
        ParticleSet::new(support, samples, vec![1.0 / n as f64; n])
    }

    pub fn from_points(points: &[Point2], weights: Vec<f64>) -> Result<Self> {
        let samples = points.iter().flat_map(|p| [p.x, p.y]).collect();
        ParticleSet::new(Support::Plane, samples, weights)
    }

    pub fn from_angles(angles: &[f64], weights: Vec<f64>) -> Result<Self> {
        ParticleSet::new(Support::Circle, angles.to_vec(), weights)
    }

    /// Single particle at `p` with weight 1.
    pub fn dirac_point(p: Point2) -> Self {
        ParticleSet {
            support: Support::Plane,
            samples: vec![p.x, p.y],
            weights: vec![1.0],
        }
    }

    pub fn dirac_angle(a: f64) -> Self {
        ParticleSet {
            support: Support::Circle,
            samples: vec![wrap_angle(a)],
            weights: vec![1.0],
        }
    }

    pub(crate) fn from_parts_unchecked(support: Support, samples: Vec<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), support.dim() * weights.len());
        ParticleSet {
            support,
            samples,
            weights,
        }
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.samples[k * d..(k + 1) * d]
    }

    /// Sample `k` of a planar set.
    pub fn point(&self, k: usize) -> Point2 {
        debug_assert_eq!(self.support, Support::Plane);
        Point2::new(self.samples[2 * k], self.samples[2 * k + 1])
    }

    /// Sample `k` of a circular set.
    pub fn angle(&self, k: usize) -> f64 {
        debug_assert_eq!(self.support, Support::Circle);
        self.samples[k]
    }

    pub fn points(&self) -> impl Iterator<Item = Point2> + '_ {
        self.samples.chunks_exact(2).map(|c| Point2::new(c[0], c[1]))
    }

    pub fn is_normalized(&self) -> bool {
        let s: f64 = self.weights.iter().sum();
        (s - 1.0).abs() <= 1e-12 && self.weights.iter().all(|w| w.is_finite() && *w >= 0.0)
    }

    /// Same samples shifted by `t` (planar sets only).
    pub fn translated(&self, t: Point2) -> ParticleSet {
        let samples = self
            .samples
            .chunks_exact(2)
            .flat_map(|c| [c[0] + t.x, c[1] + t.y])
            .collect();
        ParticleSet::from_parts_unchecked(self.support, samples, self.weights.clone())
    }

    /// Weighted mean and covariance trace; for circular sets the mean is
    /// circular and the spread is the wrapped second moment about it.
    pub fn spread(&self) -> f64 {
        match self.support {
            Support::Plane => {
                let (mx, my) = self.planar_mean();
                self.points()
                    .zip(&self.weights)
                    .map(|(p, w)| w * ((p.x - mx).powi(2) + (p.y - my).powi(2)))
                    .sum()
            }
            Support::Circle => {
                let m = circular_mean(&self.samples, &self.weights).map_or(0.0, |(m, _)| m);
                self.samples
                    .iter()
                    .zip(&self.weights)
                    .map(|(a, w)| w * wrap_angle(a - m).powi(2))
                    .sum()
            }
        }
    }

    fn planar_mean(&self) -> (f64, f64) {
        self.points()
            .zip(&self.weights)
            .fold((0.0, 0.0), |(x, y), (p, w)| (x + w * p.x, y + w * p.y))
    }

    /// CSV with columns `x,y,weight` (planar) or `theta,weight` (circular).
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 48);
        match self.support {
            Support::Plane => {
                out.push_str("x,y,weight\n");
                for (p, w) in self.points().zip(&self.weights) {
                    let _ = writeln!(out, "{},{},{}", p.x, p.y, w);
                }
            }
            Support::Circle => {
                out.push_str("theta,weight\n");
                for (a, w) in self.samples.iter().zip(&self.weights) {
                    let _ = writeln!(out, "{a},{w}");
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Scales non-negative weights to sum to one.
pub fn normalize(weights_raw: &[f64]) -> Result<Vec<f64>> {
    if weights_raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::DegenerateWeights("negative or non-finite weight".into()));
    }
    let sum: f64 = weights_raw.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateWeights(format!("weight sum is {sum}")));
    }
    Ok(weights_raw.iter().map(|w| w / sum).collect())
}

/// Normalizes log-domain weights with max-subtraction. `-inf` entries map to 0.
pub fn normalize_log(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::DegenerateWeights("NaN or +inf log-weight".into()));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    let raw: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    normalize(&raw)
}

/// `1 / sum w^2`.
pub fn effective_sample_size(ps: &ParticleSet) -> f64 {
    1.0 / ps.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic (low-variance) resampling indices: one uniform offset, `n`
/// evenly spaced pointers into the cumulative weights.
pub fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    if n == 0 || weights.is_empty() {
        return out;
    }
    let total: f64 = weights.iter().sum();
    let step = total / n as f64;
    let mut target = rng.random::<f64>() * step;
    let mut cum = weights[0];
    let mut i = 0;
    for _ in 0..n {
        while target > cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
        target += step;
    }
    out
}

/// Resamples `ps` to the same size with uniform weights.
pub fn resample(ps: &ParticleSet, seed: u64) -> ParticleSet {
    resample_with(ps, ps.len(), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Resamples `ps` to `n` particles with uniform weights.
pub fn resample_with<R: Rng + ?Sized>(ps: &ParticleSet, n: usize, rng: &mut R) -> ParticleSet {
    let idx = systematic_indices(&ps.weights, n, rng);
    let d = ps.dim();
    let mut samples = Vec::with_capacity(n * d);
    for i in idx {
        samples.extend_from_slice(ps.sample(i));
    }
    ParticleSet::from_parts_unchecked(ps.support, samples, vec![1.0 / n as f64; n])
}

fn circular_mean(angles: &[f64], weights: &[f64]) -> Option<(f64, f64)> {
    let (s, c) = angles
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(s, c), (a, w)| (s + w * a.sin(), c + w * a.cos()));
    let r = s.hypot(c);
    (r > 1e-9).then(|| (s.atan2(c), r))
}

/// Weighted centroid; circular mean on the circle.
pub fn mmse_estimate(ps: &ParticleSet) -> Result<Vec<f64>> {
    match ps.support {
        Support::Plane => {
            let (x, y) = ps.planar_mean();
            Ok(vec![x, y])
        }
        Support::Circle => {
            let (s, c) = ps
                .samples
                .iter()
                .zip(&ps.weights)
                .fold((0.0, 0.0), |(s, c), (a, w)| (s + w * a.sin(), c + w * a.cos()));
            let r = s.hypot(c);
            if r <= 1e-9 {
                return Err(Error::DegenerateOrientation { resultant: r });
            }
            Ok(vec![wrap_angle(s.atan2(c))])
        }
    }
}

/// Normal-reference (rule-of-thumb) kernel width for a particle set:
/// `sigma n^(-1/6)` per axis in the plane, `1.06 sigma n^(-1/5)` on the circle.
pub fn reference_bandwidth(ps: &ParticleSet) -> f64 {
    let n = ps.len().max(1) as f64;
    match ps.support {
        Support::Plane => (0.5 * ps.spread()).sqrt() * n.powf(-1.0 / 6.0),
        Support::Circle => (1.06 * ps.spread().sqrt() * n.powf(-0.2)).min(1.0),
    }
}

/// Gaussian kernel density estimate over a particle set.
#[derive(Debug, Clone)]
pub struct Kde {
    particles: ParticleSet,
    bandwidth: f64,
}

impl Kde {
    pub fn new(particles: ParticleSet, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Kde {
            particles,
            bandwidth,
        })
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn support(&self) -> Support {
        self.particles.support
    }

    /// A KDE over `m` particles resampled from this one. Unbiased for the
    /// density; used to bound evaluation cost.
    pub fn subsampled<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Kde {
        if m >= self.particles.len() {
            return self.clone();
        }
        Kde {
            particles: resample_with(&self.particles, m, rng),
            bandwidth: self.bandwidth,
        }
    }

    pub fn with_bandwidth(&self, bandwidth: f64) -> Kde {
        Kde {
            particles: self.particles.clone(),
            bandwidth,
        }
    }

    /// Density at `x` (`dim` values).
    pub fn density(&self, x: &[f64]) -> f64 {
        let mut out = [0.0];
        self.density_many(x, &mut out);
        out[0]
    }

    /// Densities at every point of `xs` (row-major, `dim` per point).
    pub fn density_many(&self, xs: &[f64], out: &mut [f64]) {
        let h = self.bandwidth;
        let inv = 0.5 / (h * h);
        let ps = &self.particles;
        match ps.support {
            Support::Plane => {
                let norm = 1.0 / (TAU * h * h);
                for (x, o) in xs.chunks_exact(2).zip(out.iter_mut()) {
                    let mut acc = 0.0;
                    for (c, w) in ps.samples.chunks_exact(2).zip(&ps.weights) {
                        let dx = x[0] - c[0];
                        let dy = x[1] - c[1];
                        let e = (dx * dx + dy * dy) * inv;
                        if e < EXP_UNDERFLOW {
                            acc += w * (-e).exp();
                        }
                    }
                    *o = acc * norm;
                }
            }
            Support::Circle => {
                let norm = 1.0 / ((TAU).sqrt() * h);
                for (x, o) in xs.iter().zip(out.iter_mut()) {
                    let mut acc = 0.0;
                    for (c, w) in ps.samples.iter().zip(&ps.weights) {
                        let d = wrap_angle(x - c);
                        let e = d * d * inv;
                        if e < EXP_UNDERFLOW {
                            acc += w * (-e).exp();
                        }
                    }
                    *o = acc * norm;
                }
            }
        }
    }
}

/// Density of `kde` at `x`.
pub fn kde_density(kde: &Kde, x: &[f64]) -> f64 {
    kde.density(x)
}

/// Area of interest sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalRegion {
    Disk { center: Point2, radius: f64 },
    /// Angular interval `(lo, hi]`.
    Interval { lo: f64, hi: f64 },
}

impl ProposalRegion {
    pub fn disk(center: Point2, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || !center.is_finite() {
            return Err(Error::InvalidInput(format!("invalid disk radius {radius}")));
        }
        Ok(ProposalRegion::Disk { center, radius })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!("invalid interval ({lo}, {hi}]")));
        }
        Ok(ProposalRegion::Interval { lo, hi })
    }

    /// The whole circle (-pi, pi].
    pub fn full_circle() -> Self {
        ProposalRegion::Interval { lo: -PI, hi: PI }
    }

    pub fn support(&self) -> Support {
        match self {
            ProposalRegion::Disk { .. } => Support::Plane,
            ProposalRegion::Interval { .. } => Support::Circle,
        }
    }

    pub fn measure(&self) -> f64 {
        match *self {
            ProposalRegion::Disk { radius, .. } => PI * radius * radius,
            ProposalRegion::Interval { lo, hi } => (hi - lo).min(TAU),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            ProposalRegion::Disk { center, radius } => {
                (Point2::new(x[0], x[1]) - center).norm_sq() <= radius * radius
            }
            ProposalRegion::Interval { lo, hi } => {
                if hi - lo >= TAU {
                    return true;
                }
                // Offset of x above lo, measured around the circle.
                let off = (x[0] - lo).rem_euclid(TAU);
                off > 0.0 && off <= hi - lo
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            1.0 / self.measure()
        } else {
            0.0
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match *self {
            ProposalRegion::Disk { center, radius } => {
                // sqrt transform makes the draw uniform by area.
                let r = radius * rng.random::<f64>().sqrt();
                let phi = TAU * rng.random::<f64>();
                let (s, c) = phi.sin_cos();
                out.push(center.x + r * c);
                out.push(center.y + r * s);
            }
            ProposalRegion::Interval { lo, hi } => {
                // (lo, hi]: 1 - u lies in (0, 1].
                let u = 1.0 - rng.random::<f64>();
                out.push(wrap_angle(lo + (hi - lo) * u));
            }
        }
    }
}

/// `n` uniform draws from `region` with equal weights.
pub fn sample_proposal(region: &ProposalRegion, n: usize, seed: u64) -> Result<ParticleSet> {
    if n == 0 {
        return Err(Error::InvalidInput("proposal needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n * region.support().dim());
    for _ in 0..n {
        region.draw(&mut rng, &mut samples);
    }
    ParticleSet::uniform(region.support(), samples)
}

/// Uniform mixture over balls (disks or arcs) of a common radius around a set
/// of centers. The density is exact, so it is a valid importance-sampling
/// proposal; its support is the union of the balls.
#[derive(Debug, Clone)]
pub struct Cover {
    support: Support,
    centers: Vec<f64>,
    radius: f64,
    grid: HashMap<(i64, i64), Vec<u32>>,
}

impl Cover {
    pub fn new(support: Support, centers: Vec<f64>, radius: f64) -> Result<Self> {
        if centers.is_empty() || !centers.len().is_multiple_of(support.dim()) {
            return Err(Error::InvalidInput("cover needs at least one center".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("cover radius must be positive, got {radius}")));
        }
        let radius = match support {
            Support::Plane => radius,
            Support::Circle => radius.min(PI),
        };
        let mut grid: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        if support == Support::Plane {
            for (i, c) in centers.chunks_exact(2).enumerate() {
                grid.entry(cell(c[0], c[1], radius)).or_default().push(i as u32);
            }
        }
        Ok(Cover {
            support,
            centers,
            radius,
            grid,
        })
    }

    /// Centers resampled (up to `max_centers`) from `reference`.
    pub fn around<R: Rng + ?Sized>(
        reference: &ParticleSet,
        radius: f64,
        max_centers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = max_centers.min(reference.len()).max(1);
        let rs = resample_with(reference, n, rng);
        Cover::new(reference.support, rs.samples, radius)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_centers(&self) -> usize {
        self.centers.len() / self.support.dim()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        let k = rng.random_range(0..self.n_centers());
        match self.support {
            Support::Plane => {
                let r = self.radius * rng.random::<f64>().sqrt();
                let (s, c) = (TAU * rng.random::<f64>()).sin_cos();
                out.push(self.centers[2 * k] + r * c);
                out.push(self.centers[2 * k + 1] + r * s);
            }
            Support::Circle => {
                let off = self.radius * (2.0 * rng.random::<f64>() - 1.0);
                out.push(wrap_angle(self.centers[k] + off));
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let n = self.n_centers() as f64;
        match self.support {
            Support::Plane => {
                let r2 = self.radius * self.radius;
                let (cx, cy) = cell(x[0], x[1], self.radius);
                let mut hits = 0usize;
                for i in cx - 1..=cx + 1 {
                    for j in cy - 1..=cy + 1 {
                        if let Some(ids) = self.grid.get(&(i, j)) {
                            for &id in ids {
                                let c = &self.centers[2 * id as usize..2 * id as usize + 2];
                                let dx = x[0] - c[0];
                                let dy = x[1] - c[1];
                                if dx * dx + dy * dy <= r2 {
                                    hits += 1;
                                }
                            }
                        }
                    }
                }
                hits as f64 / (n * PI * r2)
            }
            Support::Circle => {
                let hits = self
                    .centers
                    .iter()
                    .filter(|c| wrap_angle(x[0] - *c).abs() <= self.radius)
                    .count();
                hits as f64 / (n * 2.0 * self.radius)
            }
        }
    }
}

fn cell(x: f64, y: f64, size: f64) -> (i64, i64) {
    ((x / size).floor() as i64, (y / size).floor() as i64)
}

/// Where importance samples for one variable are drawn from.
#[derive(Debug, Clone)]
pub enum Proposal {
    Region(ProposalRegion),
    Cover(Cover),
}

impl Proposal {
    pub fn support(&self) -> Support {
        match self {
            Proposal::Region(r) => r.support(),
            Proposal::Cover(c) => c.support,
        }
    }

    /// Draws `n` samples and returns them with their proposal densities.
    pub fn draw<R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let dim = self.support().dim();
        let mut xs = Vec::with_capacity(n * dim);
        for _ in 0..n {
            match self {
                Proposal::Region(r) => r.draw(rng, &mut xs),
                Proposal::Cover(c) => c.draw(rng, &mut xs),
            }
        }
        let dens = xs.chunks_exact(dim).map(|x| self.density(x)).collect();
        (xs, dens)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        match self {
            Proposal::Region(r) => r.density(x),
            Proposal::Cover(c) => c.density(x),
        }
    }

    /// The same proposal with its ball radius scaled (regions are unchanged).
    pub fn widened(&self, factor: f64) -> Proposal {
        match self {
            Proposal::Region(r) => Proposal::Region(*r),
            Proposal::Cover(c) => Proposal::Cover(
                Cover::new(c.support, c.centers.clone(), c.radius * factor)
                    .expect("scaled radius stays positive"),
            ),
        }
    }
}

#[cfg(test)]
pub(crate) fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Shuffles in place with the given RNG.
pub(crate) fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    v.shuffle(rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(normalize(&[0.0, 3.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::DegenerateWeights(_))));
        assert!(normalize(&[1.0, -1.0]).is_err());
        assert!(normalize(&[1.0, f64::NAN]).is_err());
        assert!(normalize(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn normalize_log_survives_tiny_weights() {
        let w = normalize_log(&[-2000.0, -2001.0, f64::NEG_INFINITY]).unwrap();
        let e = (-1f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert_eq!(w[2], 0.0);
        assert!(normalize_log(&[f64::NEG_INFINITY; 3]).is_err());
    }

    #[test]
    fn ess_examples() {
        let u = ParticleSet::uniform(Support::Circle, vec![0.0; 100]).unwrap();
        assert!((effective_sample_size(&u) - 100.0).abs() < 1e-9);
        let one = ParticleSet::from_angles(&[0.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(effective_sample_size(&one), 1.0);
        let w = ParticleSet::from_angles(&[0.0, 1.0, 2.0], vec![0.5, 0.25, 0.25]).unwrap();
        assert!((effective_sample_size(&w) - 8.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn resample_degenerate_weights_copies_the_one_sample() {
        let pts = [Point2::new(1.0, 2.0), Point2::new(3.0, 4.0), Point2::new(5.0, 6.0)];
        let ps = ParticleSet::from_points(&pts, vec![1.0, 0.0, 0.0]).unwrap();
        let r = resample(&ps, 4);
        assert_eq!(r.len(), 3);
        assert!(r.points().all(|p| p == pts[0]));
        assert!(r.weights().iter().all(|w| (*w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn resample_equal_weights_keeps_every_sample() {
        // Systematic resampling with equal weights selects each sample once.
        let angles: Vec<f64> = (0..50).map(|i| -3.0 + 0.1 * i as f64).collect();
        let ps = ParticleSet::uniform(Support::Circle, angles.clone()).unwrap();
        let r = resample(&ps, 9);
        let mut got: Vec<f64> = r.samples().to_vec();
        got.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = ps.samples().to_vec();
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
    }

    #[test]
    fn resample_preserves_mean_statistically() {
        let n = 10_000;
        let mut g = rng(5);
        let mut samples = Vec::with_capacity(2 * n);
        let mut raw = Vec::with_capacity(n);
        for _ in 0..n {
            samples.push(10.0 * std_normal(&mut g));
            samples.push(3.0 + 2.0 * std_normal(&mut g));
            raw.push(g.random::<f64>().powi(2));
        }
        let ps = ParticleSet::new(Support::Plane, samples, normalize(&raw).unwrap()).unwrap();
        let before = mmse_estimate(&ps).unwrap();
        let (mut vx, mut vy) = (0.0, 0.0);
        for (p, w) in ps.points().zip(ps.weights()) {
            vx += w * (p.x - before[0]).powi(2);
            vy += w * (p.y - before[1]).powi(2);
        }
        let bound = [4.0 * vx.sqrt() / (n as f64).sqrt(), 4.0 * vy.sqrt() / (n as f64).sqrt()];
        for seed in 0..100 {
            let after = mmse_estimate(&resample(&ps, seed)).unwrap();
            for d in 0..2 {
                assert!((after[d] - before[d]).abs() < bound[d], "seed {seed} dim {d}");
            }
        }
    }

    #[test]
    fn resample_is_seeded() {
        let ps = sample_proposal(&ProposalRegion::disk(Point2::ORIGIN, 3.0).unwrap(), 200, 1).unwrap();
        let w = normalize(&(0..200).map(|i| (i % 7) as f64).collect::<Vec<_>>()).unwrap();
        let ps = ParticleSet::new(Support::Plane, ps.samples().to_vec(), w).unwrap();
        assert_eq!(resample(&ps, 3), resample(&ps, 3));
        assert_ne!(resample(&ps, 3), resample(&ps, 4));
    }

    #[test]
    fn kde_point_values() {
        let sigma = 0.7;
        let x0 = Point2::new(1.0, -2.0);
        let kde = Kde::new(ParticleSet::dirac_point(x0), sigma).unwrap();
        let peak = 1.0 / (TAU * sigma * sigma);
        assert!((kde_density(&kde, &[x0.x, x0.y]) - peak).abs() < 1e-15);
        let at = kde_density(&kde, &[x0.x + sigma, x0.y]);
        assert!((at - peak * (-0.5f64).exp()).abs() < 1e-15);

        let x1 = Point2::new(2.0, 0.0);
        let two = Kde::new(ParticleSet::from_points(&[x0, x1], vec![0.5, 0.5]).unwrap(), sigma).unwrap();
        let k1 = Kde::new(ParticleSet::dirac_point(x1), sigma).unwrap();
        let q = [0.3, 0.4];
        let avg = 0.5 * (kde.density(&q) + k1.density(&q));
        assert!((two.density(&q) - avg).abs() < 1e-15);
    }

    #[test]
    fn circular_kde_wraps() {
        let kde = Kde::new(ParticleSet::dirac_angle(3.1), 0.05).unwrap();
        let a = kde.density(&[-3.1]);
        let gap = TAU - 6.2;
        let want = (-0.5 * (gap / 0.05f64).powi(2)).exp() / ((TAU).sqrt() * 0.05);
        assert!((a - want).abs() < 1e-12);
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut g = rng(9);
        let pts: Vec<Point2> = (0..20)
            .map(|_| Point2::new(5.0 * std_normal(&mut g), 3.0 * std_normal(&mut g)))
            .collect();
        let w = normalize(&(0..20).map(|_| g.random::<f64>()).collect::<Vec<_>>()).unwrap();
        let sigma = 0.8;
        let kde = Kde::new(ParticleSet::from_points(&pts, w).unwrap(), sigma).unwrap();
        let pad = 6.0 * sigma;
        let (x0, x1) = (
            pts.iter().map(|p| p.x).fold(f64::MAX, f64::min) - pad,
            pts.iter().map(|p| p.x).fold(f64::MIN, f64::max) + pad,
        );
        let (y0, y1) = (
            pts.iter().map(|p| p.y).fold(f64::MAX, f64::min) - pad,
            pts.iter().map(|p| p.y).fold(f64::MIN, f64::max) + pad,
        );
        let n = 1_000_000;
        let mut xs = Vec::with_capacity(2 * n);
        for _ in 0..n {
            xs.push(x0 + (x1 - x0) * g.random::<f64>());
            xs.push(y0 + (y1 - y0) * g.random::<f64>());
        }
        let mut d = vec![0.0; n];
        kde.density_many(&xs, &mut d);
        assert!(d.iter().all(|v| *v >= 0.0));
        let integral = d.iter().sum::<f64>() / n as f64 * (x1 - x0) * (y1 - y0);
        assert!((integral - 1.0).abs() < 0.02, "integral {integral}");
    }

    #[test]
    fn mmse_examples() {
        let ps = ParticleSet::from_points(&[Point2::ORIGIN, Point2::new(2.0, 0.0)], vec![0.5, 0.5]).unwrap();
        assert_eq!(mmse_estimate(&ps).unwrap(), vec![1.0, 0.0]);
        let one = ParticleSet::dirac_point(Point2::new(-4.0, 9.5));
        assert_eq!(mmse_estimate(&one).unwrap(), vec![-4.0, 9.5]);
        let a = ParticleSet::from_angles(&[3.1, -3.1], vec![0.5, 0.5]).unwrap();
        let m = mmse_estimate(&a).unwrap()[0];
        assert!((m - PI).abs() < 1e-12, "{m}");
        let opposite = ParticleSet::from_angles(&[0.0, PI], vec![0.5, 0.5]).unwrap();
        assert!(matches!(mmse_estimate(&opposite), Err(Error::DegenerateOrientation { .. })));
    }

    #[test]
    fn uniform_disk_moments() {
        let r = 10.0;
        let c = Point2::new(3.0, -1.0);
        let n = 100_000;
        let ps = sample_proposal(&ProposalRegion::disk(c, r).unwrap(), n, 17).unwrap();
        let m = mmse_estimate(&ps).unwrap();
        let bound = 4.0 * r / (n as f64).sqrt();
        assert!((m[0] - c.x).abs() < bound && (m[1] - c.y).abs() < bound);
        let inner = ps.points().filter(|p| p.distance(c) <= r / 2f64.sqrt()).count();
        let frac = inner as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        assert!(ps.points().all(|p| p.distance(c) <= r));
    }

    #[test]
    fn uniform_interval_variance() {
        let n = 100_000;
        let ps = sample_proposal(&ProposalRegion::full_circle(), n, 2).unwrap();
        let mean = ps.samples().iter().sum::<f64>() / n as f64;
        let var = ps.samples().iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var / (PI * PI / 3.0) - 1.0).abs() < 0.02, "{var}");
        assert!(ps.samples().iter().all(|a| *a > -PI && *a <= PI));
    }

    #[test]
    fn region_validation() {
        assert!(ProposalRegion::disk(Point2::ORIGIN, 0.0).is_err());
        assert!(ProposalRegion::interval(1.0, 1.0).is_err());
        assert!(sample_proposal(&ProposalRegion::full_circle(), 0, 0).is_err());
        let iv = ProposalRegion::interval(3.0, 3.5).unwrap();
        assert!(iv.contains(&[-3.0]));
        assert!(!iv.contains(&[0.0]));
    }

    #[test]
    fn importance_sampling_recovers_gaussian_moments() {
        // Target N((2, -1), diag(1.5^2, 0.8^2)) through a uniform disk proposal.
        let (mx, my, sx, sy) = (2.0, -1.0, 1.5, 0.8);
        let region = ProposalRegion::disk(Point2::new(0.0, 0.0), 12.0).unwrap();
        let n = 200_000;
        let ps = sample_proposal(&region, n, 21).unwrap();
        let raw: Vec<f64> = ps
            .points()
            .map(|p| {
                let t = (-0.5 * (((p.x - mx) / sx).powi(2) + ((p.y - my) / sy).powi(2))).exp();
                t / region.density(&[p.x, p.y])
            })
            .collect();
        let w = normalize(&raw).unwrap();
        let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
        let (mut ex, mut ey, mut vx, mut vy) = (0.0, 0.0, 0.0, 0.0);
        for (p, wi) in ps.points().zip(&w) {
            ex += wi * p.x;
            ey += wi * p.y;
        }
        for (p, wi) in ps.points().zip(&w) {
            vx += wi * (p.x - ex).powi(2);
            vy += wi * (p.y - ey).powi(2);
        }
        let se_mx = sx / ess.sqrt();
        let se_my = sy / ess.sqrt();
        assert!((ex - mx).abs() < 3.0 * se_mx, "{ex}");
        assert!((ey - my).abs() < 3.0 * se_my, "{ey}");
        // Standard error of a Gaussian variance estimate: sigma^2 sqrt(2/n).
        assert!((vx - sx * sx).abs() < 3.0 * sx * sx * (2.0 / ess).sqrt(), "{vx}");
        assert!((vy - sy * sy).abs() < 3.0 * sy * sy * (2.0 / ess).sqrt(), "{vy}");
    }

    #[test]
    fn cover_density_integrates_to_one() {
        let centers = vec![0.0, 0.0, 0.5, 0.0, 5.0, 5.0];
        let cover = Cover::new(Support::Plane, centers, 1.0).unwrap();
        let mut g = rng(4);
        let n = 400_000;
        let (x0, x1, y0, y1) = (-1.5, 6.5, -1.5, 6.5);
        let mut acc = 0.0;
        for _ in 0..n {
            let x = [x0 + (x1 - x0) * g.random::<f64>(), y0 + (y1 - y0) * g.random::<f64>()];
            acc += cover.density(&x);
        }
        let integral = acc / n as f64 * (x1 - x0) * (y1 - y0);
        assert!((integral - 1.0).abs() < 0.02, "{integral}");
        let prop = Proposal::Cover(cover);
        let (xs, dens) = prop.draw(1000, &mut g);
        assert!(dens.iter().all(|d| *d > 0.0));
        assert_eq!(xs.len(), 2000);
    }

    #[test]
    fn circular_cover_density() {
        let cover = Cover::new(Support::Circle, vec![3.0, -3.0], 0.5).unwrap();
        // 3.0 and -3.0 are 0.283 apart across pi, so both arcs cover pi.
        assert!((cover.density(&[PI]) - 1.0 / 1.0).abs() < 1e-12);
        assert!((cover.density(&[2.6]) - 0.5).abs() < 1e-12);
        assert_eq!(cover.density(&[0.0]), 0.0);
        let wide = Cover::new(Support::Circle, vec![0.0], 10.0).unwrap();
        assert!((wide.density(&[PI]) - 1.0 / TAU).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in prop::collection::vec(0.0..1e6f64, 1..50)) {
            prop_assume!(raw.iter().any(|w| *w > 0.0));
            let once = normalize(&raw).unwrap();
            let sum: f64 = once.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            let twice = normalize(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn resample_support_is_preserved(raw in prop::collection::vec(0.0..1.0f64, 2..60), seed in 0u64..1000) {
            prop_assume!(raw.iter().any(|w| *w > 0.0));
            let n = raw.len();
            let samples: Vec<f64> = (0..2 * n).map(|i| i as f64).collect();
            let ps = ParticleSet::new(Support::Plane, samples, normalize(&raw).unwrap()).unwrap();
            let r = resample(&ps, seed);
            prop_assert_eq!(r.len(), n);
            for k in 0..n {
                let s = r.sample(k);
                let src = (s[0] as usize) / 2;
                prop_assert!(raw[src] > 0.0);
                prop_assert_eq!(ps.sample(src), s);
            }
        }
    }
}
