//! Variable-to-factor messages and beliefs as importance-sampled products of
//! kernel density estimates.

use rand::RngCore;

use crate::engine::filter::FactorMessage;
use crate::error::{Error, Result};
use crate::particles::{normalize_log, resample_with, Kde, ParticleSet, Proposal, ProposalRegion, Support};

/// An incoming message that can be evaluated at arbitrary points.
pub trait MessageDensity {
    fn support(&self) -> Support;
    /// Values, up to a constant factor, at every point of `xs`. `subsample`
    /// bounds the kernel count of particle-based estimates.
    fn values(&self, xs: &[f64], subsample: usize, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Whether the message can propose samples for the product.
    fn can_draw(&self) -> bool {
        false
    }

    /// Appends `n` draws from the message's own sampler.
    fn draw(&self, _n: usize, _rng: &mut dyn RngCore, _out: &mut Vec<f64>) {}

    /// Density of the sampler behind [`MessageDensity::draw`].
    fn draw_density(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

impl MessageDensity for Kde {
    fn support(&self) -> Support {
        Kde::support(self)
    }

    fn values(&self, xs: &[f64], subsample: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut out = vec![0.0; xs.len() / self.support().dim()];
        self.subsampled(subsample, rng).density_many(xs, &mut out);
        out
    }
}

impl MessageDensity for FactorMessage {
    fn support(&self) -> Support {
        FactorMessage::support(self)
    }

    fn values(&self, xs: &[f64], _subsample: usize, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.evaluate(xs)
    }

    fn can_draw(&self) -> bool {
        true
    }

    fn draw(&self, n: usize, rng: &mut dyn RngCore, out: &mut Vec<f64>) {
        self.draw_guided(n, rng, out);
    }

    fn draw_density(&self, x: &[f64]) -> f64 {
        self.guide_density(x)
    }
}

/// The previous belief entering every product.
#[derive(Debug, Clone)]
pub enum Prior {
    /// No information yet: flat over the area of interest.
    Uniform(ProposalRegion),
    Belief(Kde),
}

impl Prior {
    fn support(&self) -> Support {
        match self {
            Prior::Uniform(r) => r.support(),
            Prior::Belief(k) => k.support(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProductSettings {
    pub n_samples: usize,
    /// Kernel centres used when evaluating each KDE.
    pub subsample: usize,
    /// Share of samples drawn from the caller's proposal when some incoming
    /// messages can propose samples themselves; the rest is split evenly
    /// among those messages.
    pub base_fraction: f64,
}

impl ProductSettings {
    pub fn new(n_samples: usize, subsample: usize) -> Self {
        ProductSettings {
            n_samples,
            subsample,
            base_fraction: 0.25,
        }
    }
}

/// Which product to form at a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductTarget {
    /// Prior times every incoming message.
    Belief,
    /// Prior times every incoming message except the one at this index.
    Excluding(usize),
}

fn log_or_neg_inf(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Draws one proposal sample set and weights it for every requested product.
/// Returned sets are normalized but not resampled.
pub fn weigh_products<R: RngCore>(
    prior: &Prior,
    incoming: &[Kde],
    targets: &[ProductTarget],
    proposal: &Proposal,
    settings: &ProductSettings,
    rng: &mut R,
) -> Result<Vec<ParticleSet>> {
    let refs: Vec<&dyn MessageDensity> = incoming.iter().map(|k| k as &dyn MessageDensity).collect();
    weigh_products_dyn(prior, &refs, targets, proposal, settings, rng)
}

/// [`weigh_products`] over any mix of message representations.
pub fn weigh_products_dyn(
    prior: &Prior,
    incoming: &[&dyn MessageDensity],
    targets: &[ProductTarget],
    proposal: &Proposal,
    settings: &ProductSettings,
    rng: &mut dyn RngCore,
) -> Result<Vec<ParticleSet>> {
    let support = prior.support();
    if proposal.support() != support || incoming.iter().any(|k| k.support() != support) {
        return Err(Error::InvalidInput("product terms live on different supports".into()));
    }
    if settings.n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    for t in targets {
        if let ProductTarget::Excluding(i) = t {
            if *i >= incoming.len() {
                return Err(Error::InvalidInput(format!("no incoming message {i} to exclude")));
            }
        }
    }
    if !(0.0..=1.0).contains(&settings.base_fraction) {
        return Err(Error::InvalidInput("base_fraction must lie in [0, 1]".into()));
    }
    let n = settings.n_samples;
    let dim = support.dim();
    let samplers: Vec<&dyn MessageDensity> = incoming.iter().copied().filter(|m| m.can_draw()).collect();
    let n_base = if samplers.is_empty() {
        n
    } else {
        (settings.base_fraction * n as f64).round() as usize
    };
    let (mut xs, _) = proposal.draw(n_base, rng);
    let n_guided = n - n_base;
    for (i, m) in samplers.iter().enumerate() {
        let count = n_guided * (i + 1) / samplers.len() - n_guided * i / samplers.len();
        m.draw(count, rng, &mut xs);
    }
    let eps = n_base as f64 / n as f64;
    let share = if samplers.is_empty() {
        0.0
    } else {
        (1.0 - eps) / samplers.len() as f64
    };
    let log_q: Vec<f64> = xs
        .chunks_exact(dim)
        .map(|x| {
            let mut q = if eps > 0.0 { eps * proposal.density(x) } else { 0.0 };
            for m in &samplers {
                q += share * m.draw_density(x);
            }
            log_or_neg_inf(q)
        })
        .collect();

    // A sample is dead once it can no longer carry weight in any target: one
    // zero factor kills the belief, two kill every exclusion product.
    let tolerance = if targets.iter().all(|t| *t == ProductTarget::Belief) { 0 } else { 1 };
    let mut zeros = vec![0usize; n];
    let mut log_prior = vec![f64::NEG_INFINITY; n];
    let alive: Vec<usize> = (0..n).filter(|&k| log_q[k] > f64::NEG_INFINITY).collect();
    let gathered = gather(&xs, &alive, dim);
    let prior_vals: Vec<f64> = match prior {
        Prior::Uniform(region) => gathered.chunks_exact(dim).map(|x| region.density(x)).collect(),
        Prior::Belief(kde) => {
            let mut buf = vec![0.0; alive.len()];
            kde.subsampled(settings.subsample, rng).density_many(&gathered, &mut buf);
            buf
        }
    };
    for (&k, v) in alive.iter().zip(&prior_vals) {
        log_prior[k] = log_or_neg_inf(*v);
    }
    let mut log_msgs = vec![vec![f64::NEG_INFINITY; n]; incoming.len()];
    for (i, m) in incoming.iter().enumerate() {
        let alive: Vec<usize> = (0..n)
            .filter(|&k| log_prior[k] > f64::NEG_INFINITY && zeros[k] <= tolerance)
            .collect();
        let vals = m.values(&gather(&xs, &alive, dim), settings.subsample, rng);
        for (&k, v) in alive.iter().zip(&vals) {
            log_msgs[i][k] = log_or_neg_inf(*v);
            if *v <= 0.0 {
                zeros[k] += 1;
            }
        }
    }

    targets
        .iter()
        .map(|t| {
            let logw: Vec<f64> = (0..n)
                .map(|k| {
                    if log_q[k] == f64::NEG_INFINITY {
                        return f64::NEG_INFINITY;
                    }
                    let mut acc = log_prior[k] - log_q[k];
                    for (i, lm) in log_msgs.iter().enumerate() {
                        if *t != ProductTarget::Excluding(i) {
                            acc += lm[k];
                        }
                    }
                    acc
                })
                .collect();
            let w = normalize_log(&logw)
                .map_err(|_| Error::DegenerateWeights("product of messages vanishes on every sample".into()))?;
            Ok(ParticleSet::from_parts_unchecked(support, xs.clone(), w))
        })
        .collect()
}

fn gather(xs: &[f64], idx: &[usize], dim: usize) -> Vec<f64> {
    idx.iter().flat_map(|&k| xs[k * dim..(k + 1) * dim].iter().copied()).collect()
}

/// Outgoing variable-to-factor message: the prior belief times every other
/// incoming message, resampled.
pub fn multiply_messages<R: RngCore>(
    prior: &Prior,
    others: &[Kde],
    proposal: &Proposal,
    settings: &ProductSettings,
    rng: &mut R,
) -> Result<ParticleSet> {
    let w = weigh_products(prior, others, &[ProductTarget::Belief], proposal, settings, rng)?;
    Ok(resample_with(&w[0], settings.n_samples, rng))
}

/// New belief: the prior belief times all incoming messages, resampled.
pub fn update_belief<R: RngCore>(
    prior: &Prior,
    all_incoming: &[Kde],
    proposal: &Proposal,
    settings: &ProductSettings,
    rng: &mut R,
) -> Result<ParticleSet> {
    multiply_messages(prior, all_incoming, proposal, settings, rng)
}
