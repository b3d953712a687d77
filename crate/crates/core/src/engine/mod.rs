//! Nonparametric belief propagation on the snapshot factor graph.
//!
//! [`run`] executes the nine-step initialization pass, which forms the first
//! iteration, followed by flooding rounds. Every message and belief is a
//! resampled [`ParticleSet`]. Factor-to-variable messages are also kept in
//! functional form, so products evaluate them exactly and use them to
//! propose samples; variable-to-factor messages enter through kernel density
//! estimates.
//!
//! Internally everything is expressed relative to the base station, so the
//! engine output is exactly translation-equivariant.

pub mod filter;
pub mod graph;
mod guided;
pub mod product;

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Observations, Point2, Pose, StateVector};
use crate::particles::{
    mmse_estimate, reference_bandwidth, resample_with, Cover, Kde, ParticleSet, Proposal, ProposalRegion, Support,
};
use crate::seed::rng_from;

pub use filter::{filter_full, filter_message, filter_weighted, FactorMessage, FilterSettings, Incoming};
pub use graph::{build_graph, Edge, Factor, FactorGraph, FactorKind, Node, Variable};
pub use product::{
    multiply_messages, update_belief, weigh_products, weigh_products_dyn, MessageDensity, Prior, ProductSettings,
    ProductTarget,
};

/// Default upper bound on `M`, the incoming subsample size.
pub const DEFAULT_SUBSAMPLE: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Particles per message and belief (`N_s`).
    pub n_particles: usize,
    /// Iterations including the initialization pass.
    pub n_iterations: usize,
    /// KDE bandwidth for positions, meters. `None` derives it from the noise.
    pub bandwidth_position: Option<f64>,
    /// KDE bandwidth for the orientation, radians. `None` derives it from the noise.
    pub bandwidth_orientation: Option<f64>,
    /// `M`: incoming particles per filtering sum and kernel centres per KDE evaluation.
    pub incoming_subsample: usize,
    pub seed: u64,
    /// Proposal ball radius in units of the variable's bandwidth.
    pub cover_radius: f64,
    /// Re-draws with doubled bandwidths before giving up on a degenerate update.
    pub max_redraws: usize,
    /// Fail instead of falling back to the unweighted proposal.
    pub strict: bool,
    /// Iterations whose messages are kept for export.
    pub dump_iterations: BTreeSet<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_particles: 2000,
            n_iterations: 6,
            bandwidth_position: None,
            bandwidth_orientation: None,
            incoming_subsample: DEFAULT_SUBSAMPLE,
            seed: 0,
            cover_radius: 5.0,
            max_redraws: 3,
            strict: false,
            dump_iterations: BTreeSet::new(),
        }
    }
}

impl EngineConfig {
    pub fn with_particles(n_particles: usize) -> Self {
        EngineConfig {
            n_particles,
            incoming_subsample: n_particles.min(DEFAULT_SUBSAMPLE),
            ..EngineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 || self.n_iterations == 0 || self.incoming_subsample == 0 {
            return Err(Error::InvalidInput(
                "particle, iteration and subsample counts must be at least 1".into(),
            ));
        }
        for bw in [self.bandwidth_position, self.bandwidth_orientation].into_iter().flatten() {
            if !(bw > 0.0 && bw.is_finite()) {
                return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bw}")));
            }
        }
        if !(self.cover_radius > 0.0 && self.cover_radius.is_finite()) {
            return Err(Error::InvalidInput("cover radius must be positive".into()));
        }
        Ok(())
    }

    /// Position and orientation bandwidths actually used for `obs`.
    pub fn resolved_bandwidths(&self, obs: &Observations) -> (f64, f64) {
        let sd = obs.noise.paths.iter().map(|n| n.sigma_d).fold(0.0, f64::max);
        let srx = obs.noise.paths.iter().map(|n| n.sigma_rx).fold(0.0, f64::max);
        (
            self.bandwidth_position.unwrap_or_else(|| default_position_bandwidth(sd)),
            self.bandwidth_orientation.unwrap_or_else(|| default_orientation_bandwidth(srx)),
        )
    }
}

pub fn default_position_bandwidth(sigma_d: f64) -> f64 {
    (2.0 * sigma_d).max(0.5)
}

pub fn default_orientation_bandwidth(sigma_rx: f64) -> f64 {
    sigma_rx.max(0.5f64.to_radians())
}

/// MMSE estimates after every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTrace {
    pub estimates: Vec<StateVector>,
}

impl EstimateTrace {
    pub fn last(&self) -> &StateVector {
        self.estimates.last().expect("a trace has at least one iteration")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub iteration: usize,
    pub position: ParticleSet,
    pub orientation: ParticleSet,
    pub incidence: Vec<ParticleSet>,
    /// Belief on the base station: a single particle at `q*`.
    pub base_station: ParticleSet,
}

impl BeliefState {
    pub fn get(&self, v: Variable) -> &ParticleSet {
        match v {
            Variable::Position => &self.position,
            Variable::Orientation => &self.orientation,
            Variable::Incidence(j) => &self.incidence[j],
            Variable::BaseStation => &self.base_station,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Updates that needed at least one re-draw but then succeeded.
    pub recovered: usize,
    /// Updates that stayed degenerate and fell back to the plain proposal.
    pub fallbacks: usize,
    /// Orientation beliefs whose circular mean was undefined.
    pub orientation_fallbacks: usize,
}

impl Diagnostics {
    pub fn flagged(&self) -> bool {
        self.fallbacks > 0 || self.orientation_fallbacks > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageDump {
    pub edge: Edge,
    pub iteration: usize,
    pub particles: ParticleSet,
}

impl MessageDump {
    /// `msg_<from>_<to>_iter<l>.csv`
    pub fn file_name(&self) -> String {
        format!("msg_{}_{}_iter{}.csv", self.edge.from, self.edge.to, self.iteration)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: EstimateTrace,
    pub beliefs: BeliefState,
    pub diagnostics: Diagnostics,
    pub dumps: Vec<MessageDump>,
    /// Bandwidths used, (position m, orientation rad).
    pub bandwidths: (f64, f64),
}

const TAG_FILTER: u64 = 1;
const TAG_PRODUCT: u64 = 2;
const TAG_RESAMPLE: u64 = 3;
const TAG_COVER: u64 = 4;
const TAG_FALLBACK: u64 = 5;

struct Engine<'a> {
    obs: &'a Observations,
    cfg: &'a EngineConfig,
    graph: FactorGraph,
    bw_pos: f64,
    bw_ori: f64,
    iteration: usize,
    /// Latest particle message on every edge.
    msgs: BTreeMap<Edge, ParticleSet>,
    /// Functional form of the latest factor-to-variable messages.
    fmsgs: BTreeMap<Edge, FactorMessage>,
    /// Beliefs of the previous iteration, empty during initialization.
    beliefs: BTreeMap<Variable, ParticleSet>,
    diag: Diagnostics,
    dumps: Vec<MessageDump>,
}

/// Runs the estimator on one snapshot.
pub fn run(obs: &Observations, q_star: Point2, config: &EngineConfig) -> Result<RunOutput> {
    obs.validate()?;
    config.validate()?;
    if !q_star.is_finite() {
        return Err(Error::InvalidInput("base station position must be finite".into()));
    }
    let graph = build_graph(obs.n_paths())?;
    let (bw_pos, bw_ori) = config.resolved_bandwidths(obs);
    let mut eng = Engine {
        obs,
        cfg: config,
        graph,
        bw_pos,
        bw_ori,
        iteration: 1,
        msgs: BTreeMap::new(),
        fmsgs: BTreeMap::new(),
        beliefs: BTreeMap::new(),
        diag: Diagnostics::default(),
        dumps: Vec::new(),
    };

    let mut estimates = Vec::with_capacity(config.n_iterations);
    eng.initialize()?;
    estimates.push(eng.estimate(q_star));
    for l in 2..=config.n_iterations {
        eng.iteration = l;
        eng.flood()?;
        estimates.push(eng.estimate(q_star));
    }

    let b = |v: Variable| eng.beliefs[&v].clone();
    let beliefs = BeliefState {
        iteration: eng.iteration,
        position: b(Variable::Position).translated(q_star),
        orientation: b(Variable::Orientation),
        incidence: (0..obs.n_paths())
            .map(|j| b(Variable::Incidence(j)).translated(q_star))
            .collect(),
        base_station: ParticleSet::dirac_point(q_star),
    };
    let dumps = eng
        .dumps
        .into_iter()
        .map(|mut d| {
            if d.particles.support() == Support::Plane {
                d.particles = d.particles.translated(q_star);
            }
            d
        })
        .collect();
    Ok(RunOutput {
        trace: EstimateTrace { estimates },
        beliefs,
        diagnostics: eng.diag,
        dumps,
        bandwidths: (bw_pos, bw_ori),
    })
}

fn scale_of(attempt: usize) -> f64 {
    f64::from(1u32 << attempt.min(20))
}

impl Engine<'_> {
    fn n_paths(&self) -> usize {
        self.obs.n_paths()
    }

    fn rng(&self, coords: &[u64]) -> ChaCha8Rng {
        let mut c = vec![self.iteration as u64];
        c.extend_from_slice(coords);
        rng_from(self.cfg.seed, &c)
    }

    /// Configured kernel width of `v`: the floor for every particle set on `v`.
    fn floor_bandwidth(&self, v: Variable) -> f64 {
        match v {
            Variable::Orientation => self.bw_ori,
            _ => self.bw_pos,
        }
    }

    /// Kernel width for a particle set on `v`: the configured value, raised to
    /// the normal-reference width when the set is broad.
    fn bandwidth(&self, v: Variable, ps: &ParticleSet) -> f64 {
        self.floor_bandwidth(v).max(reference_bandwidth(ps))
    }

    /// Area of interest; the base station sits at the origin.
    fn region(&self, v: Variable) -> ProposalRegion {
        match v {
            Variable::Position => ProposalRegion::Disk {
                center: Point2::ORIGIN,
                radius: self.obs.max_distance(),
            },
            Variable::Incidence(j) => ProposalRegion::Disk {
                center: Point2::ORIGIN,
                radius: self.obs.triplets[j].d,
            },
            Variable::Orientation => ProposalRegion::full_circle(),
            Variable::BaseStation => unreachable!("Q is never sampled"),
        }
    }

    fn cover(&self, v: Variable, reference: &ParticleSet, tag: u64) -> Result<Proposal> {
        let mut rng = self.rng(&[TAG_COVER, Node::Variable(v).code(), tag]);
        let radius = self.cfg.cover_radius * self.bandwidth(v, reference);
        Ok(Proposal::Cover(Cover::around(
            reference,
            radius,
            self.cfg.incoming_subsample,
            &mut rng,
        )?))
    }

    /// Base proposal for filtering into `v`: the previous belief's cover once
    /// it exists, else the area of interest.
    fn filter_proposal(&self, v: Variable) -> Result<Proposal> {
        match self.beliefs.get(&v) {
            Some(b) => self.cover(v, b, 0),
            None => Ok(Proposal::Region(self.region(v))),
        }
    }

    /// Proposal for products at `v`: the previous belief's cover, or during
    /// initialization a cover of the messages received so far.
    fn product_proposal(&self, v: Variable, in_factors: &[Factor]) -> Result<Proposal> {
        if let Some(b) = self.beliefs.get(&v) {
            return self.cover(v, b, 0);
        }
        let received: Vec<&ParticleSet> = in_factors.iter().map(|f| &self.msgs[&Edge::new(*f, v)]).collect();
        if received.is_empty() {
            return Ok(Proposal::Region(self.region(v)));
        }
        self.cover(v, &pool_sets(&received), 1)
    }

    fn filter_settings(&self) -> FilterSettings {
        FilterSettings::new(self.cfg.n_particles, self.cfg.incoming_subsample)
    }

    fn product_settings(&self) -> ProductSettings {
        ProductSettings::new(self.cfg.n_particles, self.cfg.incoming_subsample)
    }

    fn record(&mut self, edge: Edge, particles: ParticleSet) {
        debug_assert!(particles.is_normalized(), "{edge} not normalized");
        debug_assert!(edge.to != Node::Variable(Variable::BaseStation));
        if self.cfg.dump_iterations.contains(&self.iteration) {
            self.dumps.push(MessageDump {
                edge,
                iteration: self.iteration,
                particles: particles.clone(),
            });
        }
        self.msgs.insert(edge, particles);
    }

    fn give_up<T>(&mut self, what: String, fallback: impl FnOnce(&mut Self) -> T) -> Result<T> {
        if self.cfg.strict {
            return Err(Error::DegenerateWeights(format!(
                "{what}: still degenerate after {} re-draws",
                self.cfg.max_redraws
            )));
        }
        self.diag.fallbacks += 1;
        Ok(fallback(self))
    }

    /// Computes and stores the message `factor -> target`.
    fn filter(&mut self, factor: Factor, target: Variable) -> Result<()> {
        let edge = Edge::new(factor, target);
        let base = self.filter_proposal(target)?;
        for attempt in 0..=self.cfg.max_redraws {
            let scale = scale_of(attempt);
            let incoming: Vec<Incoming> = factor
                .variables()
                .into_iter()
                .filter(|v| *v != target && *v != Variable::BaseStation)
                .map(|v| {
                    let m = self.msgs.get(&Edge::new(v, factor)).ok_or_else(|| {
                        Error::EstimationFailed(format!("schedule error: no message {v}->{factor}"))
                    })?;
                    Ok(Incoming::new(v, m.clone(), self.bandwidth(v, m) * scale))
                })
                .collect::<Result<_>>()?;
            let proposal = base.widened(scale);
            let mut rng = self.rng(&[TAG_FILTER, edge.from.code(), edge.to.code(), attempt as u64]);
            match filter_full(
                factor,
                target,
                &incoming,
                self.obs,
                Point2::ORIGIN,
                &proposal,
                &self.filter_settings(),
                &mut rng,
            ) {
                Ok((weighted, message)) => {
                    if attempt > 0 {
                        self.diag.recovered += 1;
                    }
                    let ps = resample_with(&weighted, self.cfg.n_particles, &mut rng);
                    self.fmsgs.insert(edge, message);
                    self.record(edge, ps);
                    return Ok(());
                }
                Err(Error::DegenerateWeights(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let ps = self.give_up(format!("message {edge}"), |eng| eng.unweighted(&base, edge))?;
        self.fmsgs.remove(&edge);
        self.record(edge, ps);
        Ok(())
    }

    fn unweighted(&self, proposal: &Proposal, edge: Edge) -> ParticleSet {
        let mut rng = self.rng(&[TAG_FALLBACK, edge.from.code(), edge.to.code()]);
        let (xs, _) = proposal.draw(self.cfg.n_particles, &mut rng);
        let n = self.cfg.n_particles;
        ParticleSet::from_parts_unchecked(proposal.support(), xs, vec![1.0 / n as f64; n])
    }

    /// Forms products at `v`: messages to each factor in `outs`, and the new
    /// belief if `with_belief`. Uses whatever factor-to-`v` messages exist.
    fn products(&mut self, v: Variable, outs: &[Factor], with_belief: bool) -> Result<Option<ParticleSet>> {
        let node = Node::Variable(v);
        let in_factors: Vec<Factor> = self
            .graph
            .factors_of(v)
            .into_iter()
            .filter(|f| self.msgs.contains_key(&Edge::new(*f, v)))
            .collect();
        let mut targets: Vec<ProductTarget> = outs
            .iter()
            .map(|f| match in_factors.iter().position(|g| g == f) {
                Some(i) => ProductTarget::Excluding(i),
                None => ProductTarget::Belief,
            })
            .collect();
        if with_belief {
            targets.push(ProductTarget::Belief);
        }
        let base = self.product_proposal(v, &in_factors)?;
        let mut weighted = None;
        for attempt in 0..=self.cfg.max_redraws {
            let scale = scale_of(attempt);
            // Messages that fell back to plain proposal draws have no
            // functional form; their kernel density estimate stands in.
            let kdes: Vec<Option<Kde>> = in_factors
                .iter()
                .map(|f| {
                    let e = Edge::new(*f, v);
                    if self.fmsgs.contains_key(&e) {
                        Ok(None)
                    } else {
                        let m = &self.msgs[&e];
                        Kde::new(m.clone(), self.bandwidth(v, m) * scale).map(Some)
                    }
                })
                .collect::<Result<_>>()?;
            let incoming: Vec<&dyn MessageDensity> = in_factors
                .iter()
                .zip(&kdes)
                .map(|(f, k)| match k {
                    Some(k) => k as &dyn MessageDensity,
                    None => &self.fmsgs[&Edge::new(*f, v)] as &dyn MessageDensity,
                })
                .collect();
            let prior = match self.beliefs.get(&v) {
                Some(b) => Prior::Belief(Kde::new(b.clone(), self.bandwidth(v, b) * scale)?),
                None => Prior::Uniform(self.region(v)),
            };
            let mut rng = self.rng(&[TAG_PRODUCT, node.code(), attempt as u64]);
            match weigh_products_dyn(
                &prior,
                &incoming,
                &targets,
                &base.widened(scale),
                &self.product_settings(),
                &mut rng,
            ) {
                Ok(w) => {
                    if attempt > 0 {
                        self.diag.recovered += 1;
                    }
                    weighted = Some(w);
                    break;
                }
                Err(Error::DegenerateWeights(_)) => continue,
                Err(e) => return Err(e),
            }
        }

        let n = self.cfg.n_particles;
        let mut belief = None;
        match weighted {
            Some(sets) => {
                for (k, set) in sets.into_iter().enumerate() {
                    if k < outs.len() {
                        let edge = Edge::new(v, outs[k]);
                        let mut rng = self.rng(&[TAG_RESAMPLE, edge.from.code(), edge.to.code()]);
                        let ps = resample_with(&set, n, &mut rng);
                        self.record(edge, ps);
                    } else {
                        let mut rng = self.rng(&[TAG_RESAMPLE, node.code()]);
                        belief = Some(resample_with(&set, n, &mut rng));
                    }
                }
            }
            None => {
                let fallback = self.give_up(format!("products at {v}"), |eng| {
                    (0..targets.len())
                        .map(|k| match outs.get(k) {
                            Some(f) => eng.unweighted(&base, Edge::new(v, *f)),
                            None => eng.unweighted(&base, Edge::new(v, v_self_factor(v))),
                        })
                        .collect::<Vec<_>>()
                })?;
                for (k, ps) in fallback.into_iter().enumerate() {
                    if k < outs.len() {
                        self.record(Edge::new(v, outs[k]), ps);
                    } else {
                        belief = Some(ps);
                    }
                }
            }
        }
        Ok(belief)
    }

    /// The nine-step initialization pass, then the first beliefs.
    fn initialize(&mut self) -> Result<()> {
        let paths = 0..self.n_paths();
        // 1) AOD -> S
        for j in paths.clone() {
            self.filter(Factor::aod(j), Variable::Incidence(j))?;
        }
        // 2) S -> D is the AOD message itself
        for j in paths.clone() {
            let m = self.msgs[&Edge::new(Factor::aod(j), Variable::Incidence(j))].clone();
            self.record(Edge::new(Variable::Incidence(j), Factor::distance(j)), m);
        }
        // 3) D -> P
        for j in paths.clone() {
            self.filter(Factor::distance(j), Variable::Position)?;
        }
        // 4) P -> D, P -> AOA
        let outs: Vec<Factor> = paths
            .clone()
            .map(Factor::distance)
            .chain(paths.clone().map(Factor::aoa))
            .collect();
        self.products(Variable::Position, &outs, false)?;
        // 5) D -> S
        for j in paths.clone() {
            self.filter(Factor::distance(j), Variable::Incidence(j))?;
        }
        // 6) S -> AOA
        for j in paths.clone() {
            self.products(Variable::Incidence(j), &[Factor::aoa(j)], false)?;
        }
        // 7) AOA -> ALPHA
        for j in paths.clone() {
            self.filter(Factor::aoa(j), Variable::Orientation)?;
        }
        // 8) ALPHA -> AOA
        let outs: Vec<Factor> = paths.clone().map(Factor::aoa).collect();
        self.products(Variable::Orientation, &outs, false)?;
        // 9) AOA -> P, AOA -> S
        for j in paths.clone() {
            self.filter(Factor::aoa(j), Variable::Position)?;
            self.filter(Factor::aoa(j), Variable::Incidence(j))?;
        }

        let mut beliefs = BTreeMap::new();
        for v in self.graph.variables() {
            let b = self.products(v, &[], true)?.expect("belief requested");
            beliefs.insert(v, b);
        }
        self.beliefs = beliefs;
        Ok(())
    }

    /// One flooding round: every factor-to-variable message from the current
    /// variable-to-factor messages, then every product and belief.
    fn flood(&mut self) -> Result<()> {
        for j in 0..self.n_paths() {
            let s = Variable::Incidence(j);
            self.filter(Factor::aod(j), s)?;
            self.filter(Factor::distance(j), s)?;
            self.filter(Factor::distance(j), Variable::Position)?;
            self.filter(Factor::aoa(j), s)?;
            self.filter(Factor::aoa(j), Variable::Position)?;
            self.filter(Factor::aoa(j), Variable::Orientation)?;
        }

        let mut beliefs = BTreeMap::new();
        for v in self.graph.variables() {
            // AOD factors never use what S sends back: their only other
            // neighbour is the base station.
            let outs: Vec<Factor> = self
                .graph
                .factors_of(v)
                .into_iter()
                .filter(|f| f.kind != FactorKind::Aod)
                .collect();
            let b = self.products(v, &outs, true)?.expect("belief requested");
            beliefs.insert(v, b);
        }
        self.beliefs = beliefs;
        Ok(())
    }

    fn estimate(&mut self, q_star: Point2) -> StateVector {
        let point = |ps: &ParticleSet| {
            let m = mmse_estimate(ps).expect("planar MMSE is always defined");
            Point2::new(m[0], m[1]) + q_star
        };
        let b_alpha = &self.beliefs[&Variable::Orientation];
        let alpha = match mmse_estimate(b_alpha) {
            Ok(m) => m[0],
            Err(_) => {
                self.diag.orientation_fallbacks += 1;
                b_alpha.angle(0)
            }
        };
        StateVector {
            mobile: Pose::new(point(&self.beliefs[&Variable::Position]), wrap_angle(alpha)),
            incidence_points: (0..self.n_paths())
                .map(|j| point(&self.beliefs[&Variable::Incidence(j)]))
                .collect(),
        }
    }
}

/// Seed key for a fallback belief, which has no outgoing edge of its own.
fn v_self_factor(v: Variable) -> Factor {
    match v {
        Variable::Incidence(j) => Factor::aod(j),
        _ => Factor::aod(usize::MAX >> 32),
    }
}

/// Equal-weight mixture of several particle sets.
fn pool_sets(sets: &[&ParticleSet]) -> ParticleSet {
    let support = sets[0].support();
    let k = sets.len() as f64;
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for s in sets {
        samples.extend_from_slice(s.samples());
        weights.extend(s.weights().iter().map(|w| w / k));
    }
    ParticleSet::from_parts_unchecked(support, samples, weights)
}
