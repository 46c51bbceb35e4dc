//! Metropolis–Hastings over feature assignments.
//!
//! A proposal first samples a "fixed" tree `T̃` top-down, keeps the current
//! features on its inner nodes, redraws the features of its leaves from the
//! other features, and refreshes everything else uniformly. `T̃` is recovered
//! uniquely from the pair of assignments, so the forward and backward
//! proposal probabilities share every factor except the tree factor, which is
//! all [`log_acceptance`] evaluates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::ln_one_minus;
use crate::meta_tree::{MetaTreeState, Observations, TreeModel};
use crate::subspace_router::FeatureAssignment;
use crate::tree_topology::{inner_node_count, FullSubtree, NodeId};

/// Proposal family and its current parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposalKind {
    /// Every assignment equally likely.
    Uniform,
    /// `T̃` drawn from the tree prior over the whole perfect tree.
    PriorTree,
    /// Split probabilities `min(g_s|data, g_bar)`.
    PosteriorTruncated { g_bar: f64 },
    /// Split probabilities `alpha * g_s|data`.
    PosteriorReduced { alpha: f64 },
    /// Split probabilities `g_s + alpha (g_s|data - g_s)`.
    PosteriorAmplified { alpha: f64 },
}

impl ProposalKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::PriorTree => "prior_tree",
            Self::PosteriorTruncated { .. } => "posterior_truncated",
            Self::PosteriorReduced { .. } => "posterior_reduced",
            Self::PosteriorAmplified { .. } => "posterior_amplified",
        }
    }

    /// The tunable parameter (`g_bar` or `alpha`), if any.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            Self::Uniform | Self::PriorTree => None,
            Self::PosteriorTruncated { g_bar } => Some(g_bar),
            Self::PosteriorReduced { alpha } | Self::PosteriorAmplified { alpha } => Some(alpha),
        }
    }

    pub fn with_parameter(self, v: f64) -> Self {
        match self {
            Self::Uniform | Self::PriorTree => self,
            Self::PosteriorTruncated { .. } => Self::PosteriorTruncated { g_bar: v },
            Self::PosteriorReduced { .. } => Self::PosteriorReduced { alpha: v },
            Self::PosteriorAmplified { .. } => Self::PosteriorAmplified { alpha: v },
        }
    }

    pub fn is_posterior(&self) -> bool {
        self.parameter().is_some()
    }

    pub fn validate(&self) -> Result<()> {
        match self.parameter() {
            Some(v) if !(0.0..=1.0).contains(&v) => Err(Error::InvalidConfig(format!(
                "{} parameter {v} outside [0, 1]",
                self.name()
            ))),
            _ => Ok(()),
        }
    }

    /// Probability that `s` is an inner node of `T̃`, given the current state.
    pub fn fixed_tree_split(&self, meta: &MetaTreeState, s: NodeId, model: &TreeModel) -> f64 {
        let shape = &model.shape;
        match *self {
            Self::Uniform => 0.0,
            Self::PriorTree => shape.g(s),
            _ if !meta.is_touched_inner(s, shape) => 0.0,
            Self::PosteriorTruncated { g_bar } => meta.split_post(s, shape).min(g_bar),
            Self::PosteriorReduced { alpha } => alpha * meta.split_post(s, shape),
            Self::PosteriorAmplified { alpha } => {
                let g = shape.g(s);
                (g + alpha * (meta.split_post(s, shape) - g)).clamp(0.0, 1.0)
            }
        }
    }

    /// Whether a leaf `s` of `T̃` must change its feature.
    fn leaf_must_change(&self, meta: &MetaTreeState, s: NodeId, model: &TreeModel) -> bool {
        match self {
            Self::Uniform => false,
            Self::PriorTree => !model.shape.is_max_leaf(s),
            _ => meta.is_touched_inner(s, &model.shape),
        }
    }
}

/// A proposed assignment together with the fixed tree it was generated through.
#[derive(Debug, Clone)]
pub struct ProposalOutcome {
    pub k_star: FeatureAssignment,
    pub fixed_tree: FullSubtree,
    /// `ln q(T̃ | data, k)` under the current state.
    pub log_q_forward_tree: f64,
    /// Leaves of `T̃` whose feature was redrawn among the other features.
    pub n_changed: usize,
    /// Inner nodes of the perfect tree redrawn over all features.
    pub n_free: usize,
}

fn tree_factor(kind: &ProposalKind, meta: &MetaTreeState, tree: &FullSubtree, model: &TreeModel) -> f64 {
    let inner: f64 = tree
        .inner_nodes
        .iter()
        .map(|&s| kind.fixed_tree_split(meta, s, model).ln())
        .sum();
    let leaves: f64 = tree
        .leaf_nodes
        .iter()
        .map(|&s| ln_one_minus(kind.fixed_tree_split(meta, s, model)))
        .sum();
    inner + leaves
}

/// Draws `k*` from the proposal at the current state.
pub fn propose<R: Rng + ?Sized>(
    meta: &MetaTreeState,
    kind: &ProposalKind,
    model: &TreeModel,
    rng: &mut R,
) -> Result<ProposalOutcome> {
    let k = meta.k();
    let n_features = k.n_features();
    let total_inner = inner_node_count(model.d_max());
    if let ProposalKind::Uniform = kind {
        return Ok(ProposalOutcome {
            k_star: FeatureAssignment::uniform(model.d_max(), n_features, rng),
            fixed_tree: FullSubtree::root_only(),
            log_q_forward_tree: 0.0,
            n_changed: 0,
            n_free: total_inner,
        });
    }
    let mut inner = Vec::new();
    let mut leaves = Vec::new();
    let mut stack = vec![NodeId::ROOT];
    let mut log_q = 0.0;
    while let Some(s) = stack.pop() {
        let g = kind.fixed_tree_split(meta, s, model);
        if g > 0.0 && rng.random::<f64>() < g {
            log_q += g.ln();
            inner.push(s);
            stack.push(s.right());
            stack.push(s.left());
        } else {
            log_q += ln_one_minus(g);
            leaves.push(s);
        }
    }
    let mut keep: Vec<(NodeId, usize)> = inner.iter().map(|&s| (s, k.feature(s))).collect();
    let mut n_changed = 0;
    for &s in &leaves {
        if kind.leaf_must_change(meta, s, model) {
            let f = FeatureAssignment::draw_excluding(n_features, k.feature(s), rng)?;
            keep.push((s, f));
            n_changed += 1;
        }
    }
    let k_star = k.refreshed(rng.next_u64(), keep);
    Ok(ProposalOutcome {
        k_star,
        n_free: total_inner - inner.len() - n_changed,
        n_changed,
        fixed_tree: FullSubtree {
            inner_nodes: inner.into_iter().collect(),
            leaf_nodes: leaves.into_iter().collect(),
        },
        log_q_forward_tree: log_q,
    })
}

/// Reconstructs the unique fixed tree through which `from` proposes `to`.
pub fn outcome_for(
    kind: &ProposalKind,
    from: &MetaTreeState,
    to: &FeatureAssignment,
    model: &TreeModel,
) -> ProposalOutcome {
    let total_inner = inner_node_count(model.d_max());
    if let ProposalKind::Uniform = kind {
        return ProposalOutcome {
            k_star: to.clone(),
            fixed_tree: FullSubtree::root_only(),
            log_q_forward_tree: 0.0,
            n_changed: 0,
            n_free: total_inner,
        };
    }
    let k = from.k();
    let mut inner = Vec::new();
    let mut leaves = Vec::new();
    let mut n_changed = 0;
    let mut stack = vec![NodeId::ROOT];
    while let Some(s) = stack.pop() {
        let eligible = match kind {
            ProposalKind::PriorTree => !model.shape.is_max_leaf(s),
            _ => from.is_touched_inner(s, &model.shape),
        };
        if eligible && to.feature(s) == k.feature(s) {
            inner.push(s);
            stack.push(s.right());
            stack.push(s.left());
        } else {
            if kind.leaf_must_change(from, s, model) {
                n_changed += 1;
            }
            leaves.push(s);
        }
    }
    let fixed_tree = FullSubtree {
        inner_nodes: inner.iter().copied().collect(),
        leaf_nodes: leaves.into_iter().collect(),
    };
    ProposalOutcome {
        k_star: to.clone(),
        log_q_forward_tree: tree_factor(kind, from, &fixed_tree, model),
        n_free: total_inner - inner.len() - n_changed,
        n_changed,
        fixed_tree,
    }
}

/// Full `ln q(to | from)`, including the per-node redraw factors.
pub fn proposal_log_prob(
    kind: &ProposalKind,
    from: &MetaTreeState,
    to: &FeatureAssignment,
    model: &TreeModel,
) -> f64 {
    let outcome = outcome_for(kind, from, to, model);
    let p = model.n_features() as f64;
    let changed = match outcome.n_changed {
        0 => 0.0,
        _ if p < 2.0 => f64::NEG_INFINITY,
        n => -(n as f64) * (p - 1.0).ln(),
    };
    outcome.log_q_forward_tree + changed - outcome.n_free as f64 * p.ln()
}

/// `ln q(T̃ | data, k*)`: the tree factor of the reverse move, which needs the
/// meta-tree built for `k*`.
pub fn backward_tree_factor(
    kind: &ProposalKind,
    outcome: &ProposalOutcome,
    proposed: &MetaTreeState,
    model: &TreeModel,
) -> f64 {
    match kind {
        ProposalKind::Uniform => 0.0,
        _ => tree_factor(kind, proposed, &outcome.fixed_tree, model),
    }
}

/// `ln A(k*, k)` with the likelihood ratio raised to `beta`.
///
/// Only the tree factors of the proposal survive the cancellation; for the
/// uniform and prior-tree kinds they are identical in both directions and the
/// ratio reduces to the marginal likelihoods.
pub fn log_acceptance(
    current: &MetaTreeState,
    outcome: &ProposalOutcome,
    proposed: &MetaTreeState,
    kind: &ProposalKind,
    model: &TreeModel,
    beta: f64,
) -> f64 {
    let delta_lik = proposed.total_log_marginal() - current.total_log_marginal();
    let tempered = if beta == 0.0 { 0.0 } else { beta * delta_lik };
    let delta = if kind.is_posterior() {
        tempered + backward_tree_factor(kind, outcome, proposed, model) - outcome.log_q_forward_tree
    } else {
        tempered
    };
    if delta.is_nan() {
        f64::NEG_INFINITY
    } else {
        delta.min(0.0)
    }
}

/// Constants of the adaptive tuner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunerConfig {
    /// Target acceptance ratio.
    pub r_obj: f64,
    /// Discount of the acceptance counters.
    pub rho: f64,
    /// Discount of the parameter average.
    pub phi: f64,
    /// Starting value of the tuned parameter.
    pub initial: f64,
    /// Use `(phi * g + g_tmp) / N'` verbatim instead of the discounted average.
    pub literal_update: bool,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            r_obj: 0.3,
            rho: 0.99,
            phi: 0.999,
            initial: 0.5,
            literal_update: false,
        }
    }
}

/// Discounted acceptance-rate controller for `g_bar` (or `alpha`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerState {
    pub config: TunerConfig,
    pub n_accept: f64,
    pub n_propose: f64,
    pub n_propose_slow: f64,
    pub value: f64,
}

impl TunerState {
    pub fn new(config: TunerConfig) -> Self {
        Self {
            config,
            n_accept: 1.0,
            n_propose: 1.0,
            n_propose_slow: 1.0,
            value: config.initial.clamp(0.0, 1.0),
        }
    }

    /// Records one proposal and returns the updated parameter.
    pub fn step(&mut self, accepted: bool) -> f64 {
        let c = self.config;
        self.n_accept = c.rho * self.n_accept + if accepted { 1.0 } else { 0.0 };
        self.n_propose = c.rho * self.n_propose + 1.0;
        let rate = self.n_accept / self.n_propose;
        let g = self.value;
        let target = if rate > c.r_obj {
            g * c.r_obj / rate
        } else if rate >= 1.0 {
            g * c.r_obj
        } else {
            1.0 - (1.0 - g) * (1.0 - c.r_obj) / (1.0 - rate)
        };
        let old = self.n_propose_slow;
        self.n_propose_slow = c.phi * old + 1.0;
        let next = if c.literal_update {
            (c.phi * g + target) / self.n_propose_slow
        } else {
            (c.phi * g * old + target) / self.n_propose_slow
        };
        self.value = next.clamp(0.0, 1.0);
        self.value
    }

    pub fn acceptance_estimate(&self) -> f64 {
        self.n_accept / self.n_propose
    }
}

/// How long the recorded phase runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunLength {
    Iterations(usize),
    /// Stop after this many accepted proposals, or at `max_iterations`.
    UntilAccepted { accepted: usize, max_iterations: usize },
}

/// Sampler settings shared by single chains and replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub kind: ProposalKind,
    /// Adapt the proposal parameter during burn-in.
    pub auto_tune: bool,
    pub tuner: TunerConfig,
    pub burn_in: usize,
    pub length: RunLength,
}

impl ChainConfig {
    pub fn new(kind: ProposalKind, burn_in: usize, t_end: usize) -> Self {
        Self {
            kind,
            auto_tune: false,
            tuner: TunerConfig::default(),
            burn_in,
            length: RunLength::Iterations(t_end),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        match self.length {
            RunLength::Iterations(0) => Err(Error::InvalidConfig("t_end must be at least 1".into())),
            RunLength::UntilAccepted { max_iterations: 0, .. } => {
                Err(Error::InvalidConfig("max_iterations must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Random stream for chain `stream` under `seed`; streams are independent so
/// adding replicas never perturbs an existing chain.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Result of a single Metropolis–Hastings step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub accepted: bool,
    pub log_acceptance: f64,
}

/// One Markov chain over feature assignments.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub meta: Arc<MetaTreeState>,
    pub kind: ProposalKind,
    pub tuner: Option<TunerState>,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

impl ChainState {
    /// Starts from a uniform draw over all assignments.
    pub fn new(
        data: &Observations,
        model: &TreeModel,
        config: &ChainConfig,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = chain_rng(seed, stream);
        let k0 = FeatureAssignment::uniform(model.d_max(), model.n_features(), &mut rng);
        let meta = Arc::new(MetaTreeState::build(data, k0, model)?);
        let (kind, tuner) = match (config.auto_tune, config.kind.parameter()) {
            (true, Some(_)) => {
                let t = TunerState::new(config.tuner);
                (config.kind.with_parameter(t.value), Some(t))
            }
            _ => (config.kind, None),
        };
        Ok(Self {
            meta,
            kind,
            tuner,
            iteration: 0,
            rng,
        })
    }

    pub fn k(&self) -> &FeatureAssignment {
        self.meta.k()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.meta.total_log_marginal()
    }

    /// One proposal plus accept/reject at inverse temperature `beta`.
    pub fn step(&mut self, data: &Observations, model: &TreeModel, beta: f64, tune: bool) -> Result<StepResult> {
        self.iteration += 1;
        // a single feature admits exactly one assignment
        let result = if model.n_features() == 1 {
            StepResult {
                accepted: true,
                log_acceptance: 0.0,
            }
        } else {
            let outcome = propose(&self.meta, &self.kind, model, &mut self.rng)?;
            let proposed = MetaTreeState::build(data, outcome.k_star.clone(), model)?;
            let la = log_acceptance(&self.meta, &outcome, &proposed, &self.kind, model, beta);
            let u: f64 = self.rng.random();
            let accepted = la >= 0.0 || u < la.exp();
            if accepted {
                self.meta = Arc::new(proposed);
            }
            StepResult {
                accepted,
                log_acceptance: la,
            }
        };
        if tune {
            if let Some(t) = self.tuner.as_mut() {
                let v = t.step(result.accepted);
                self.kind = self.kind.with_parameter(v);
            }
        }
        Ok(result)
    }
}

/// Output of [`run_chain`].
#[derive(Debug, Clone)]
pub struct ChainRun {
    /// One entry per recorded iteration; rejected proposals repeat the state.
    pub samples: Vec<Arc<MetaTreeState>>,
    /// `ln p(y | x, k)` of the initial state followed by every iteration,
    /// burn-in included.
    pub log_likelihood_trace: Vec<f64>,
    /// Recorded-sample index at which each post-burn-in acceptance happened.
    pub accepted_at: Vec<usize>,
    pub burn_in_accepted: usize,
    /// Proposal as used after burn-in (with the tuned parameter).
    pub final_kind: ProposalKind,
}

impl ChainRun {
    pub fn accepted(&self) -> usize {
        self.accepted_at.len()
    }

    /// Post-burn-in acceptance ratio.
    pub fn acceptance_ratio(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.accepted() as f64 / self.samples.len() as f64
        }
    }
}

/// Runs burn-in (tuning when configured) and then records every iteration.
pub fn run_chain(data: &Observations, model: &TreeModel, config: &ChainConfig, seed: u64) -> Result<ChainRun> {
    run_chain_on_stream(data, model, config, seed, 0)
}

pub(crate) fn run_chain_on_stream(
    data: &Observations,
    model: &TreeModel,
    config: &ChainConfig,
    seed: u64,
    stream: u64,
) -> Result<ChainRun> {
    let mut chain = ChainState::new(data, model, config, seed, stream)?;
    let mut trace = vec![chain.log_likelihood()];
    let mut burn_in_accepted = 0;
    for _ in 0..config.burn_in {
        let r = chain.step(data, model, 1.0, true)?;
        burn_in_accepted += usize::from(r.accepted);
        trace.push(chain.log_likelihood());
    }
    let mut samples = Vec::new();
    let mut accepted_at = Vec::new();
    loop {
        let done = match config.length {
            RunLength::Iterations(t) => samples.len() >= t,
            RunLength::UntilAccepted {
                accepted,
                max_iterations,
            } => accepted_at.len() >= accepted || samples.len() >= max_iterations,
        };
        if done {
            break;
        }
        let r = chain.step(data, model, 1.0, false)?;
        if r.accepted {
            accepted_at.push(samples.len());
        }
        samples.push(Arc::clone(&chain.meta));
        trace.push(chain.log_likelihood());
    }
    Ok(ChainRun {
        samples,
        log_likelihood_trace: trace,
        accepted_at,
        burn_in_accepted,
        final_kind: chain.kind,
    })
}
