//! Ground truth by enumerating every feature assignment.
//!
//! Only usable when `P^{|inner nodes|}` is small; the Experiment-scale case
//! (five binary features, depth three) has 78 125 assignments.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::leaf_models::{Loss, PredictiveDistribution};
use crate::math::log_sum_exp;
use crate::meta_tree::{MetaTreeState, Observations, TreeModel};
use crate::subspace_router::FeatureAssignment;
use crate::tree_topology::inner_node_count;

/// Largest assignment space enumerated unless a caller raises it.
pub const DEFAULT_CAP: u64 = 1_000_000;

/// `P^{|inner nodes|}`, or `None` on overflow.
pub fn assignment_space_size(d_max: usize, n_features: usize) -> Option<u64> {
    let inner = u32::try_from(inner_node_count(d_max)).ok()?;
    (n_features as u64).checked_pow(inner)
}

fn checked_size(model: &TreeModel, cap: u64) -> Result<u64> {
    match assignment_space_size(model.d_max(), model.n_features()) {
        Some(size) if size <= cap => Ok(size),
        other => Err(Error::Refused(format!(
            "assignment space of size {} exceeds the enumeration cap {cap}",
            other.map_or_else(|| "> 2^64".to_string(), |v| v.to_string())
        ))),
    }
}

/// Exact `p(k | data)` under a uniform prior on assignments, indexed by
/// [`FeatureAssignment::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    d_max: usize,
    n_features: usize,
    probs: Vec<f64>,
    log_marginals: Vec<f64>,
    log_evidence: f64,
}

impl ExactPosterior {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `ln p(y | x, k)` for every assignment.
    pub fn log_marginals(&self) -> &[f64] {
        &self.log_marginals
    }

    /// `ln p(y | x)` with `k` integrated out.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn prob(&self, k: &FeatureAssignment) -> f64 {
        k.index()
            .filter(|_| k.d_max() == self.d_max && k.n_features() == self.n_features)
            .and_then(|i| self.probs.get(i as usize).copied())
            .unwrap_or(0.0)
    }

    pub fn assignment(&self, index: u64) -> FeatureAssignment {
        FeatureAssignment::from_index(self.d_max, self.n_features, index)
    }

    /// Most probable assignment (smallest index on ties).
    pub fn mode(&self) -> FeatureAssignment {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        self.assignment(best as u64)
    }
}

pub fn exact_k_posterior(data: &Observations, model: &TreeModel) -> Result<ExactPosterior> {
    exact_k_posterior_with_cap(data, model, DEFAULT_CAP)
}

pub fn exact_k_posterior_with_cap(data: &Observations, model: &TreeModel, cap: u64) -> Result<ExactPosterior> {
    let size = checked_size(model, cap)?;
    model.validate(data)?;
    let (d, p) = (model.d_max(), model.n_features());
    // indexed collect keeps the reduction order independent of scheduling
    let log_marginals = (0..size)
        .into_par_iter()
        .map(|i| {
            let k = FeatureAssignment::from_index(d, p, i);
            MetaTreeState::build(data, k, model).map(|m| m.total_log_marginal())
        })
        .collect::<Result<Vec<f64>>>()?;
    let log_z = log_sum_exp(log_marginals.iter().copied());
    let probs = log_marginals.iter().map(|&l| (l - log_z).exp()).collect();
    Ok(ExactPosterior {
        d_max: d,
        n_features: p,
        probs,
        log_evidence: log_z - (size as f64).ln(),
        log_marginals,
    })
}

/// Exact posterior predictive at each of `xs`, averaged over every assignment.
pub fn exact_bayes_predictive_many(
    data: &Observations,
    xs: &[Vec<f64>],
    model: &TreeModel,
    loss: Loss,
) -> Result<Vec<PredictiveDistribution>> {
    let posterior = exact_k_posterior(data, model)?;
    exact_predictive_with(&posterior, data, xs, model, loss)
}

/// Same as [`exact_bayes_predictive_many`] with a posterior already at hand.
pub fn exact_predictive_with(
    posterior: &ExactPosterior,
    data: &Observations,
    xs: &[Vec<f64>],
    model: &TreeModel,
    loss: Loss,
) -> Result<Vec<PredictiveDistribution>> {
    if loss == Loss::ZeroOne && model.leaf.n_classes().is_none() {
        return Err(Error::Unsupported(format!(
            "0-1 loss needs a finite label set; {} is not finite",
            model.leaf.spec().family_name()
        )));
    }
    let per_k = (0..posterior.len() as u64)
        .into_par_iter()
        .filter(|&i| posterior.probs[i as usize] > 0.0)
        .map(|i| {
            let meta = MetaTreeState::build(data, posterior.assignment(i), model)?;
            let w = posterior.probs[i as usize];
            xs.iter()
                .map(|x| meta.predictive(x, model).map(|p| (w, p)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Vec<(f64, PredictiveDistribution)>> = vec![Vec::with_capacity(per_k.len()); xs.len()];
    for row in per_k {
        for (slot, wp) in out.iter_mut().zip(row) {
            slot.push(wp);
        }
    }
    Ok(out.into_iter().map(PredictiveDistribution::mix).collect())
}

pub fn exact_bayes_predictive(
    data: &Observations,
    x_new: &[f64],
    model: &TreeModel,
    loss: Loss,
) -> Result<PredictiveDistribution> {
    let mut v = exact_bayes_predictive_many(data, &[x_new.to_vec()], model, loss)?;
    Ok(v.remove(0))
}

/// The Bayes-optimal decision at `x_new`.
pub fn exact_bayes_predict(data: &Observations, x_new: &[f64], model: &TreeModel, loss: Loss) -> Result<f64> {
    let p = exact_bayes_predictive(data, x_new, model, loss)?;
    Ok(crate::predictor::decide(&p, loss))
}

/// Normalized visit counts over assignments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmpiricalDistribution {
    counts: HashMap<u64, u64>,
    total: u64,
}

impl EmpiricalDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a FeatureAssignment>) -> Self {
        let mut e = Self::new();
        for k in samples {
            e.add(k);
        }
        e
    }

    /// Counts one visit; assignments outside the enumerable space are ignored.
    pub fn add(&mut self, k: &FeatureAssignment) {
        if let Some(i) = k.index() {
            *self.counts.entry(i).or_default() += 1;
            self.total += 1;
        }
    }

    pub fn add_index(&mut self, index: u64) {
        *self.counts.entry(index).or_default() += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn prob(&self, index: u64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(&index).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn support(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        let t = self.total as f64;
        self.counts.iter().map(move |(&i, &c)| (i, c as f64 / t))
    }
}

fn js_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        0.5 * p * (2.0 * p / (p + q)).ln()
    }
}

/// Jensen–Shannon divergence (natural log) between two dense distributions.
pub fn js_divergence_dense(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let d: f64 = (0..n).map(|i| js_term(at(p, i), at(q, i)) + js_term(at(q, i), at(p, i))).sum();
    d.clamp(0.0, std::f64::consts::LN_2)
}

/// Jensen–Shannon divergence between the exact posterior and an empirical
/// distribution. An empty empirical distribution is read as uniform, the
/// distribution of the chain's starting point.
pub fn js_divergence(exact: &ExactPosterior, emp: &EmpiricalDistribution) -> f64 {
    if emp.total() == 0 {
        let u = 1.0 / exact.len() as f64;
        let d: f64 = exact.probs.iter().map(|&p| js_term(p, u) + js_term(u, p)).sum();
        return d.clamp(0.0, std::f64::consts::LN_2);
    }
    let d: f64 = (0..exact.len())
        .map(|i| {
            let (p, q) = (exact.probs[i], emp.prob(i as u64));
            js_term(p, q) + js_term(q, p)
        })
        .sum();
    d.clamp(0.0, std::f64::consts::LN_2)
}
