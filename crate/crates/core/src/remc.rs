//! Replica exchange: tempered chains with periodic neighbour swaps.
//!
//! Replica `j` targets `p(k | data)^{beta_j}`; only the `beta = 1` replica is
//! recorded. That replica runs on random stream 0, so with a single replica
//! the output is exactly [`run_chain`](crate::mcmc::run_chain)'s.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{chain_rng, ChainConfig, ChainRun, ChainState, RunLength};
use crate::meta_tree::{MetaTreeState, Observations, TreeModel};

/// Stream reserved for exchange decisions.
const EXCHANGE_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    /// Strictly increasing inverse temperatures ending at 1.
    pub betas: Vec<f64>,
    /// Iterations between exchange rounds.
    pub exchange_period: usize,
    /// Sequential swap attempts per round.
    pub attempts_per_period: usize,
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        Self::linear(8)
    }
}

impl ReplicaConfig {
    /// `beta_j = j / J` for `j = 1..=J`, swapping 4 times every 10 iterations.
    pub fn linear(replicas: usize) -> Self {
        let j = replicas.max(1);
        Self {
            betas: (1..=j).map(|i| i as f64 / j as f64).collect(),
            exchange_period: 10,
            attempts_per_period: 4,
        }
    }

    pub fn replicas(&self) -> usize {
        self.betas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("replicas: {m}")));
        let Some(&last) = self.betas.last() else {
            return bad("at least one inverse temperature is required");
        };
        if last != 1.0 {
            return bad("the last inverse temperature must be 1");
        }
        if self.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return bad("inverse temperatures must lie in [0, 1]");
        }
        if self.betas.windows(2).any(|w| w[0] >= w[1]) {
            return bad("inverse temperatures must be strictly increasing");
        }
        if self.exchange_period == 0 || self.attempts_per_period == 0 {
            return bad("exchange period and attempts must be positive");
        }
        Ok(())
    }
}

/// Log probability of swapping the states of neighbours `j` and `j+1`.
pub fn exchange_log_prob(logm_j: f64, logm_j1: f64, beta_j: f64, beta_j1: f64) -> f64 {
    let d = (beta_j1 - beta_j) * (logm_j - logm_j1);
    if d.is_nan() {
        // both likelihoods -inf, or zero gap times an infinity
        0.0
    } else {
        d.min(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct RemcRun {
    /// The `beta = 1` replica.
    pub run: ChainRun,
    pub exchange_attempts: usize,
    pub exchange_accepts: usize,
    /// Final state of every replica, coldest last.
    pub final_states: Vec<Arc<MetaTreeState>>,
}

pub fn run_remc(
    data: &Observations,
    model: &TreeModel,
    config: &ChainConfig,
    replicas: &ReplicaConfig,
    seed: u64,
) -> Result<RemcRun> {
    replicas.validate()?;
    config.validate()?;
    let j = replicas.replicas();
    let top = j - 1;
    let mut chains = (0..j)
        .map(|i| ChainState::new(data, model, config, seed, (top - i) as u64))
        .collect::<Result<Vec<_>>>()?;
    let mut exchange_rng = chain_rng(seed, EXCHANGE_STREAM);
    let period = replicas.exchange_period;

    let mut trace = vec![chains[top].log_likelihood()];
    let mut burn_in_accepted = 0;
    let mut samples = Vec::new();
    let mut accepted_at = Vec::new();
    let (mut attempts, mut accepts) = (0, 0);
    let mut t = 0usize;

    let finished = |samples: &Vec<Arc<MetaTreeState>>, accepted_at: &Vec<usize>| match config.length {
        RunLength::Iterations(n) => samples.len() >= n,
        RunLength::UntilAccepted {
            accepted,
            max_iterations,
        } => accepted_at.len() >= accepted || samples.len() >= max_iterations,
    };

    while !finished(&samples, &accepted_at) {
        let block = period - t % period;
        let burn_in = config.burn_in;
        let top_steps = chains
            .par_iter_mut()
            .enumerate()
            .map(|(i, chain)| {
                let beta = replicas.betas[i];
                let mut record = Vec::new();
                for s in 0..block {
                    let r = chain.step(data, model, beta, t + s < burn_in)?;
                    if i == top {
                        record.push((r.accepted, Arc::clone(&chain.meta)));
                    }
                }
                Ok(record)
            })
            .collect::<Result<Vec<_>>>()?
            .swap_remove(top);

        for (s, (accepted, meta)) in top_steps.into_iter().enumerate() {
            if t + s < burn_in {
                burn_in_accepted += usize::from(accepted);
            } else if finished(&samples, &accepted_at) {
                break;
            } else {
                if accepted {
                    accepted_at.push(samples.len());
                }
                samples.push(meta.clone());
            }
            trace.push(meta.total_log_marginal());
        }
        t += block;

        if j > 1 {
            for _ in 0..replicas.attempts_per_period {
                let a = exchange_rng.random_range(0..top);
                let lp = exchange_log_prob(
                    chains[a].log_likelihood(),
                    chains[a + 1].log_likelihood(),
                    replicas.betas[a],
                    replicas.betas[a + 1],
                );
                attempts += 1;
                let u: f64 = exchange_rng.random();
                if lp >= 0.0 || u < lp.exp() {
                    accepts += 1;
                    let (lo, hi) = chains.split_at_mut(a + 1);
                    std::mem::swap(&mut lo[a].meta, &mut hi[0].meta);
                }
            }
        }
    }

    Ok(RemcRun {
        run: ChainRun {
            samples,
            log_likelihood_trace: trace,
            accepted_at,
            burn_in_accepted,
            final_kind: chains[top].kind,
        },
        exchange_attempts: attempts,
        exchange_accepts: accepts,
        final_states: chains.into_iter().map(|c| c.meta).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leaf_models::{LeafModel, LeafModelSpec};
    use crate::mcmc::{run_chain, ProposalKind};
    use crate::subspace_router::FeatureSpaceConfig;
    use crate::tree_topology::TreeShapeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Observations, TreeModel) {
        let model = TreeModel::new(
            TreeShapeConfig::uniform(3, 0.75).unwrap(),
            FeatureSpaceConfig::binary(4).unwrap(),
            LeafModel::new(LeafModelSpec::BernoulliBeta { alpha: 0.5, beta: 0.5 }, 0).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Observations::new(4);
        for _ in 0..60 {
            let x: Vec<f64> = (0..4).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            let p = if x[2] > 0.5 { 0.9 } else { 0.15 };
            data.push(&x, f64::from(u8::from(rng.random::<f64>() < p))).unwrap();
        }
        (data, model)
    }

    #[test]
    fn exchange_examples() {
        assert_eq!(exchange_log_prob(-3.0, -3.0, 0.2, 0.7), 0.0);
        assert_eq!(exchange_log_prob(-1.0, -9.0, 0.5, 0.5), 0.0);
        assert_eq!(exchange_log_prob(-1.0, -2.0, 0.5, 1.0), 0.0);
        assert!((exchange_log_prob(-2.0, -1.0, 0.5, 1.0) + 0.5).abs() < 1e-15);
        assert_eq!(exchange_log_prob(-5.0, -1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(ReplicaConfig::default().validate().is_ok());
        assert_eq!(ReplicaConfig::default().betas[0], 0.125);
        let mut c = ReplicaConfig::linear(3);
        c.betas = vec![0.2, 0.2, 1.0];
        assert!(c.validate().is_err());
        c.betas = vec![0.2, 0.9];
        assert!(c.validate().is_err());
        c.betas = vec![0.3, 1.0];
        c.exchange_period = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_replica_is_plain_chain() {
        let (data, model) = setup(1);
        let mut cfg = ChainConfig::new(ProposalKind::PosteriorTruncated { g_bar: 0.7 }, 15, 40);
        cfg.auto_tune = true;
        let plain = run_chain(&data, &model, &cfg, 21).unwrap();
        let remc = run_remc(&data, &model, &cfg, &ReplicaConfig::linear(1), 21).unwrap();
        assert_eq!(remc.exchange_attempts, 0);
        assert_eq!(plain.log_likelihood_trace, remc.run.log_likelihood_trace);
        assert_eq!(plain.accepted_at, remc.run.accepted_at);
        for (a, b) in plain.samples.iter().zip(&remc.run.samples) {
            assert_eq!(a.k(), b.k());
        }
        assert_eq!(plain.final_kind, remc.run.final_kind);
    }

    #[test]
    fn swapped_caches_match_fresh_builds() {
        let (data, model) = setup(2);
        let cfg = ChainConfig::new(ProposalKind::PosteriorTruncated { g_bar: 0.75 }, 20, 100);
        let out = run_remc(&data, &model, &cfg, &ReplicaConfig::linear(4), 5).unwrap();
        assert!(out.exchange_accepts > 0);
        for m in &out.final_states {
            let fresh = MetaTreeState::build(&data, m.k().clone(), &model).unwrap();
            assert!((fresh.total_log_marginal() - m.total_log_marginal()).abs() < 1e-12);
        }
        assert_eq!(out.run.samples.len(), 100);
    }

    proptest::proptest! {
        #[test]
        fn untempered_neighbours_always_swap(a in -1e4f64..0.0, b in -1e4f64..0.0) {
            proptest::prop_assert_eq!(exchange_log_prob(a, b, 1.0, 1.0), 0.0);
        }

        #[test]
        fn exchange_is_a_log_probability(a in -1e4f64..0.0, b in -1e4f64..0.0, lo in 0.0f64..1.0, gap in 0.0f64..1.0) {
            let p = exchange_log_prob(a, b, lo, (lo + gap).min(1.0));
            proptest::prop_assert!(p <= 0.0);
        }
    }

    #[test]
    fn deterministic_with_exchanges() {
        let (data, model) = setup(4);
        let mut cfg = ChainConfig::new(ProposalKind::PosteriorTruncated { g_bar: 0.75 }, 10, 1);
        cfg.length = RunLength::UntilAccepted {
            accepted: 20,
            max_iterations: 10_000,
        };
        let rc = ReplicaConfig::linear(3);
        let a = run_remc(&data, &model, &cfg, &rc, 9).unwrap();
        let b = run_remc(&data, &model, &cfg, &rc, 9).unwrap();
        assert_eq!(a.run.log_likelihood_trace, b.run.log_likelihood_trace);
        assert_eq!(a.exchange_accepts, b.exchange_accepts);
        assert_eq!(a.run.accepted(), 20);
        assert_eq!(a.run.log_likelihood_trace.len(), 1 + 10 + a.run.samples.len());
    }
}
