//! Run configuration read from TOML; every field has a default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::DataSchema;
use crate::leaf_models::{LeafModel, LeafModelSpec, Loss};
use crate::mcmc::{ChainConfig, ProposalKind, RunLength, TunerConfig};
use crate::meta_tree::TreeModel;
use crate::remc::ReplicaConfig;
use crate::subspace_router::FeatureSpaceConfig;
use crate::tree_topology::TreeShapeConfig;

/// Split probability, one value for every node or one per depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitPrior {
    Uniform(f64),
    PerDepth(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalName {
    Uniform,
    PriorTree,
    PosteriorTruncated,
    PosteriorReduced,
    PosteriorAmplified,
}

impl ProposalName {
    pub const ALL: [ProposalName; 5] = [
        Self::Uniform,
        Self::PriorTree,
        Self::PosteriorTruncated,
        Self::PosteriorReduced,
        Self::PosteriorAmplified,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub kind: ProposalName,
    pub g_bar: f64,
    pub alpha: f64,
    /// Tune `g_bar` / `alpha` during burn-in, starting from `tuner.initial`.
    pub auto_tune: bool,
    pub tuner: TunerConfig,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            kind: ProposalName::PosteriorTruncated,
            g_bar: 0.75,
            alpha: 0.5,
            auto_tune: false,
            tuner: TunerConfig::default(),
        }
    }
}

impl ProposalConfig {
    pub fn kind_for(&self, name: ProposalName) -> ProposalKind {
        match name {
            ProposalName::Uniform => ProposalKind::Uniform,
            ProposalName::PriorTree => ProposalKind::PriorTree,
            ProposalName::PosteriorTruncated => ProposalKind::PosteriorTruncated { g_bar: self.g_bar },
            ProposalName::PosteriorReduced => ProposalKind::PosteriorReduced { alpha: self.alpha },
            ProposalName::PosteriorAmplified => ProposalKind::PosteriorAmplified { alpha: self.alpha },
        }
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind_for(self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicaSettings {
    /// Number of replicas with the linear schedule; ignored when `betas` is set.
    pub count: usize,
    pub betas: Option<Vec<f64>>,
    pub exchange_period: usize,
    pub attempts_per_period: usize,
}

impl Default for ReplicaSettings {
    fn default() -> Self {
        let d = ReplicaConfig::default();
        Self {
            count: d.replicas(),
            betas: None,
            exchange_period: d.exchange_period,
            attempts_per_period: d.attempts_per_period,
        }
    }
}

impl ReplicaSettings {
    pub fn to_config(&self) -> ReplicaConfig {
        let mut c = ReplicaConfig::linear(self.count);
        if let Some(b) = &self.betas {
            c.betas = b.clone();
        }
        c.exchange_period = self.exchange_period;
        c.attempts_per_period = self.attempts_per_period;
        c
    }
}

/// Which generating model `synth` and the experiment commands use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueModelName {
    /// `k`, `T` and the leaf parameters drawn from the priors.
    Prior,
    /// Fixed depth-3 model on five binary features.
    Uneven,
    /// Balanced depth-2 model.
    ModelA,
    /// Unbalanced depth-3 comb.
    ModelB,
    /// Full depth-3 model.
    ModelC,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub true_model: TrueModelName,
    pub n_continuous: usize,
    pub n_binary: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub model_seed: u64,
    pub data_seed: u64,
    /// Training sizes for learning-curve style sweeps.
    pub train_sizes: Vec<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            true_model: TrueModelName::Prior,
            n_continuous: 0,
            n_binary: 5,
            n_train: 100,
            n_test: 100,
            model_seed: 0,
            data_seed: 0,
            train_sizes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Proposal kinds compared by `convergence`.
    pub kinds: Vec<ProposalName>,
    /// Datasets drawn per model.
    pub replications: usize,
    /// Target accepted count per run.
    pub accepted: usize,
    /// JS divergence is recorded every this many acceptances.
    pub checkpoint_every: usize,
    /// Iteration cap per run.
    pub max_iterations: usize,
    /// Models used by `proposal-compare`.
    pub models: Vec<TrueModelName>,
    /// Enumeration cap for exact posteriors.
    pub oracle_cap: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kinds: vec![ProposalName::Uniform, ProposalName::PosteriorTruncated],
            replications: 10,
            accepted: 1000,
            checkpoint_every: 10,
            max_iterations: 2_000_000,
            models: vec![TrueModelName::ModelA, TrueModelName::ModelB, TrueModelName::ModelC],
            oracle_cap: crate::exact_oracle::DEFAULT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub d_max: usize,
    pub split_prior: SplitPrior,
    pub loss: Loss,
    pub burn_in: usize,
    /// Recorded iterations, or the iteration cap when `until_accepted` is set.
    pub t_end: usize,
    pub until_accepted: Option<usize>,
    pub leaf: LeafModelSpec,
    pub proposal: ProposalConfig,
    /// Replica exchange is used when this section is present.
    pub replicas: Option<ReplicaSettings>,
    /// Initial `[low, high)` per continuous feature name.
    pub ranges: BTreeMap<String, [f64; 2]>,
    pub data: Option<DataSchema>,
    pub synth: SynthConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d_max: 10,
            split_prior: SplitPrior::Uniform(0.75),
            loss: Loss::ZeroOne,
            burn_in: 1000,
            t_end: 1000,
            until_accepted: None,
            leaf: LeafModelSpec::BernoulliBeta { alpha: 0.5, beta: 0.5 },
            proposal: ProposalConfig::default(),
            replicas: None,
            ranges: BTreeMap::new(),
            data: None,
            synth: SynthConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        let p = match &self.leaf {
            LeafModelSpec::LinregNormalGamma { mean, intercept, .. } if !mean.is_empty() => {
                mean.len().saturating_sub(usize::from(*intercept))
            }
            _ => 0,
        };
        LeafModel::new(self.leaf.clone(), p)?;
        self.chain_config().validate()?;
        if let Some(r) = &self.replicas {
            r.to_config().validate()?;
        }
        if self.synth.n_continuous + self.synth.n_binary == 0 {
            return Err(Error::InvalidConfig("synth needs at least one feature".into()));
        }
        if self.experiment.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("experiment.checkpoint_every must be positive".into()));
        }
        for (name, &[a, b]) in &self.ranges {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidConfig(format!("range of `{name}` must satisfy low < high")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Result<TreeShapeConfig> {
        match &self.split_prior {
            SplitPrior::Uniform(g) => TreeShapeConfig::uniform(self.d_max, *g),
            SplitPrior::PerDepth(g) => TreeShapeConfig::per_depth(self.d_max, g),
        }
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            kind: self.proposal.kind(),
            auto_tune: self.proposal.auto_tune,
            tuner: self.proposal.tuner,
            burn_in: self.burn_in,
            length: match self.until_accepted {
                Some(a) => RunLength::UntilAccepted {
                    accepted: a,
                    max_iterations: self.t_end,
                },
                None => RunLength::Iterations(self.t_end),
            },
        }
    }

    /// Model for data with named features; continuous ranges come from the
    /// `ranges` overrides or else from `rows`.
    pub fn model_for(&self, names: &[String], n_continuous: usize, rows: &[Vec<f64>]) -> Result<TreeModel> {
        let n_binary = names.len() - n_continuous;
        let fitted = FeatureSpaceConfig::from_rows(rows.iter().map(Vec::as_slice), n_continuous, n_binary)?;
        let ranges = (0..n_continuous)
            .map(|j| self.ranges.get(&names[j]).map_or(fitted.ranges()[j], |&[a, b]| (a, b)))
            .collect();
        let space = FeatureSpaceConfig::new(ranges, n_binary)?;
        let leaf = LeafModel::new(self.leaf.clone(), n_continuous)?;
        Ok(TreeModel::new(self.shape()?, space, leaf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.d_max, 10);
        assert_eq!(c.split_prior, SplitPrior::Uniform(0.75));
        assert_eq!(c.proposal.tuner.r_obj, 0.3);
        assert_eq!(c.proposal.tuner.rho, 0.99);
        assert_eq!(c.proposal.tuner.phi, 0.999);
    }

    #[test]
    fn parses_sections() {
        let text = r#"
            d_max = 3
            split_prior = [0.5, 0.5, 0.4]
            loss = "squared"
            until_accepted = 100
            t_end = 5000
            [leaf]
            family = "poisson_gamma"
            shape = 2.0
            rate = 1.0
            [proposal]
            kind = "posterior_amplified"
            alpha = 0.3
            auto_tune = true
            [replicas]
            count = 4
            [ranges]
            age = [0.0, 100.0]
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.proposal.kind(), ProposalKind::PosteriorAmplified { alpha: 0.3 });
        assert_eq!(c.replicas.as_ref().unwrap().to_config().betas, [0.25, 0.5, 0.75, 1.0]);
        assert_eq!(
            c.chain_config().length,
            RunLength::UntilAccepted {
                accepted: 100,
                max_iterations: 5000
            }
        );
        assert_eq!(c.shape().unwrap().g(crate::NodeId(2)), 0.5);
        assert_eq!(c.shape().unwrap().g(crate::NodeId(5)), 0.4);
    }

    #[test]
    fn effective_config_round_trips() {
        let c = RunConfig::from_toml("seed = 4\n[proposal]\nkind = \"uniform\"\n").unwrap();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("split_prior = 1.5").is_err());
        assert!(RunConfig::from_toml("[proposal]\ng_bar = 2.0").is_err());
        assert!(RunConfig::from_toml("unknown_key = 1").is_err());
        assert!(RunConfig::from_toml("[replicas]\nbetas = [0.5, 0.9]").is_err());
        assert!(RunConfig::from_toml("t_end = 0").is_err());
    }
}
