//! Experiment drivers shared by the CLI and the test suites.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact_oracle::{exact_k_posterior_with_cap, js_divergence, EmpiricalDistribution, ExactPosterior};
use crate::harness::config::{ProposalName, RunConfig, TrueModelName};
use crate::harness::data::Dataset;
use crate::harness::synth::synth_generate;
use crate::mcmc::{run_chain, ChainConfig, ChainRun, RunLength};
use crate::meta_tree::{Observations, TreeModel};
use crate::predictor::{Evaluation, PosteriorEnsemble};
use crate::remc::run_remc;

/// Model and observations for a dataset under `cfg`.
pub fn prepare(cfg: &RunConfig, ds: &Dataset) -> Result<(TreeModel, Observations)> {
    let model = cfg.model_for(&ds.feature_names, ds.n_continuous(), &ds.rows())?;
    let obs = ds.observations()?;
    model.validate(&obs)?;
    Ok((model, obs))
}

/// Runs the sampler selected by `cfg` (replica exchange when configured).
pub fn sample(cfg: &RunConfig, chain: &ChainConfig, model: &TreeModel, data: &Observations, seed: u64) -> Result<ChainRun> {
    match &cfg.replicas {
        Some(r) => Ok(run_remc(data, model, chain, &r.to_config(), seed)?.run),
        None => run_chain(data, model, chain, seed),
    }
}

/// JS divergence to `exact` each time the accepted count reaches a multiple
/// of `every`, starting with the count 0 (uniform starting distribution).
pub fn js_trace(exact: &ExactPosterior, run: &ChainRun, every: usize) -> Vec<(usize, f64)> {
    let mut emp = EmpiricalDistribution::new();
    let mut out = vec![(0, js_divergence(exact, &emp))];
    let mut next = 0;
    for (i, s) in run.samples.iter().enumerate() {
        emp.add(s.k());
        while next < run.accepted_at.len() && run.accepted_at[next] == i {
            next += 1;
            if next % every == 0 {
                out.push((next, js_divergence(exact, &emp)));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct KindConvergence {
    pub kind: ProposalName,
    /// `(accepted count, mean JS divergence)` over replications.
    pub mean_trace: Vec<(usize, f64)>,
    /// Per replication traces.
    pub traces: Vec<Vec<(usize, f64)>>,
    pub acceptance_ratios: Vec<f64>,
    pub mean_acceptance_ratio: f64,
}

impl KindConvergence {
    pub fn js_at(&self, accepted: usize) -> Option<f64> {
        self.mean_trace.iter().find(|(c, _)| *c == accepted).map(|&(_, v)| v)
    }

    pub fn final_js(&self) -> f64 {
        self.mean_trace.last().map_or(f64::NAN, |&(_, v)| v)
    }
}

/// One replication: the dataset, its model and its exact posterior.
pub struct OracleInstance {
    pub data: Observations,
    pub model: TreeModel,
    pub exact: ExactPosterior,
}

pub fn oracle_instance(cfg: &RunConfig, true_model: TrueModelName, replication: usize) -> Result<OracleInstance> {
    let mut c = cfg.clone();
    c.synth.true_model = true_model;
    let (ds, _) = synth_generate(
        &c,
        c.synth.model_seed.wrapping_add(replication as u64),
        c.synth.data_seed.wrapping_add(replication as u64),
        c.synth.n_train,
    )?;
    let (model, data) = prepare(&c, &ds)?;
    let exact = exact_k_posterior_with_cap(&data, &model, c.experiment.oracle_cap)?;
    Ok(OracleInstance { data, model, exact })
}

fn until_accepted(cfg: &RunConfig, kind: ProposalName) -> ChainConfig {
    let mut chain = cfg.chain_config();
    chain.kind = cfg.proposal.kind_for(kind);
    chain.length = RunLength::UntilAccepted {
        accepted: cfg.experiment.accepted,
        max_iterations: cfg.experiment.max_iterations,
    };
    chain
}

fn replication_seed(cfg: &RunConfig, rep: usize) -> u64 {
    cfg.seed.wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9))
}

/// JS-divergence traces per proposal kind against exact posteriors, on
/// `experiment.replications` datasets from `synth.true_model`.
pub fn convergence(cfg: &RunConfig) -> Result<Vec<KindConvergence>> {
    let reps = cfg.experiment.replications.max(1);
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let inst = oracle_instance(cfg, cfg.synth.true_model, rep)?;
            cfg.experiment
                .kinds
                .iter()
                .map(|&kind| {
                    let chain = until_accepted(cfg, kind);
                    let run = sample(cfg, &chain, &inst.model, &inst.data, replication_seed(cfg, rep))?;
                    Ok((js_trace(&inst.exact, &run, cfg.experiment.checkpoint_every), run.acceptance_ratio()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cfg
        .experiment
        .kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let traces: Vec<_> = per_rep.iter().map(|r| r[i].0.clone()).collect();
            let acceptance_ratios: Vec<f64> = per_rep.iter().map(|r| r[i].1).collect();
            KindConvergence {
                kind,
                mean_trace: mean_traces(&traces),
                mean_acceptance_ratio: mean(&acceptance_ratios),
                acceptance_ratios,
                traces,
            }
        })
        .collect())
}

/// Pointwise mean; a trace that stopped early (iteration cap) holds its
/// last value.
fn mean_traces(traces: &[Vec<(usize, f64)>]) -> Vec<(usize, f64)> {
    let longest = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|j| {
            let count = traces.iter().find_map(|t| t.get(j).map(|p| p.0)).unwrap_or(0);
            let vals: Vec<f64> = traces
                .iter()
                .filter_map(|t| t.get(j).or_else(|| t.last()).map(|p| p.1))
                .collect();
            (count, mean(&vals))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// The four proposals compared in the acceptance-ratio table.
pub const COMPARED_KINDS: [ProposalName; 4] = [
    ProposalName::Uniform,
    ProposalName::PriorTree,
    ProposalName::PosteriorTruncated,
    ProposalName::PosteriorAmplified,
];

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceRow {
    pub model: TrueModelName,
    pub kind: ProposalName,
    pub acceptance_ratios: Vec<f64>,
    pub mean_acceptance_ratio: f64,
}

/// Post-burn-in acceptance ratio of each compared proposal on each model in
/// `experiment.models`, averaged over replications.
pub fn proposal_compare(cfg: &RunConfig) -> Result<Vec<AcceptanceRow>> {
    let reps = cfg.experiment.replications.max(1);
    let mut rows = Vec::new();
    for &model_name in &cfg.experiment.models {
        let ratios = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut c = cfg.clone();
                c.synth.true_model = model_name;
                let (ds, _) = synth_generate(
                    &c,
                    c.synth.model_seed.wrapping_add(rep as u64),
                    c.synth.data_seed.wrapping_add(rep as u64),
                    c.synth.n_train,
                )?;
                let (model, data) = prepare(&c, &ds)?;
                COMPARED_KINDS
                    .iter()
                    .map(|&kind| {
                        let mut chain = c.chain_config();
                        chain.kind = c.proposal.kind_for(kind);
                        run_chain(&data, &model, &chain, replication_seed(cfg, rep)).map(|r| r.acceptance_ratio())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, &kind) in COMPARED_KINDS.iter().enumerate() {
            let v: Vec<f64> = ratios.iter().map(|r| r[i]).collect();
            rows.push(AcceptanceRow {
                model: model_name,
                kind,
                mean_acceptance_ratio: mean(&v),
                acceptance_ratios: v,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub proposal: String,
    pub final_parameter: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub iterations: usize,
    pub acceptance_ratio: f64,
    pub seconds_per_iteration: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip)]
    pub evaluation: Option<Evaluation>,
}

/// Samples on `train` and evaluates the Bayes decision on `test`.
pub fn fit_predict(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<FitReport> {
    if train.feature_names != test.feature_names {
        return Err(Error::InvalidConfig("training and test features differ".into()));
    }
    let (model, data) = prepare(cfg, train)?;
    let chain = cfg.chain_config();
    let start = Instant::now();
    let run = sample(cfg, &chain, &model, &data, cfg.seed)?;
    let iterations = run.log_likelihood_trace.len() - 1;
    let seconds = start.elapsed().as_secs_f64();
    let n_samples = run.samples.len();
    let acceptance_ratio = run.acceptance_ratio();
    let final_kind = run.final_kind;
    let ens = PosteriorEnsemble::new(run.samples, model)?;
    let ev = ens.evaluate(&test.observations()?, cfg.loss)?;
    let (error_ratio, mse) = match cfg.loss {
        crate::Loss::ZeroOne => (Some(ev.error), None),
        crate::Loss::Squared => (None, Some(ev.error)),
    };
    Ok(FitReport {
        proposal: final_kind.name().into(),
        final_parameter: final_kind.parameter(),
        n_train: train.len(),
        n_test: test.len(),
        iterations,
        acceptance_ratio,
        seconds_per_iteration: if iterations == 0 { 0.0 } else { seconds / iterations as f64 },
        error_ratio,
        mse,
        evaluation: Some(ev).filter(|_| n_samples > 0),
    })
}

/// Log-likelihood trace of one run on `ds`.
pub fn likelihood_trace(cfg: &RunConfig, ds: &Dataset) -> Result<ChainRun> {
    let (model, data) = prepare(cfg, ds)?;
    sample(cfg, &cfg.chain_config(), &model, &data, cfg.seed)
}

/// Median of a slice of finite values.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.is_empty() {
        f64::NAN
    } else if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Wall-clock seconds per post-burn-in iteration of a fixed-length run.
pub fn seconds_per_iteration(data: &Observations, model: &TreeModel, chain: &ChainConfig, seed: u64) -> Result<f64> {
    let start = Instant::now();
    let run = run_chain(data, model, chain, seed)?;
    let iters = run.log_likelihood_trace.len() - 1;
    Ok(start.elapsed().as_secs_f64() / iters.max(1) as f64)
}
