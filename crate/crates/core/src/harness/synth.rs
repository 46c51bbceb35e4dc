//! Synthetic data from a known model tree.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{RunConfig, TrueModelName};
use crate::harness::data::Dataset;
use crate::leaf_models::LeafModelSpec;
use crate::subspace_router::{leaf_of, FeatureAssignment, FeatureSpaceConfig};
use crate::tree_topology::{FullSubtree, NodeId, TreeShapeConfig};

/// Parameters of the observation model at one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LeafParams {
    Bernoulli { theta: f64 },
    Categorical { probs: Vec<f64> },
    Poisson { rate: f64 },
    Normal { mean: f64, precision: f64 },
    Linear { weights: Vec<f64>, precision: f64 },
}

impl LeafParams {
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], n_continuous: usize, rng: &mut R) -> f64 {
        match self {
            Self::Bernoulli { theta } => f64::from(u8::from(rng.random::<f64>() < *theta)),
            Self::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
            Self::Poisson { rate } => {
                if *rate <= 0.0 {
                    0.0
                } else {
                    Poisson::new(*rate).expect("positive rate").sample(rng)
                }
            }
            Self::Normal { mean, precision } => mean + rng.sample::<f64, _>(StandardNormal) / precision.sqrt(),
            Self::Linear { weights, precision } => {
                let mut m: f64 = weights.iter().zip(&x[..n_continuous]).map(|(w, v)| w * v).sum();
                if weights.len() > n_continuous {
                    m += weights[n_continuous];
                }
                m + rng.sample::<f64, _>(StandardNormal) / precision.sqrt()
            }
        }
    }

    /// Risk of the best 0-1 decision at this leaf, for finite label sets.
    pub fn bayes_error(&self) -> Option<f64> {
        match self {
            Self::Bernoulli { theta } => Some(theta.min(1.0 - theta)),
            Self::Categorical { probs } => Some(1.0 - probs.iter().copied().fold(0.0, f64::max)),
            _ => None,
        }
    }

    fn from_prior<R: Rng + ?Sized>(spec: &LeafModelSpec, n_continuous: usize, rng: &mut R) -> Result<Self> {
        let gamma = |shape: f64, rate: f64, rng: &mut R| -> Result<f64> {
            Gamma::new(shape, 1.0 / rate)
                .map(|g| g.sample(rng))
                .map_err(|e| Error::InvalidConfig(e.to_string()))
        };
        Ok(match spec {
            LeafModelSpec::BernoulliBeta { alpha, beta } => Self::Bernoulli {
                theta: Beta::new(*alpha, *beta)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?
                    .sample(rng),
            },
            LeafModelSpec::CategoricalDirichlet { alpha } => {
                let g = alpha.iter().map(|&a| gamma(a, 1.0, rng)).collect::<Result<Vec<_>>>()?;
                let s: f64 = g.iter().sum();
                Self::Categorical {
                    probs: g.iter().map(|v| v / s).collect(),
                }
            }
            LeafModelSpec::PoissonGamma { shape, rate } => Self::Poisson {
                rate: gamma(*shape, *rate, rng)?,
            },
            LeafModelSpec::NormalNormalGamma {
                mean,
                kappa,
                shape,
                rate,
            } => {
                let tau = gamma(*shape, *rate, rng)?;
                let mu = Normal::new(*mean, 1.0 / (kappa * tau).sqrt())
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?
                    .sample(rng);
                Self::Normal { mean: mu, precision: tau }
            }
            LeafModelSpec::LinregNormalGamma {
                mean,
                precision,
                shape,
                rate,
                intercept,
            } => {
                let dim = n_continuous + usize::from(*intercept);
                let m = if mean.is_empty() {
                    DVector::zeros(dim)
                } else {
                    DVector::from_vec(mean.clone())
                };
                let lambda = if precision.is_empty() {
                    DMatrix::identity(dim, dim)
                } else {
                    DMatrix::from_fn(dim, dim, |i, j| precision[i][j])
                };
                if m.len() != dim || lambda.nrows() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: m.len(),
                    });
                }
                let tau = gamma(*shape, *rate, rng)?;
                let chol = lambda
                    .cholesky()
                    .ok_or_else(|| Error::InvalidConfig("precision must be positive definite".into()))?;
                // w = m + L^{-T} z / sqrt(tau) has covariance (tau L L^T)^{-1}
                let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let v = chol
                    .l()
                    .transpose()
                    .solve_upper_triangular(&z)
                    .expect("Cholesky factor is invertible");
                let w = m + v / tau.sqrt();
                Self::Linear {
                    weights: w.iter().copied().collect(),
                    precision: tau,
                }
            }
        })
    }
}

/// A fully specified generating model tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub d_max: usize,
    pub n_continuous: usize,
    pub n_binary: usize,
    /// Initial ranges of the continuous features.
    pub ranges: Vec<(f64, f64)>,
    /// Feature of each inner node of the tree.
    pub inner: BTreeMap<usize, usize>,
    pub leaves: BTreeMap<usize, LeafParams>,
}

impl TrueModel {
    pub fn tree(&self) -> FullSubtree {
        FullSubtree::from_inner(self.inner.keys().map(|&s| NodeId(s)).collect())
    }

    pub fn space(&self) -> Result<FeatureSpaceConfig> {
        FeatureSpaceConfig::new(self.ranges.clone(), self.n_binary)
    }

    fn assignment(&self) -> Result<FeatureAssignment> {
        let total = self.n_continuous + self.n_binary;
        let mut k = FeatureAssignment::from_fill_seed(self.d_max, total, 0);
        for (&s, &f) in &self.inner {
            if f >= total {
                return Err(Error::InvalidConfig(format!("node {s} uses feature {f} of {total}")));
            }
            k.set(NodeId(s), f);
        }
        Ok(k)
    }

    /// Parameters of the leaf that generates `y` at `x`.
    pub fn leaf_at(&self, x: &[f64]) -> Result<&LeafParams> {
        let leaf = leaf_of(x, &self.assignment()?, &self.tree(), &self.space()?)?;
        Ok(&self.leaves[&leaf.index()])
    }

    /// Expected 0-1 risk of the true model's own decision on `rows`.
    pub fn bayes_error(&self, rows: &[Vec<f64>]) -> Result<Option<f64>> {
        let mut total = 0.0;
        for r in rows {
            match self.leaf_at(r)?.bayes_error() {
                Some(e) => total += e,
                None => return Ok(None),
            }
        }
        Ok(Some(total / rows.len().max(1) as f64))
    }

    /// Draws `n` points: `x` uniform on the feature box, `y` from its leaf.
    pub fn sample_dataset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        let k = self.assignment()?;
        let tree = self.tree();
        let space = self.space()?;
        let mut xc = Vec::with_capacity(n);
        let mut xb = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let c: Vec<f64> = self.ranges.iter().map(|&(a, b)| rng.random_range(a..b)).collect();
            let bits: Vec<u8> = (0..self.n_binary).map(|_| rng.random_range(0..2u8)).collect();
            let mut row = c.clone();
            row.extend(bits.iter().map(|&b| f64::from(b)));
            let leaf = leaf_of(&row, &k, &tree, &space)?;
            y.push(self.leaves[&leaf.index()].sample(&row, self.n_continuous, rng));
            xc.push(c);
            xb.push(bits);
        }
        let names = (0..self.n_continuous + self.n_binary).map(|j| format!("x{j}")).collect();
        Dataset::new(xc, xb, y, names, "y".into())
    }
}

fn bernoulli_model(d_max: usize, n_binary: usize, inner: &[(usize, usize)], leaves: &[(usize, f64)]) -> TrueModel {
    TrueModel {
        d_max,
        n_continuous: 0,
        n_binary,
        ranges: Vec::new(),
        inner: inner.iter().copied().collect(),
        leaves: leaves
            .iter()
            .map(|&(s, theta)| (s, LeafParams::Bernoulli { theta }))
            .collect(),
    }
}

/// The fixed Bernoulli models on five binary features at depth three.
pub fn preset(name: TrueModelName) -> Option<TrueModel> {
    Some(match name {
        TrueModelName::Prior => return None,
        TrueModelName::Uneven => bernoulli_model(
            3,
            5,
            &[(0, 0), (1, 1), (2, 2), (4, 3)],
            &[(3, 0.9), (9, 0.1), (10, 0.85), (5, 0.15), (6, 0.75)],
        ),
        TrueModelName::ModelA => bernoulli_model(3, 5, &[(0, 0), (1, 1), (2, 2)], &[(3, 0.9), (4, 0.2), (5, 0.1), (6, 0.8)]),
        TrueModelName::ModelB => bernoulli_model(
            3,
            5,
            &[(0, 0), (2, 1), (6, 2)],
            &[(1, 0.1), (5, 0.9), (13, 0.2), (14, 0.8)],
        ),
        TrueModelName::ModelC => bernoulli_model(
            3,
            5,
            &[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 3), (6, 4)],
            &[
                (7, 0.9),
                (8, 0.1),
                (9, 0.2),
                (10, 0.8),
                (11, 0.85),
                (12, 0.15),
                (13, 0.1),
                (14, 0.9),
            ],
        ),
    })
}

/// Draws a model from the priors of `cfg`.
pub fn sample_true_model(cfg: &RunConfig, rng: &mut impl Rng) -> Result<TrueModel> {
    let shape: TreeShapeConfig = cfg.shape()?;
    let p = cfg.synth.n_continuous;
    let total = p + cfg.synth.n_binary;
    let k = FeatureAssignment::uniform(cfg.d_max, total, rng);
    let mut inner = BTreeMap::new();
    let mut leaves = BTreeMap::new();
    let mut stack = vec![NodeId::ROOT];
    while let Some(s) = stack.pop() {
        let g = shape.g(s);
        if g > 0.0 && rng.random::<f64>() < g {
            inner.insert(s.index(), k.feature(s));
            stack.push(s.right());
            stack.push(s.left());
        } else {
            leaves.insert(s.index(), LeafParams::from_prior(&cfg.leaf, p, rng)?);
        }
    }
    let ranges = (0..p)
        .map(|j| cfg.ranges.get(&format!("x{j}")).map_or((0.0, 1.0), |&[a, b]| (a, b)))
        .collect();
    Ok(TrueModel {
        d_max: cfg.d_max,
        n_continuous: p,
        n_binary: cfg.synth.n_binary,
        ranges,
        inner,
        leaves,
    })
}

/// The generating model named in `cfg.synth` (drawn with `model_seed` when it
/// comes from the prior) and a training set of size `n` drawn with `data_seed`.
pub fn synth_generate(cfg: &RunConfig, model_seed: u64, data_seed: u64, n: usize) -> Result<(Dataset, TrueModel)> {
    let model = match preset(cfg.synth.true_model) {
        Some(m) => m,
        None => sample_true_model(cfg, &mut ChaCha8Rng::seed_from_u64(model_seed))?,
    };
    let ds = model.sample_dataset(n, &mut ChaCha8Rng::seed_from_u64(data_seed))?;
    Ok((ds, model))
}
