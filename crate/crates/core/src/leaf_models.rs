//! Conjugate observation models attached to tree nodes.
//!
//! Every family keeps additive sufficient statistics, so a node's statistics
//! can be grown and shrunk one observation at a time. Marginal likelihoods and
//! posterior predictives are closed-form and evaluated in log space.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Decision loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    ZeroOne,
    Squared,
}

/// Leaf family and hyperparameters as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LeafModelSpec {
    /// `y` in {0, 1}, `theta ~ Beta(alpha, beta)`.
    BernoulliBeta { alpha: f64, beta: f64 },
    /// `y` in {0, .., K-1}, `pi ~ Dir(alpha)`.
    CategoricalDirichlet { alpha: Vec<f64> },
    /// `y` a count, `nu ~ Gam(shape, rate)`.
    PoissonGamma { shape: f64, rate: f64 },
    /// `y` real, `mu ~ N(mean, 1 / (kappa * tau))`, `tau ~ Gam(shape, rate)`.
    NormalNormalGamma {
        mean: f64,
        kappa: f64,
        shape: f64,
        rate: f64,
    },
    /// `y ~ N(w'x, 1 / tau)`, `w ~ N(mean, (tau * precision)^-1)`, `tau ~ Gam(shape, rate)`.
    ///
    /// The regressor `x` is the continuous part of the feature vector, with a
    /// trailing constant 1 when `intercept` is set. Empty `mean`/`precision`
    /// default to zeros and the identity.
    LinregNormalGamma {
        #[serde(default)]
        mean: Vec<f64>,
        #[serde(default)]
        precision: Vec<Vec<f64>>,
        shape: f64,
        rate: f64,
        #[serde(default = "default_true")]
        intercept: bool,
    },
}

fn default_true() -> bool {
    true
}

impl LeafModelSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            Self::BernoulliBeta { .. } => "bernoulli_beta",
            Self::CategoricalDirichlet { .. } => "categorical_dirichlet",
            Self::PoissonGamma { .. } => "poisson_gamma",
            Self::NormalNormalGamma { .. } => "normal_normal_gamma",
            Self::LinregNormalGamma { .. } => "linreg_normal_gamma",
        }
    }
}

#[derive(Debug, Clone)]
struct LinearPrior {
    n_continuous: usize,
    intercept: bool,
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    precision_mean: DVector<f64>,
    mean_quad: f64,
    log_det_precision: f64,
    shape: f64,
    rate: f64,
}

#[derive(Debug, Clone)]
enum Family {
    Bernoulli { alpha: f64, beta: f64 },
    Categorical { alpha: Vec<f64>, alpha_sum: f64 },
    Poisson { shape: f64, rate: f64 },
    Normal { mean: f64, kappa: f64, shape: f64, rate: f64 },
    Linear(Box<LinearPrior>),
}

/// A validated leaf model ready for evaluation.
#[derive(Debug, Clone)]
pub struct LeafModel {
    spec: LeafModelSpec,
    family: Family,
}

/// Additive sufficient statistics of the observations reaching one node.
#[derive(Debug, Clone, PartialEq)]
pub enum SufficientStats {
    /// Per-label counts (Bernoulli uses two labels).
    Counts(Vec<u64>),
    Poisson {
        n: u64,
        sum: u64,
        sum_log_factorial: f64,
    },
    Normal {
        n: u64,
        sum: f64,
        sum_sq: f64,
    },
    Linear {
        n: u64,
        gram: DMatrix<f64>,
        xty: DVector<f64>,
        yty: f64,
    },
}

impl SufficientStats {
    pub fn count(&self) -> u64 {
        match self {
            Self::Counts(c) => c.iter().sum(),
            Self::Poisson { n, .. } | Self::Normal { n, .. } | Self::Linear { n, .. } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// Posterior predictive of a single node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodePredictive {
    Categorical(Vec<f64>),
    /// Mass `Γ(r+y) / (Γ(r) y!) p^r (1-p)^y`.
    NegativeBinomial { r: f64, p: f64 },
    StudentT { df: f64, loc: f64, scale: f64 },
}

impl NodePredictive {
    pub fn mean(&self) -> f64 {
        match self {
            Self::Categorical(p) => p.iter().enumerate().map(|(i, &v)| i as f64 * v).sum(),
            Self::NegativeBinomial { r, p } => r * (1.0 - p) / p,
            Self::StudentT { loc, .. } => *loc,
        }
    }

    pub fn log_density(&self, y: f64) -> f64 {
        match self {
            Self::Categorical(p) => {
                if y >= 0.0 && y.fract() == 0.0 && (y as usize) < p.len() {
                    p[y as usize].ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::NegativeBinomial { r, p } => {
                if y < 0.0 || y.fract() != 0.0 {
                    return f64::NEG_INFINITY;
                }
                ln_gamma(r + y) - ln_gamma(*r) - ln_gamma(y + 1.0) + r * p.ln() + y * (-p).ln_1p()
            }
            Self::StudentT { df, loc, scale } => student_t_log_density(y, *df, *loc, *scale),
        }
    }
}

fn student_t_log_density(y: f64, df: f64, loc: f64, scale: f64) -> f64 {
    let z = (y - loc) / scale;
    ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln() - scale.ln()
        - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
}

/// Predictive distribution of `y` given a new explanatory vector.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveDistribution {
    /// Probabilities over labels `0..K`.
    Finite(Vec<f64>),
    /// Weighted mixture of node predictives; weights sum to one.
    Mixture(Vec<(f64, NodePredictive)>),
}

impl PredictiveDistribution {
    /// Collapses categorical components into a single probability vector.
    pub fn from_components(components: Vec<(f64, NodePredictive)>) -> Self {
        let all_finite = components
            .iter()
            .all(|(_, c)| matches!(c, NodePredictive::Categorical(_)));
        if !all_finite || components.is_empty() {
            return Self::Mixture(components);
        }
        let k = components
            .iter()
            .map(|(_, c)| match c {
                NodePredictive::Categorical(p) => p.len(),
                _ => unreachable!(),
            })
            .max()
            .unwrap_or(0);
        let mut probs = vec![0.0; k];
        for (w, c) in &components {
            if let NodePredictive::Categorical(p) = c {
                for (acc, v) in probs.iter_mut().zip(p) {
                    *acc += w * v;
                }
            }
        }
        Self::Finite(probs)
    }

    /// Weighted average of whole predictives; weights should sum to one.
    pub fn mix(parts: impl IntoIterator<Item = (f64, PredictiveDistribution)>) -> Self {
        let mut components = Vec::new();
        for (w, part) in parts {
            match part {
                Self::Finite(p) => components.push((w, NodePredictive::Categorical(p))),
                Self::Mixture(c) => components.extend(c.into_iter().map(|(v, d)| (w * v, d))),
            }
        }
        Self::from_components(components)
    }

    pub fn probabilities(&self) -> Option<&[f64]> {
        match self {
            Self::Finite(p) => Some(p),
            Self::Mixture(_) => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Finite(p) => p.iter().enumerate().map(|(i, &v)| i as f64 * v).sum(),
            Self::Mixture(c) => c.iter().map(|(w, d)| w * d.mean()).sum(),
        }
    }

    pub fn log_density(&self, y: f64) -> f64 {
        match self {
            Self::Finite(p) => NodePredictive::Categorical(p.clone()).log_density(y),
            Self::Mixture(c) => {
                crate::math::log_sum_exp(c.iter().map(|(w, d)| w.ln() + d.log_density(y)))
            }
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")))
    }
}

impl LeafModel {
    /// Validate hyperparameters. `n_continuous` sizes the regressor of the
    /// linear-regression family and is ignored otherwise.
    pub fn new(spec: LeafModelSpec, n_continuous: usize) -> Result<Self> {
        let family = match &spec {
            LeafModelSpec::BernoulliBeta { alpha, beta } => {
                positive("alpha", *alpha)?;
                positive("beta", *beta)?;
                Family::Bernoulli {
                    alpha: *alpha,
                    beta: *beta,
                }
            }
            LeafModelSpec::CategoricalDirichlet { alpha } => {
                if alpha.len() < 2 {
                    return Err(Error::InvalidConfig(
                        "Dirichlet prior needs at least two categories".into(),
                    ));
                }
                for &a in alpha {
                    positive("alpha", a)?;
                }
                Family::Categorical {
                    alpha_sum: alpha.iter().sum(),
                    alpha: alpha.clone(),
                }
            }
            LeafModelSpec::PoissonGamma { shape, rate } => {
                positive("shape", *shape)?;
                positive("rate", *rate)?;
                Family::Poisson {
                    shape: *shape,
                    rate: *rate,
                }
            }
            LeafModelSpec::NormalNormalGamma {
                mean,
                kappa,
                shape,
                rate,
            } => {
                if !mean.is_finite() {
                    return Err(Error::InvalidConfig("mean must be finite".into()));
                }
                positive("kappa", *kappa)?;
                positive("shape", *shape)?;
                positive("rate", *rate)?;
                Family::Normal {
                    mean: *mean,
                    kappa: *kappa,
                    shape: *shape,
                    rate: *rate,
                }
            }
            LeafModelSpec::LinregNormalGamma {
                mean,
                precision,
                shape,
                rate,
                intercept,
            } => {
                positive("shape", *shape)?;
                positive("rate", *rate)?;
                let dim = n_continuous + usize::from(*intercept);
                if dim == 0 {
                    return Err(Error::InvalidConfig(
                        "linear regression leaves need a continuous feature or an intercept".into(),
                    ));
                }
                let mean = if mean.is_empty() {
                    DVector::zeros(dim)
                } else if mean.len() == dim {
                    DVector::from_column_slice(mean)
                } else {
                    return Err(Error::InvalidConfig(format!(
                        "regression mean has {} entries, expected {dim}",
                        mean.len()
                    )));
                };
                let precision = if precision.is_empty() {
                    DMatrix::identity(dim, dim)
                } else {
                    if precision.len() != dim || precision.iter().any(|r| r.len() != dim) {
                        return Err(Error::InvalidConfig(format!(
                            "regression precision must be {dim}x{dim}"
                        )));
                    }
                    DMatrix::from_fn(dim, dim, |i, j| precision[i][j])
                };
                if (&precision - precision.transpose()).abs().max() > 1e-12 {
                    return Err(Error::InvalidConfig("regression precision must be symmetric".into()));
                }
                let chol = precision.clone().cholesky().ok_or_else(|| {
                    Error::InvalidConfig("regression precision must be positive definite".into())
                })?;
                let precision_mean = &precision * &mean;
                Family::Linear(Box::new(LinearPrior {
                    n_continuous,
                    intercept: *intercept,
                    mean_quad: mean.dot(&precision_mean),
                    log_det_precision: log_det(&chol),
                    mean,
                    precision,
                    precision_mean,
                    shape: *shape,
                    rate: *rate,
                }))
            }
        };
        Ok(Self { spec, family })
    }

    pub fn spec(&self) -> &LeafModelSpec {
        &self.spec
    }

    /// Number of labels for finite-valued families.
    pub fn n_classes(&self) -> Option<usize> {
        match &self.family {
            Family::Bernoulli { .. } => Some(2),
            Family::Categorical { alpha, .. } => Some(alpha.len()),
            _ => None,
        }
    }

    pub fn uses_regressor(&self) -> bool {
        matches!(self.family, Family::Linear(_))
    }

    pub fn empty_stats(&self) -> SufficientStats {
        match &self.family {
            Family::Bernoulli { .. } => SufficientStats::Counts(vec![0, 0]),
            Family::Categorical { alpha, .. } => SufficientStats::Counts(vec![0; alpha.len()]),
            Family::Poisson { .. } => SufficientStats::Poisson {
                n: 0,
                sum: 0,
                sum_log_factorial: 0.0,
            },
            Family::Normal { .. } => SufficientStats::Normal {
                n: 0,
                sum: 0.0,
                sum_sq: 0.0,
            },
            Family::Linear(lp) => {
                let d = lp.mean.len();
                SufficientStats::Linear {
                    n: 0,
                    gram: DMatrix::zeros(d, d),
                    xty: DVector::zeros(d),
                    yty: 0.0,
                }
            }
        }
    }

    fn label(&self, y: f64, classes: usize) -> Result<usize> {
        if y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes {
            Ok(y as usize)
        } else {
            Err(Error::OutOfSupport {
                family: self.spec.family_name(),
                value: y,
            })
        }
    }

    fn count_value(&self, y: f64) -> Result<u64> {
        if y >= 0.0 && y.fract() == 0.0 && y < 9.0e15 {
            Ok(y as u64)
        } else {
            Err(Error::OutOfSupport {
                family: self.spec.family_name(),
                value: y,
            })
        }
    }

    fn real_value(&self, y: f64) -> Result<f64> {
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::OutOfSupport {
                family: self.spec.family_name(),
                value: y,
            })
        }
    }

    fn regressor(lp: &LinearPrior, x: Option<&[f64]>) -> Result<DVector<f64>> {
        let x = x.ok_or_else(|| {
            Error::InvalidConfig("linear regression leaves need the explanatory vector".into())
        })?;
        if x.len() < lp.n_continuous {
            return Err(Error::DimensionMismatch {
                expected: lp.n_continuous,
                got: x.len(),
            });
        }
        let mut v = DVector::zeros(lp.mean.len());
        for j in 0..lp.n_continuous {
            v[j] = x[j];
        }
        if lp.intercept {
            v[lp.n_continuous] = 1.0;
        }
        Ok(v)
    }

    /// Validates `y` against the family's support.
    pub fn check_value(&self, y: f64) -> Result<()> {
        match &self.family {
            Family::Bernoulli { .. } => self.label(y, 2).map(|_| ()),
            Family::Categorical { alpha, .. } => self.label(y, alpha.len()).map(|_| ()),
            Family::Poisson { .. } => self.count_value(y).map(|_| ()),
            Family::Normal { .. } | Family::Linear(_) => self.real_value(y).map(|_| ()),
        }
    }

    fn apply(&self, stats: &mut SufficientStats, x: Option<&[f64]>, y: f64, sign: i8) -> Result<()> {
        let add = sign > 0;
        match (&self.family, stats) {
            (Family::Bernoulli { .. }, SufficientStats::Counts(c))
            | (Family::Categorical { .. }, SufficientStats::Counts(c)) => {
                let l = self.label(y, c.len())?;
                if add {
                    c[l] += 1;
                } else {
                    c[l] = c[l].checked_sub(1).ok_or_else(|| underflow())?;
                }
            }
            (
                Family::Poisson { .. },
                SufficientStats::Poisson {
                    n,
                    sum,
                    sum_log_factorial,
                },
            ) => {
                let v = self.count_value(y)?;
                let lf = ln_gamma(v as f64 + 1.0);
                if add {
                    *n += 1;
                    *sum += v;
                    *sum_log_factorial += lf;
                } else {
                    *n = n.checked_sub(1).ok_or_else(|| underflow())?;
                    *sum = sum.checked_sub(v).ok_or_else(|| underflow())?;
                    *sum_log_factorial -= lf;
                }
            }
            (Family::Normal { .. }, SufficientStats::Normal { n, sum, sum_sq }) => {
                let v = self.real_value(y)?;
                if add {
                    *n += 1;
                    *sum += v;
                    *sum_sq += v * v;
                } else {
                    *n = n.checked_sub(1).ok_or_else(|| underflow())?;
                    *sum -= v;
                    *sum_sq -= v * v;
                }
            }
            (
                Family::Linear(lp),
                SufficientStats::Linear { n, gram, xty, yty },
            ) => {
                let v = self.real_value(y)?;
                let r = Self::regressor(lp, x)?;
                let s = if add { 1.0 } else { -1.0 };
                if add {
                    *n += 1;
                } else {
                    *n = n.checked_sub(1).ok_or_else(|| underflow())?;
                }
                gram.ger(s, &r, &r, 1.0);
                xty.axpy(s * v, &r, 1.0);
                *yty += s * v * v;
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "statistics do not belong to this leaf model".into(),
                ))
            }
        }
        Ok(())
    }

    /// Add one observation. `x` is only read by the regression family.
    pub fn update(&self, stats: &mut SufficientStats, x: Option<&[f64]>, y: f64) -> Result<()> {
        self.apply(stats, x, y, 1)
    }

    /// Remove one previously added observation.
    pub fn downdate(&self, stats: &mut SufficientStats, x: Option<&[f64]>, y: f64) -> Result<()> {
        self.apply(stats, x, y, -1)
    }

    /// Log of the marginal likelihood of all observations in `stats`.
    pub fn log_marginal(&self, stats: &SufficientStats) -> f64 {
        if stats.is_empty() {
            return 0.0;
        }
        match (&self.family, stats) {
            (Family::Bernoulli { alpha, beta }, SufficientStats::Counts(c)) => {
                let (n0, n1) = (c[0] as f64, c[1] as f64);
                ln_gamma(alpha + n1) + ln_gamma(beta + n0) - ln_gamma(alpha + beta + n0 + n1)
                    - ln_gamma(*alpha)
                    - ln_gamma(*beta)
                    + ln_gamma(alpha + beta)
            }
            (Family::Categorical { alpha, alpha_sum }, SufficientStats::Counts(c)) => {
                let n: u64 = c.iter().sum();
                let mut v = ln_gamma(*alpha_sum) - ln_gamma(alpha_sum + n as f64);
                for (a, &k) in alpha.iter().zip(c) {
                    if k > 0 {
                        v += ln_gamma(a + k as f64) - ln_gamma(*a);
                    }
                }
                v
            }
            (
                Family::Poisson { shape, rate },
                SufficientStats::Poisson {
                    n,
                    sum,
                    sum_log_factorial,
                },
            ) => {
                let a = shape + *sum as f64;
                let b = rate + *n as f64;
                shape * rate.ln() - ln_gamma(*shape) + ln_gamma(a) - a * b.ln() - sum_log_factorial
            }
            (
                Family::Normal {
                    mean,
                    kappa,
                    shape,
                    rate,
                },
                SufficientStats::Normal { n, sum, sum_sq },
            ) => {
                let nf = *n as f64;
                let ybar = sum / nf;
                let ss = (sum_sq - sum * ybar).max(0.0);
                let kn = kappa + nf;
                let an = shape + 0.5 * nf;
                let bn = rate + 0.5 * ss + kappa * nf * (ybar - mean).powi(2) / (2.0 * kn);
                ln_gamma(an) - ln_gamma(*shape) + shape * rate.ln() - an * bn.ln()
                    + 0.5 * (kappa / kn).ln()
                    - 0.5 * nf * (2.0 * PI).ln()
            }
            (Family::Linear(lp), SufficientStats::Linear { n, gram, xty, yty }) => {
                let post = linear_posterior(lp, *n, gram, xty, *yty);
                let nf = *n as f64;
                -0.5 * nf * (2.0 * PI).ln() + 0.5 * lp.log_det_precision - 0.5 * post.log_det
                    + lp.shape * lp.rate.ln()
                    - post.shape * post.rate.ln()
                    + ln_gamma(post.shape)
                    - ln_gamma(lp.shape)
            }
            _ => panic!("statistics do not belong to this leaf model"),
        }
    }

    /// Posterior predictive of a single node after observing `stats`.
    pub fn node_predictive(&self, stats: &SufficientStats, x: Option<&[f64]>) -> Result<NodePredictive> {
        Ok(match (&self.family, stats) {
            (Family::Bernoulli { alpha, beta }, SufficientStats::Counts(c)) => {
                let (n0, n1) = (c[0] as f64, c[1] as f64);
                let tot = alpha + beta + n0 + n1;
                NodePredictive::Categorical(vec![(beta + n0) / tot, (alpha + n1) / tot])
            }
            (Family::Categorical { alpha, alpha_sum }, SufficientStats::Counts(c)) => {
                let tot = alpha_sum + c.iter().sum::<u64>() as f64;
                NodePredictive::Categorical(
                    alpha.iter().zip(c).map(|(a, &k)| (a + k as f64) / tot).collect(),
                )
            }
            (Family::Poisson { shape, rate }, SufficientStats::Poisson { n, sum, .. }) => {
                let b = rate + *n as f64;
                NodePredictive::NegativeBinomial {
                    r: shape + *sum as f64,
                    p: b / (b + 1.0),
                }
            }
            (
                Family::Normal {
                    mean,
                    kappa,
                    shape,
                    rate,
                },
                SufficientStats::Normal { n, sum, sum_sq },
            ) => {
                let nf = *n as f64;
                let (ybar, ss) = if *n == 0 {
                    (0.0, 0.0)
                } else {
                    let ybar = sum / nf;
                    (ybar, (sum_sq - sum * ybar).max(0.0))
                };
                let kn = kappa + nf;
                let mn = (kappa * mean + sum) / kn;
                let an = shape + 0.5 * nf;
                let bn = rate + 0.5 * ss + kappa * nf * (ybar - mean).powi(2) / (2.0 * kn);
                NodePredictive::StudentT {
                    df: 2.0 * an,
                    loc: mn,
                    scale: (bn * (kn + 1.0) / (an * kn)).sqrt(),
                }
            }
            (Family::Linear(lp), SufficientStats::Linear { n, gram, xty, yty }) => {
                let r = Self::regressor(lp, x)?;
                let post = linear_posterior(lp, *n, gram, xty, *yty);
                let solved = post.chol.solve(&r);
                NodePredictive::StudentT {
                    df: 2.0 * post.shape,
                    loc: post.mean.dot(&r),
                    scale: (post.rate / post.shape * (1.0 + r.dot(&solved))).sqrt(),
                }
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "statistics do not belong to this leaf model".into(),
                ))
            }
        })
    }

    /// Log posterior predictive of `y` after observing `stats`.
    pub fn log_predictive(&self, stats: &SufficientStats, x: Option<&[f64]>, y: f64) -> Result<f64> {
        self.check_value(y)?;
        Ok(self.node_predictive(stats, x)?.log_density(y))
    }

    /// Predictive summary used for decisions under `loss`.
    pub fn predictive_summary(
        &self,
        stats: &SufficientStats,
        x: Option<&[f64]>,
        loss: Loss,
    ) -> Result<PredictiveDistribution> {
        if loss == Loss::ZeroOne && self.n_classes().is_none() {
            return Err(Error::Unsupported(format!(
                "0-1 loss needs a finite label set; {} is not finite",
                self.spec.family_name()
            )));
        }
        Ok(PredictiveDistribution::from_components(vec![(
            1.0,
            self.node_predictive(stats, x)?,
        )]))
    }
}

fn underflow() -> Error {
    Error::InvalidConfig("downdate of an observation that was never added".into())
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

struct LinearPosterior {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    mean: DVector<f64>,
    shape: f64,
    rate: f64,
}

fn linear_posterior(
    lp: &LinearPrior,
    n: u64,
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    yty: f64,
) -> LinearPosterior {
    let prec = &lp.precision + gram;
    let chol = prec
        .cholesky()
        .expect("prior precision plus a Gram matrix is positive definite");
    let rhs = &lp.precision_mean + xty;
    let mean = chol.solve(&rhs);
    let shape = lp.shape + 0.5 * n as f64;
    let rate = lp.rate + 0.5 * (yty + lp.mean_quad - mean.dot(&rhs)).max(0.0);
    LinearPosterior {
        log_det: log_det(&chol),
        chol,
        mean,
        shape,
        rate,
    }
}
