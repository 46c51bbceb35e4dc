//! Exact marginalization over every full subtree for a fixed feature
//! assignment.
//!
//! Each node `s` reached by data keeps the statistics of the observations
//! routed through it, the log marginal `m_s` of those observations under a
//! single leaf model, the subtree marginal
//!
//! ```text
//! L_s = ln[(1 - g_s) e^{m_s} + g_s e^{L_left + L_right}]
//! ```
//!
//! (untouched children contribute `L = 0`, nodes at the maximum depth have
//! `L_s = m_s`) and the posterior split probability
//! `g_s|data = g_s e^{L_left + L_right - L_s}`. The marginal likelihood of
//! the data given the assignment is `L_root`. Nodes that no observation
//! reaches are not stored; their posterior equals the prior.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::leaf_models::{LeafModel, NodePredictive, PredictiveDistribution, SufficientStats};
use crate::math::{ln_one_minus, log_add_exp};
use crate::subspace_router::{route, Bounds, FeatureAssignment, FeatureSpaceConfig};
use crate::tree_topology::{log_tree_product, FullSubtree, NodeId, TreeShapeConfig};

/// Training observations stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observations {
    n_features: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Observations {
    pub fn new(n_features: usize) -> Self {
        Self {
            n_features,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        let mut obs = Self::new(n_features);
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: y.len(),
            });
        }
        for (r, &v) in rows.iter().zip(y) {
            obs.push(r, v)?;
        }
        Ok(obs)
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        self.x.extend_from_slice(x);
        self.y.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.x(i), self.y[i]))
    }

    /// A copy holding the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.n_features);
        for &i in indices {
            out.x.extend_from_slice(self.x(i));
            out.y.push(self.y[i]);
        }
        out
    }
}

/// The fixed ingredients of the model: tree shape prior, feature space and
/// leaf model.
#[derive(Debug, Clone)]
pub struct TreeModel {
    pub shape: TreeShapeConfig,
    pub space: FeatureSpaceConfig,
    pub leaf: LeafModel,
}

impl TreeModel {
    pub fn new(shape: TreeShapeConfig, space: FeatureSpaceConfig, leaf: LeafModel) -> Self {
        Self { shape, space, leaf }
    }

    pub fn d_max(&self) -> usize {
        self.shape.d_max()
    }

    pub fn n_features(&self) -> usize {
        self.space.n_features()
    }

    fn leaf_x<'a>(&self, x: &'a [f64]) -> Option<&'a [f64]> {
        self.leaf.uses_regressor().then_some(x)
    }

    /// Checks every observation against the feature space and the leaf support.
    pub fn validate(&self, data: &Observations) -> Result<()> {
        if !data.is_empty() && data.n_features() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: data.n_features(),
            });
        }
        for (x, y) in data.iter() {
            self.leaf.check_value(y)?;
            for (j, &v) in x.iter().enumerate() {
                if !v.is_finite() || (self.space.is_binary(j) && v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "feature {j} has invalid value {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-node quantities of a touched node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub stats: SufficientStats,
    /// Log marginal of the node's data under one leaf model.
    pub log_marginal: f64,
    /// Log marginal of the node's data under the meta-tree rooted at the node.
    pub log_subtree: f64,
    /// Posterior probability that the node splits.
    pub split_post: f64,
}

/// Exact tree posterior and marginal likelihood for one feature assignment.
#[derive(Debug, Clone)]
pub struct MetaTreeState {
    k: FeatureAssignment,
    nodes: HashMap<NodeId, NodeRecord>,
    total_log_marginal: f64,
    n_obs: usize,
}

struct Builder<'a> {
    data: &'a Observations,
    k: &'a FeatureAssignment,
    model: &'a TreeModel,
    nodes: HashMap<NodeId, NodeRecord>,
}

impl Builder<'_> {
    fn visit(&mut self, s: NodeId, idx: &mut [usize], bounds: &mut Bounds) -> Result<f64> {
        let leaf = &self.model.leaf;
        let mut stats = leaf.empty_stats();
        for &i in idx.iter() {
            let x = self.data.x(i);
            leaf.update(&mut stats, self.model.leaf_x(x), self.data.y(i))?;
        }
        let m = leaf.log_marginal(&stats);
        let (log_subtree, split_post) = if self.model.shape.is_max_leaf(s) {
            (m, 0.0)
        } else {
            let f = self.k.feature(s);
            let threshold = bounds.threshold(f);
            let mut split = 0;
            for j in 0..idx.len() {
                if self.data.x(idx[j])[f] < threshold {
                    idx.swap(split, j);
                    split += 1;
                }
            }
            let (left, right) = idx.split_at_mut(split);
            let mut children = 0.0;
            for (child, part, go_right) in [(s.left(), left, false), (s.right(), right, true)] {
                if part.is_empty() {
                    continue;
                }
                let old = bounds.descend(f, go_right);
                children += self.visit(child, part, bounds)?;
                bounds.restore(f, old);
            }
            combine(self.model.shape.g(s), m, children)
        };
        self.nodes.insert(
            s,
            NodeRecord {
                stats,
                log_marginal: m,
                log_subtree,
                split_post,
            },
        );
        Ok(log_subtree)
    }
}

/// `(L_s, g_s|data)` from the prior `g`, the node marginal and the children's
/// summed subtree marginals.
fn combine(g: f64, m: f64, children: f64) -> (f64, f64) {
    let log_split = g.ln() + children;
    let l = log_add_exp(ln_one_minus(g) + m, log_split);
    let post = if l == f64::NEG_INFINITY {
        g
    } else {
        (log_split - l).exp().clamp(0.0, 1.0)
    };
    (l, post)
}

impl MetaTreeState {
    /// State with no observations.
    pub fn empty(k: FeatureAssignment) -> Self {
        Self {
            k,
            nodes: HashMap::new(),
            total_log_marginal: 0.0,
            n_obs: 0,
        }
    }

    /// Batch construction over all observations.
    pub fn build(data: &Observations, k: FeatureAssignment, model: &TreeModel) -> Result<Self> {
        if data.is_empty() {
            return Ok(Self::empty(k));
        }
        if data.n_features() != model.n_features() {
            return Err(Error::DimensionMismatch {
                expected: model.n_features(),
                got: data.n_features(),
            });
        }
        let mut idx: Vec<usize> = (0..data.len()).collect();
        let mut bounds = Bounds::new(&model.space);
        let mut builder = Builder {
            data,
            k: &k,
            model,
            nodes: HashMap::with_capacity(data.len().min(1 << 16) * 2),
        };
        let total = builder.visit(NodeId::ROOT, &mut idx, &mut bounds)?;
        let nodes = builder.nodes;
        Ok(Self {
            k,
            nodes,
            total_log_marginal: total,
            n_obs: data.len(),
        })
    }

    /// Adds one observation along its path, updating every quantity online.
    pub fn sequential_update(&mut self, x: &[f64], y: f64, model: &TreeModel) -> Result<()> {
        model.leaf.check_value(y)?;
        let path = route(x, &self.k, &model.space)?;
        let leaf_x = model.leaf_x(x);
        let mut log_pred = Vec::with_capacity(path.nodes.len());
        for &s in &path.nodes {
            let lp = match self.nodes.get(&s) {
                Some(r) => model.leaf.log_predictive(&r.stats, leaf_x, y)?,
                None => model.leaf.log_predictive(&model.leaf.empty_stats(), leaf_x, y)?,
            };
            log_pred.push(lp);
        }
        let mut below = f64::NEG_INFINITY;
        for (depth, &s) in path.nodes.iter().enumerate().rev() {
            let g_prior = model.shape.g(s);
            let rec = self.nodes.entry(s).or_insert_with(|| NodeRecord {
                stats: model.leaf.empty_stats(),
                log_marginal: 0.0,
                log_subtree: 0.0,
                split_post: g_prior,
            });
            let lf = log_pred[depth];
            let lq = if model.shape.is_max_leaf(s) {
                lf
            } else {
                let g = rec.split_post;
                let log_split = g.ln() + below;
                let lq = log_add_exp(ln_one_minus(g) + lf, log_split);
                if lq != f64::NEG_INFINITY {
                    rec.split_post = (log_split - lq).exp().clamp(0.0, 1.0);
                }
                lq
            };
            model.leaf.update(&mut rec.stats, leaf_x, y)?;
            rec.log_marginal += lf;
            rec.log_subtree += lq;
            below = lq;
        }
        self.total_log_marginal += below;
        self.n_obs += 1;
        Ok(())
    }

    pub fn k(&self) -> &FeatureAssignment {
        &self.k
    }

    pub fn into_k(self) -> FeatureAssignment {
        self.k
    }

    /// `ln p(y^n | x^n, k)`.
    pub fn total_log_marginal(&self) -> f64 {
        self.total_log_marginal
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn node(&self, s: NodeId) -> Option<&NodeRecord> {
        self.nodes.get(&s)
    }

    pub fn is_touched(&self, s: NodeId) -> bool {
        self.nodes.contains_key(&s)
    }

    pub fn touched_len(&self) -> usize {
        self.nodes.len()
    }

    pub fn touched_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Touched node above the maximum depth, i.e. an inner node of the minimal
    /// tree containing every observation's path.
    #[inline]
    pub fn is_touched_inner(&self, s: NodeId, shape: &TreeShapeConfig) -> bool {
        !shape.is_max_leaf(s) && self.nodes.contains_key(&s)
    }

    /// Posterior split probability; the prior for untouched nodes.
    #[inline]
    pub fn split_post(&self, s: NodeId, shape: &TreeShapeConfig) -> f64 {
        match self.nodes.get(&s) {
            Some(r) => r.split_post,
            None => shape.g(s),
        }
    }

    /// Tree-marginalized posterior predictive at `x`.
    pub fn predictive(&self, x: &[f64], model: &TreeModel) -> Result<PredictiveDistribution> {
        Ok(PredictiveDistribution::from_components(self.path_components(x, model)?))
    }

    /// Mixture components along the path of `x`: node predictive weighted by
    /// the posterior probability that the node is the leaf.
    pub fn path_components(&self, x: &[f64], model: &TreeModel) -> Result<Vec<(f64, NodePredictive)>> {
        let path = route(x, &self.k, &model.space)?;
        let leaf_x = model.leaf_x(x);
        let empty = model.leaf.empty_stats();
        let mut reach = 1.0;
        let mut out = Vec::with_capacity(path.nodes.len());
        for &s in &path.nodes {
            let g = self.split_post(s, &model.shape);
            let w = reach * (1.0 - g);
            if w > 0.0 {
                let stats = self.nodes.get(&s).map_or(&empty, |r| &r.stats);
                out.push((w, model.leaf.node_predictive(stats, leaf_x)?));
            }
            reach *= g;
            if reach == 0.0 {
                break;
            }
        }
        Ok(out)
    }

    /// `ln q̃(y | x, data, k)` via the leaf-up path recursion.
    pub fn log_predictive(&self, x: &[f64], y: f64, model: &TreeModel) -> Result<f64> {
        model.leaf.check_value(y)?;
        let path = route(x, &self.k, &model.space)?;
        let leaf_x = model.leaf_x(x);
        let empty = model.leaf.empty_stats();
        let mut below = f64::NEG_INFINITY;
        for &s in path.nodes.iter().rev() {
            let stats = self.nodes.get(&s).map_or(&empty, |r| &r.stats);
            let lf = model.leaf.log_predictive(stats, leaf_x, y)?;
            below = if model.shape.is_max_leaf(s) {
                lf
            } else {
                let g = self.split_post(s, &model.shape);
                log_add_exp(ln_one_minus(g) + lf, g.ln() + below)
            };
        }
        Ok(below)
    }

    /// Log posterior probability of a full subtree.
    pub fn tree_log_posterior(&self, tree: &FullSubtree, shape: &TreeShapeConfig) -> f64 {
        log_tree_product(tree, |s| self.split_post(s, shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leaf_models::{LeafModelSpec, Loss};
    use crate::tree_topology::{enumerate_full_subtrees, tree_log_prior};

    fn bern_model(d_max: usize, q: usize, g: f64) -> TreeModel {
        TreeModel::new(
            TreeShapeConfig::uniform(d_max, g).unwrap(),
            FeatureSpaceConfig::binary(q).unwrap(),
            LeafModel::new(LeafModelSpec::BernoulliBeta { alpha: 0.5, beta: 0.5 }, 0).unwrap(),
        )
    }

    #[test]
    fn single_point_depth_one() {
        let model = bern_model(1, 1, 0.5);
        let data = Observations::from_rows(&[vec![0.0]], &[1.0]).unwrap();
        let k = FeatureAssignment::from_dense(1, 1, &[0]).unwrap();
        let st = MetaTreeState::build(&data, k, &model).unwrap();
        assert!((st.total_log_marginal() - 0.5f64.ln()).abs() < 1e-14);
        assert!((st.split_post(NodeId::ROOT, &model.shape) - 0.5).abs() < 1e-14);
        assert_eq!(st.split_post(NodeId(1), &model.shape), 0.0);
    }

    #[test]
    fn empty_data_is_the_prior() {
        let model = bern_model(3, 2, 0.7);
        let k = FeatureAssignment::from_dense(3, 2, &[0, 1, 0, 1, 1, 0, 0]).unwrap();
        let st = MetaTreeState::build(&Observations::new(2), k, &model).unwrap();
        assert_eq!(st.total_log_marginal(), 0.0);
        assert_eq!(st.touched_len(), 0);
        for i in 0..15 {
            assert_eq!(st.split_post(NodeId(i), &model.shape), model.shape.g(NodeId(i)));
        }
        let p = st.predictive(&[1.0, 0.0], &model).unwrap();
        let probs = p.probabilities().unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-15 && (probs[1] - 0.5).abs() < 1e-15);
        let t = FullSubtree::from_inner([NodeId(0), NodeId(2)].into());
        assert_eq!(st.tree_log_posterior(&t, &model.shape), tree_log_prior(&t, &model.shape));
    }

    #[test]
    fn root_forced_leaf() {
        let shape = TreeShapeConfig::from_fn(2, |s| if s.is_root() { 0.0 } else { 0.6 }).unwrap();
        let model = TreeModel::new(
            shape,
            FeatureSpaceConfig::binary(2).unwrap(),
            LeafModel::new(LeafModelSpec::BernoulliBeta { alpha: 0.5, beta: 0.5 }, 0).unwrap(),
        );
        let rows = vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 0.0]];
        let ys = [1.0, 0.0, 1.0];
        let data = Observations::from_rows(&rows, &ys).unwrap();
        let k = FeatureAssignment::from_dense(2, 2, &[0, 1, 1]).unwrap();
        let st = MetaTreeState::build(&data, k.clone(), &model).unwrap();
        let root = st.node(NodeId::ROOT).unwrap();
        assert!((st.total_log_marginal() - root.log_marginal).abs() < 1e-14);

        let p = st.predictive(&[0.0, 0.0], &model).unwrap();
        let leaf = model
            .leaf
            .predictive_summary(&root.stats, None, Loss::ZeroOne)
            .unwrap();
        assert_eq!(p, leaf);

        let mut seq = MetaTreeState::empty(k);
        let mut total = 0.0;
        for (x, y) in data.iter() {
            let before = seq.node(NodeId::ROOT).map(|r| r.stats.clone());
            let lp = model
                .leaf
                .log_predictive(&before.unwrap_or_else(|| model.leaf.empty_stats()), None, y)
                .unwrap();
            seq.sequential_update(x, y, &model).unwrap();
            total += lp;
            assert!((seq.total_log_marginal() - total).abs() < 1e-14);
        }
    }

    #[test]
    fn posterior_over_trees_normalizes_and_obeys_bayes() {
        let model = bern_model(3, 2, 0.6);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i % 2) as f64, ((i / 2) % 2) as f64])
            .collect();
        let ys: Vec<f64> = (0..12).map(|i| ((i * 7 + 3) % 5 < 2) as u8 as f64).collect();
        let data = Observations::from_rows(&rows, &ys).unwrap();
        let k = FeatureAssignment::from_dense(3, 2, &[1, 0, 0, 1, 0, 1, 1]).unwrap();
        let st = MetaTreeState::build(&data, k.clone(), &model).unwrap();
        let trees = enumerate_full_subtrees(&model.shape).unwrap();
        let total: f64 = trees
            .iter()
            .map(|t| st.tree_log_posterior(t, &model.shape).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        for t in &trees {
            // leaf marginals from scratch
            let mut lik = 0.0;
            for &leaf in &t.leaf_nodes {
                let mut stats = model.leaf.empty_stats();
                for (x, y) in data.iter() {
                    if crate::subspace_router::leaf_of(x, &k, t, &model.space).unwrap() == leaf {
                        model.leaf.update(&mut stats, None, y).unwrap();
                    }
                }
                lik += model.leaf.log_marginal(&stats);
            }
            let expected = tree_log_prior(t, &model.shape) + lik - st.total_log_marginal();
            assert!((st.tree_log_posterior(t, &model.shape) - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn touched_nodes_are_path_closed_and_bounded() {
        let model = bern_model(6, 3, 0.75);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 2) as f64, ((i / 3) % 2) as f64, ((i / 5) % 2) as f64])
            .collect();
        let ys: Vec<f64> = (0..40).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let data = Observations::from_rows(&rows, &ys).unwrap();
        let k = FeatureAssignment::from_fill_seed(6, 3, 99);
        let st = MetaTreeState::build(&data, k, &model).unwrap();
        assert!(st.touched_len() <= data.len() * 7);
        for s in st.touched_nodes() {
            if let Some(p) = s.parent() {
                assert!(st.is_touched(p));
            }
            let g = st.split_post(s, &model.shape);
            assert!((0.0..=1.0).contains(&g));
            if model.shape.is_max_leaf(s) {
                assert_eq!(g, 0.0);
            }
        }
        let root = st.node(NodeId::ROOT).unwrap();
        assert_eq!(root.stats.count(), 40);
        assert_eq!(st.total_log_marginal(), root.log_subtree);
    }

    #[test]
    fn log_predictive_matches_marginal_increment() {
        let model = bern_model(3, 2, 0.6);
        let rows = vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0]];
        let ys = [1.0, 0.0, 1.0, 1.0];
        let data = Observations::from_rows(&rows, &ys).unwrap();
        let k = FeatureAssignment::from_dense(3, 2, &[0, 1, 1, 0, 0, 1, 1]).unwrap();
        let st = MetaTreeState::build(&data, k.clone(), &model).unwrap();
        let x = [1.0, 1.0];
        let mut more = data.clone();
        more.push(&x, 1.0).unwrap();
        let st2 = MetaTreeState::build(&more, k, &model).unwrap();
        let lp = st.log_predictive(&x, 1.0, &model).unwrap();
        assert!((st2.total_log_marginal() - st.total_log_marginal() - lp).abs() < 1e-12);
        let p = st.predictive(&x, &model).unwrap();
        assert!((p.probabilities().unwrap()[1].ln() - lp).abs() < 1e-12);
    }
}
