//! Level-order indexing of the perfect binary tree of depth `d_max`, its full
//! subtrees, and the edge-spreading tree prior.
//!
//! Nodes are numbered breadth-first: the root is 0 and the children of `s`
//! are `2s + 1` (left) and `2s + 2` (right). Every per-node table in the crate
//! is addressed with this index.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest depth for which full subtrees may be enumerated.
pub const MAX_ENUMERATION_DEPTH: usize = 4;

/// A node of the perfect binary tree in level order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }

    #[inline]
    pub fn depth(self) -> usize {
        (usize::BITS - 1 - (self.0 + 1).leading_zeros()) as usize
    }

    #[inline]
    pub fn left(self) -> NodeId {
        NodeId(2 * self.0 + 1)
    }

    #[inline]
    pub fn right(self) -> NodeId {
        NodeId(2 * self.0 + 2)
    }

    /// `None` for the root.
    #[inline]
    pub fn parent(self) -> Option<NodeId> {
        if self.0 == 0 {
            None
        } else {
            Some(NodeId((self.0 - 1) / 2))
        }
    }

    pub fn is_root(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Number of nodes in the perfect binary tree of depth `d_max`.
#[inline]
pub fn node_count(d_max: usize) -> usize {
    (1usize << (d_max + 1)) - 1
}

/// Number of inner nodes in the perfect binary tree of depth `d_max`.
#[inline]
pub fn inner_node_count(d_max: usize) -> usize {
    (1usize << d_max) - 1
}

/// Maximum depth plus the per-node edge-spreading probabilities `g_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeShapeConfig {
    d_max: usize,
    split_prior: Vec<f64>,
}

impl TreeShapeConfig {
    /// Same `g` on every node above the maximum depth.
    pub fn uniform(d_max: usize, g: f64) -> Result<Self> {
        Self::from_fn(d_max, |_| g)
    }

    /// One `g` per depth `0..d_max`; extra entries are ignored.
    pub fn per_depth(d_max: usize, g: &[f64]) -> Result<Self> {
        if g.len() < d_max {
            return Err(Error::InvalidConfig(format!(
                "per-depth split prior needs {d_max} entries, got {}",
                g.len()
            )));
        }
        Self::from_fn(d_max, |s| g[s.depth()])
    }

    /// Build from a function of the node. Values at depth `d_max` are forced to zero.
    pub fn from_fn(d_max: usize, mut g: impl FnMut(NodeId) -> f64) -> Result<Self> {
        if d_max > 30 {
            return Err(Error::InvalidConfig(format!("d_max {d_max} is too large")));
        }
        let mut split_prior = Vec::with_capacity(node_count(d_max));
        for i in 0..node_count(d_max) {
            let s = NodeId(i);
            if s.depth() == d_max {
                split_prior.push(0.0);
                continue;
            }
            let v = g(s);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "split probability {v} at {s} outside [0, 1]"
                )));
            }
            split_prior.push(v);
        }
        Ok(Self { d_max, split_prior })
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    #[inline]
    pub fn g(&self, s: NodeId) -> f64 {
        self.split_prior[s.0]
    }

    pub fn contains(&self, s: NodeId) -> bool {
        s.0 < node_count(self.d_max)
    }

    #[inline]
    pub fn is_max_leaf(&self, s: NodeId) -> bool {
        s.depth() == self.d_max
    }

    pub fn node_count(&self) -> usize {
        node_count(self.d_max)
    }

    pub fn inner_node_count(&self) -> usize {
        inner_node_count(self.d_max)
    }

    pub fn children(&self, s: NodeId) -> Result<(NodeId, NodeId)> {
        if s.depth() >= self.d_max {
            return Err(Error::LeafHasNoChildren(s.0));
        }
        Ok((s.left(), s.right()))
    }
}

/// A full subtree of the perfect tree rooted at node 0: every inner node has
/// both children present.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FullSubtree {
    pub inner_nodes: BTreeSet<NodeId>,
    pub leaf_nodes: BTreeSet<NodeId>,
}

impl FullSubtree {
    pub fn root_only() -> Self {
        Self {
            inner_nodes: BTreeSet::new(),
            leaf_nodes: BTreeSet::from([NodeId::ROOT]),
        }
    }

    /// The perfect tree itself.
    pub fn maximal(d_max: usize) -> Self {
        let mut t = Self {
            inner_nodes: BTreeSet::new(),
            leaf_nodes: BTreeSet::new(),
        };
        for i in 0..node_count(d_max) {
            let s = NodeId(i);
            if s.depth() < d_max {
                t.inner_nodes.insert(s);
            } else {
                t.leaf_nodes.insert(s);
            }
        }
        t
    }

    /// Build from the set of inner nodes; leaves are the children of inner
    /// nodes that are not themselves inner (or the root if there is none).
    pub fn from_inner(inner_nodes: BTreeSet<NodeId>) -> Self {
        let mut leaf_nodes = BTreeSet::new();
        if inner_nodes.is_empty() {
            leaf_nodes.insert(NodeId::ROOT);
        }
        for s in &inner_nodes {
            for c in [s.left(), s.right()] {
                if !inner_nodes.contains(&c) {
                    leaf_nodes.insert(c);
                }
            }
        }
        Self {
            inner_nodes,
            leaf_nodes,
        }
    }

    pub fn is_inner(&self, s: NodeId) -> bool {
        self.inner_nodes.contains(&s)
    }

    pub fn is_leaf(&self, s: NodeId) -> bool {
        self.leaf_nodes.contains(&s)
    }

    pub fn size(&self) -> usize {
        self.inner_nodes.len() + self.leaf_nodes.len()
    }

    /// Checks rootedness, fullness, disjointness and the depth bound.
    pub fn is_valid(&self, d_max: usize) -> bool {
        if !self.inner_nodes.is_disjoint(&self.leaf_nodes) {
            return false;
        }
        let root_present = self.is_inner(NodeId::ROOT) || self.is_leaf(NodeId::ROOT);
        if !root_present {
            return false;
        }
        for &s in &self.inner_nodes {
            if s.depth() >= d_max {
                return false;
            }
            if let Some(p) = s.parent() {
                if !self.is_inner(p) {
                    return false;
                }
            }
            for c in [s.left(), s.right()] {
                if !self.is_inner(c) && !self.is_leaf(c) {
                    return false;
                }
            }
        }
        for &s in &self.leaf_nodes {
            if s.depth() > d_max {
                return false;
            }
            match s.parent() {
                Some(p) if !self.is_inner(p) => return false,
                None if !self.inner_nodes.is_empty() => return false,
                _ => {}
            }
        }
        true
    }
}

fn subtrees_below(s: NodeId, d_max: usize) -> Vec<FullSubtree> {
    let leaf = FullSubtree {
        inner_nodes: BTreeSet::new(),
        leaf_nodes: BTreeSet::from([s]),
    };
    if s.depth() == d_max {
        return vec![leaf];
    }
    let lefts = subtrees_below(s.left(), d_max);
    let rights = subtrees_below(s.right(), d_max);
    let mut out = Vec::with_capacity(1 + lefts.len() * rights.len());
    out.push(leaf);
    for l in &lefts {
        for r in &rights {
            let mut inner_nodes = BTreeSet::from([s]);
            inner_nodes.extend(l.inner_nodes.iter().copied());
            inner_nodes.extend(r.inner_nodes.iter().copied());
            let mut leaf_nodes = l.leaf_nodes.clone();
            leaf_nodes.extend(r.leaf_nodes.iter().copied());
            out.push(FullSubtree {
                inner_nodes,
                leaf_nodes,
            });
        }
    }
    out
}

/// Every full subtree, leaf-first then split, recursively. Only for small depths.
pub fn enumerate_full_subtrees(cfg: &TreeShapeConfig) -> Result<Vec<FullSubtree>> {
    if cfg.d_max() > MAX_ENUMERATION_DEPTH {
        return Err(Error::Refused(format!(
            "d_max {} exceeds the enumeration limit {MAX_ENUMERATION_DEPTH}",
            cfg.d_max()
        )));
    }
    Ok(subtrees_below(NodeId::ROOT, cfg.d_max()))
}

/// Log of the product of `g_s` over inner nodes and `1 - g_s` over leaves,
/// with `g` supplied per node. Zero factors give negative infinity.
pub fn log_tree_product(tree: &FullSubtree, g: impl Fn(NodeId) -> f64) -> f64 {
    let inner: f64 = tree.inner_nodes.iter().map(|&s| g(s).ln()).sum();
    let leaves: f64 = tree.leaf_nodes.iter().map(|&s| (-g(s)).ln_1p()).sum();
    inner + leaves
}

/// Log prior probability of a full subtree under the edge-spreading prior.
pub fn tree_log_prior(tree: &FullSubtree, cfg: &TreeShapeConfig) -> f64 {
    log_tree_product(tree, |s| cfg.g(s))
}
