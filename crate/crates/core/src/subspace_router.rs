//! Midpoint-bisection routing of an explanatory vector through the perfect
//! tree, given the feature assigned to each inner node.

use std::collections::HashMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree_topology::{inner_node_count, FullSubtree, NodeId};

/// Feature layout and the initial ranges used to place thresholds.
///
/// Features `0..n_continuous` are continuous, the remaining `n_binary` take
/// values in {0, 1} and always start from the range `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpaceConfig {
    n_continuous: usize,
    n_binary: usize,
    ranges: Vec<(f64, f64)>,
}

impl FeatureSpaceConfig {
    pub fn new(continuous_ranges: Vec<(f64, f64)>, n_binary: usize) -> Result<Self> {
        for (i, &(a, b)) in continuous_ranges.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidConfig(format!(
                    "initial range of feature {i} must be finite with a < b, got [{a}, {b})"
                )));
            }
        }
        let n_continuous = continuous_ranges.len();
        let mut ranges = continuous_ranges;
        ranges.extend(std::iter::repeat_n((0.0, 1.0), n_binary));
        if ranges.is_empty() {
            return Err(Error::InvalidConfig("at least one feature is required".into()));
        }
        Ok(Self {
            n_continuous,
            n_binary,
            ranges,
        })
    }

    /// Only binary features.
    pub fn binary(n_binary: usize) -> Result<Self> {
        Self::new(Vec::new(), n_binary)
    }

    /// Continuous ranges `[min - eps, max + eps)` taken from the rows, with
    /// `eps = 1e-9 * (max - min + 1)`.
    pub fn from_rows<'a>(
        rows: impl IntoIterator<Item = &'a [f64]>,
        n_continuous: usize,
        n_binary: usize,
    ) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; n_continuous];
        let mut hi = vec![f64::NEG_INFINITY; n_continuous];
        for row in rows {
            if row.len() != n_continuous + n_binary {
                return Err(Error::DimensionMismatch {
                    expected: n_continuous + n_binary,
                    got: row.len(),
                });
            }
            for j in 0..n_continuous {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let ranges = lo
            .into_iter()
            .zip(hi)
            .map(|(a, b)| {
                if a > b {
                    // no rows
                    (0.0, 1.0)
                } else {
                    let eps = 1e-9 * (b - a + 1.0);
                    (a - eps, b + eps)
                }
            })
            .collect();
        Self::new(ranges, n_binary)
    }

    pub fn n_continuous(&self) -> usize {
        self.n_continuous
    }

    pub fn n_binary(&self) -> usize {
        self.n_binary
    }

    pub fn n_features(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn is_binary(&self, feature: usize) -> bool {
        feature >= self.n_continuous
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The feature index assigned to every inner node of the perfect tree.
///
/// Only a sparse set of entries is stored explicitly. Every other inner node
/// carries an implicit uniform draw derived from `fill_seed` and the node
/// index, so a freshly refreshed region costs nothing until data reaches it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureAssignment {
    n_features: usize,
    d_max: usize,
    explicit: HashMap<NodeId, u32>,
    fill_seed: u64,
}

impl FeatureAssignment {
    /// A uniform draw over all assignments.
    pub fn uniform<R: RngCore + ?Sized>(d_max: usize, n_features: usize, rng: &mut R) -> Self {
        Self::from_fill_seed(d_max, n_features, rng.next_u64())
    }

    pub fn from_fill_seed(d_max: usize, n_features: usize, fill_seed: u64) -> Self {
        assert!(n_features > 0, "at least one feature is required");
        Self {
            n_features,
            d_max,
            explicit: HashMap::new(),
            fill_seed,
        }
    }

    /// Explicit assignment of every inner node, in level order.
    pub fn from_dense(d_max: usize, n_features: usize, features: &[usize]) -> Result<Self> {
        if features.len() != inner_node_count(d_max) {
            return Err(Error::DimensionMismatch {
                expected: inner_node_count(d_max),
                got: features.len(),
            });
        }
        if let Some(&f) = features.iter().find(|&&f| f >= n_features) {
            return Err(Error::InvalidConfig(format!(
                "feature index {f} out of range for {n_features} features"
            )));
        }
        let mut k = Self::from_fill_seed(d_max, n_features, 0);
        for (i, &f) in features.iter().enumerate() {
            k.explicit.insert(NodeId(i), f as u32);
        }
        Ok(k)
    }

    /// Decode a mixed-radix index (node 0 is the least significant digit).
    pub fn from_index(d_max: usize, n_features: usize, mut index: u64) -> Self {
        let inner = inner_node_count(d_max);
        let mut features = Vec::with_capacity(inner);
        for _ in 0..inner {
            features.push((index % n_features as u64) as usize);
            index /= n_features as u64;
        }
        Self::from_dense(d_max, n_features, &features).expect("digits are in range")
    }

    /// Mixed-radix index over the inner nodes; `None` if it overflows `u64`.
    pub fn index(&self) -> Option<u64> {
        let mut idx: u64 = 0;
        for i in (0..inner_node_count(self.d_max)).rev() {
            idx = idx
                .checked_mul(self.n_features as u64)?
                .checked_add(self.feature(NodeId(i)) as u64)?;
        }
        Some(idx)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn fill_seed(&self) -> u64 {
        self.fill_seed
    }

    /// Number of explicitly stored entries.
    pub fn explicit_len(&self) -> usize {
        self.explicit.len()
    }

    /// Feature at inner node `s`.
    #[inline]
    pub fn feature(&self, s: NodeId) -> usize {
        debug_assert!(s.depth() < self.d_max, "{s} is not an inner node");
        match self.explicit.get(&s) {
            Some(&f) => f as usize,
            None => {
                let h = splitmix64(self.fill_seed ^ (s.0 as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
                ((h as u128 * self.n_features as u128) >> 64) as usize
            }
        }
    }

    pub fn set(&mut self, s: NodeId, feature: usize) {
        assert!(feature < self.n_features);
        assert!(s.depth() < self.d_max);
        self.explicit.insert(s, feature as u32);
    }

    /// All inner-node features in level order.
    pub fn to_dense(&self) -> Vec<usize> {
        (0..inner_node_count(self.d_max))
            .map(|i| self.feature(NodeId(i)))
            .collect()
    }

    /// A copy with a new implicit fill and only the given entries made explicit.
    pub fn refreshed(&self, fill_seed: u64, keep: impl IntoIterator<Item = (NodeId, usize)>) -> Self {
        let mut k = Self::from_fill_seed(self.d_max, self.n_features, fill_seed);
        for (s, f) in keep {
            k.set(s, f);
        }
        k
    }

    /// Uniform draw from all features except `exclude`.
    pub fn draw_excluding<R: Rng + ?Sized>(n_features: usize, exclude: usize, rng: &mut R) -> Result<usize> {
        if n_features < 2 {
            return Err(Error::CannotExcludeOnlyFeature);
        }
        let r = rng.random_range(0..n_features - 1);
        Ok(if r >= exclude { r + 1 } else { r })
    }
}

impl PartialEq for FeatureAssignment {
    fn eq(&self, other: &Self) -> bool {
        self.n_features == other.n_features
            && self.d_max == other.d_max
            && (0..inner_node_count(self.d_max)).all(|i| self.feature(NodeId(i)) == other.feature(NodeId(i)))
    }
}

impl Eq for FeatureAssignment {}

/// Nodes visited from the root down to a node at the maximum depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutePath {
    pub nodes: Vec<NodeId>,
}

impl RoutePath {
    pub fn leaf(&self) -> NodeId {
        *self.nodes.last().expect("paths are never empty")
    }
}

/// Current per-feature intervals while descending the tree.
#[derive(Debug, Clone)]
pub struct Bounds {
    intervals: Vec<(f64, f64)>,
}

impl Bounds {
    pub fn new(space: &FeatureSpaceConfig) -> Self {
        Self {
            intervals: space.ranges().to_vec(),
        }
    }

    #[inline]
    pub fn threshold(&self, feature: usize) -> f64 {
        let (a, b) = self.intervals[feature];
        0.5 * (a + b)
    }

    /// Narrow `feature` to one half; returns the previous interval for [`Bounds::restore`].
    #[inline]
    pub fn descend(&mut self, feature: usize, go_right: bool) -> (f64, f64) {
        let old = self.intervals[feature];
        let mid = 0.5 * (old.0 + old.1);
        self.intervals[feature] = if go_right { (mid, old.1) } else { (old.0, mid) };
        old
    }

    #[inline]
    pub fn restore(&mut self, feature: usize, old: (f64, f64)) {
        self.intervals[feature] = old;
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }
}

fn check_dim(x: &[f64], space: &FeatureSpaceConfig) -> Result<()> {
    if x.len() != space.n_features() {
        return Err(Error::DimensionMismatch {
            expected: space.n_features(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Path of `x` from the root to the maximum depth: at node `s` go left iff
/// `x[k_s]` is strictly below the midpoint of the current interval.
pub fn route(x: &[f64], k: &FeatureAssignment, space: &FeatureSpaceConfig) -> Result<RoutePath> {
    check_dim(x, space)?;
    if k.n_features() != space.n_features() {
        return Err(Error::DimensionMismatch {
            expected: space.n_features(),
            got: k.n_features(),
        });
    }
    let mut bounds = Bounds::new(space);
    let mut nodes = Vec::with_capacity(k.d_max() + 1);
    let mut s = NodeId::ROOT;
    nodes.push(s);
    while s.depth() < k.d_max() {
        let f = k.feature(s);
        let right = x[f] >= bounds.threshold(f);
        bounds.descend(f, right);
        s = if right { s.right() } else { s.left() };
        nodes.push(s);
    }
    Ok(RoutePath { nodes })
}

/// The leaf of `tree` that contains `x`.
pub fn leaf_of(
    x: &[f64],
    k: &FeatureAssignment,
    tree: &FullSubtree,
    space: &FeatureSpaceConfig,
) -> Result<NodeId> {
    let path = route(x, k, space)?;
    Ok(path
        .nodes
        .into_iter()
        .find(|&s| tree.is_leaf(s))
        .expect("the leaves of a full subtree cover every path"))
}

/// The box of node `s` with bounds that coincide with the initial range
/// replaced by infinities.
pub fn node_region(s: NodeId, k: &FeatureAssignment, space: &FeatureSpaceConfig) -> Vec<(f64, f64)> {
    let mut ancestors = Vec::new();
    let mut cur = s;
    while let Some(p) = cur.parent() {
        ancestors.push((p, cur == p.right()));
        cur = p;
    }
    let mut bounds = Bounds::new(space);
    for &(p, right) in ancestors.iter().rev() {
        bounds.descend(k.feature(p), right);
    }
    bounds
        .intervals()
        .iter()
        .zip(space.ranges())
        .map(|(&(a, b), &(a0, b0))| {
            (
                if a == a0 { f64::NEG_INFINITY } else { a },
                if b == b0 { f64::INFINITY } else { b },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree_topology::FullSubtree;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn fig2() -> (FeatureSpaceConfig, FeatureAssignment) {
        let space = FeatureSpaceConfig::new(vec![(-4.0, 4.0)], 1).unwrap();
        // (1, 1, 2) in one-based feature numbering
        let k = FeatureAssignment::from_dense(2, 2, &[0, 0, 1]).unwrap();
        (space, k)
    }

    #[test]
    fn figure_two_routing() {
        let (space, k) = fig2();
        let path = route(&[-3.0, 1.0], &k, &space).unwrap();
        // -3 < 0 -> left (s1), -3 < -2 -> left (s3)
        assert_eq!(path.nodes, vec![NodeId(0), NodeId(1), NodeId(3)]);
        let path = route(&[-1.0, 1.0], &k, &space).unwrap();
        assert_eq!(path.nodes, vec![NodeId(0), NodeId(1), NodeId(4)]);
        let path = route(&[2.0, 0.0], &k, &space).unwrap();
        assert_eq!(path.nodes, vec![NodeId(0), NodeId(2), NodeId(5)]);
    }

    #[test]
    fn figure_two_leaf_of_solid_tree() {
        let (space, k) = fig2();
        // leaves {s0, s10, s11} = {1, 5, 6}
        let tree = FullSubtree::from_inner(BTreeSet::from([NodeId(0), NodeId(2)]));
        assert_eq!(tree.leaf_nodes, BTreeSet::from([NodeId(1), NodeId(5), NodeId(6)]));
        assert_eq!(leaf_of(&[-3.0, 0.0], &k, &tree, &space).unwrap(), NodeId(1));
        assert_eq!(leaf_of(&[3.0, 1.0], &k, &tree, &space).unwrap(), NodeId(6));
        assert_eq!(
            leaf_of(&[3.0, 1.0], &k, &FullSubtree::root_only(), &space).unwrap(),
            NodeId(0)
        );
        let full = FullSubtree::maximal(2);
        let x = [0.5, 0.0];
        assert_eq!(
            leaf_of(&x, &k, &full, &space).unwrap(),
            route(&x, &k, &space).unwrap().leaf()
        );
    }

    #[test]
    fn binary_split_at_half() {
        let space = FeatureSpaceConfig::binary(1).unwrap();
        let k = FeatureAssignment::from_dense(1, 1, &[0]).unwrap();
        assert_eq!(route(&[0.0], &k, &space).unwrap().leaf(), NodeId(1));
        assert_eq!(route(&[1.0], &k, &space).unwrap().leaf(), NodeId(2));
    }

    #[test]
    fn far_outside_range_goes_left_everywhere() {
        let space = FeatureSpaceConfig::new(vec![(-4.0, 4.0)], 0).unwrap();
        let k = FeatureAssignment::from_dense(3, 1, &[0; 7]).unwrap();
        let path = route(&[-100.0], &k, &space).unwrap();
        assert_eq!(path.nodes, vec![NodeId(0), NodeId(1), NodeId(3), NodeId(7)]);
        let path = route(&[100.0], &k, &space).unwrap();
        assert_eq!(path.leaf(), NodeId(14));
    }

    #[test]
    fn dimension_mismatch() {
        let (space, k) = fig2();
        assert!(matches!(
            route(&[0.0], &k, &space),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn repeated_feature_bisects_twice() {
        let space = FeatureSpaceConfig::new(vec![(0.0, 8.0)], 0).unwrap();
        let k = FeatureAssignment::from_dense(2, 1, &[0, 0, 0]).unwrap();
        // thresholds 4 then 2 / 6
        assert_eq!(route(&[1.9], &k, &space).unwrap().leaf(), NodeId(3));
        assert_eq!(route(&[2.0], &k, &space).unwrap().leaf(), NodeId(4));
        assert_eq!(route(&[5.9], &k, &space).unwrap().leaf(), NodeId(5));
        assert_eq!(route(&[6.0], &k, &space).unwrap().leaf(), NodeId(6));
        let region = node_region(NodeId(4), &k, &space);
        assert_eq!(region, vec![(2.0, 4.0)]);
        let region = node_region(NodeId(3), &k, &space);
        assert_eq!(region, vec![(f64::NEG_INFINITY, 2.0)]);
    }

    #[test]
    fn implicit_entries_are_stable_and_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = FeatureAssignment::uniform(10, 5, &mut rng);
        assert_eq!(k.explicit_len(), 0);
        let dense = k.to_dense();
        assert_eq!(dense, k.to_dense());
        let mut counts = [0usize; 5];
        for f in &dense {
            counts[*f] += 1;
        }
        // 1023 draws; each bucket near 204.6
        for c in counts {
            assert!((150..260).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn index_round_trip() {
        for idx in [0u64, 1, 77, 78124] {
            let k = FeatureAssignment::from_index(3, 5, idx);
            assert_eq!(k.index(), Some(idx));
        }
        let k = FeatureAssignment::from_dense(1, 3, &[2]).unwrap();
        assert_eq!(k.index(), Some(2));
    }

    #[test]
    fn excluding_draw_never_returns_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let f = FeatureAssignment::draw_excluding(4, 2, &mut rng).unwrap();
            assert!(f != 2 && f < 4);
        }
        assert!(matches!(
            FeatureAssignment::draw_excluding(1, 0, &mut rng),
            Err(Error::CannotExcludeOnlyFeature)
        ));
    }

    #[test]
    fn data_driven_ranges() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![3.0, 1.0]];
        let space = FeatureSpaceConfig::from_rows(rows.iter().map(|r| r.as_slice()), 1, 1).unwrap();
        let (a, b) = space.ranges()[0];
        assert!(a < 1.0 && b > 3.0);
        assert!((a - (1.0 - 3e-9)).abs() < 1e-15);
        assert_eq!(space.ranges()[1], (0.0, 1.0));
    }
}
