//! Depth-limited regression trees grown by exact greedy split search on the
//! second-order approximation of the risk.
//!
//! A node with gradient sum `G` and Hessian sum `H` has optimal weight
//! `-G / H`. A split into left/right children is scored by
//! `G_L^2 / H_L + G_R^2 / H_R - G^2 / H`, which is twice the decrease of the
//! approximate risk. Candidate thresholds are midpoints between consecutive
//! distinct feature values; rows with `x_j <= t` go left.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Number of edges from the root to the deepest leaf; 1 is a stump.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 1,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// Binary tree stored as a node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// A root-only tree.
    pub fn constant(weight: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { weight }],
        }
    }

    /// Validates an externally supplied node arena: children must point
    /// forward and every node must be reachable exactly once.
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Format("tree without nodes".into()));
        }
        let mut seen = vec![false; nodes.len()];
        seen[0] = true;
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features || !threshold.is_finite() {
                        return Err(Error::Format(format!("invalid split in node {i}")));
                    }
                    for child in [left, right] {
                        if child <= i || child >= nodes.len() || seen[child] {
                            return Err(Error::Format(format!("invalid child of node {i}")));
                        }
                        seen[child] = true;
                    }
                }
                Node::Leaf { weight } => {
                    if !weight.is_finite() {
                        return Err(Error::Format(format!("non-finite leaf {i}")));
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("unreachable tree node".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Index of the leaf node containing `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { .. } => return idx,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { weight } => weight,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn predict_matrix(&self, features: &Matrix) -> Vec<f64> {
        features.row_iter().map(|x| self.predict(x)).collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

/// Row indices sorted by each feature, computed once per feature matrix and
/// reused across boosting iterations.
#[derive(Debug, Clone)]
pub struct FeatureOrder {
    sorted: Vec<Vec<usize>>,
}

impl FeatureOrder {
    pub fn new(features: &Matrix) -> Self {
        let sorted = (0..features.cols())
            .map(|j| {
                let mut idx: Vec<usize> = (0..features.rows()).collect();
                idx.sort_by(|&a, &b| features.get(a, j).total_cmp(&features.get(b, j)));
                idx
            })
            .collect();
        Self { sorted }
    }
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: f64,
    /// Number of rows going left in the node's sort order of `feature`.
    left_count: usize,
    gain: f64,
}

/// Fits a tree to one gradient/Hessian column.
pub fn fit_tree(features: &Matrix, grad: &[f64], hess: &[f64], params: &TreeParams) -> Result<Tree> {
    fit_tree_presorted(features, &FeatureOrder::new(features), grad, hess, params)
}

/// As [`fit_tree`], reusing a precomputed [`FeatureOrder`] of `features`.
pub fn fit_tree_presorted(
    features: &Matrix,
    order: &FeatureOrder,
    grad: &[f64],
    hess: &[f64],
    params: &TreeParams,
) -> Result<Tree> {
    let n = features.rows();
    if n == 0 || features.cols() == 0 {
        return Err(Error::invalid("cannot fit a tree on empty input"));
    }
    if grad.len() != n || hess.len() != n {
        return Err(Error::invalid("gradient/Hessian length does not match rows"));
    }
    if hess.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("Hessian column sums to zero"));
    }
    let mut builder = Builder {
        features,
        grad,
        hess,
        params: (params.max_depth, params.min_samples_leaf.max(1)),
        nodes: Vec::new(),
        in_left: vec![false; n],
    };
    builder.grow(order.sorted.clone(), 0)?;
    Ok(Tree {
        nodes: builder.nodes,
    })
}

struct Builder<'a> {
    features: &'a Matrix,
    grad: &'a [f64],
    hess: &'a [f64],
    params: (usize, usize),
    nodes: Vec<Node>,
    in_left: Vec<bool>,
}

impl Builder<'_> {
    /// Grows the subtree for the rows in `sorted` (one sorted row list per
    /// feature) and returns its node index.
    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> Result<usize> {
        let rows = &sorted[0];
        let (g_sum, h_sum) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]));
        if h_sum <= 0.0 {
            return Err(Error::invalid("leaf with zero Hessian sum"));
        }
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf {
            weight: -g_sum / h_sum,
        });

        let (max_depth, min_leaf) = self.params;
        if depth >= max_depth || rows.len() < 2 * min_leaf {
            return Ok(idx);
        }
        let Some(best) = self.best_split(&sorted, g_sum, h_sum, min_leaf) else {
            return Ok(idx);
        };

        let split_order = &sorted[best.feature];
        for &i in &split_order[..best.left_count] {
            self.in_left[i] = true;
        }
        let mut left = Vec::with_capacity(sorted.len());
        let mut right = Vec::with_capacity(sorted.len());
        for list in &sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = list.iter().partition(|&&i| self.in_left[i]);
            left.push(l);
            right.push(r);
        }
        for &i in &split_order[..best.left_count] {
            self.in_left[i] = false;
        }
        drop(sorted);

        let l = self.grow(left, depth + 1)?;
        let r = self.grow(right, depth + 1)?;
        self.nodes[idx] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        Ok(idx)
    }

    fn best_split(
        &self,
        sorted: &[Vec<usize>],
        g_sum: f64,
        h_sum: f64,
        min_leaf: usize,
    ) -> Option<BestSplit> {
        let parent = g_sum * g_sum / h_sum;
        let mut best: Option<BestSplit> = None;
        for (j, order) in sorted.iter().enumerate() {
            let m = order.len();
            let (mut gl, mut hl) = (0.0, 0.0);
            for pos in 0..m - 1 {
                let i = order[pos];
                gl += self.grad[i];
                hl += self.hess[i];
                let left_count = pos + 1;
                if left_count < min_leaf || m - left_count < min_leaf {
                    continue;
                }
                let lo = self.features.get(i, j);
                let hi = self.features.get(order[pos + 1], j);
                if lo >= hi {
                    continue;
                }
                let gr = g_sum - gl;
                let hr = h_sum - hl;
                if hl <= 0.0 || hr <= 0.0 {
                    continue;
                }
                let gain = gl * gl / hl + gr * gr / hr - parent;
                if gain > best.map_or(0.0, |b| b.gain) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature: j,
                        threshold,
                        left_count,
                        gain,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn x1(values: &[f64]) -> Matrix {
        Matrix::column_vector(values.to_vec())
    }

    #[test]
    fn root_only_tree_is_mean_residual() {
        let x = x1(&[0.0, 1.0, 2.0]);
        let g = [-1.0, -2.0, -6.0];
        let t = fit_tree(&x, &g, &[1.0; 3], &TreeParams { max_depth: 0, min_samples_leaf: 1 }).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[10.0]), 3.0);
    }

    #[test]
    fn separable_step() {
        let x = x1(&[0.0, 1.0, 2.0, 3.0]);
        let t = fit_tree(&x, &[-1.0, -1.0, 1.0, 1.0], &[1.0; 4], &TreeParams::default()).unwrap();
        assert_eq!(
            t.nodes()[0],
            Node::Split { feature: 0, threshold: 1.5, left: 1, right: 2 }
        );
        assert_eq!(t.predict(&[1.5]), 1.0);
        assert_eq!(t.predict(&[2.0]), -1.0);
        assert_eq!(t.num_leaves(), 2);
    }

    #[test]
    fn no_positive_gain_means_leaf() {
        let x = x1(&[0.0, 1.0, 2.0, 3.0]);
        let t = fit_tree(&x, &[1.0; 4], &[1.0; 4], &TreeParams { max_depth: 3, min_samples_leaf: 1 }).unwrap();
        assert_eq!(t.num_leaves(), 1);
    }

    #[test]
    fn ties_prefer_lowest_feature_then_threshold() {
        // two identical features: the split must use feature 0
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        let t = fit_tree(&x, &[-1.0, -1.0, 1.0, 1.0], &[1.0; 4], &TreeParams::default()).unwrap();
        assert!(matches!(t.nodes()[0], Node::Split { feature: 0, .. }));
        // symmetric gains at 0.5 and 2.5: the smaller threshold wins
        let x = x1(&[0.0, 1.0, 2.0, 3.0]);
        let t = fit_tree(&x, &[-3.0, 1.0, 1.0, 1.0], &[1.0; 4], &TreeParams::default()).unwrap();
        let t2 = fit_tree(&x, &[1.0, 1.0, 1.0, -3.0], &[1.0; 4], &TreeParams::default()).unwrap();
        assert!(matches!(t.nodes()[0], Node::Split { threshold, .. } if threshold == 0.5));
        assert!(matches!(t2.nodes()[0], Node::Split { threshold, .. } if threshold == 2.5));
    }

    #[test]
    fn respects_min_samples_leaf_and_duplicates() {
        let x = x1(&[0.0, 0.0, 0.0, 1.0, 1.0]);
        let t = fit_tree(&x, &[-1.0, -1.0, -1.0, 1.0, 1.0], &[1.0; 5], &TreeParams { max_depth: 2, min_samples_leaf: 3 }).unwrap();
        assert_eq!(t.num_leaves(), 1);
        let t = fit_tree(&x, &[-1.0, -1.0, -1.0, 1.0, 1.0], &[1.0; 5], &TreeParams { max_depth: 2, min_samples_leaf: 2 }).unwrap();
        assert_eq!(t.num_leaves(), 2);
    }

    #[test]
    fn errors() {
        let x = x1(&[0.0, 1.0]);
        assert!(fit_tree(&x, &[1.0, 1.0], &[0.0, 0.0], &TreeParams::default()).is_err());
        assert!(fit_tree(&x, &[1.0], &[1.0], &TreeParams::default()).is_err());
        assert!(fit_tree(&Matrix::zeros(0, 1), &[], &[], &TreeParams::default()).is_err());
    }

    #[test]
    fn from_nodes_validates() {
        let ok = vec![
            Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
            Node::Leaf { weight: 1.0 },
            Node::Leaf { weight: 2.0 },
        ];
        assert!(Tree::from_nodes(ok.clone(), 1).is_ok());
        assert!(Tree::from_nodes(ok, 0).is_err());
        let cyclic = vec![
            Node::Split { feature: 0, threshold: 0.5, left: 0, right: 1 },
            Node::Leaf { weight: 1.0 },
        ];
        assert!(Tree::from_nodes(cyclic, 1).is_err());
    }

    fn approx_risk(tree: &Tree, x: &Matrix, g: &[f64], h: &[f64]) -> f64 {
        x.row_iter()
            .enumerate()
            .map(|(i, r)| {
                let f = tree.predict(r);
                g[i] * f + 0.5 * h[i] * f * f
            })
            .sum()
    }

    fn random_instance(seed: u64) -> (Matrix, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(5..40);
        let p = rng.gen_range(1..4);
        let data = (0..n * p).map(|_| (rng.gen_range(0..12) as f64) * 0.5).collect();
        let g = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        (Matrix::new(n, p, data).unwrap(), g, h)
    }

    proptest! {
        #[test]
        fn fitted_tree_never_increases_approx_risk(seed in any::<u64>(), depth in 0usize..4) {
            let (x, g, h) = random_instance(seed);
            let t = fit_tree(&x, &g, &h, &TreeParams { max_depth: depth, min_samples_leaf: 1 }).unwrap();
            prop_assert!(approx_risk(&t, &x, &g, &h) <= 1e-12);
            prop_assert!(t.depth() <= depth);
            prop_assert_eq!(t.nodes().len(), 2 * t.num_leaves() - 1);
        }

        #[test]
        fn invariant_under_monotone_feature_maps(seed in any::<u64>()) {
            let (x, g, h) = random_instance(seed);
            let params = TreeParams { max_depth: 3, min_samples_leaf: 1 };
            let mapped = Matrix::new(
                x.rows(),
                x.cols(),
                x.as_slice().iter().map(|v| (0.7 * v).exp() + 3.0 * v).collect(),
            ).unwrap();
            let a = fit_tree(&x, &g, &h, &params).unwrap();
            let b = fit_tree(&mapped, &g, &h, &params).unwrap();
            prop_assert_eq!(a.nodes().len(), b.nodes().len());
            for (na, nb) in a.nodes().iter().zip(b.nodes()) {
                match (na, nb) {
                    (Node::Leaf { weight: wa }, Node::Leaf { weight: wb }) => prop_assert_eq!(wa, wb),
                    (Node::Split { feature: fa, left: la, right: ra, .. },
                     Node::Split { feature: fb, left: lb, right: rb, .. }) => {
                        prop_assert_eq!((fa, la, ra), (fb, lb, rb));
                    }
                    _ => prop_assert!(false, "structure differs"),
                }
            }
            // same partition of the training rows
            for i in 0..x.rows() {
                prop_assert_eq!(a.leaf_index(x.row(i)), b.leaf_index(mapped.row(i)));
            }
        }

        #[test]
        fn piecewise_constant_within_leaves(seed in any::<u64>()) {
            let (x, g, h) = random_instance(seed);
            let t = fit_tree(&x, &g, &h, &TreeParams { max_depth: 2, min_samples_leaf: 1 }).unwrap();
            for i in 0..x.rows() {
                for k in 0..x.rows() {
                    if t.leaf_index(x.row(i)) == t.leaf_index(x.row(k)) {
                        prop_assert_eq!(t.predict(x.row(i)).to_bits(), t.predict(x.row(k)).to_bits());
                    }
                }
            }
        }
    }
}
