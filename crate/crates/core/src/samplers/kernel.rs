//! Kernel-based softmax sampling with the quadratic feature map
//! pi(x) = (sqrt(lambda0), vec(x (x) x)), so that
//! <pi(u), pi(v)> = lambda0 + <u, v>^2. A sum-tree over the mapped item
//! embeddings lets one draw to q(j|c) ~ lambda0 + score^2 in
//! O(D log n).

use rand::Rng;

use crate::linalg::dot;
use crate::model::FactorModel;

/// Balanced binary sum-tree over pi(h_j) for all items, stored as an
/// implicit heap: node k has children 2k and 2k+1, leaves start at
/// `base`.
#[derive(Debug, Clone)]
pub struct KernelTree {
    pub lambda0: f64,
    /// Expanded dimension d^2 + 1.
    pub expanded_dim: usize,
    num_items: usize,
    base: usize,
    /// node_sums[k] is the sum of pi(h_j) over leaf items below node k.
    node_sums: Vec<Vec<f64>>,
}

fn feature_map(x: &[f64], lambda0: f64) -> Vec<f64> {
    let d = x.len();
    let mut out = Vec::with_capacity(d * d + 1);
    out.push(lambda0.sqrt());
    for &a in x {
        for &b in x {
            out.push(a * b);
        }
    }
    out
}

pub fn build_kernel_tree(model: &FactorModel, lambda0: f64) -> KernelTree {
    let n = model.num_items().max(1);
    let expanded_dim = model.dim() * model.dim() + 1;
    let base = n.next_power_of_two();
    let mut node_sums = vec![vec![0.0; expanded_dim]; 2 * base];
    for i in 0..model.num_items() {
        node_sums[base + i] = feature_map(model.item_embedding(i), lambda0);
    }
    for k in (1..base).rev() {
        let (left, right) = (2 * k, 2 * k + 1);
        node_sums[k] = node_sums[left]
            .iter()
            .zip(&node_sums[right])
            .map(|(a, b)| a + b)
            .collect();
    }
    KernelTree {
        lambda0,
        expanded_dim,
        num_items: model.num_items(),
        base,
        node_sums,
    }
}

impl KernelTree {
    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn root_sum(&self) -> &[f64] {
        &self.node_sums[1]
    }

    pub fn leaf_sum(&self, item: usize) -> &[f64] {
        &self.node_sums[self.base + item]
    }

    pub fn child_sums(&self, node: usize) -> (&[f64], &[f64]) {
        (&self.node_sums[2 * node], &self.node_sums[2 * node + 1])
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node >= self.base
    }
}

/// Draw one item with probability proportional to
/// lambda0 + score(c, j)^2 by descending the sum-tree.
pub fn kernel_sample(
    rng: &mut impl Rng,
    tree: &KernelTree,
    model: &FactorModel,
    c: usize,
) -> usize {
    let query = feature_map(model.context_embedding(c), tree.lambda0);
    let mut node = 1usize;
    // Item-index range covered by the current node.
    let mut lo = 0usize;
    let mut width = tree.base;
    while !tree.is_leaf(node) {
        let (left, right) = tree.child_sums(node);
        // Negative branch masses can only arise from rounding; clamp.
        let mass_left = dot(&query, left).max(0.0);
        let mass_right = dot(&query, right).max(0.0);
        let total = mass_left + mass_right;
        width /= 2;
        if total <= 0.0 {
            // No kernel mass below: fall back to a uniform item in range.
            let hi = (lo + 2 * width).min(tree.num_items);
            return rng.random_range(lo..hi);
        }
        if rng.random_range(0.0..total) < mass_left {
            node = 2 * node;
        } else {
            node = 2 * node + 1;
            lo += width;
        }
    }
    node - tree.base
}

/// The target distribution q(j|c) = (lambda0 + score^2) / normalizer.
pub fn kernel_exact_prob(model: &FactorModel, c: usize, lambda0: f64) -> Vec<f64> {
    let raw: Vec<f64> = model
        .score_all(c)
        .into_iter()
        .map(|s| lambda0 + s * s)
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}
