use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::Rng;

/// Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Binary regression tree stored as a flat node list rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn constant(value: f64) -> Self {
        Self { nodes: vec![Node::Leaf { value }] }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    k = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match t.nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

/// Split point strictly between two adjacent distinct sorted values.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t >= hi {
        lo
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CartParams {
    pub mtry: usize,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
}

/// Variance-reduction CART over the given (possibly repeated) row sample.
///
/// A node is split only when it holds at least `min_node_size` rows and
/// its targets are not all equal. `mtry` candidate features are drawn per
/// node and scanned in ascending index order; the first best split wins.
pub(crate) fn grow_cart(x: &Matrix, y: &[f64], sample: Vec<usize>, params: &CartParams, rng: &mut Rng) -> Tree {
    let p = x.ncols();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut stack = vec![(0usize, sample, 0usize)];
    let mut buf: Vec<(f64, f64)> = Vec::new();
    while let Some((id, idx, depth)) = stack.pop() {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| y[i]).sum();
        let mean = sum / n as f64;
        nodes[id] = Node::Leaf { value: mean };
        let constant = idx.iter().all(|&i| y[i] == y[idx[0]]);
        if constant || n < params.min_node_size.max(2) || params.max_depth.is_some_and(|d| depth >= d) {
            continue;
        }
        let mut feats = index::sample(rng, p, params.mtry.min(p)).into_vec();
        feats.sort_unstable();

        let parent = sum * sum / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &feats {
            buf.clear();
            buf.extend(idx.iter().map(|&i| (x.get(i, f), y[i])));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for k in 0..n - 1 {
                left += buf[k].1;
                if buf[k].0 < buf[k + 1].0 {
                    let nl = (k + 1) as f64;
                    let right = sum - left;
                    let score = left * left / nl + right * right / (n as f64 - nl);
                    if best.is_none_or(|b| score > b.0) {
                        best = Some((score, f, midpoint(buf[k].0, buf[k + 1].0)));
                    }
                }
            }
        }
        let Some((score, feature, threshold)) = best else { continue };
        if score <= parent {
            continue;
        }
        let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x.get(i, feature) <= threshold);
        let left = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[id] = Node::Split { feature, threshold, left, right: left + 1 };
        stack.push((left + 1, ri, depth + 1));
        stack.push((left, li, depth + 1));
    }
    Tree { nodes }
}
