//! Second-order gradient boosting of regression trees.
//!
//! Each round fits a tree to the per-row gradient `g` and hessian `h` of the
//! loss at the current prediction. A leaf holding sums `G`, `H` gets weight
//! `-T(G)/(H + λ)`, with `T` the soft-threshold at `α`. A split is worth
//! `½[T(G_L)²/(H_L+λ) + T(G_R)²/(H_R+λ) - T(G)²/(H+λ)] - γ` and is taken
//! only when that is positive and both children carry at least
//! `min_child_weight` hessian.
//!
//! * depth-wise: every leaf of a level is split at once, up to `max_depth`,
//!   scanning every distinct value of every feature (presorted once per fit).
//! * leaf-wise: the leaf with the largest gain is split next until
//!   `max_leaves` is reached, scanning histogram bin boundaries.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::linear::soft_threshold;
use super::tree::{midpoint, Node, Tree};
use super::ModelSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowPolicy {
    DepthWise,
    LeafWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Huber { delta: f64 },
}

impl Loss {
    pub fn value(self, y: f64, f: f64) -> f64 {
        let e = f - y;
        match self {
            Loss::Squared => 0.5 * e * e,
            Loss::Huber { delta } if e.abs() <= delta => 0.5 * e * e,
            Loss::Huber { delta } => delta * (e.abs() - 0.5 * delta),
        }
    }

    /// First and second derivative with respect to the prediction `f`.
    pub fn gradient(self, y: f64, f: f64) -> (f64, f64) {
        let e = f - y;
        match self {
            Loss::Squared => (e, 1.0),
            Loss::Huber { delta } if e.abs() <= delta => (e, 1.0),
            Loss::Huber { delta } => (delta * e.signum(), 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbtParams {
    pub policy: GrowPolicy,
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub max_leaves: usize,
    pub n_bins: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub subsample: f64,
    pub loss: Loss,
}

impl GbtParams {
    pub fn new(policy: GrowPolicy) -> Self {
        Self {
            policy,
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: match policy {
                GrowPolicy::DepthWise => Some(6),
                GrowPolicy::LeafWise => None,
            },
            max_leaves: 31,
            n_bins: 255,
            lambda: 1.0,
            alpha: 0.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            subsample: 1.0,
            loss: Loss::Squared,
        }
    }

    /// `loss` is 0 for squared error and 1 for Huber (with `huber_delta`).
    /// For the leaf-wise policy `max_depth = 0` means unlimited.
    pub fn from_spec(spec: &ModelSpec, policy: GrowPolicy) -> Result<Self> {
        let d = Self::new(policy);
        let depth = spec.get_usize("max_depth", d.max_depth.unwrap_or(0))?;
        let loss = match spec.get_or("loss", 0.0) {
            v if v == 0.0 => Loss::Squared,
            v if v == 1.0 => Loss::Huber { delta: spec.get_or("huber_delta", 1.0) },
            v => return Err(Error::config(format!("{}: loss must be 0 (squared) or 1 (huber), got {v}", spec.family))),
        };
        let p = Self {
            policy,
            n_trees: spec.get_usize("n_trees", d.n_trees)?,
            learning_rate: spec.get_or("learning_rate", d.learning_rate),
            max_depth: (depth > 0).then_some(depth),
            max_leaves: spec.get_usize("max_leaves", d.max_leaves)?,
            n_bins: spec.get_usize("n_bins", d.n_bins)?,
            lambda: spec.get_or("lambda", d.lambda),
            alpha: spec.get_or("alpha", d.alpha),
            gamma: spec.get_or("gamma", d.gamma),
            min_child_weight: spec.get_or("min_child_weight", d.min_child_weight),
            subsample: spec.get_or("subsample", d.subsample),
            loss,
        };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("gbt: {m}")));
        if self.n_trees == 0 {
            return bad("n_trees must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.policy == GrowPolicy::DepthWise && self.max_depth.is_none() {
            return bad("depth-wise growth needs max_depth >= 1");
        }
        if self.policy == GrowPolicy::LeafWise && self.max_leaves < 2 {
            return bad("max_leaves must be >= 2");
        }
        if !(2..=65_535).contains(&self.n_bins) {
            return bad("n_bins must lie in 2..=65535");
        }
        if self.lambda < 0.0 || self.alpha < 0.0 || self.gamma < 0.0 || self.min_child_weight < 0.0 {
            return bad("lambda, alpha, gamma and min_child_weight must be >= 0");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if let Loss::Huber { delta } = self.loss {
            if delta <= 0.0 {
                return bad("huber_delta must be > 0");
            }
        }
        Ok(())
    }

    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        let d = h + self.lambda;
        if d <= 0.0 {
            0.0
        } else {
            -soft_threshold(g, self.alpha) / d
        }
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        let d = h + self.lambda;
        if d <= 0.0 {
            0.0
        } else {
            soft_threshold(g, self.alpha).powi(2) / d
        }
    }

    fn split_gain(&self, gl: f64, hl: f64, g: f64, h: f64) -> Option<f64> {
        let (gr, hr) = (g - gl, h - hl);
        if hl < self.min_child_weight || hr < self.min_child_weight {
            return None;
        }
        Some(0.5 * (self.score(gl, hl) + self.score(gr, hr) - self.score(g, h)) - self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Mean training loss before the first tree and after each tree.
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }

    /// Per-tree additions `η·tree(x)`; they sum with `base` to the prediction.
    pub fn contributions(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| self.learning_rate * t.predict_row(x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SplitCand {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// last bin that goes left (histogram splits only)
    bin: usize,
}

fn better(best: &Option<SplitCand>, gain: f64) -> bool {
    gain > 0.0 && best.is_none_or(|b| gain > b.gain)
}

pub fn fit_gbt(x: &Matrix, y: &[f64], params: &GbtParams, seed: u64) -> Result<GbtModel> {
    params.check()?;
    let n = x.nrows();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mean_loss = |pred: &[f64]| y.iter().zip(pred).map(|(&yi, &f)| params.loss.value(yi, f)).sum::<f64>() / n as f64;
    let mut train_loss = vec![mean_loss(&pred)];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];

    let exact = match params.policy {
        GrowPolicy::DepthWise => Some(presort(x)),
        GrowPolicy::LeafWise => None,
    };
    let binned = match params.policy {
        GrowPolicy::LeafWise => Some(Binned::new(x, params.n_bins)),
        GrowPolicy::DepthWise => None,
    };
    let n_sample = ((params.subsample * n as f64).ceil() as usize).clamp(1, n);

    for t in 0..params.n_trees {
        for i in 0..n {
            (g[i], h[i]) = params.loss.gradient(y[i], pred[i]);
        }
        let rows: Vec<usize> = if n_sample < n {
            let mut r = rng::stream(seed, t as u64);
            let mut s = index::sample(&mut r, n, n_sample).into_vec();
            s.sort_unstable();
            s
        } else {
            (0..n).collect()
        };
        let tree = match (&exact, &binned) {
            (Some(order), _) => grow_depthwise(x, order, &g, &h, &rows, params),
            (_, Some(b)) => grow_leafwise(b, &g, &h, rows, params),
            _ => unreachable!(),
        };
        for i in 0..n {
            pred[i] += params.learning_rate * tree.predict_row(x.row(i));
        }
        train_loss.push(mean_loss(&pred));
        trees.push(tree);
    }
    Ok(GbtModel { base, learning_rate: params.learning_rate, trees, train_loss })
}

/// Per feature, (row, value) pairs in ascending value order.
fn presort(x: &Matrix) -> Vec<Vec<(usize, f64)>> {
    (0..x.ncols())
        .map(|f| {
            let mut o: Vec<(usize, f64)> = (0..x.nrows()).map(|i| (i, x.get(i, f))).collect();
            o.sort_by(|a, b| a.1.total_cmp(&b.1));
            o
        })
        .collect()
}

const INACTIVE: usize = usize::MAX;

/// Best exact split for each active node. `slot[i]` is the active-node
/// position of row `i`, or `INACTIVE`.
fn exact_splits(
    order: &[Vec<(usize, f64)>],
    g: &[f64],
    h: &[f64],
    slot: &[usize],
    totals: &[(f64, f64)],
    params: &GbtParams,
) -> Vec<Option<SplitCand>> {
    let k = totals.len();
    let mut best: Vec<Option<SplitCand>> = vec![None; k];
    let mut gl = vec![0.0; k];
    let mut hl = vec![0.0; k];
    let mut last: Vec<Option<f64>> = vec![None; k];
    for (f, ord) in order.iter().enumerate() {
        gl.iter_mut().for_each(|v| *v = 0.0);
        hl.iter_mut().for_each(|v| *v = 0.0);
        last.iter_mut().for_each(|v| *v = None);
        for &(i, xi) in ord {
            let s = slot[i];
            if s == INACTIVE {
                continue;
            }
            if let Some(lx) = last[s] {
                if xi > lx {
                    let (gt, ht) = totals[s];
                    if let Some(gain) = params.split_gain(gl[s], hl[s], gt, ht) {
                        if better(&best[s], gain) {
                            best[s] = Some(SplitCand { gain, feature: f, threshold: midpoint(lx, xi), bin: 0 });
                        }
                    }
                }
            }
            gl[s] += g[i];
            hl[s] += h[i];
            last[s] = Some(xi);
        }
    }
    best
}

fn grow_depthwise(x: &Matrix, order: &[Vec<(usize, f64)>], g: &[f64], h: &[f64], rows: &[usize], params: &GbtParams) -> Tree {
    let n = x.nrows();
    let max_depth = params.max_depth.unwrap_or(usize::MAX);
    // node id of each sampled row, INACTIVE for rows outside the sample or
    // sitting in a finished leaf
    let mut node_of = vec![INACTIVE; n];
    for &i in rows {
        node_of[i] = 0;
    }
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut stats = vec![(rows.iter().map(|&i| g[i]).sum::<f64>(), rows.iter().map(|&i| h[i]).sum::<f64>())];
    let mut level: Vec<usize> = vec![0];
    let mut depth = 0;
    while !level.is_empty() && depth < max_depth {
        let mut slot_of_node = vec![INACTIVE; nodes.len()];
        for (s, &id) in level.iter().enumerate() {
            slot_of_node[id] = s;
        }
        let slot: Vec<usize> = node_of.iter().map(|&id| if id == INACTIVE { INACTIVE } else { slot_of_node[id] }).collect();
        let totals: Vec<(f64, f64)> = level.iter().map(|&id| stats[id]).collect();
        let best = exact_splits(order, g, h, &slot, &totals, params);

        let mut next = Vec::new();
        let mut children = vec![(INACTIVE, INACTIVE); level.len()];
        for (s, &id) in level.iter().enumerate() {
            if let Some(c) = best[s] {
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                stats.push((0.0, 0.0));
                stats.push((0.0, 0.0));
                nodes[id] = Node::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                children[s] = (left, left + 1);
                next.push(left);
                next.push(left + 1);
            }
        }
        for i in 0..n {
            let s = slot[i];
            if s == INACTIVE {
                continue;
            }
            match (best[s], children[s]) {
                (Some(c), (l, r)) => {
                    let child = if x.get(i, c.feature) <= c.threshold { l } else { r };
                    node_of[i] = child;
                    stats[child].0 += g[i];
                    stats[child].1 += h[i];
                }
                (None, _) => node_of[i] = INACTIVE,
            }
        }
        level = next;
        depth += 1;
    }
    finalize(nodes, &stats, params)
}

fn finalize(mut nodes: Vec<Node>, stats: &[(f64, f64)], params: &GbtParams) -> Tree {
    for (id, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            *value = params.leaf_weight(stats[id].0, stats[id].1);
        }
    }
    Tree { nodes }
}

/// Per-feature bin boundaries and the binned training matrix.
struct Binned {
    n_features: usize,
    /// `cuts[f][j]` separates bin `j` from bin `j + 1`.
    cuts: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    bins: Vec<u16>,
}

impl Binned {
    /// Features with at most `n_bins` distinct values get one bin per value;
    /// otherwise boundaries are placed at approximate count quantiles.
    fn new(x: &Matrix, n_bins: usize) -> Self {
        let (n, p) = (x.nrows(), x.ncols());
        let mut cuts = Vec::with_capacity(p);
        for f in 0..p {
            let mut col = x.column(f);
            col.sort_by(|a, b| a.total_cmp(b));
            let mut distinct: Vec<(f64, usize)> = Vec::new();
            for v in col {
                match distinct.last_mut() {
                    Some((d, c)) if *d == v => *c += 1,
                    _ => distinct.push((v, 1)),
                }
            }
            let mut c = Vec::new();
            if distinct.len() <= n_bins {
                for w in distinct.windows(2) {
                    c.push(midpoint(w[0].0, w[1].0));
                }
            } else {
                let mut cum = 0usize;
                let mut next_bin = 1usize;
                for w in distinct.windows(2) {
                    cum += w[0].1;
                    if cum * n_bins >= next_bin * n && c.len() + 1 < n_bins {
                        c.push(midpoint(w[0].0, w[1].0));
                        while next_bin * n <= cum * n_bins {
                            next_bin += 1;
                        }
                    }
                }
            }
            cuts.push(c);
        }
        let mut offsets = Vec::with_capacity(p + 1);
        offsets.push(0);
        for c in &cuts {
            offsets.push(offsets.last().unwrap() + c.len() + 1);
        }
        let mut bins = vec![0u16; n * p];
        for i in 0..n {
            for f in 0..p {
                let v = x.get(i, f);
                bins[i * p + f] = cuts[f].partition_point(|&c| c < v) as u16;
            }
        }
        Self { n_features: p, cuts, offsets, bins }
    }

    fn total_bins(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn bin(&self, i: usize, f: usize) -> usize {
        self.bins[i * self.n_features + f] as usize
    }
}

#[derive(Clone)]
struct Histogram {
    g: Vec<f64>,
    h: Vec<f64>,
    count: Vec<u32>,
}

impl Histogram {
    fn build(b: &Binned, rows: &[usize], g: &[f64], h: &[f64]) -> Self {
        let m = b.total_bins();
        let mut hist = Histogram { g: vec![0.0; m], h: vec![0.0; m], count: vec![0; m] };
        for &i in rows {
            for f in 0..b.n_features {
                let k = b.offsets[f] + b.bin(i, f);
                hist.g[k] += g[i];
                hist.h[k] += h[i];
                hist.count[k] += 1;
            }
        }
        hist
    }

    fn minus(&self, other: &Histogram) -> Histogram {
        Histogram {
            g: self.g.iter().zip(&other.g).map(|(a, b)| a - b).collect(),
            h: self.h.iter().zip(&other.h).map(|(a, b)| a - b).collect(),
            count: self.count.iter().zip(&other.count).map(|(a, b)| a - b).collect(),
        }
    }
}

fn hist_split(b: &Binned, hist: &Histogram, gt: f64, ht: f64, n: usize, params: &GbtParams) -> Option<SplitCand> {
    let mut best = None;
    for f in 0..b.n_features {
        let (lo, hi) = (b.offsets[f], b.offsets[f + 1]);
        let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
        for j in 0..(hi - lo - 1) {
            gl += hist.g[lo + j];
            hl += hist.h[lo + j];
            nl += hist.count[lo + j] as usize;
            if nl == 0 || nl == n || hist.count[lo + j] == 0 {
                continue;
            }
            if let Some(gain) = params.split_gain(gl, hl, gt, ht) {
                if better(&best, gain) {
                    best = Some(SplitCand { gain, feature: f, threshold: b.cuts[f][j], bin: j });
                }
            }
        }
    }
    best
}

struct Leaf {
    id: usize,
    rows: Vec<usize>,
    hist: Histogram,
    depth: usize,
    split: Option<SplitCand>,
}

fn grow_leafwise(b: &Binned, g: &[f64], h: &[f64], rows: Vec<usize>, params: &GbtParams) -> Tree {
    let can_split = |depth: usize| params.max_depth.is_none_or(|d| depth < d);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let total = |r: &[usize]| (r.iter().map(|&i| g[i]).sum::<f64>(), r.iter().map(|&i| h[i]).sum::<f64>());
    let mut stats = vec![total(&rows)];
    let hist = Histogram::build(b, &rows, g, h);
    let split = if can_split(0) { hist_split(b, &hist, stats[0].0, stats[0].1, rows.len(), params) } else { None };
    let mut leaves = vec![Leaf { id: 0, rows, hist, depth: 0, split }];

    while leaves.len() < params.max_leaves {
        // largest gain first; equal gains go to the older node
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.split.map(|s| (k, s.gain, l.id)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
        let Some((k, _, _)) = pick else { break };
        let leaf = leaves.swap_remove(k);
        let c = leaf.split.unwrap();
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = leaf.rows.iter().partition(|&&i| b.bin(i, c.feature) <= c.bin);
        let left = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.id] = Node::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
        stats.push(total(&lrows));
        stats.push(total(&rrows));
        let (lhist, rhist) = if lrows.len() <= rrows.len() {
            let small = Histogram::build(b, &lrows, g, h);
            let big = leaf.hist.minus(&small);
            (small, big)
        } else {
            let small = Histogram::build(b, &rrows, g, h);
            let big = leaf.hist.minus(&small);
            (big, small)
        };
        for (id, r, hst) in [(left, lrows, lhist), (left + 1, rrows, rhist)] {
            let depth = leaf.depth + 1;
            let split = if can_split(depth) { hist_split(b, &hst, stats[id].0, stats[id].1, r.len(), params) } else { None };
            leaves.push(Leaf { id, rows: r, hist: hst, depth, split });
        }
    }
    finalize(nodes, &stats, params)
}
