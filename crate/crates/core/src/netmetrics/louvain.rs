//! Louvain community detection on a weighted undirected graph.
//!
//! Two phases alternate until no node moves: local moving (each node joins
//! the neighbouring community with the largest modularity gain) and
//! aggregation (communities collapse into super-nodes, internal weight kept
//! as self-loops). Node visiting order is shuffled once per level with a
//! seeded generator; candidate communities are scanned in first-seen order
//! and a move needs a strictly positive improvement, so results are fully
//! determined by the seed.

use rand::seq::SliceRandom;

use crate::rng;
use crate::tradegraph::UndirectedView;

const MAX_PASSES: usize = 1000;
const MAX_LEVELS: usize = 100;

struct Level {
    /// Neighbours excluding self.
    adj: Vec<Vec<(usize, f64)>>,
    /// Self-loop weight, counted once.
    self_loop: Vec<f64>,
}

impl Level {
    fn degree(&self, u: usize) -> f64 {
        self.adj[u].iter().map(|e| e.1).sum::<f64>() + 2.0 * self.self_loop[u]
    }
}

/// Community label per node, labels numbered by smallest member index.
pub fn louvain(view: &UndirectedView, seed: u64) -> Vec<usize> {
    let n = view.node_count();
    let mut membership: Vec<usize> = (0..n).collect();
    if view.edge_count() == 0 {
        return membership;
    }
    let mut level = Level { adj: (0..n).map(|u| view.neighbors(u).to_vec()).collect(), self_loop: vec![0.0; n] };
    let mut rng = rng::seeded(seed);

    for _ in 0..MAX_LEVELS {
        let (community, moved) = local_moving(&level, &mut rng);
        if !moved {
            break;
        }
        let (labels, k) = canonical(&community);
        for m in membership.iter_mut() {
            *m = labels[*m];
        }
        level = aggregate(&level, &labels, k);
        if k == 1 {
            break;
        }
    }
    canonical(&membership).0
}

fn local_moving(g: &Level, rng: &mut rng::Rng) -> (Vec<usize>, bool) {
    let n = g.adj.len();
    let k: Vec<f64> = (0..n).map(|u| g.degree(u)).collect();
    let m2: f64 = k.iter().sum();
    let mut community: Vec<usize> = (0..n).collect();
    let mut tot = k.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut link = vec![0.0; n];
    let mut seen: Vec<usize> = Vec::new();
    let mut any_move = false;
    for _ in 0..MAX_PASSES {
        let mut moved = false;
        for &u in &order {
            let cu = community[u];
            seen.clear();
            seen.push(cu);
            link[cu] = 0.0;
            for &(v, w) in &g.adj[u] {
                let c = community[v];
                if link[c] == 0.0 && !seen.contains(&c) {
                    seen.push(c);
                }
                link[c] += w;
            }
            tot[cu] -= k[u];
            let mut best = cu;
            let mut best_gain = link[cu] - tot[cu] * k[u] / m2;
            let eps = 1e-10 * k[u];
            for &c in &seen[1..] {
                let gain = link[c] - tot[c] * k[u] / m2;
                if gain > best_gain + eps {
                    best = c;
                    best_gain = gain;
                }
            }
            tot[best] += k[u];
            if best != cu {
                community[u] = best;
                moved = true;
                any_move = true;
            }
            for &c in &seen {
                link[c] = 0.0;
            }
        }
        if !moved {
            break;
        }
    }
    (community, any_move)
}

/// Relabels so that labels appear in order of their smallest member.
fn canonical(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = vec![usize::MAX; labels.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
        out.push(map[l]);
    }
    (out, next)
}

fn aggregate(g: &Level, labels: &[usize], k: usize) -> Level {
    let mut self_loop = vec![0.0; k];
    let mut weights: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); k];
    for (u, nbrs) in g.adj.iter().enumerate() {
        let cu = labels[u];
        self_loop[cu] += g.self_loop[u];
        for &(v, w) in nbrs {
            let cv = labels[v];
            if cu == cv {
                // each internal edge is visited from both ends
                self_loop[cu] += w / 2.0;
            } else {
                *weights[cu].entry(cv).or_insert(0.0) += w;
            }
        }
    }
    let adj = weights.into_iter().map(|m| m.into_iter().collect()).collect();
    Level { adj, self_loop }
}
