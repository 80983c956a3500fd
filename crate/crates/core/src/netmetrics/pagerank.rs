use crate::error::{Error, Result};
use crate::tradegraph::TradeNetwork;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        Self { damping: 0.85, tol: 1e-10, max_iter: 1000 }
    }
}

/// Weighted PageRank following edge direction (exporter -> importer), so
/// score accumulates at large importers.
///
/// A node passes its score to successors in proportion to edge weight.
/// Dangling nodes (no exports) spread their score uniformly. Iteration stops
/// once the L1 change drops below `tol`. The result is indexed like
/// [`TradeNetwork::nodes`].
pub fn pagerank(net: &TradeNetwork, cfg: PageRankConfig) -> Result<Vec<f64>> {
    let n = net.node_count();
    if n == 0 {
        return Err(Error::invalid("pagerank of an empty network"));
    }
    if !(0.0..=1.0).contains(&cfg.damping) {
        return Err(Error::invalid(format!("damping {} outside [0, 1]", cfg.damping)));
    }
    let d = cfg.damping;
    let nf = n as f64;
    let out_strength: Vec<f64> = (0..n).map(|u| net.out_edges(u).iter().map(|e| e.1).sum()).collect();

    let mut x = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let dangling: f64 = (0..n).filter(|&u| out_strength[u] == 0.0).map(|u| x[u]).sum();
        let base = (1.0 - d) / nf + d * dangling / nf;
        next.iter_mut().for_each(|v| *v = base);
        for (u, &xu) in x.iter().enumerate() {
            if out_strength[u] > 0.0 {
                let share = d * xu / out_strength[u];
                for &(v, w) in net.out_edges(u) {
                    next[v] += share * w;
                }
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < cfg.tol {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence { iterations: cfg.max_iter, residual })
}
