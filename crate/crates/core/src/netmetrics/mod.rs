//! Topology measures of trade networks.
//!
//! Strength and PageRank are computed on the weighted directed graph.
//! Density and reciprocity use the directed edge set; transitivity and
//! degree assortativity use the binarized undirected projection; modularity
//! uses the weighted undirected projection.

mod louvain;
mod pagerank;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Bucket, CountryCode, Section};
use crate::tradegraph::{undirected_view, TradeNetwork, UndirectedView};

pub use louvain::louvain;
pub use pagerank::{pagerank, PageRankConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrengthDirection {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub in_strength: f64,
    pub out_strength: f64,
    pub pagerank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMetrics {
    pub density: f64,
    /// `None` when every edge endpoint has the same degree.
    pub assortativity: Option<f64>,
    pub reciprocity: f64,
    /// `None` for networks with fewer than three nodes.
    pub transitivity: Option<f64>,
    pub modularity: f64,
    /// Community label per node, aligned with the network's node order.
    pub partition: Vec<usize>,
}

/// Total weight into (imports) or out of (exports) a country.
pub fn strength(net: &TradeNetwork, node: &CountryCode, direction: StrengthDirection) -> Result<f64> {
    let i = net.index_of(node).ok_or_else(|| Error::UnknownNode(node.to_string()))?;
    Ok(strength_at(net, i, direction))
}

pub fn strength_at(net: &TradeNetwork, i: usize, direction: StrengthDirection) -> f64 {
    let edges = match direction {
        StrengthDirection::In => net.in_edges(i),
        StrengthDirection::Out => net.out_edges(i),
    };
    edges.iter().map(|e| e.1).sum()
}

/// m / (n (n - 1)) over directed edges.
pub fn density(net: &TradeNetwork) -> Result<f64> {
    let n = net.node_count();
    if n < 2 {
        return Err(Error::invalid(format!("density needs at least 2 nodes, got {n}")));
    }
    Ok(net.edge_count() as f64 / (n * (n - 1)) as f64)
}

/// Share of directed edges whose reverse edge also exists.
pub fn reciprocity(net: &TradeNetwork) -> Result<f64> {
    let m = net.edge_count();
    if m == 0 {
        return Err(Error::invalid("reciprocity of a network without edges"));
    }
    let mutual = net.edges().iter().filter(|&&(o, d, _)| net.has_edge(d, o)).count();
    Ok(mutual as f64 / m as f64)
}

/// Global clustering coefficient of the binarized undirected view:
/// closed connected triples over all connected triples, 0 without triples.
pub fn transitivity(net: &TradeNetwork) -> Result<f64> {
    let n = net.node_count();
    if n < 3 {
        return Err(Error::invalid(format!("transitivity needs at least 3 nodes, got {n}")));
    }
    Ok(transitivity_of(&undirected_view(net)))
}

fn transitivity_of(view: &UndirectedView) -> f64 {
    let n = view.node_count();
    let mut mark = vec![false; n];
    let mut closed = 0u64;
    let mut triples = 0u64;
    for u in 0..n {
        let nbrs = view.neighbors(u);
        let d = nbrs.len() as u64;
        triples += d * d.saturating_sub(1) / 2;
        for &(v, _) in nbrs {
            mark[v] = true;
        }
        for &(v, _) in nbrs {
            // each wedge v-u-w with v < w counted once
            closed += view.neighbors(v).iter().filter(|&&(w, _)| w > v && mark[w]).count() as u64;
        }
        for &(v, _) in nbrs {
            mark[v] = false;
        }
    }
    if triples == 0 {
        0.0
    } else {
        closed as f64 / triples as f64
    }
}

/// Newman degree assortativity on the binarized undirected view: the Pearson
/// correlation of endpoint degrees, each edge counted in both orientations.
pub fn assortativity(net: &TradeNetwork) -> Result<f64> {
    assortativity_of(&undirected_view(net))
}

fn assortativity_of(view: &UndirectedView) -> Result<f64> {
    let m = view.edge_count();
    if m < 2 {
        return Err(Error::Undefined("undefined assortativity: fewer than 2 edges".into()));
    }
    // Degrees are integers, so the sums are exact and r = (4mA - B^2) /
    // (2mC - B^2) is rounded once.
    let (mut a, mut b, mut c) = (0i128, 0i128, 0i128);
    for (u, v, _) in view.edges() {
        let (j, k) = (view.degree(u) as i128, view.degree(v) as i128);
        a += j * k;
        b += j + k;
        c += j * j + k * k;
    }
    let m = m as i128;
    let num = 4 * m * a - b * b;
    let den = 2 * m * c - b * b;
    if den == 0 {
        return Err(Error::Undefined("undefined assortativity: zero degree variance".into()));
    }
    Ok((num as f64 / den as f64).clamp(-1.0, 1.0))
}

/// Weighted Newman-Girvan modularity of `partition` on `view`.
///
/// Returns exactly 0 for a single-community partition.
pub fn modularity_of(view: &UndirectedView, partition: &[usize]) -> f64 {
    let k = partition.iter().max().map_or(0, |m| m + 1);
    if k <= 1 {
        return 0.0;
    }
    let mut internal = vec![0.0; k];
    let mut tot = vec![0.0; k];
    for (u, v, w) in view.edges() {
        tot[partition[u]] += w;
        tot[partition[v]] += w;
        if partition[u] == partition[v] {
            internal[partition[u]] += 2.0 * w;
        }
    }
    let m2: f64 = tot.iter().sum();
    if m2 == 0.0 {
        return 0.0;
    }
    internal.iter().zip(&tot).map(|(i, t)| i / m2 - (t / m2) * (t / m2)).sum()
}

/// Louvain partition of the weighted undirected view and its modularity.
pub fn modularity(net: &TradeNetwork, seed: u64) -> Result<(f64, Vec<usize>)> {
    let view = undirected_view(net);
    if view.edge_count() == 0 {
        return Err(Error::invalid("modularity of a network without edges"));
    }
    let partition = louvain(&view, seed);
    Ok((modularity_of(&view, &partition), partition))
}

impl GlobalMetrics {
    pub fn compute(net: &TradeNetwork, seed: u64) -> Result<Self> {
        let view = undirected_view(net);
        let (modularity, partition) = modularity(net, seed)?;
        Ok(Self {
            density: density(net)?,
            assortativity: assortativity_of(&view).ok(),
            reciprocity: reciprocity(net)?,
            transitivity: (net.node_count() >= 3).then(|| transitivity_of(&view)),
            modularity,
            partition,
        })
    }
}

/// In/out strength and PageRank for every node.
pub fn node_metrics(net: &TradeNetwork, cfg: PageRankConfig) -> Result<BTreeMap<CountryCode, NodeMetrics>> {
    let pr = pagerank(net, cfg)?;
    Ok(net
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let m = NodeMetrics {
                in_strength: strength_at(net, i, StrengthDirection::In),
                out_strength: strength_at(net, i, StrengthDirection::Out),
                pagerank: pr[i],
            };
            (c.clone(), m)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub rank: usize,
    pub country: CountryCode,
    /// 100 x score / max score, unrounded.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralityRanking {
    pub entries: Vec<RankEntry>,
}

impl CentralityRanking {
    /// `rank,centrality_percent,country`, percentages shown with one decimal.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "centrality_percent", "country"])?;
        for e in &self.entries {
            w.write_record([e.rank.to_string(), format!("{:.1}", e.percent), e.country.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Top `top_k` countries by PageRank, normalised to the most central one.
/// Equal scores are ordered by country code.
pub fn centrality_ranking(net: &TradeNetwork, top_k: usize, cfg: PageRankConfig) -> Result<CentralityRanking> {
    if top_k < 1 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let scores = pagerank(net, cfg)?;
    Ok(rank_scores(net.nodes(), &scores, top_k))
}

pub(crate) fn rank_scores(nodes: &[CountryCode], scores: &[f64], top_k: usize) -> CentralityRanking {
    // scores that agree to 1e-12 of the maximum are ties; only the node
    // code orders them, not accumulated rounding
    let top = scores.iter().copied().fold(0.0f64, f64::max);
    let key = |i: usize| if top > 0.0 { (scores[i] / top * 1e12).round() as i64 } else { 0 };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| key(b).cmp(&key(a)).then_with(|| nodes[a].cmp(&nodes[b])));
    let max = order.first().map_or(1.0, |&i| scores[i]);
    let entries = order
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(r, i)| RankEntry { rank: r + 1, country: nodes[i].clone(), percent: 100.0 * scores[i] / max })
        .collect();
    CentralityRanking { entries }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub period: Bucket,
    pub metrics: GlobalMetrics,
}

/// Global metrics of one section over consecutive periods.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub section: Section,
    pub rows: Vec<MetricRow>,
}

impl MetricSeries {
    /// `period,density,assortativity,reciprocity,transitivity,modularity`;
    /// undefined values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["period", "density", "assortativity", "reciprocity", "transitivity", "modularity"])?;
        for r in &self.rows {
            let m = &r.metrics;
            w.write_record([
                r.period.to_string(),
                m.density.to_string(),
                opt(m.assortativity),
                m.reciprocity.to_string(),
                opt(m.transitivity),
                m.modularity.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of global metrics per network, sorted chronologically.
pub fn metric_series(networks: &[TradeNetwork], seed: u64) -> Result<MetricSeries> {
    let first = networks.first().ok_or_else(|| Error::invalid("metric series needs at least one period"))?;
    let section = first.section();
    if let Some(net) = networks.iter().find(|n| n.section() != section) {
        return Err(Error::invalid(format!("mixed sections {} and {} in one series", section, net.section())));
    }
    let mut rows: Vec<MetricRow> = networks
        .iter()
        .map(|net| Ok(MetricRow { period: net.period(), metrics: GlobalMetrics::compute(net, seed)? }))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.period);
    Ok(MetricSeries { section, rows })
}
