//! Directed weighted trade networks, one per (section, period).

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::ingest::{Bucket, CountryCode, FlowTable, Section};

/// Which countries become nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeScope {
    /// Only countries incident to a strictly positive flow.
    #[default]
    ActiveTraders,
    /// Every country appearing in the (section, period) selection, including
    /// those whose only flows are zero. They become isolated nodes.
    AllListed,
}

/// Directed weighted graph. Nodes are sorted by country code; edges go from
/// exporter to importer and carry strictly positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeNetwork {
    section: Section,
    period: Bucket,
    nodes: Vec<CountryCode>,
    /// (origin, destination) -> weight, sorted by key.
    edges: Vec<(usize, usize, f64)>,
    out_adj: Vec<Vec<(usize, f64)>>,
    in_adj: Vec<Vec<(usize, f64)>>,
}

impl TradeNetwork {
    /// Builds a network from (origin, destination, weight) triples. Duplicate
    /// pairs are summed; non-positive weights are dropped.
    pub fn from_flows<'a, I>(section: Section, period: Bucket, flows: I, scope: NodeScope) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a CountryCode, &'a CountryCode, f64)>,
    {
        let mut weights: BTreeMap<(&CountryCode, &CountryCode), f64> = BTreeMap::new();
        let mut listed: BTreeMap<&CountryCode, ()> = BTreeMap::new();
        for (o, d, w) in flows {
            if o == d {
                return Err(Error::invalid(format!("self-loop at {o}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("invalid weight {w} on {o}->{d}")));
            }
            if scope == NodeScope::AllListed {
                listed.insert(o, ());
                listed.insert(d, ());
            }
            if w > 0.0 {
                *weights.entry((o, d)).or_insert(0.0) += w;
            }
        }
        for (o, d) in weights.keys() {
            listed.insert(o, ());
            listed.insert(d, ());
        }
        if weights.is_empty() && listed.is_empty() {
            return Err(Error::EmptyNetwork { section: section.code(), period: period.to_string() });
        }
        let nodes: Vec<CountryCode> = listed.keys().map(|c| (*c).clone()).collect();
        let index: BTreeMap<&CountryCode, usize> = nodes.iter().enumerate().map(|(i, c)| (c, i)).collect();
        let edges: Vec<(usize, usize, f64)> = weights.iter().map(|((o, d), w)| (index[o], index[d], *w)).collect();
        Ok(Self::assemble(section, period, nodes, edges))
    }

    /// Builds a network directly from node-index edges. Used by generators and
    /// tests; node codes are synthesised as `N00`, `N01`, ...
    pub fn from_index_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 || n > 1000 {
            return Err(Error::invalid(format!("node count {n} outside 1..=1000")));
        }
        let nodes: Vec<CountryCode> = (0..n).map(|i| CountryCode::new(&format!("N{i:02}")).expect("valid code")).collect();
        let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(o, d, w) in edges {
            if o >= n || d >= n {
                return Err(Error::invalid(format!("edge ({o},{d}) outside {n} nodes")));
            }
            if o == d {
                return Err(Error::invalid(format!("self-loop at node {o}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("invalid weight {w}")));
            }
            if w > 0.0 {
                *weights.entry((o, d)).or_insert(0.0) += w;
            }
        }
        let edges = weights.into_iter().map(|((o, d), w)| (o, d, w)).collect();
        Ok(Self::assemble(Section::new(1).expect("valid"), Bucket::Year(0), nodes, edges))
    }

    fn assemble(section: Section, period: Bucket, nodes: Vec<CountryCode>, edges: Vec<(usize, usize, f64)>) -> Self {
        let n = nodes.len();
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for &(o, d, w) in &edges {
            out_adj[o].push((d, w));
            in_adj[d].push((o, w));
        }
        Self { section, period, nodes, edges, out_adj, in_adj }
    }

    pub fn section(&self) -> Section {
        self.section
    }

    pub fn period(&self) -> Bucket {
        self.period
    }

    pub fn nodes(&self) -> &[CountryCode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as (origin, destination, weight), sorted by (origin, destination).
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn index_of(&self, code: &CountryCode) -> Option<usize> {
        self.nodes.binary_search(code).ok()
    }

    pub fn out_edges(&self, node: usize) -> &[(usize, f64)] {
        &self.out_adj[node]
    }

    pub fn in_edges(&self, node: usize) -> &[(usize, f64)] {
        &self.in_adj[node]
    }

    pub fn weight(&self, origin: usize, destination: usize) -> Option<f64> {
        self.out_adj[origin].iter().find(|(d, _)| *d == destination).map(|(_, w)| *w)
    }

    pub fn has_edge(&self, origin: usize, destination: usize) -> bool {
        self.weight(origin, destination).is_some()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    /// Writes `origin destination weight` lines sorted by (origin, destination).
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        for &(o, d, w) in &self.edges {
            writeln!(out, "{} {} {}", self.nodes[o], self.nodes[d], w)?;
        }
        Ok(())
    }
}

/// Selects the (section, period) flows of a table and builds the network.
pub fn build_network(table: &FlowTable, section: Section, period: Bucket) -> Result<TradeNetwork> {
    build_network_with(table, section, period, NodeScope::ActiveTraders)
}

pub fn build_network_with(table: &FlowTable, section: Section, period: Bucket, scope: NodeScope) -> Result<TradeNetwork> {
    let flows: Vec<_> = table.select(section, period).map(|(k, v)| (&k.origin, &k.destination, v)).collect();
    if flows.iter().all(|f| f.2 <= 0.0) {
        return Err(Error::EmptyNetwork { section: section.code(), period: period.to_string() });
    }
    TradeNetwork::from_flows(section, period, flows, scope)
}

/// Undirected projection: weight{u,v} = w(u->v) + w(v->u).
#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedView {
    n: usize,
    /// (u, v) with u < v -> combined weight.
    edges: BTreeMap<(usize, usize), f64>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl UndirectedView {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(u, v), &w)| (u, v, w))
    }

    /// Neighbours of `u` with combined weights, sorted by neighbour index.
    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.edges.get(&(u.min(v), u.max(v))).copied()
    }

    /// Number of distinct neighbours (binary degree).
    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.values().sum()
    }
}

pub fn undirected_view(net: &TradeNetwork) -> UndirectedView {
    let n = net.node_count();
    let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(o, d, w) in net.edges() {
        *edges.entry((o.min(d), o.max(d))).or_insert(0.0) += w;
    }
    let mut adj = vec![Vec::new(); n];
    for (&(u, v), &w) in &edges {
        adj[u].push((v, w));
        adj[v].push((u, w));
    }
    for a in &mut adj {
        a.sort_by_key(|e| e.0);
    }
    UndirectedView { n, edges, adj }
}
