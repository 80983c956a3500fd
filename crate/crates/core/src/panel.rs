//! Country-year feature panel and next-year growth target alignment.
//!
//! A panel row holds a country's indicators for one year together with the
//! network measures of the configured sections for that year. Alignment for
//! target year `T` (horizon 1) uses the row of `T - 1` as predictors and adds
//! growth at `T - 2` as an extra lag feature, so nothing observed at `T`
//! leaks into the predictors.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CountryCode, Section};
use crate::netmetrics::{self, GlobalMetrics, NodeMetrics, PageRankConfig};
use crate::tradegraph::TradeNetwork;

pub const YEAR_FEATURE: &str = "year";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    Nom(String),
    Missing,
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    fn from_opt(v: Option<f64>) -> Self {
        v.filter(|x| x.is_finite()).map_or(Value::Missing, Value::Num)
    }

    fn render(&self) -> String {
        match self {
            Value::Num(v) => v.to_string(),
            Value::Nom(s) => s.clone(),
            Value::Missing => String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    Nominal,
}

/// Rows keyed by (country, year), all sharing one feature list.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    rows: BTreeMap<(CountryCode, i32), Vec<Value>>,
}

impl FeaturePanel {
    pub fn new(names: Vec<String>, kinds: Vec<FeatureKind>) -> Result<Self> {
        if names.len() != kinds.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: kinds.len() });
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::invalid("duplicate feature names"));
        }
        Ok(Self { names, kinds, rows: BTreeMap::new() })
    }

    pub fn insert(&mut self, country: CountryCode, year: i32, values: Vec<Value>) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::DimensionMismatch { expected: self.names.len(), got: values.len() });
        }
        for (v, (k, name)) in values.iter().zip(self.kinds.iter().zip(&self.names)) {
            match (v, k) {
                (Value::Num(x), FeatureKind::Numeric) if !x.is_finite() => {
                    return Err(Error::invalid(format!("non-finite value for {name}")))
                }
                (Value::Nom(_), FeatureKind::Numeric) | (Value::Num(_), FeatureKind::Nominal) => {
                    return Err(Error::invalid(format!("value kind does not match feature {name}")))
                }
                _ => {}
            }
        }
        self.rows.insert((country, year), values);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, country: &CountryCode, year: i32) -> Option<&[Value]> {
        self.rows.get(&(country.clone(), year)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(CountryCode, i32), &[Value])> {
        self.rows.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Delimited text: `country` followed by every feature; missing values
    /// are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["country".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for ((country, _), values) in &self.rows {
            let mut rec = vec![country.to_string()];
            rec.extend(values.iter().map(Value::render));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a panel written by [`FeaturePanel::write_csv`] or an indicator
    /// table with `country` and `year` columns. A column is nominal when any
    /// non-empty cell does not parse as a number.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let country_col = headers
            .iter()
            .position(|h| h == "country")
            .ok_or_else(|| Error::config("panel: missing required column \"country\""))?;
        if !headers.iter().any(|h| h == YEAR_FEATURE) {
            return Err(Error::config("panel: missing required column \"year\""));
        }
        let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != country_col).collect();
        let mut raw: Vec<(u64, CountryCode, Vec<String>)> = Vec::new();
        for row in reader.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let country = CountryCode::new(row.get(country_col).unwrap_or(""))
                .map_err(|e| Error::Row { line, message: e.to_string() })?;
            let cells = feature_cols.iter().map(|&i| row.get(i).unwrap_or("").trim().to_string()).collect();
            raw.push((line, country, cells));
        }
        let names: Vec<String> = feature_cols.iter().map(|&i| headers[i].clone()).collect();
        let kinds: Vec<FeatureKind> = (0..names.len())
            .map(|j| {
                let nominal = names[j] != YEAR_FEATURE
                    && raw.iter().any(|(_, _, cells)| !cells[j].is_empty() && cells[j].parse::<f64>().is_err());
                if nominal {
                    FeatureKind::Nominal
                } else {
                    FeatureKind::Numeric
                }
            })
            .collect();
        let year_idx = names.iter().position(|n| n == YEAR_FEATURE).expect("checked above");
        let mut panel = FeaturePanel::new(names, kinds.clone())?;
        for (line, country, cells) in raw {
            let row_err = |message: String| Error::Row { line, message };
            let year: i32 = cells[year_idx].parse().map_err(|_| row_err(format!("unparseable year {:?}", cells[year_idx])))?;
            let values = cells
                .into_iter()
                .zip(&kinds)
                .map(|(c, k)| match (c.is_empty(), k) {
                    (true, _) => Value::Missing,
                    (false, FeatureKind::Numeric) => Value::Num(c.parse().expect("numeric column")),
                    (false, FeatureKind::Nominal) => Value::Nom(c),
                })
                .collect();
            if panel.rows.contains_key(&(country.clone(), year)) {
                return Err(row_err(format!("duplicate row for {country} {year}")));
            }
            panel.insert(country, year, values).map_err(|e| row_err(e.to_string()))?;
        }
        Ok(panel)
    }
}

/// Per-year metrics of one section's annual networks.
#[derive(Debug, Clone, PartialEq)]
pub struct YearMetrics {
    pub global: GlobalMetrics,
    pub nodes: BTreeMap<CountryCode, NodeMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionMetrics {
    pub section: Section,
    pub years: BTreeMap<i32, YearMetrics>,
}

impl SectionMetrics {
    /// Computes metrics for annual networks of a single section.
    pub fn from_networks(networks: &[TradeNetwork], pagerank: PageRankConfig, seed: u64) -> Result<Self> {
        let first = networks.first().ok_or_else(|| Error::invalid("no networks"))?;
        let section = first.section();
        let mut years = BTreeMap::new();
        for net in networks {
            if net.section() != section {
                return Err(Error::invalid("networks of different sections"));
            }
            let year = net.period().year();
            let m = YearMetrics { global: GlobalMetrics::compute(net, seed)?, nodes: netmetrics::node_metrics(net, pagerank)? };
            if years.insert(year, m).is_some() {
                return Err(Error::invalid(format!("more than one network for section {section} year {year}")));
            }
        }
        Ok(Self { section, years })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelConfig {
    pub sections: Vec<u8>,
    pub include_global: bool,
    pub include_node: bool,
}

impl Default for PanelConfig {
    fn default() -> Self {
        // Mechanical & Electrical, Mineral, Transport, Chemical, Base Metals
        Self { sections: vec![16, 5, 17, 6, 15], include_global: true, include_node: true }
    }
}

const GLOBAL_FEATURES: [&str; 5] = ["density", "assortativity", "reciprocity", "transitivity", "modularity"];
const NODE_FEATURES: [&str; 3] = ["in_strength", "out_strength", "pagerank"];

/// Joins indicators with per-section network features.
///
/// Global measures are replicated across all countries of a year; node
/// measures of a country absent from a section's network (or with zero
/// strength) are missing. A numeric `year` feature closes the list.
pub fn assemble_panel(indicators: &FeaturePanel, metrics: &[SectionMetrics], cfg: &PanelConfig) -> Result<FeaturePanel> {
    let mut sections = Vec::with_capacity(cfg.sections.len());
    for &code in &cfg.sections {
        let section = Section::new(code)?;
        let m = metrics
            .iter()
            .find(|m| m.section == section)
            .ok_or_else(|| Error::config(format!("panel config references section {code} without metrics")))?;
        sections.push(m);
    }

    let year_in_indicators = indicators.feature_index(YEAR_FEATURE);
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for (i, (n, k)) in indicators.names().iter().zip(indicators.kinds()).enumerate() {
        if Some(i) != year_in_indicators {
            names.push(n.clone());
            kinds.push(*k);
        }
    }
    for m in &sections {
        let s = m.section.code();
        if cfg.include_global {
            names.extend(GLOBAL_FEATURES.iter().map(|f| format!("s{s}_{f}")));
        }
        if cfg.include_node {
            names.extend(NODE_FEATURES.iter().map(|f| format!("s{s}_{f}")));
        }
    }
    kinds.resize(names.len(), FeatureKind::Numeric);
    names.push(YEAR_FEATURE.to_string());
    kinds.push(FeatureKind::Numeric);

    let mut panel = FeaturePanel::new(names, kinds)?;
    for ((country, year), values) in indicators.iter() {
        let mut row: Vec<Value> = values
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != year_in_indicators)
            .map(|(_, v)| v.clone())
            .collect();
        for m in &sections {
            let ym = m.years.get(year);
            if cfg.include_global {
                let g = ym.map(|y| &y.global);
                row.push(Value::from_opt(g.map(|g| g.density)));
                row.push(Value::from_opt(g.and_then(|g| g.assortativity)));
                row.push(Value::from_opt(g.map(|g| g.reciprocity)));
                row.push(Value::from_opt(g.and_then(|g| g.transitivity)));
                row.push(Value::from_opt(g.map(|g| g.modularity)));
            }
            if cfg.include_node {
                let node = ym.and_then(|y| y.nodes.get(country));
                let positive = |v: f64| (v > 0.0).then_some(v);
                row.push(Value::from_opt(node.and_then(|n| positive(n.in_strength))));
                row.push(Value::from_opt(node.and_then(|n| positive(n.out_strength))));
                row.push(Value::from_opt(node.map(|n| n.pagerank)));
            }
        }
        row.push(Value::Num(*year as f64));
        panel.insert(country.clone(), *year, row)?;
    }
    Ok(panel)
}

/// Target-aligned rows. Predictor values stay raw (nominals and missing
/// markers intact) until a fitted preprocessing pipeline turns them into a
/// numeric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedDataset {
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    pub rows: Vec<Vec<Value>>,
    pub target: Vec<f64>,
    /// (country, target year) per row.
    pub labels: Vec<(CountryCode, i32)>,
}

impl SupervisedDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> SupervisedDataset {
        SupervisedDataset {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    /// Builds a dataset from fully numeric rows (synthetic benchmarks).
    pub fn from_numeric(names: Vec<String>, rows: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        if rows.len() != target.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: target.len() });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(Error::DimensionMismatch { expected: names.len(), got: r.len() });
        }
        let kinds = vec![FeatureKind::Numeric; names.len()];
        let labels = (0..rows.len()).map(|i| (CountryCode::new("SYN").expect("valid"), i as i32)).collect();
        let rows = rows.into_iter().map(|r| r.into_iter().map(Value::Num).collect()).collect();
        Ok(Self { names, kinds, rows, target, labels })
    }
}

/// Pairs the predictors of year `T - horizon` with growth at `T`.
///
/// Rows without the target or without current growth are dropped; a missing
/// extra lag (growth one year before the predictor year) is kept as a
/// missing marker.
pub fn align_target(panel: &FeaturePanel, growth_feature: &str, horizon: i32) -> Result<SupervisedDataset> {
    if horizon < 1 {
        return Err(Error::invalid(format!("horizon must be at least 1, got {horizon}")));
    }
    let g = panel
        .feature_index(growth_feature)
        .ok_or_else(|| Error::config(format!("panel lacks growth feature {growth_feature:?}")))?;
    if panel.kinds()[g] != FeatureKind::Numeric {
        return Err(Error::config(format!("growth feature {growth_feature:?} is not numeric")));
    }
    let growth = |c: &CountryCode, y: i32| panel.get(c, y).and_then(|r| r[g].as_num());

    let mut names = panel.names().to_vec();
    names.push(format!("{growth_feature}_lag{}", horizon + 1));
    let mut kinds = panel.kinds().to_vec();
    kinds.push(FeatureKind::Numeric);

    let mut out = SupervisedDataset { names, kinds, rows: Vec::new(), target: Vec::new(), labels: Vec::new() };
    for ((country, year), values) in panel.iter() {
        if values[g].as_num().is_none() {
            continue;
        }
        let target_year = year + horizon;
        let Some(target) = growth(country, target_year) else {
            continue;
        };
        let mut row = values.to_vec();
        row.push(Value::from_opt(growth(country, year - 1)));
        out.rows.push(row);
        out.target.push(target);
        out.labels.push((country.clone(), target_year));
    }
    Ok(out)
}
