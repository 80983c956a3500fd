//! Bilateral trade records: parsing, flow-class filtering, dual-report
//! reconciliation and period aggregation.
//!
//! A record reported by `R` about partner `P` describes the directed flow
//! `P -> R` when it is an import and `R -> P` when it is an export. When the
//! same directed flow is reported from both sides, the figure of the reporter
//! with the larger total reported value in that (section, period) network is
//! kept; ties go to the lexicographically smaller country code.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CountryCode(String);

impl CountryCode {
    pub fn new(code: &str) -> Result<Self> {
        let code = code.trim();
        if code.len() != 3 || !code.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(Error::invalid(format!("invalid country code {code:?}")));
        }
        Ok(Self(code.to_ascii_uppercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CountryCode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

/// Harmonized System section, 1 through 21.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Section(u8);

impl Section {
    pub fn new(code: u8) -> Result<Self> {
        if (1..=21).contains(&code) {
            Ok(Self(code))
        } else {
            Err(Error::invalid(format!("HS section {code} outside 1..=21")))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Section {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let code: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("unparseable section {s:?}")))?;
        Self::new(code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::invalid(format!("month {month} outside 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn bucket(self, granularity: Granularity) -> Bucket {
        match granularity {
            Granularity::Monthly => Bucket::Month(self),
            Granularity::Quarterly => Bucket::Quarter { year: self.year, quarter: (self.month - 1) / 3 + 1 },
            Granularity::Annual => Bucket::Year(self.year),
        }
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    /// Accepts `YYYY-MM` and the compact `YYYYMM`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("unparseable period {s:?}"));
        let (y, m) = match s.split_once('-') {
            Some((y, m)) => (y, m),
            None if s.len() == 6 => s.split_at(4),
            None => return Err(bad()),
        };
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        Self::new(year, month).map_err(|_| bad())
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Monthly,
    Quarterly,
    Annual,
}

impl FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "monthly" | "month" => Ok(Self::Monthly),
            "quarterly" | "quarter" => Ok(Self::Quarterly),
            "annual" | "yearly" | "year" => Ok(Self::Annual),
            other => Err(Error::config(format!("unknown granularity {other:?}"))),
        }
    }
}

/// A period label at some granularity. Orders chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Month(YearMonth),
    Quarter { year: i32, quarter: u8 },
    Year(i32),
}

impl Bucket {
    pub fn granularity(self) -> Granularity {
        match self {
            Bucket::Month(_) => Granularity::Monthly,
            Bucket::Quarter { .. } => Granularity::Quarterly,
            Bucket::Year(_) => Granularity::Annual,
        }
    }

    pub fn year(self) -> i32 {
        match self {
            Bucket::Month(ym) => ym.year,
            Bucket::Quarter { year, .. } | Bucket::Year(year) => year,
        }
    }

    /// Maps this bucket onto an equal or coarser granularity.
    pub fn coarsen(self, target: Granularity) -> Result<Bucket> {
        match (self, target) {
            (b, t) if b.granularity() == t => Ok(b),
            (Bucket::Month(ym), t) => Ok(ym.bucket(t)),
            (Bucket::Quarter { year, .. }, Granularity::Annual) => Ok(Bucket::Year(year)),
            (b, t) => Err(Error::invalid(format!("cannot refine {b} to {t:?}"))),
        }
    }

    pub fn contains(self, ym: YearMonth) -> bool {
        ym.bucket(self.granularity()) == self
    }

    fn sort_key(self) -> (i32, u8, u8) {
        match self {
            Bucket::Month(ym) => (ym.year, 0, ym.month),
            Bucket::Quarter { year, quarter } => (year, 1, quarter),
            Bucket::Year(year) => (year, 2, 0),
        }
    }
}

impl Ord for Bucket {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for Bucket {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bucket::Month(ym) => write!(f, "{ym}"),
            Bucket::Quarter { year, quarter } => write!(f, "{year:04}-Q{quarter}"),
            Bucket::Year(year) => write!(f, "{year:04}"),
        }
    }
}

impl FromStr for Bucket {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("unparseable period bucket {s:?}"));
        if let Some((y, q)) = s.split_once("-Q") {
            let year = y.parse().map_err(|_| bad())?;
            let quarter: u8 = q.parse().map_err(|_| bad())?;
            if !(1..=4).contains(&quarter) {
                return Err(bad());
            }
            return Ok(Bucket::Quarter { year, quarter });
        }
        if s.len() == 4 {
            return s.parse().map(Bucket::Year).map_err(|_| bad());
        }
        s.parse().map(Bucket::Month).map_err(|_| bad())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Import,
    Export,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlowClass {
    Normal,
    ReImport,
    ReExport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub reporter: CountryCode,
    pub partner: CountryCode,
    pub direction: Direction,
    pub section: Section,
    pub period: YearMonth,
    pub value: f64,
    pub flow_class: FlowClass,
}

impl TradeRecord {
    /// The (origin, destination) pair of the flow this record describes.
    pub fn flow(&self) -> (&CountryCode, &CountryCode) {
        match self.direction {
            Direction::Import => (&self.partner, &self.reporter),
            Direction::Export => (&self.reporter, &self.partner),
        }
    }
}

/// Maps canonical fields onto source column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub reporter: String,
    pub partner: String,
    pub direction: String,
    pub section: String,
    pub period: String,
    pub value: String,
    /// Optional; when absent the class is read from the direction token
    /// (`RM`/`RX` style codes) and defaults to normal.
    pub flow_class: Option<String>,
    pub delimiter: char,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            reporter: "reporter".into(),
            partner: "partner".into(),
            direction: "direction".into(),
            section: "section".into(),
            period: "period".into(),
            value: "value".into(),
            flow_class: None,
            delimiter: ',',
        }
    }
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::config(format!("schema: {e}")))?;
        if !schema.delimiter.is_ascii() {
            return Err(Error::config("schema: delimiter must be a single ASCII character"));
        }
        Ok(schema)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<TradeRecord>,
    pub errors: Vec<RowError>,
}

struct ColumnIndex {
    reporter: usize,
    partner: usize,
    direction: usize,
    section: usize,
    period: usize,
    value: usize,
    flow_class: Option<usize>,
}

fn direction_token(tok: &str) -> Option<(Direction, FlowClass)> {
    match tok.trim().to_ascii_lowercase().as_str() {
        "import" | "imports" | "m" => Some((Direction::Import, FlowClass::Normal)),
        "export" | "exports" | "x" => Some((Direction::Export, FlowClass::Normal)),
        "re-import" | "reimport" | "re-imports" | "rm" => Some((Direction::Import, FlowClass::ReImport)),
        "re-export" | "reexport" | "re-exports" | "rx" => Some((Direction::Export, FlowClass::ReExport)),
        _ => None,
    }
}

fn flow_class_token(tok: &str) -> Option<FlowClass> {
    match tok.trim().to_ascii_lowercase().as_str() {
        "" | "normal" => Some(FlowClass::Normal),
        "re-import" | "reimport" | "rm" => Some(FlowClass::ReImport),
        "re-export" | "reexport" | "rx" => Some(FlowClass::ReExport),
        _ => None,
    }
}

fn parse_row(row: &csv::StringRecord, cols: &ColumnIndex) -> std::result::Result<TradeRecord, String> {
    let field = |i: usize| row.get(i).unwrap_or("").trim();
    let reporter = CountryCode::new(field(cols.reporter)).map_err(|e| format!("reporter: {e}"))?;
    let partner = CountryCode::new(field(cols.partner)).map_err(|e| format!("partner: {e}"))?;
    if reporter == partner {
        return Err(format!("reporter equals partner ({reporter})"));
    }
    let (direction, mut flow_class) =
        direction_token(field(cols.direction)).ok_or_else(|| format!("unknown direction {:?}", field(cols.direction)))?;
    if let Some(i) = cols.flow_class {
        flow_class = flow_class_token(field(i)).ok_or_else(|| format!("unknown flow class {:?}", field(i)))?;
    }
    let section: Section = field(cols.section).parse().map_err(|e: Error| e.to_string())?;
    let period: YearMonth = field(cols.period).parse().map_err(|e: Error| e.to_string())?;
    let raw = field(cols.value);
    let value: f64 = raw.parse().map_err(|_| format!("unparseable value {raw:?}"))?;
    if !value.is_finite() {
        return Err(format!("non-finite value {raw:?}"));
    }
    if value < 0.0 {
        return Err("negative value".to_string());
    }
    Ok(TradeRecord { reporter, partner, direction, section, period, value, flow_class })
}

/// Parses header-bearing delimited text into trade records.
///
/// Malformed rows are collected in [`ParseOutcome::errors`] with their line
/// number; a missing required column is a configuration error.
pub fn parse_records<R: Read>(input: R, schema: &Schema) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::config(format!("missing required column {name:?}")))
    };
    let cols = ColumnIndex {
        reporter: find(&schema.reporter)?,
        partner: find(&schema.partner)?,
        direction: find(&schema.direction)?,
        section: find(&schema.section)?,
        period: find(&schema.period)?,
        value: find(&schema.value)?,
        flow_class: schema.flow_class.as_deref().map(find).transpose()?,
    };

    let mut out = ParseOutcome::default();
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, &cols) {
            Ok(rec) => out.records.push(rec),
            Err(message) => out.errors.push(RowError { line, message }),
        }
    }
    Ok(out)
}

/// Writes records under the default [`Schema`]; `parse_records` reads the
/// output back unchanged.
pub fn write_records<W: Write>(records: &[TradeRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["reporter", "partner", "direction", "section", "period", "value"])?;
    for r in records {
        let direction = match (r.direction, r.flow_class) {
            (Direction::Import, FlowClass::ReImport) => "re-import",
            (Direction::Export, FlowClass::ReExport) => "re-export",
            (Direction::Import, _) => "import",
            (Direction::Export, _) => "export",
        };
        w.write_record([
            r.reporter.to_string(),
            r.partner.to_string(),
            direction.to_string(),
            r.section.to_string(),
            r.period.to_string(),
            r.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps only normal flows (drops re-imports and re-exports), preserving order.
pub fn filter_standard_flows(records: Vec<TradeRecord>) -> Vec<TradeRecord> {
    records.into_iter().filter(|r| r.flow_class == FlowClass::Normal).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub origin: CountryCode,
    pub destination: CountryCode,
    pub section: Section,
    pub period: Bucket,
}

/// Aggregated flow values, one entry per (origin, destination, section, period).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    granularity: Granularity,
    entries: BTreeMap<FlowKey, f64>,
}

impl FlowTable {
    pub fn new(granularity: Granularity) -> Self {
        Self { granularity, entries: BTreeMap::new() }
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &FlowKey) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FlowKey, f64)> {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    /// Adds `value` to the entry for `key`.
    pub fn add(&mut self, key: FlowKey, value: f64) -> Result<()> {
        if key.origin == key.destination {
            return Err(Error::invalid(format!("self-flow {}", key.origin)));
        }
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::invalid(format!("invalid flow value {value}")));
        }
        if key.period.granularity() != self.granularity {
            return Err(Error::invalid(format!("period {} does not match table granularity {:?}", key.period, self.granularity)));
        }
        *self.entries.entry(key).or_insert(0.0) += value;
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn sections(&self) -> Vec<Section> {
        let mut s: Vec<Section> = self.entries.keys().map(|k| k.section).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn periods(&self) -> Vec<Bucket> {
        let mut p: Vec<Bucket> = self.entries.keys().map(|k| k.period).collect();
        p.sort();
        p.dedup();
        p
    }

    /// Entries of one (section, period), in key order.
    pub fn select(&self, section: Section, period: Bucket) -> impl Iterator<Item = (&FlowKey, f64)> {
        self.iter().filter(move |(k, _)| k.section == section && k.period == period)
    }

    /// Total value per section.
    pub fn section_totals(&self) -> BTreeMap<Section, f64> {
        let mut out = BTreeMap::new();
        for (k, v) in self.iter() {
            *out.entry(k.section).or_insert(0.0) += v;
        }
        out
    }

    /// Canonical export: `origin,destination,section,period,value`, sorted by key.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["origin", "destination", "section", "period", "value"])?;
        for (k, v) in self.iter() {
            w.write_record([
                k.origin.to_string(),
                k.destination.to_string(),
                k.section.to_string(),
                k.period.to_string(),
                v.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let mut table: Option<FlowTable> = None;
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let line = row.position().map_or(i as u64 + 2, |p| p.line());
            let row_err = |message: String| Error::Row { line, message };
            if row.len() != 5 {
                return Err(row_err(format!("expected 5 fields, got {}", row.len())));
            }
            let key = FlowKey {
                origin: row[0].parse().map_err(|e: Error| row_err(e.to_string()))?,
                destination: row[1].parse().map_err(|e: Error| row_err(e.to_string()))?,
                section: row[2].parse().map_err(|e: Error| row_err(e.to_string()))?,
                period: row[3].parse().map_err(|e: Error| row_err(e.to_string()))?,
            };
            let value: f64 = row[4].trim().parse().map_err(|_| row_err(format!("unparseable value {:?}", &row[4])))?;
            let t = table.get_or_insert_with(|| FlowTable::new(key.period.granularity()));
            t.add(key, value).map_err(|e| row_err(e.to_string()))?;
        }
        Ok(table.unwrap_or_else(|| FlowTable::new(Granularity::Annual)))
    }
}

/// Result of reconciling one (section, period) partition.
#[derive(Debug, Clone)]
pub struct Reconciled {
    pub table: FlowTable,
    /// Flows whose two reporters had equal aggregate value; resolved in
    /// favour of the lexicographically smaller code.
    pub ties: Vec<(CountryCode, CountryCode)>,
}

#[derive(Default)]
struct Reports {
    by_exporter: Option<f64>,
    by_importer: Option<f64>,
}

/// Reconciles the records of one (section, period bucket) into flows.
///
/// Records reporting the same directed flow from the same side are summed
/// first (monthly records within a quarter, say). The priority of a reporter
/// is its total reported value (imports plus exports) in this partition.
pub fn reconcile_dual_reports(records: &[TradeRecord], section: Section, bucket: Bucket) -> Result<Reconciled> {
    let mut flows: BTreeMap<(CountryCode, CountryCode), Reports> = BTreeMap::new();
    let mut aggregate: BTreeMap<&CountryCode, f64> = BTreeMap::new();
    for r in records {
        if r.section != section || !bucket.contains(r.period) {
            return Err(Error::invalid(format!(
                "record {}/{} section {} period {} outside partition ({section}, {bucket})",
                r.reporter, r.partner, r.section, r.period
            )));
        }
        *aggregate.entry(&r.reporter).or_insert(0.0) += r.value;
        let (o, d) = r.flow();
        let entry = flows.entry((o.clone(), d.clone())).or_default();
        let slot = match r.direction {
            Direction::Export => &mut entry.by_exporter,
            Direction::Import => &mut entry.by_importer,
        };
        *slot.get_or_insert(0.0) += r.value;
    }

    let mut table = FlowTable::new(bucket.granularity());
    let mut ties = Vec::new();
    for ((origin, destination), rep) in flows {
        let value = match (rep.by_exporter, rep.by_importer) {
            (Some(v), None) | (None, Some(v)) => v,
            (Some(exp), Some(imp)) => {
                let agg_o = aggregate.get(&origin).copied().unwrap_or(0.0);
                let agg_d = aggregate.get(&destination).copied().unwrap_or(0.0);
                if agg_o > agg_d {
                    exp
                } else if agg_d > agg_o {
                    imp
                } else {
                    log::info!(
                        "reconciliation tie {origin}->{destination} in section {section} {bucket}: aggregates equal ({agg_o}), using {}",
                        (&origin).min(&destination)
                    );
                    ties.push((origin.clone(), destination.clone()));
                    if origin < destination {
                        exp
                    } else {
                        imp
                    }
                }
            }
            (None, None) => unreachable!("flow entry without reports"),
        };
        table.add(FlowKey { origin, destination, section, period: bucket }, value)?;
    }
    Ok(Reconciled { table, ties })
}

/// Merges flow tables and rolls them up to `target` granularity by summation.
pub fn aggregate(fragments: &[FlowTable], target: Granularity) -> Result<FlowTable> {
    if let Some(first) = fragments.first() {
        if let Some(other) = fragments.iter().find(|f| f.granularity != first.granularity) {
            return Err(Error::invalid(format!(
                "mixed granularities in input: {:?} and {:?}",
                first.granularity, other.granularity
            )));
        }
    }
    let mut out = FlowTable::new(target);
    for frag in fragments {
        for (k, v) in frag.iter() {
            let key = FlowKey { period: k.period.coarsen(target)?, ..k.clone() };
            out.add(key, v)?;
        }
    }
    Ok(out)
}

/// Filters, partitions by (section, bucket), reconciles each partition and
/// merges the results into one table at `granularity`.
pub fn build_flow_table(records: Vec<TradeRecord>, granularity: Granularity) -> Result<Reconciled> {
    let records = filter_standard_flows(records);
    let mut parts: BTreeMap<(Section, Bucket), Vec<TradeRecord>> = BTreeMap::new();
    for r in records {
        parts.entry((r.section, r.period.bucket(granularity))).or_default().push(r);
    }
    let parts: Vec<_> = parts.into_iter().collect();
    let reconciled: Vec<Reconciled> = parts
        .par_iter()
        .map(|((section, bucket), recs)| reconcile_dual_reports(recs, *section, *bucket))
        .collect::<Result<_>>()?;
    let mut ties = Vec::new();
    let mut tables = Vec::with_capacity(reconciled.len());
    for r in reconciled {
        ties.extend(r.ties);
        tables.push(r.table);
    }
    let table = aggregate(&tables, granularity)?;
    Ok(Reconciled { table, ties })
}
