//! Fitted preprocessing pipeline.
//!
//! Fitting runs, in order: factor marking, a greedy correlation filter on
//! numeric features, a near-zero-variance filter, k-NN imputation reference
//! capture, standardization statistics and dummy expansion maps. Every
//! statistic comes from the training rows handed to [`fit_pipeline`];
//! applying the pipeline never looks at other rows' statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{mean, sample_sd, Matrix};
use crate::panel::{FeatureKind, Value};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corr_threshold: f64,
    pub freq_cut: f64,
    pub knn_k: usize,
    pub exclude_from_scaling: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { corr_threshold: 0.9, freq_cut: 100.0, knn_k: 5, exclude_from_scaling: vec!["year".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericColumn {
    pub name: String,
    pub input_index: usize,
    /// Statistics of the imputed training column, used for scaling.
    pub mean: f64,
    pub sd: f64,
    pub scaled: bool,
    /// Statistics of the observed training values, used for k-NN distances.
    pub observed_mean: f64,
    pub observed_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalColumn {
    pub name: String,
    pub input_index: usize,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub version: u32,
    pub input_names: Vec<String>,
    pub input_kinds: Vec<FeatureKind>,
    pub dropped_by_correlation: Vec<String>,
    pub dropped_by_nzv: Vec<String>,
    pub numeric: Vec<NumericColumn>,
    pub nominal: Vec<NominalColumn>,
    pub knn_k: usize,
    /// Retained training rows, raw numeric values of the retained columns.
    pub reference: Vec<Vec<Option<f64>>>,
}

/// Pearson correlation over rows where both columns are observed.
pub fn pairwise_complete_correlation(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip();
    crate::matrix::pearson(&xs, &ys)
}

/// Greedy correlation filter. While some pair exceeds `threshold` in
/// absolute correlation, drops the member of the most correlated pair whose
/// mean absolute correlation with the other remaining columns is larger.
/// Returns the indices (into `columns`) that were dropped, in drop order.
pub fn correlation_filter(columns: &[Vec<Option<f64>>], threshold: f64) -> Vec<usize> {
    let p = columns.len();
    let mut r = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i + 1..p {
            let c = pairwise_complete_correlation(&columns[i], &columns[j]).unwrap_or(0.0).abs();
            r[i][j] = c;
            r[j][i] = c;
        }
    }
    let mut alive = vec![true; p];
    let mut dropped = Vec::new();
    loop {
        let mut worst: Option<(usize, usize, f64)> = None;
        for i in 0..p {
            for j in i + 1..p {
                if alive[i] && alive[j] && r[i][j] > threshold && worst.is_none_or(|w| r[i][j] > w.2) {
                    worst = Some((i, j, r[i][j]));
                }
            }
        }
        let Some((i, j, _)) = worst else { break };
        let mean_abs = |a: usize| {
            let others: Vec<f64> = (0..p).filter(|&k| k != a && alive[k]).map(|k| r[a][k]).collect();
            mean(&others)
        };
        let victim = if mean_abs(i) > mean_abs(j) { i } else { j };
        alive[victim] = false;
        dropped.push(victim);
    }
    dropped
}

/// Ratio of the most to the second most frequent observed value; infinite
/// when fewer than two distinct values are observed.
pub fn frequency_ratio<T: Ord>(values: impl Iterator<Item = T>) -> f64 {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    let mut c: Vec<usize> = counts.into_values().collect();
    if c.len() < 2 {
        return f64::INFINITY;
    }
    c.sort_unstable_by(|a, b| b.cmp(a));
    c[0] as f64 / c[1] as f64
}

fn numeric_cell(v: &Value) -> Option<f64> {
    v.as_num()
}

pub fn fit_pipeline(names: &[String], kinds: &[FeatureKind], rows: &[Vec<Value>], cfg: &PipelineConfig) -> Result<FittedPipeline> {
    if rows.len() < 2 {
        return Err(Error::invalid(format!("pipeline needs at least 2 training rows, got {}", rows.len())));
    }
    if names.len() != kinds.len() {
        return Err(Error::DimensionMismatch { expected: names.len(), got: kinds.len() });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != names.len()) {
        return Err(Error::DimensionMismatch { expected: names.len(), got: r.len() });
    }
    if cfg.knn_k == 0 {
        return Err(Error::config("knn_k must be at least 1"));
    }
    let column = |j: usize| -> Vec<Option<f64>> { rows.iter().map(|r| numeric_cell(&r[j])).collect() };

    // correlation filter over numeric features
    let numeric_idx: Vec<usize> = (0..names.len()).filter(|&j| kinds[j] == FeatureKind::Numeric).collect();
    let numeric_cols: Vec<Vec<Option<f64>>> = numeric_idx.iter().map(|&j| column(j)).collect();
    let corr_dropped: BTreeSet<usize> =
        correlation_filter(&numeric_cols, cfg.corr_threshold).into_iter().map(|k| numeric_idx[k]).collect();

    // near-zero variance
    let mut nzv_dropped = BTreeSet::new();
    for j in (0..names.len()).filter(|j| !corr_dropped.contains(j)) {
        let ratio = match kinds[j] {
            FeatureKind::Numeric => frequency_ratio(rows.iter().filter_map(|r| r[j].as_num()).map(f64::to_bits)),
            FeatureKind::Nominal => frequency_ratio(rows.iter().filter_map(|r| match &r[j] {
                Value::Nom(s) => Some(s.as_str()),
                _ => None,
            })),
        };
        if ratio > cfg.freq_cut {
            nzv_dropped.insert(j);
        }
    }

    let kept: Vec<usize> = (0..names.len()).filter(|j| !corr_dropped.contains(j) && !nzv_dropped.contains(j)).collect();
    if kept.is_empty() {
        return Err(Error::invalid("every feature was dropped by the correlation and near-zero-variance filters"));
    }

    let mut numeric = Vec::new();
    let mut nominal = Vec::new();
    for &j in &kept {
        match kinds[j] {
            FeatureKind::Numeric => {
                let observed: Vec<f64> = column(j).into_iter().flatten().collect();
                let sd = sample_sd(&observed);
                numeric.push(NumericColumn {
                    name: names[j].clone(),
                    input_index: j,
                    mean: 0.0,
                    sd: 1.0,
                    scaled: !cfg.exclude_from_scaling.contains(&names[j]),
                    observed_mean: mean(&observed),
                    observed_sd: if sd > 0.0 { sd } else { 1.0 },
                });
            }
            FeatureKind::Nominal => {
                let cats: BTreeSet<&str> = rows
                    .iter()
                    .filter_map(|r| match &r[j] {
                        Value::Nom(s) => Some(s.as_str()),
                        _ => None,
                    })
                    .collect();
                nominal.push(NominalColumn {
                    name: names[j].clone(),
                    input_index: j,
                    categories: cats.into_iter().map(String::from).collect(),
                });
            }
        }
    }

    let mut pipeline = FittedPipeline {
        version: FORMAT_VERSION,
        input_names: names.to_vec(),
        input_kinds: kinds.to_vec(),
        dropped_by_correlation: corr_dropped.iter().map(|&j| names[j].clone()).collect(),
        dropped_by_nzv: nzv_dropped.iter().map(|&j| names[j].clone()).collect(),
        numeric,
        nominal,
        knn_k: cfg.knn_k,
        reference: Vec::new(),
    };
    pipeline.reference = rows.iter().map(|r| pipeline.numeric_values(r)).collect();

    // scaling statistics on the imputed training columns
    let imputed: Vec<Vec<f64>> = (0..rows.len()).map(|i| pipeline.impute(&pipeline.reference[i], i)).collect::<Result<_>>()?;
    for (c, col) in pipeline.numeric.iter_mut().enumerate() {
        let values: Vec<f64> = imputed.iter().map(|r| r[c]).collect();
        col.mean = mean(&values);
        let sd = sample_sd(&values);
        col.sd = if sd > 0.0 { sd } else { 1.0 };
    }
    Ok(pipeline)
}

impl FittedPipeline {
    fn numeric_values(&self, row: &[Value]) -> Vec<Option<f64>> {
        self.numeric.iter().map(|c| numeric_cell(&row[c.input_index])).collect()
    }

    /// Output column names: retained numerics, then `feature=category` dummies.
    pub fn output_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.numeric.iter().map(|c| c.name.clone()).collect();
        for n in &self.nominal {
            out.extend(n.categories.iter().map(|cat| format!("{}={}", n.name, cat)));
        }
        out
    }

    /// Fills missing numerics with the mean of the `knn_k` nearest reference
    /// rows observing that feature. Distance is Euclidean over the features
    /// observed in both rows, on observed-value z-scores; ties go to the
    /// earlier reference row.
    fn impute(&self, values: &[Option<f64>], row_id: usize) -> Result<Vec<f64>> {
        if values.iter().all(Option::is_some) {
            return Ok(values.iter().map(|v| v.expect("checked")).collect());
        }
        if !self.numeric.is_empty() && values.iter().all(Option::is_none) {
            return Err(Error::UnimputableRow(row_id));
        }
        let z = |c: usize, v: f64| (v - self.numeric[c].observed_mean) / self.numeric[c].observed_sd;
        let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(self.reference.len());
        for (ri, rr) in self.reference.iter().enumerate() {
            let mut d2 = 0.0;
            let mut common = 0;
            for (c, (a, b)) in values.iter().zip(rr).enumerate() {
                if let (Some(a), Some(b)) = (a, b) {
                    let diff = z(c, *a) - z(c, *b);
                    d2 += diff * diff;
                    common += 1;
                }
            }
            if common > 0 {
                candidates.push((d2, ri));
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = Vec::with_capacity(values.len());
        for (c, v) in values.iter().enumerate() {
            let filled = match v {
                Some(v) => *v,
                None => {
                    let donors: Vec<f64> =
                        candidates.iter().filter_map(|&(_, ri)| self.reference[ri][c]).take(self.knn_k).collect();
                    if donors.is_empty() {
                        self.numeric[c].observed_mean
                    } else {
                        mean(&donors)
                    }
                }
            };
            out.push(filled);
        }
        Ok(out)
    }

    /// Turns raw rows into the numeric design matrix.
    pub fn apply(&self, rows: &[Vec<Value>]) -> Result<Matrix> {
        let width = self.output_names().len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != self.input_names.len() {
                return Err(Error::DimensionMismatch { expected: self.input_names.len(), got: row.len() });
            }
            let filled = self.impute(&self.numeric_values(row), i)?;
            for (c, v) in self.numeric.iter().zip(filled) {
                data.push(if c.scaled { (v - c.mean) / c.sd } else { v });
            }
            for n in &self.nominal {
                let cat = match &row[n.input_index] {
                    Value::Nom(s) => Some(s.as_str()),
                    _ => None,
                };
                data.extend(n.categories.iter().map(|k| if Some(k.as_str()) == cat { 1.0 } else { 0.0 }));
            }
        }
        Matrix::from_vec(rows.len(), width, data)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: FittedPipeline = serde_json::from_str(text)?;
        if p.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported pipeline format version {}", p.version)));
        }
        Ok(p)
    }
}
