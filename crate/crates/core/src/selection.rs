//! Cross-validated model selection.
//!
//! Folds are prepared once: each training part gets its own fitted
//! preprocessing pipeline, and every model sees the same design matrices.
//! Tuning races the configurations of a family fold by fold and drops
//! those whose RMSE is significantly worse than the current leader's
//! (paired one-sided t-test). The horse race then compares the tuned
//! families on all folds.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::learners::{self, Family, ModelSpec};
use crate::matrix::{mean, sample_sd, Matrix};
use crate::panel::SupervisedDataset;
use crate::preprocess::{fit_pipeline, FittedPipeline, PipelineConfig};
use crate::rng;

pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Huber,
    Mae,
    Rmse,
    Smape,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Huber, Metric::Mae, Metric::Rmse, Metric::Smape];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Huber => "huber",
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Smape => "smape",
        }
    }
}

pub fn score(y: &[f64], yhat: &[f64], metric: Metric) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: yhat.len() });
    }
    if y.is_empty() {
        return Err(Error::invalid("cannot score an empty prediction"));
    }
    let n = y.len() as f64;
    let pairs = y.iter().zip(yhat);
    let v = match metric {
        Metric::Huber => {
            pairs
                .map(|(a, b)| {
                    let e = (a - b).abs();
                    if e <= HUBER_DELTA {
                        0.5 * e * e
                    } else {
                        HUBER_DELTA * (e - 0.5 * HUBER_DELTA)
                    }
                })
                .sum::<f64>()
                / n
        }
        Metric::Mae => pairs.map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
        Metric::Rmse => (pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt(),
        Metric::Smape => {
            100.0
                * pairs
                    .map(|(a, b)| {
                        let den = a.abs() + b.abs();
                        if den == 0.0 {
                            0.0
                        } else {
                            2.0 * (a - b).abs() / den
                        }
                    })
                    .sum::<f64>()
                / n
        }
    };
    Ok(v)
}

/// All four metrics of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub huber: f64,
    pub mae: f64,
    pub rmse: f64,
    pub smape: f64,
}

impl Scores {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Self> {
        Ok(Self {
            huber: score(y, yhat, Metric::Huber)?,
            mae: score(y, yhat, Metric::Mae)?,
            rmse: score(y, yhat, Metric::Rmse)?,
            smape: score(y, yhat, Metric::Smape)?,
        })
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Huber => self.huber,
            Metric::Mae => self.mae,
            Metric::Rmse => self.rmse,
            Metric::Smape => self.smape,
        }
    }
}

/// Fold number of each row: rows are shuffled with the seed and dealt out
/// round-robin, so fold sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!("{k} folds for {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    Ok(fold)
}

/// Fold number of each row from contiguous blocks of distinct years; the
/// number of years per block differs by at most one.
pub fn year_blocked_split(years: &[i32], k: usize) -> Result<Vec<usize>> {
    let mut distinct = years.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if k < 2 || k > distinct.len() {
        return Err(Error::invalid(format!("{k} year blocks for {} distinct years", distinct.len())));
    }
    let m = distinct.len();
    Ok(years.iter().map(|y| distinct.binary_search(y).expect("present") * k / m).collect())
}

/// One cross-validation fold with its own fitted pipeline.
#[derive(Debug, Clone)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub pipeline: FittedPipeline,
    pub x_train: Matrix,
    pub y_train: Vec<f64>,
    pub x_valid: Matrix,
    pub y_valid: Vec<f64>,
}

impl Fold {
    pub fn feature_names(&self) -> Vec<String> {
        self.pipeline.output_names()
    }
}

pub fn prepare_folds(data: &SupervisedDataset, assignment: &[usize], cfg: &PipelineConfig) -> Result<Vec<Fold>> {
    if assignment.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), got: assignment.len() });
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != f).collect();
            let valid: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == f).collect();
            if valid.is_empty() {
                return Err(Error::invalid(format!("fold {f} is empty")));
            }
            let tr = data.subset(&train);
            let va = data.subset(&valid);
            let pipeline = fit_pipeline(&tr.names, &tr.kinds, &tr.rows, cfg)?;
            let x_train = pipeline.apply(&tr.rows)?;
            let x_valid = pipeline.apply(&va.rows)?;
            Ok(Fold { index: f, train, valid, pipeline, x_train, y_train: tr.target, x_valid, y_valid: va.target })
        })
        .collect()
}

/// Fits on the fold's training part and scores its validation part. The
/// model seed depends on the fold only.
pub fn evaluate(spec: &ModelSpec, fold: &Fold, seed: u64) -> Result<Scores> {
    let model = learners::fit(spec, &fold.x_train, &fold.y_train, &fold.feature_names(), rng::derive(seed, fold.index as u64))?;
    let yhat = model.predict(&fold.x_valid)?;
    Scores::compute(&fold.y_valid, &yhat)
}

/// Candidate configurations per family, kept in family order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grid {
    families: Vec<(Family, Vec<ModelSpec>)>,
}

impl Grid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, spec: ModelSpec) {
        match self.families.iter_mut().find(|(f, _)| *f == spec.family) {
            Some((_, v)) => v.push(spec),
            None => {
                self.families.push((spec.family, vec![spec]));
                self.families.sort_by_key(|(f, _)| *f);
            }
        }
    }

    pub fn families(&self) -> &[(Family, Vec<ModelSpec>)] {
        &self.families
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::config("empty grid"));
        }
        for (_, specs) in &self.families {
            for s in specs {
                s.validate()?;
            }
        }
        Ok(())
    }

    pub fn restrict(&self, keep: &[Family]) -> Grid {
        Grid { families: self.families.iter().filter(|(f, _)| keep.contains(f)).cloned().collect() }
    }

    /// Small grids sized for a few thousand rows on one core.
    pub fn default_grid() -> Grid {
        let text = r#"
            [[model]]
            family = "ols"

            [[model]]
            family = "enet"
            penalty = [0.001, 0.01, 0.1]
            mixture = [0.5, 1.0]

            [[model]]
            family = "svr_rbf"
            cost = [0.5, 2.0]

            [[model]]
            family = "knn"
            neighbors = [5, 11, 21]
            distance_power = [1.0, 2.0]

            [[model]]
            family = "rforest"
            n_trees = 150
            mtry = [7, 16]
            min_node_size = 5

            [[model]]
            family = "gbt_level"
            n_trees = 300
            learning_rate = 0.05
            max_depth = [3, 5]

            [[model]]
            family = "gbt_leaf"
            n_trees = 300
            learning_rate = 0.05
            max_leaves = [15, 31]
        "#;
        Grid::from_toml(text).expect("built-in grid parses")
    }

    /// Reads `[[model]]` tables. Each holds a `family` plus hyperparameters
    /// given as a number or a list of numbers; lists expand to their
    /// Cartesian product.
    pub fn from_toml(text: &str) -> Result<Grid> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("grid: {e}")))?;
        let mut grid = Grid::new();
        for (key, value) in &table {
            if key != "model" {
                return Err(Error::config(format!("grid: unexpected key {key:?}")));
            }
            let entries = value.as_array().ok_or_else(|| Error::config("grid: `model` must be an array of tables"))?;
            for entry in entries {
                let t = entry.as_table().ok_or_else(|| Error::config("grid: `model` entries must be tables"))?;
                let family: Family = t
                    .get("family")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| Error::config("grid: every model needs a `family` string"))?
                    .parse()?;
                let mut axes: Vec<(String, Vec<f64>)> = Vec::new();
                for (k, v) in t.iter().filter(|(k, _)| k.as_str() != "family") {
                    let values = match v {
                        toml::Value::Array(a) => a.iter().map(number).collect::<Result<Vec<f64>>>()?,
                        other => vec![number(other)?],
                    };
                    if values.is_empty() {
                        return Err(Error::config(format!("grid: {family}.{k} has no values")));
                    }
                    axes.push((k.clone(), values));
                }
                for combo in cartesian(&axes) {
                    let mut spec = ModelSpec::new(family);
                    for (k, v) in axes.iter().map(|a| &a.0).zip(combo) {
                        spec = spec.with(k, v);
                    }
                    spec.validate()?;
                    grid.add(spec);
                }
            }
        }
        Ok(grid)
    }
}

fn number(v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        other => Err(Error::config(format!("grid: expected a number, got {other}"))),
    }
}

fn cartesian(axes: &[(String, Vec<f64>)]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, (_, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut c = prefix.clone();
                    c.push(v);
                    c
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaceConfig {
    pub min_resamples: usize,
    pub alpha: f64,
}

impl Default for RaceConfig {
    fn default() -> Self {
        Self { min_resamples: 4, alpha: 0.05 }
    }
}

/// One configuration's progress through a race.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigTrial {
    pub spec: ModelSpec,
    /// Scores of the folds completed, in fold order.
    pub scores: Vec<Scores>,
    /// Folds completed when the configuration was dropped.
    pub eliminated_after: Option<usize>,
    pub failure: Option<String>,
}

impl ConfigTrial {
    pub fn rmse(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.rmse).collect()
    }

    pub fn mean_rmse(&self) -> f64 {
        mean(&self.rmse())
    }

    fn alive(&self) -> bool {
        self.failure.is_none() && self.eliminated_after.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyRace {
    pub family: Family,
    pub trials: Vec<ConfigTrial>,
    /// Index of the surviving configuration with the lowest mean RMSE.
    pub best: Option<usize>,
}

impl FamilyRace {
    pub fn best_trial(&self) -> Option<&ConfigTrial> {
        self.best.map(|b| &self.trials[b])
    }
}

/// p-value of the one-sided paired t-test that `candidate` has larger
/// RMSE than `leader`.
pub fn futility_p_value(candidate: &[f64], leader: &[f64]) -> f64 {
    let d: Vec<f64> = candidate.iter().zip(leader).map(|(a, b)| a - b).collect();
    if d.len() < 2 {
        return 1.0;
    }
    let m = mean(&d);
    let sd = sample_sd(&d);
    if sd == 0.0 {
        return if m > 0.0 { 0.0 } else { 1.0 };
    }
    let t = m / (sd / (d.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64).expect("positive dof");
    1.0 - dist.cdf(t)
}

fn leader(trials: &[ConfigTrial]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in trials.iter().enumerate().filter(|(_, t)| t.alive()) {
        let m = t.mean_rmse();
        if best.is_none_or(|(_, b)| m < b) {
            best = Some((i, m));
        }
    }
    best.map(|b| b.0)
}

/// Races each family's configurations fold by fold. From `min_resamples`
/// completed folds on, a configuration is dropped when the futility test
/// against the current leader rejects at `alpha`. Failed fits drop out
/// with their error recorded.
pub fn adaptive_race(folds: &[Fold], grid: &Grid, cfg: &RaceConfig, seed: u64) -> Result<Vec<FamilyRace>> {
    grid.validate()?;
    if cfg.min_resamples < 2 || folds.len() < cfg.min_resamples {
        return Err(Error::config(format!(
            "racing needs at least min_resamples = {} >= 2 folds, got {}",
            cfg.min_resamples,
            folds.len()
        )));
    }
    Ok(grid.families().par_iter().map(|(family, specs)| race_family(*family, specs, folds, cfg, seed)).collect())
}

fn race_family(family: Family, specs: &[ModelSpec], folds: &[Fold], cfg: &RaceConfig, seed: u64) -> FamilyRace {
    let mut trials: Vec<ConfigTrial> =
        specs.iter().map(|s| ConfigTrial { spec: s.clone(), scores: Vec::new(), eliminated_after: None, failure: None }).collect();
    for (f, fold) in folds.iter().enumerate() {
        let alive: Vec<usize> = (0..trials.len()).filter(|&c| trials[c].alive()).collect();
        let results: Vec<Result<Scores>> = alive.par_iter().map(|&c| evaluate(&trials[c].spec, fold, seed)).collect();
        for (&c, r) in alive.iter().zip(results) {
            match r {
                Ok(s) => trials[c].scores.push(s),
                Err(e) => {
                    log::warn!("{} failed on fold {}: {e}", trials[c].spec.label(), fold.index);
                    trials[c].failure = Some(e.to_string());
                }
            }
        }
        let done = f + 1;
        if done < cfg.min_resamples || done == folds.len() {
            continue;
        }
        let Some(lead) = leader(&trials) else { break };
        let lead_rmse = trials[lead].rmse();
        for c in 0..trials.len() {
            if c != lead && trials[c].alive() && futility_p_value(&trials[c].rmse(), &lead_rmse) < cfg.alpha {
                log::debug!("{} dropped after {done} folds", trials[c].spec.label());
                trials[c].eliminated_after = Some(done);
            }
        }
    }
    let best = leader(&trials);
    FamilyRace { family, trials, best }
}

/// Mean and two-sided 95% Student-t interval over fold scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let m = mean(values);
        if values.len() < 2 {
            return Self { mean: m, sd: f64::NAN, ci_low: f64::NAN, ci_high: f64::NAN };
        }
        let sd = sample_sd(values);
        let n = values.len() as f64;
        let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive dof").inverse_cdf(0.975);
        let half = t * sd / n.sqrt();
        Self { mean: m, sd, ci_low: m - half, ci_high: m + half }
    }

    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResult {
    /// Family name, numbered when a family appears more than once.
    pub name: String,
    pub spec: ModelSpec,
    pub fold_scores: Vec<Scores>,
    pub failure: Option<String>,
    pub summary: BTreeMap<Metric, Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaceResult {
    pub folds: usize,
    pub models: Vec<ModelResult>,
    /// Position in `models` of the lowest mean RMSE (earliest on ties).
    pub winner: usize,
}

impl RaceResult {
    /// Builds the result from per-model fold scores (or failure messages),
    /// in the order given.
    pub fn from_scores(entries: Vec<(ModelSpec, std::result::Result<Vec<Scores>, String>)>, folds: usize) -> Result<Self> {
        let mut counts: BTreeMap<Family, usize> = BTreeMap::new();
        for (s, _) in &entries {
            *counts.entry(s.family).or_default() += 1;
        }
        let mut seen: BTreeMap<Family, usize> = BTreeMap::new();
        let mut models = Vec::with_capacity(entries.len());
        for (spec, outcome) in entries {
            let k = seen.entry(spec.family).or_default();
            *k += 1;
            let name = if counts[&spec.family] > 1 { format!("{}#{k}", spec.family) } else { spec.family.to_string() };
            let (fold_scores, failure) = match outcome {
                Ok(s) => (s, None),
                Err(e) => (Vec::new(), Some(e)),
            };
            let summary = if failure.is_none() {
                Metric::ALL
                    .iter()
                    .map(|&m| (m, Summary::of(&fold_scores.iter().map(|s| s.get(m)).collect::<Vec<_>>())))
                    .collect()
            } else {
                BTreeMap::new()
            };
            models.push(ModelResult { name, spec, fold_scores, failure, summary });
        }
        let viable: Vec<usize> = (0..models.len()).filter(|&i| models[i].failure.is_none()).collect();
        if viable.len() < 2 {
            return Err(Error::invalid(format!("only {} model(s) fitted successfully; a race needs 2", viable.len())));
        }
        let mut winner = viable[0];
        for &i in &viable[1..] {
            if models[i].summary[&Metric::Rmse].mean < models[winner].summary[&Metric::Rmse].mean {
                winner = i;
            }
        }
        Ok(Self { folds, models, winner })
    }

    pub fn winner(&self) -> &ModelResult {
        &self.models[self.winner]
    }

    pub fn model(&self, name: &str) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.name == name)
    }

    /// `model,metric,mean,ci_low,ci_high`; failed models are left out.
    pub fn write_leaderboard<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "metric", "mean", "ci_low", "ci_high"])?;
        for m in self.models.iter().filter(|m| m.failure.is_none()) {
            for (metric, s) in &m.summary {
                w.write_record([m.name.clone(), metric.name().to_string(), s.mean.to_string(), s.ci_low.to_string(), s.ci_high.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `model,fold,huber,mae,rmse,smape`.
    pub fn write_fold_scores<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "fold", "huber", "mae", "rmse", "smape"])?;
        for m in &self.models {
            for (f, s) in m.fold_scores.iter().enumerate() {
                w.write_record([
                    m.name.clone(),
                    f.to_string(),
                    s.huber.to_string(),
                    s.mae.to_string(),
                    s.rmse.to_string(),
                    s.smape.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores every spec on every fold.
pub fn horse_race(folds: &[Fold], specs: &[ModelSpec], seed: u64) -> Result<RaceResult> {
    if specs.len() < 2 {
        return Err(Error::invalid("a horse race needs at least 2 models"));
    }
    for s in specs {
        s.validate()?;
    }
    let tasks: Vec<(usize, usize)> = (0..specs.len()).flat_map(|m| (0..folds.len()).map(move |f| (m, f))).collect();
    let results: Vec<Result<Scores>> = tasks.par_iter().map(|&(m, f)| evaluate(&specs[m], &folds[f], seed)).collect();
    let mut entries = Vec::with_capacity(specs.len());
    for (m, spec) in specs.iter().enumerate() {
        let outcome: std::result::Result<Vec<Scores>, String> =
            results[m * folds.len()..(m + 1) * folds.len()].iter().map(|r| r.as_ref().copied().map_err(|e| e.to_string())).collect();
        if let Err(e) = &outcome {
            log::warn!("{} failed: {e}", spec.label());
        }
        entries.push((spec.clone(), outcome));
    }
    RaceResult::from_scores(entries, folds.len())
}

/// The horse race over each family's tuned configuration, reusing the
/// tuning scores (a surviving configuration has completed every fold with
/// the same seeds a fresh race would use).
pub fn race_from_tuning(tuned: &[FamilyRace], folds: usize) -> Result<RaceResult> {
    let entries = tuned
        .iter()
        .map(|fr| match fr.best_trial() {
            Some(t) => (t.spec.clone(), Ok(t.scores.clone())),
            None => {
                let why = fr.trials.iter().find_map(|t| t.failure.clone()).unwrap_or_else(|| "no surviving configuration".into());
                (ModelSpec::new(fr.family), Err(why))
            }
        })
        .collect();
    RaceResult::from_scores(entries, folds)
}
