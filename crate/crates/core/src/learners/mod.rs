//! Seven regressors behind one fit/predict contract.
//!
//! | family      | model                                                     |
//! |-------------|-----------------------------------------------------------|
//! | `ols`       | least squares via Householder QR                          |
//! | `enet`      | elastic net by cyclic coordinate descent                  |
//! | `svr_rbf`   | epsilon-SVR with an RBF kernel, SMO-type dual solver      |
//! | `knn`       | inverse-distance weighted k nearest neighbours            |
//! | `rforest`   | bagged CART regression trees with per-split feature draws |
//! | `gbt_level` | second-order boosting, depth-wise exact greedy trees      |
//! | `gbt_leaf`  | second-order boosting, best-leaf-first histogram trees    |
//!
//! Hyperparameters travel as a name -> value map ([`ModelSpec`]) so grids
//! can be declared in config files; each family validates its own names.

mod forest;
mod gbt;
mod knn;
mod linear;
mod svr;
mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use forest::{fit_rforest, ForestModel, ForestParams};
pub use gbt::{fit_gbt, GbtModel, GbtParams, GrowPolicy, Loss};
pub use knn::{fit_knn, KnnModel, KnnParams};
pub use linear::{enet_objective, fit_enet, fit_ols, EnetParams, LinearModel, INTERCEPT_NAME};
pub use svr::{fit_svr_rbf, SvrModel, SvrParams};
pub use tree::{Node, Tree};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ols,
    Enet,
    SvrRbf,
    Knn,
    Rforest,
    GbtLevel,
    GbtLeaf,
}

impl Family {
    pub const ALL: [Family; 7] =
        [Family::Ols, Family::Enet, Family::SvrRbf, Family::Knn, Family::Rforest, Family::GbtLevel, Family::GbtLeaf];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ols => "ols",
            Family::Enet => "enet",
            Family::SvrRbf => "svr_rbf",
            Family::Knn => "knn",
            Family::Rforest => "rforest",
            Family::GbtLevel => "gbt_level",
            Family::GbtLeaf => "gbt_leaf",
        }
    }

    /// Hyperparameter names the family accepts.
    pub fn parameters(self) -> &'static [&'static str] {
        match self {
            Family::Ols => &[],
            Family::Enet => &["penalty", "mixture"],
            Family::SvrRbf => &["cost", "gamma", "sigma", "sigma_as_gamma", "epsilon", "max_iter"],
            Family::Knn => &["neighbors", "distance_power"],
            Family::Rforest => &["n_trees", "mtry", "min_node_size", "max_depth", "bootstrap"],
            Family::GbtLevel => {
                &["n_trees", "learning_rate", "max_depth", "lambda", "alpha", "gamma", "min_child_weight", "subsample", "loss", "huber_delta"]
            }
            Family::GbtLeaf => &[
                "n_trees",
                "learning_rate",
                "max_leaves",
                "max_depth",
                "n_bins",
                "lambda",
                "alpha",
                "gamma",
                "min_child_weight",
                "subsample",
                "loss",
                "huber_delta",
            ],
        }
    }

    /// Whether fitted models depend on the seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Family::Rforest | Family::GbtLevel | Family::GbtLeaf)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::config(format!("unknown model family {s:?}")))
    }
}

/// A family plus its hyperparameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        Self { family, params: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    /// Rejects names the family does not know and non-finite values.
    pub fn validate(&self) -> Result<()> {
        let known = self.family.parameters();
        for (k, v) in &self.params {
            if !known.contains(&k.as_str()) {
                return Err(Error::config(format!("{}: unknown hyperparameter {k:?}", self.family)));
            }
            if !v.is_finite() {
                return Err(Error::config(format!("{}: hyperparameter {k} is not finite", self.family)));
            }
        }
        Ok(())
    }

    pub(crate) fn get(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub(crate) fn get_or(&self, name: &str, default: f64) -> f64 {
        self.get(name).unwrap_or(default)
    }

    pub(crate) fn get_usize(&self, name: &str, default: usize) -> Result<usize> {
        match self.get(name) {
            None => Ok(default),
            Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
            Some(v) => Err(Error::config(format!("{}: {name} must be a nonnegative integer, got {v}", self.family))),
        }
    }

    /// Compact `name=value` rendering used in leaderboards.
    pub fn label(&self) -> String {
        if self.params.is_empty() {
            return self.family.to_string();
        }
        let p: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}({})", self.family, p.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelState {
    Linear(LinearModel),
    Svr(SvrModel),
    Knn(KnnModel),
    Forest(ForestModel),
    Gbt(GbtModel),
}

/// A fitted regressor. Immutable; prediction is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub family: Family,
    pub spec: ModelSpec,
    pub feature_names: Vec<String>,
    pub state: ModelState,
}

/// Anything that maps a feature row to a prediction.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn predict_row(&self, x: &[f64]) -> f64;
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch { expected: self.n_features(), got: x.ncols() });
        }
        Ok(x.rows_iter().map(|r| self.state.predict_row(r)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(text)?;
        if m.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model format version {}", m.version)));
        }
        Ok(m)
    }
}

impl ModelState {
    fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            ModelState::Linear(m) => m.predict_row(x),
            ModelState::Svr(m) => m.predict_row(x),
            ModelState::Knn(m) => m.predict_row(x),
            ModelState::Forest(m) => m.predict_row(x),
            ModelState::Gbt(m) => m.predict_row(x),
        }
    }
}

impl Predictor for TrainedModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.state.predict_row(x)
    }
}

pub(crate) fn check_xy(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("no training rows"));
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains missing or non-finite values"));
    }
    Ok(())
}

/// Fits any family from its spec.
pub fn fit(spec: &ModelSpec, x: &Matrix, y: &[f64], feature_names: &[String], seed: u64) -> Result<TrainedModel> {
    spec.validate()?;
    check_xy(x, y)?;
    if feature_names.len() != x.ncols() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), got: feature_names.len() });
    }
    let state = match spec.family {
        Family::Ols => ModelState::Linear(fit_ols(x, y, feature_names)?),
        Family::Enet => ModelState::Linear(fit_enet(x, y, &EnetParams::from_spec(spec)?)?),
        Family::SvrRbf => ModelState::Svr(fit_svr_rbf(x, y, &SvrParams::from_spec(spec, x.ncols())?)?),
        Family::Knn => ModelState::Knn(fit_knn(x, y, &KnnParams::from_spec(spec)?)?),
        Family::Rforest => ModelState::Forest(fit_rforest(x, y, &ForestParams::from_spec(spec, x.ncols())?, seed)?),
        Family::GbtLevel => ModelState::Gbt(fit_gbt(x, y, &GbtParams::from_spec(spec, GrowPolicy::DepthWise)?, seed)?),
        Family::GbtLeaf => ModelState::Gbt(fit_gbt(x, y, &GbtParams::from_spec(spec, GrowPolicy::LeafWise)?, seed)?),
    };
    Ok(TrainedModel {
        version: FORMAT_VERSION,
        family: spec.family,
        spec: spec.clone(),
        feature_names: feature_names.to_vec(),
        state,
    })
}
