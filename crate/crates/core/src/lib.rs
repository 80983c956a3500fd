//! Section-level international trade networks and GDP-growth forecasting.
//!
//! The crate covers the whole pipeline:
//!
//! - [`ingest`]: parse bilateral trade records, drop re-import/re-export
//!   flows, reconcile dual reporting and aggregate to quarterly/annual
//!   [`ingest::FlowTable`]s.
//! - [`tradegraph`]: one directed weighted [`tradegraph::TradeNetwork`] per
//!   (section, period).
//! - [`netmetrics`]: strength, PageRank, density, reciprocity, transitivity,
//!   assortativity, Louvain modularity, centrality rankings and time series.
//! - [`panel`]: the country-year feature panel and target alignment.
//! - [`preprocess`]: the fitted preprocessing pipeline (correlation and
//!   near-zero-variance filters, k-NN imputation, scaling, dummies).
//! - [`learners`]: seven regressors behind one fit/predict contract.
//! - [`selection`]: k-fold splits, error metrics, futility racing and the
//!   horse-race leaderboard.
//! - [`shapley`]: exact and sampled Shapley attributions plus plot exports.

pub mod error;
pub mod ingest;
pub mod learners;
pub mod matrix;
pub mod netmetrics;
pub mod panel;
pub mod preprocess;
pub mod rng;
pub mod selection;
pub mod shapley;
pub mod synthetic;
pub mod tradegraph;

pub use error::{Error, Result};
pub use matrix::Matrix;
