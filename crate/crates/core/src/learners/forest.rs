use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_cart, CartParams, Tree};
use super::ModelSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub mtry: usize,
    pub min_node_size: usize,
    /// `None` grows until the node-size rule stops.
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl ForestParams {
    /// Defaults: 500 trees, `mtry = floor(sqrt(p))`, min node size 5. A
    /// requested `mtry` above `p` is truncated to `p` with a warning, so one
    /// grid serves data of any width.
    pub fn from_spec(spec: &ModelSpec, n_features: usize) -> Result<Self> {
        let default_mtry = ((n_features as f64).sqrt().floor() as usize).max(1);
        let depth = spec.get_usize("max_depth", 0)?;
        let mut mtry = spec.get_usize("mtry", default_mtry)?;
        if mtry > n_features {
            log::warn!("rforest: mtry {mtry} exceeds the {n_features} available features; using {n_features}");
            mtry = n_features;
        }
        let p = Self {
            n_trees: spec.get_usize("n_trees", 500)?,
            mtry,
            min_node_size: spec.get_usize("min_node_size", 5)?,
            max_depth: (depth > 0).then_some(depth),
            bootstrap: spec.get_or("bootstrap", 1.0) != 0.0,
        };
        p.check(n_features)?;
        Ok(p)
    }

    fn check(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("rforest: n_trees must be >= 1"));
        }
        if self.mtry == 0 || self.mtry > n_features {
            return Err(Error::config(format!("rforest: mtry {} outside 1..={n_features}", self.mtry)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Trees are grown in parallel; tree `t` draws from its own stream
/// `(seed, t)`, so the result does not depend on the worker count.
pub fn fit_rforest(x: &Matrix, y: &[f64], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    params.check(x.ncols())?;
    let n = x.nrows();
    let cart = CartParams { mtry: params.mtry, min_node_size: params.min_node_size, max_depth: params.max_depth };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, t as u64);
            let sample: Vec<usize> = if params.bootstrap { (0..n).map(|_| r.gen_range(0..n)).collect() } else { (0..n).collect() };
            grow_cart(x, y, sample, &cart, &mut r)
        })
        .collect();
    Ok(ForestModel { trees })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Matrix, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.37).sin(), (i % 7) as f64, i as f64 / 10.0]).collect();
        let y = rows.iter().map(|r| r[0] * 3.0 + r[1] * r[2]).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    fn params(n_trees: usize, mtry: usize, bootstrap: bool) -> ForestParams {
        ForestParams { n_trees, mtry, min_node_size: 1, max_depth: None, bootstrap }
    }

    #[test]
    fn single_unbootstrapped_tree_interpolates() {
        let (x, y) = data();
        let m = fit_rforest(&x, &y, &params(1, 3, false), 0).unwrap();
        for (r, yi) in x.rows_iter().zip(&y) {
            assert_eq!(m.predict_row(r), *yi);
        }
    }

    #[test]
    fn constant_target_is_a_constant_model() {
        let (x, _) = data();
        let m = fit_rforest(&x, &[5.0; 60], &params(10, 2, true), 1).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(m.predict_row(&[0.0, 0.0, 0.0]), 5.0);
    }

    #[test]
    fn identical_constant_trees_average_to_their_value() {
        let m = ForestModel { trees: vec![Tree::constant(5.0); 7] };
        assert_eq!(m.predict_row(&[1.0]), 5.0);
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = data();
        let a = fit_rforest(&x, &y, &params(20, 1, true), 9).unwrap();
        let b = fit_rforest(&x, &y, &params(20, 1, true), 9).unwrap();
        assert_eq!(a, b);
        let c = fit_rforest(&x, &y, &params(20, 1, true), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn worker_count_does_not_matter() {
        let (x, y) = data();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| fit_rforest(&x, &y, &params(16, 2, true), 4).unwrap());
        let b = four.install(|| fit_rforest(&x, &y, &params(16, 2, true), 4).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn spec_mtry_truncated_to_width() {
        let spec = ModelSpec::new(crate::learners::Family::Rforest).with("mtry", 16.0);
        assert_eq!(ForestParams::from_spec(&spec, 3).unwrap().mtry, 3);
        assert!(ForestParams::from_spec(&spec.with("mtry", 0.0), 3).is_err());
    }

    #[test]
    fn mtry_out_of_range_rejected() {
        let (x, y) = data();
        assert!(fit_rforest(&x, &y, &params(1, 4, true), 0).is_err());
        assert!(fit_rforest(&x, &y, &params(1, 0, true), 0).is_err());
    }
}
