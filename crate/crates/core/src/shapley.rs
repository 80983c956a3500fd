//! Model-agnostic Shapley attributions.
//!
//! The value of a coalition `S` at point `x` is the interventional mean
//! `v(S) = mean_b f(x_S, b_rest)` over background rows `b`: features in `S`
//! take their values from `x`, the others from the background row. Then
//! `v(∅)` is the base value and `v(all) = f(x)`.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::learners::Predictor;
use crate::matrix::{mean, sample_sd, Matrix};
use crate::rng;

pub const EXACT_MAX_FEATURES: usize = 15;
pub const DEFAULT_BACKGROUND: usize = 200;

/// Wraps a closure as a model, for fixtures and model arithmetic.
pub struct FnPredictor<F> {
    pub n_features: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

fn check_inputs<P: Predictor + ?Sized>(model: &P, x: &[f64], background: &Matrix) -> Result<()> {
    if x.len() != model.n_features() {
        return Err(Error::DimensionMismatch { expected: model.n_features(), got: x.len() });
    }
    if background.ncols() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: background.ncols() });
    }
    if background.nrows() == 0 {
        return Err(Error::invalid("empty background set"));
    }
    Ok(())
}

/// Mean model output over the background rows.
pub fn base_value<P: Predictor + ?Sized>(model: &P, background: &Matrix) -> f64 {
    background.rows_iter().map(|b| model.predict_row(b)).sum::<f64>() / background.nrows() as f64
}

fn coalition_value<P: Predictor + ?Sized>(model: &P, x: &[f64], background: &Matrix, mask: u32, buf: &mut Vec<f64>) -> f64 {
    let mut total = 0.0;
    for b in background.rows_iter() {
        buf.clear();
        buf.extend(b.iter().zip(x).enumerate().map(|(j, (&bj, &xj))| if mask >> j & 1 == 1 { xj } else { bj }));
        total += model.predict_row(buf);
    }
    total / background.nrows() as f64
}

/// Exact attributions by enumerating all `2^n` coalitions. The weights
/// `|S|!(n-|S|-1)!/n!` are formed in log space.
pub fn exact_shapley<P: Predictor + ?Sized>(model: &P, x: &[f64], background: &Matrix, max_features: usize) -> Result<Vec<f64>> {
    check_inputs(model, x, background)?;
    let n = x.len();
    if n > max_features.min(31) {
        return Err(Error::invalid(format!(
            "{n} features exceed the exact limit of {max_features}; use sampled_shapley"
        )));
    }
    let values: Vec<f64> = (0..1u32 << n)
        .into_par_iter()
        .map_init(Vec::new, |buf, mask| coalition_value(model, x, background, mask, buf))
        .collect();
    let ln_n_fact = ln_gamma(n as f64 + 1.0);
    let weight: Vec<f64> = (0..n).map(|s| (ln_gamma(s as f64 + 1.0) + ln_gamma((n - s) as f64) - ln_n_fact).exp()).collect();
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in 0..1u32 << n {
            if mask & bit == 0 {
                *p += weight[mask.count_ones() as usize] * (values[(mask | bit) as usize] - values[mask as usize]);
            }
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledShap {
    pub phi: Vec<f64>,
    /// Standard error of each estimate over permutations.
    pub se: Vec<f64>,
}

/// Monte-Carlo attributions: marginal contributions averaged over uniformly
/// random feature orders. Each order telescopes to `f(x) - v(∅)`, so the
/// estimates always satisfy efficiency.
pub fn sampled_shapley<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    background: &Matrix,
    n_permutations: usize,
    seed: u64,
) -> Result<SampledShap> {
    check_inputs(model, x, background)?;
    if n_permutations == 0 {
        return Err(Error::invalid("need at least one permutation"));
    }
    let n = x.len();
    let m = background.nrows();
    let base = base_value(model, background);
    let mut r = rng::seeded(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut contrib: Vec<Vec<f64>> = vec![Vec::with_capacity(n_permutations); n];
    let mut z = background.clone();
    for _ in 0..n_permutations {
        order.shuffle(&mut r);
        z.clone_from(background);
        let mut prev = base;
        for &i in &order {
            for row in 0..m {
                z.set(row, i, x[i]);
            }
            let cur = z.rows_iter().map(|row| model.predict_row(row)).sum::<f64>() / m as f64;
            contrib[i].push(cur - prev);
            prev = cur;
        }
    }
    let phi = contrib.iter().map(|c| mean(c)).collect();
    let se = contrib
        .iter()
        .map(|c| if c.len() < 2 { f64::NAN } else { sample_sd(c) / (c.len() as f64).sqrt() })
        .collect();
    Ok(SampledShap { phi, se })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ShapMethod {
    Exact,
    Sampled { n_permutations: usize },
    /// Exact up to the feature limit, sampled beyond it.
    Auto { n_permutations: usize },
}

/// Attributions for a set of observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapMatrix {
    pub feature_names: Vec<String>,
    /// observations × features
    pub values: Matrix,
    pub base_value: f64,
    /// Present for sampled attributions.
    pub standard_errors: Option<Matrix>,
}

/// Seeded subsample of at most `max_rows` rows, kept in original order.
pub fn select_background(x: &Matrix, max_rows: usize, seed: u64) -> Matrix {
    if x.nrows() <= max_rows {
        return x.clone();
    }
    let mut idx = rand::seq::index::sample(&mut rng::seeded(seed), x.nrows(), max_rows).into_vec();
    idx.sort_unstable();
    x.select_rows(&idx)
}

/// Observation `i` draws permutations from stream `(seed, i)`.
pub fn shap_matrix<P: Predictor + ?Sized>(
    model: &P,
    x: &Matrix,
    background: &Matrix,
    feature_names: &[String],
    method: ShapMethod,
    seed: u64,
) -> Result<ShapMatrix> {
    if feature_names.len() != x.ncols() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), got: feature_names.len() });
    }
    let n = x.ncols();
    let exact = match method {
        ShapMethod::Exact => true,
        ShapMethod::Sampled { .. } => false,
        ShapMethod::Auto { .. } => n <= EXACT_MAX_FEATURES,
    };
    let perms = match method {
        ShapMethod::Sampled { n_permutations } | ShapMethod::Auto { n_permutations } => n_permutations,
        ShapMethod::Exact => 0,
    };
    let rows: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            if exact {
                exact_shapley(model, x.row(i), background, EXACT_MAX_FEATURES).map(|p| (p, None))
            } else {
                sampled_shapley(model, x.row(i), background, perms, rng::derive(seed, i as u64)).map(|s| (s.phi, Some(s.se)))
            }
        })
        .collect::<Result<_>>()?;
    let values = Matrix::from_vec(x.nrows(), n, rows.iter().flat_map(|r| r.0.iter().copied()).collect())?;
    let standard_errors = if exact {
        None
    } else {
        Some(Matrix::from_vec(x.nrows(), n, rows.iter().flat_map(|r| r.1.iter().flatten().copied()).collect())?)
    };
    Ok(ShapMatrix { feature_names: feature_names.to_vec(), values, base_value: base_value(model, background), standard_errors })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Importance {
    pub feature: String,
    pub mean_abs_shap: f64,
}

/// Features by mean |φ|, largest first; ties keep column order.
pub fn mean_abs_importance(shap: &ShapMatrix, top_k: usize) -> Result<Vec<Importance>> {
    if top_k < 1 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    if shap.values.nrows() == 0 {
        return Err(Error::invalid("empty attribution matrix"));
    }
    let mut out: Vec<Importance> = shap
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, f)| Importance { feature: f.clone(), mean_abs_shap: mean(&shap.values.column(j).iter().map(|v| v.abs()).collect::<Vec<_>>()) })
        .collect();
    out.sort_by(|a, b| b.mean_abs_shap.total_cmp(&a.mean_abs_shap));
    out.truncate(top_k);
    Ok(out)
}

/// `feature,mean_abs_shap,model`.
pub fn write_importance<W: Write>(rows: &[Importance], model: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "mean_abs_shap", "model"])?;
    for r in rows {
        w.write_record([r.feature.as_str(), &r.mean_abs_shap.to_string(), model])?;
    }
    w.flush()?;
    Ok(())
}

fn standardize(col: &[f64]) -> Vec<f64> {
    let m = mean(col);
    let sd = if col.len() > 1 { sample_sd(col) } else { 0.0 };
    col.iter().map(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 }).collect()
}

fn check_aligned(shap: &ShapMatrix, raw: &Matrix) -> Result<()> {
    if raw.nrows() != shap.values.nrows() || raw.ncols() != shap.values.ncols() {
        return Err(Error::invalid(format!(
            "feature values are {}x{} but attributions are {}x{}",
            raw.nrows(),
            raw.ncols(),
            shap.values.nrows(),
            shap.values.ncols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeeswarmRow {
    pub feature: String,
    pub observation: usize,
    pub shap_value: f64,
    pub standardized_value: f64,
}

/// Long-format rows for the `top_k` most important features, in importance
/// order then observation order. Feature values are standardized over the
/// exported observations (constant features map to 0).
pub fn beeswarm_export(shap: &ShapMatrix, raw: &Matrix, top_k: usize) -> Result<Vec<BeeswarmRow>> {
    check_aligned(shap, raw)?;
    let ranked = mean_abs_importance(shap, top_k)?;
    let mut out = Vec::new();
    for imp in ranked {
        let j = shap.feature_names.iter().position(|f| *f == imp.feature).expect("ranked feature exists");
        let z = standardize(&raw.column(j));
        for (i, zi) in z.into_iter().enumerate() {
            out.push(BeeswarmRow { feature: imp.feature.clone(), observation: i, shap_value: shap.values.get(i, j), standardized_value: zi });
        }
    }
    Ok(out)
}

pub fn write_beeswarm<W: Write>(rows: &[BeeswarmRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "observation", "shap_value", "standardized_feature_value"])?;
    for r in rows {
        w.write_record([r.feature.clone(), r.observation.to_string(), r.shap_value.to_string(), r.standardized_value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DependencePoint {
    pub observation: usize,
    pub standardized_value: f64,
    pub shap_value: f64,
}

/// One feature's (standardized value, attribution) pairs sorted by value.
pub fn dependence_export(shap: &ShapMatrix, raw: &Matrix, feature: &str) -> Result<Vec<DependencePoint>> {
    check_aligned(shap, raw)?;
    let j = shap
        .feature_names
        .iter()
        .position(|f| f == feature)
        .ok_or_else(|| Error::UnknownNode(format!("feature {feature:?}")))?;
    let col = raw.column(j);
    let z = standardize(&col);
    let mut idx: Vec<usize> = (0..col.len()).collect();
    idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    Ok(idx
        .into_iter()
        .map(|i| DependencePoint { observation: i, standardized_value: z[i], shap_value: shap.values.get(i, j) })
        .collect())
}

pub fn write_dependence<W: Write>(feature: &str, rows: &[DependencePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "observation", "standardized_feature_value", "shap_value"])?;
    for r in rows {
        w.write_record([feature.to_string(), r.observation.to_string(), r.standardized_value.to_string(), r.shap_value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn background(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::seeded(seed);
        Matrix::from_rows(&(0..rows).map(|_| (0..cols).map(|_| r.gen_range(-2.0..2.0)).collect()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn linear_model_closed_form() {
        let beta = [1.5, -2.0, 0.0, 0.7];
        let f = FnPredictor { n_features: 4, f: |x: &[f64]| 3.0 + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() };
        let bg = background(30, 4, 1);
        let x = [0.3, 1.2, -0.5, 2.0];
        let phi = exact_shapley(&f, &x, &bg, 15).unwrap();
        for j in 0..4 {
            let expect = beta[j] * (x[j] - mean(&bg.column(j)));
            assert!((phi[j] - expect).abs() < 1e-9);
        }
        assert!(phi[2].abs() < 1e-12);
    }

    #[test]
    fn symmetric_features_share_equally() {
        let f = FnPredictor { n_features: 3, f: |x: &[f64]| x[0] * x[1] + x[2] };
        let bg = Matrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        let phi = exact_shapley(&f, &[2.0, 2.0, 0.5], &bg, 15).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-12);
    }

    #[test]
    fn too_many_features_for_exact() {
        let f = FnPredictor { n_features: 16, f: |x: &[f64]| x[0] };
        let bg = background(2, 16, 0);
        assert!(exact_shapley(&f, &[0.0; 16], &bg, EXACT_MAX_FEATURES).is_err());
    }

    #[test]
    fn single_feature_sampled_is_exact() {
        let f = FnPredictor { n_features: 1, f: |x: &[f64]| x[0] * x[0] };
        let bg = background(10, 1, 2);
        let s = sampled_shapley(&f, &[1.7], &bg, 1, 0).unwrap();
        assert!((s.phi[0] - (1.7f64.powi(2) - base_value(&f, &bg))).abs() < 1e-12);
    }

    #[test]
    fn sampled_is_seeded() {
        let f = FnPredictor { n_features: 3, f: |x: &[f64]| x[0] * x[1] + x[2].sin() };
        let bg = background(10, 3, 3);
        let a = sampled_shapley(&f, &[1.0, 2.0, 3.0], &bg, 50, 8).unwrap();
        assert_eq!(a, sampled_shapley(&f, &[1.0, 2.0, 3.0], &bg, 50, 8).unwrap());
        assert_ne!(a, sampled_shapley(&f, &[1.0, 2.0, 3.0], &bg, 50, 9).unwrap());
    }

    fn toy_matrix() -> ShapMatrix {
        ShapMatrix {
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            values: Matrix::from_rows(&[vec![1.0, 0.0, -2.0], vec![-1.0, 0.0, 2.0], vec![1.0, 0.0, 2.0]]).unwrap(),
            base_value: 0.0,
            standard_errors: None,
        }
    }

    #[test]
    fn importance_order() {
        let imp = mean_abs_importance(&toy_matrix(), 3).unwrap();
        let names: Vec<&str> = imp.iter().map(|i| i.feature.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
        assert_eq!(imp[2].mean_abs_shap, 0.0);
        assert!(mean_abs_importance(&toy_matrix(), 0).is_err());
    }

    #[test]
    fn beeswarm_shape() {
        let raw = Matrix::from_rows(&[vec![1.0, 5.0, 0.0], vec![2.0, 5.0, 1.0], vec![6.0, 5.0, 2.0]]).unwrap();
        let rows = beeswarm_export(&toy_matrix(), &raw, 3).unwrap();
        assert_eq!(rows.len(), 9);
        let b: Vec<f64> = rows.iter().filter(|r| r.feature == "b").map(|r| r.standardized_value).collect();
        assert_eq!(b, vec![0.0; 3]);
        assert_eq!(beeswarm_export(&toy_matrix(), &raw, 1).unwrap().len(), 3);
        let bad = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(beeswarm_export(&toy_matrix(), &bad, 2).is_err());
    }

    #[test]
    fn dependence_sorted_by_value() {
        let raw = Matrix::from_rows(&[vec![3.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]).unwrap();
        let d = dependence_export(&toy_matrix(), &raw, "a").unwrap();
        assert_eq!(d.iter().map(|p| p.observation).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert!(dependence_export(&toy_matrix(), &raw, "zzz").is_err());
    }

    #[test]
    fn auto_switches_to_sampling() {
        let f = FnPredictor { n_features: 16, f: |x: &[f64]| x.iter().sum::<f64>() };
        let x = background(2, 16, 4);
        let bg = background(5, 16, 5);
        let names: Vec<String> = (0..16).map(|j| format!("f{j}")).collect();
        let s = shap_matrix(&f, &x, &bg, &names, ShapMethod::Auto { n_permutations: 3 }, 0).unwrap();
        assert!(s.standard_errors.is_some());
        for i in 0..2 {
            let total: f64 = s.values.row(i).iter().sum();
            assert!((total - (f.predict_row(x.row(i)) - s.base_value)).abs() < 1e-9);
        }
    }
}
