use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const DIST_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    pub neighbors: usize,
    pub distance_power: f64,
}

impl KnnParams {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let p = Self { neighbors: spec.get_usize("neighbors", 5)?, distance_power: spec.get_or("distance_power", 2.0) };
        if p.neighbors == 0 || p.distance_power <= 0.0 {
            return Err(Error::config("knn: need neighbors >= 1 and distance_power > 0"));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub neighbors: usize,
    pub distance_power: f64,
    pub x: Matrix,
    pub y: Vec<f64>,
}

pub fn fit_knn(x: &Matrix, y: &[f64], params: &KnnParams) -> Result<KnnModel> {
    if params.neighbors > x.nrows() {
        return Err(Error::invalid(format!("knn: k = {} exceeds {} training rows", params.neighbors, x.nrows())));
    }
    Ok(KnnModel { neighbors: params.neighbors, distance_power: params.distance_power, x: x.clone(), y: y.to_vec() })
}

impl KnnModel {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let p = self.distance_power;
        if p == 2.0 {
            return a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
        }
        a.iter().zip(b).map(|(u, v)| (u - v).abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }

    /// Inverse-distance weighted mean over the k nearest rows. Distance ties
    /// at the k-th place go to the lower row index. A query matching
    /// training rows exactly returns the mean of those rows' targets.
    pub fn predict_row(&self, q: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self.x.rows_iter().enumerate().map(|(i, r)| (self.distance(r, q), i)).collect();
        let k = self.neighbors;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        let exact: Vec<f64> = d.iter().filter(|e| e.0 == 0.0).map(|e| self.y[e.1]).collect();
        if !exact.is_empty() {
            return exact.iter().sum::<f64>() / exact.len() as f64;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for &(dist, i) in &d {
            let w = 1.0 / (dist + DIST_GUARD);
            num += w * self.y[i];
            den += w;
        }
        num / den
    }
}
