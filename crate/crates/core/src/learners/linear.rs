use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const INTERCEPT_NAME: &str = "(intercept)";
const RANK_TOL: f64 = 1e-9;
const ENET_TOL: f64 = 1e-9;
const ENET_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Least squares with an intercept, solved by Householder QR.
///
/// A column whose component orthogonal to the preceding columns is
/// negligible relative to its own norm is reported as dependent.
pub fn fit_ols(x: &Matrix, y: &[f64], names: &[String]) -> Result<LinearModel> {
    let m = x.nrows();
    let p = x.ncols() + 1;
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    cols.push(vec![1.0; m]);
    for j in 0..x.ncols() {
        cols.push(x.column(j));
    }
    let col_name = |k: usize| if k == 0 { INTERCEPT_NAME.to_string() } else { names[k - 1].clone() };
    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut qty = y.to_vec();
    let mut dependent = Vec::new();
    let mut r = 0;
    for k in 0..p {
        let s = if r < m { norm(&cols[k][r..]) } else { 0.0 };
        if s <= RANK_TOL * norms[k] || norms[k] == 0.0 {
            dependent.push(col_name(k));
            continue;
        }
        // reflector mapping cols[k][r..] onto -sign * s * e1
        let alpha = if cols[k][r] > 0.0 { -s } else { s };
        let mut v: Vec<f64> = cols[k][r..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|a| a * a).sum();
        let (head, tail) = cols.split_at_mut(k + 1);
        let reflect = |c: &mut [f64]| {
            let dot: f64 = v.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            c.iter_mut().zip(&v).for_each(|(ci, vi)| *ci -= f * vi);
        };
        head[k][r] = alpha;
        head[k][r + 1..].iter_mut().for_each(|c| *c = 0.0);
        for c in tail.iter_mut() {
            reflect(&mut c[r..]);
        }
        reflect(&mut qty[r..]);
        r += 1;
    }
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent));
    }
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let mut acc = qty[k];
        for j in k + 1..p {
            acc -= cols[j][k] * beta[j];
        }
        beta[k] = acc / cols[k][k];
    }
    Ok(LinearModel { intercept: beta[0], coefficients: beta[1..].to_vec() })
}

fn norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * v.iter().map(|a| (a / scale).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnetParams {
    pub penalty: f64,
    pub mixture: f64,
}

impl Default for EnetParams {
    fn default() -> Self {
        Self { penalty: 0.01, mixture: 0.5 }
    }
}

impl EnetParams {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let d = Self::default();
        let p = Self { penalty: spec.get_or("penalty", d.penalty), mixture: spec.get_or("mixture", d.mixture) };
        if p.penalty < 0.0 {
            return Err(Error::config("enet: penalty must be >= 0"));
        }
        if !(0.0..=1.0).contains(&p.mixture) {
            return Err(Error::config("enet: mixture must lie in [0, 1]"));
        }
        Ok(p)
    }

    pub fn l1(&self) -> f64 {
        self.mixture * self.penalty
    }

    pub fn l2(&self) -> f64 {
        (1.0 - self.mixture) * self.penalty
    }
}

/// Objective `(1/2m) Σ r² + λ1 Σ|θ| + λ2 Σ θ²` with the intercept unpenalized.
pub fn enet_objective(x: &Matrix, y: &[f64], model: &LinearModel, params: &EnetParams) -> f64 {
    let m = y.len() as f64;
    let rss: f64 = x.rows_iter().zip(y).map(|(r, yi)| (yi - model.predict_row(r)).powi(2)).sum();
    let l1: f64 = model.coefficients.iter().map(|b| b.abs()).sum();
    let l2: f64 = model.coefficients.iter().map(|b| b * b).sum();
    rss / (2.0 * m) + params.l1() * l1 + params.l2() * l2
}

/// Cyclic coordinate descent on centred data; stops once no coefficient
/// moves by more than 1e-9 in a sweep.
pub fn fit_enet(x: &Matrix, y: &[f64], params: &EnetParams) -> Result<LinearModel> {
    let m = x.nrows();
    let p = x.ncols();
    let mf = m as f64;
    let y_mean = y.iter().sum::<f64>() / mf;
    let means: Vec<f64> = (0..p).map(|j| x.column(j).iter().sum::<f64>() / mf).collect();
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).into_iter().map(|v| v - means[j]).collect()).collect();
    let z: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / mf).collect();
    let (l1, l2) = (params.l1(), params.l2());

    let mut theta = vec![0.0; p];
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    for _ in 0..ENET_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..p {
            if z[j] == 0.0 {
                continue;
            }
            let rho = cols[j].iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / mf + z[j] * theta[j];
            let new = soft_threshold(rho, l1) / (z[j] + 2.0 * l2);
            let delta = new - theta[j];
            if delta != 0.0 {
                resid.iter_mut().zip(&cols[j]).for_each(|(r, c)| *r -= delta * c);
                theta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        last_change = max_change;
        if max_change < ENET_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations: ENET_MAX_SWEEPS, residual: last_change });
    }
    let intercept = y_mean - theta.iter().zip(&means).map(|(t, mu)| t * mu).sum::<f64>();
    Ok(LinearModel { intercept, coefficients: theta })
}

pub(crate) fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
