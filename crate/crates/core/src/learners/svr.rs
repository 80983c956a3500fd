//! Epsilon-SVR with an RBF kernel.
//!
//! The dual over 2l variables (`α` for the upper tube, `α*` for the lower)
//! is solved with pairwise SMO steps and second-order working-set
//! selection. The kernel is cached in full for moderate problem sizes and
//! computed row by row otherwise.

use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const TAU: f64 = 1e-12;
const KKT_TOL: f64 = 1e-3;
const FULL_KERNEL_LIMIT: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrParams {
    pub cost: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub max_iter: usize,
}

impl SvrParams {
    /// `gamma` wins when given. Otherwise `sigma` is read as a width with
    /// `gamma = 1/(2 sigma²)`, or taken as gamma itself when
    /// `sigma_as_gamma = 1`. With neither, gamma defaults to 1/features.
    pub fn from_spec(spec: &ModelSpec, n_features: usize) -> Result<Self> {
        let gamma = match (spec.get("gamma"), spec.get("sigma")) {
            (Some(g), _) => g,
            (None, Some(s)) if spec.get_or("sigma_as_gamma", 0.0) != 0.0 => s,
            (None, Some(s)) => 1.0 / (2.0 * s * s),
            (None, None) => 1.0 / n_features.max(1) as f64,
        };
        let p = Self {
            cost: spec.get_or("cost", 1.0),
            gamma,
            epsilon: spec.get_or("epsilon", 0.1),
            max_iter: spec.get_usize("max_iter", 10_000_000)?,
        };
        if p.cost <= 0.0 || p.gamma <= 0.0 || p.epsilon < 0.0 {
            return Err(Error::config("svr_rbf: need cost > 0, gamma > 0, epsilon >= 0"));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub gamma: f64,
    pub rho: f64,
    /// Training-row index of each support vector.
    pub support_index: Vec<usize>,
    pub support: Vec<Vec<f64>>,
    /// `α - α*` per support vector.
    pub coef: Vec<f64>,
}

impl SvrModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.support.iter().zip(&self.coef).map(|(sv, c)| c * rbf(self.gamma, sv, x)).sum::<f64>() - self.rho
    }

    /// Dense `α - α*` over all `n` training rows.
    pub fn dual_coefficients(&self, n: usize) -> Vec<f64> {
        let mut beta = vec![0.0; n];
        for (&i, &c) in self.support_index.iter().zip(&self.coef) {
            beta[i] = c;
        }
        beta
    }
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (-gamma * d2).exp()
}

enum Kernel<'a> {
    Full { k: Vec<f64>, l: usize },
    Rows { x: &'a Matrix, gamma: f64 },
}

impl Kernel<'_> {
    fn row(&self, i: usize, out: &mut [f64]) {
        match self {
            Kernel::Full { k, l } => out.copy_from_slice(&k[i * l..(i + 1) * l]),
            Kernel::Rows { x, gamma } => {
                let xi = x.row(i);
                for (t, o) in out.iter_mut().enumerate() {
                    *o = rbf(*gamma, xi, x.row(t));
                }
            }
        }
    }
}

pub fn fit_svr_rbf(x: &Matrix, y: &[f64], params: &SvrParams) -> Result<SvrModel> {
    let l = x.nrows();
    let c = params.cost;
    let kernel = if l <= FULL_KERNEL_LIMIT {
        let mut k = vec![0.0; l * l];
        for i in 0..l {
            k[i * l + i] = 1.0;
            for j in 0..i {
                let v = rbf(params.gamma, x.row(i), x.row(j));
                k[i * l + j] = v;
                k[j * l + i] = v;
            }
        }
        Kernel::Full { k, l }
    } else {
        Kernel::Rows { x, gamma: params.gamma }
    };

    // variable t < l is α_t with sign +1, t >= l is α*_{t-l} with sign -1
    let n = 2 * l;
    let sign = |t: usize| if t < l { 1.0 } else { -1.0 };
    let mut alpha = vec![0.0; n];
    let mut grad: Vec<f64> = (0..n).map(|t| if t < l { params.epsilon - y[t] } else { params.epsilon + y[t - l] }).collect();
    // every kernel diagonal is 1 for RBF
    let qd = 1.0;
    let mut krow_i = vec![0.0; l];
    let mut krow_j = vec![0.0; l];

    let mut iter = 0;
    let mut violation;
    loop {
        // first index: maximal violating candidate
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if sign(t) > 0.0 {
                if alpha[t] < c && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = t;
                }
            } else if alpha[t] > 0.0 && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            kernel.row(i_sel % l, &mut krow_i);
            let yi = sign(i_sel);
            for t in 0..n {
                let yt = sign(t);
                let q_it = yi * yt * krow_i[t % l];
                if yt > 0.0 {
                    if alpha[t] > 0.0 {
                        gmax2 = gmax2.max(grad[t]);
                        let diff = gmax + grad[t];
                        if diff > 0.0 {
                            let quad = (qd + qd - 2.0 * yi * q_it).max(TAU);
                            let obj = -(diff * diff) / quad;
                            if obj <= obj_min {
                                obj_min = obj;
                                j_sel = t;
                            }
                        }
                    }
                } else if alpha[t] < c {
                    gmax2 = gmax2.max(-grad[t]);
                    let diff = gmax - grad[t];
                    if diff > 0.0 {
                        let quad = (qd + qd + 2.0 * yi * q_it).max(TAU);
                        let obj = -(diff * diff) / quad;
                        if obj <= obj_min {
                            obj_min = obj;
                            j_sel = t;
                        }
                    }
                }
            }
        }
        violation = gmax + gmax2;
        if violation < KKT_TOL || j_sel == usize::MAX {
            break;
        }
        if iter >= params.max_iter {
            return Err(Error::NoConvergence { iterations: iter, residual: violation });
        }
        iter += 1;

        let (i, j) = (i_sel, j_sel);
        kernel.row(j % l, &mut krow_j);
        let (yi, yj) = (sign(i), sign(j));
        let q_ij = yi * yj * krow_i[j % l];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yi != yj {
            let quad = (qd + qd + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd + qd - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            let yt = sign(t);
            grad[t] += yt * (yi * krow_i[t % l] * di + yj * krow_j[t % l] * dj);
        }
    }
    log::debug!("svr: {iter} SMO steps, final violation {violation:.2e}");

    let rho = compute_rho(&alpha, &grad, c, l);
    let mut model = SvrModel { gamma: params.gamma, rho, support_index: Vec::new(), support: Vec::new(), coef: Vec::new() };
    for t in 0..l {
        let beta = alpha[t] - alpha[t + l];
        if beta != 0.0 {
            model.support_index.push(t);
            model.support.push(x.row(t).to_vec());
            model.coef.push(beta);
        }
    }
    Ok(model)
}

/// Bias from free variables, or the midpoint of the feasible interval when
/// every variable sits at a bound.
fn compute_rho(alpha: &[f64], grad: &[f64], c: f64, l: usize) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut n_free = 0usize;
    for t in 0..2 * l {
        let yt = if t < l { 1.0 } else { -1.0 };
        let yg = yt * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if yt < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if yt > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    if n_free > 0 {
        free_sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}
