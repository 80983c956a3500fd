//! Brute-force reference implementations, written independently of the
//! library: dense matrices, explicit enumeration, textbook formulas.
#![allow(dead_code)]

use rand::Rng;
use tradenet::rng;

/// Random directed weighted graph: 2..=max_n nodes, random edge
/// probability, weights spanning several orders of magnitude.
pub fn random_graph(seed: u64, max_n: usize) -> (usize, Vec<(usize, usize, f64)>) {
    let mut r = rng::seeded(seed);
    let n = r.gen_range(2..=max_n);
    let p: f64 = r.gen_range(0.05..0.95);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && r.gen_bool(p) {
                edges.push((i, j, 10f64.powf(r.gen_range(-2.0..4.0))));
            }
        }
    }
    (n, edges)
}

pub fn dense(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; n]; n];
    for &(i, j, x) in edges {
        w[i][j] += x;
    }
    w
}

pub fn in_strength(w: &[Vec<f64>], j: usize) -> f64 {
    w.iter().map(|row| row[j]).sum()
}

pub fn out_strength(w: &[Vec<f64>], i: usize) -> f64 {
    w[i].iter().sum()
}

pub fn density(w: &[Vec<f64>]) -> f64 {
    let n = w.len();
    let m = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| w[i][j] > 0.0).count();
    m as f64 / (n * (n - 1)) as f64
}

pub fn reciprocity(w: &[Vec<f64>]) -> f64 {
    let n = w.len();
    let (mut m, mut mutual) = (0, 0);
    for i in 0..n {
        for j in 0..n {
            if w[i][j] > 0.0 {
                m += 1;
                if w[j][i] > 0.0 {
                    mutual += 1;
                }
            }
        }
    }
    mutual as f64 / m as f64
}

fn adjacency(w: &[Vec<f64>]) -> Vec<Vec<bool>> {
    let n = w.len();
    (0..n).map(|i| (0..n).map(|j| i != j && (w[i][j] > 0.0 || w[j][i] > 0.0)).collect()).collect()
}

/// 3 x triangles / connected triples, by enumeration over node triples.
pub fn transitivity(w: &[Vec<f64>]) -> f64 {
    let a = adjacency(w);
    let n = a.len();
    let mut triangles = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if a[i][j] && a[j][k] && a[i][k] {
                    triangles += 1;
                }
            }
        }
    }
    // a connected triple is a center with an unordered pair of neighbours
    let mut triples = 0u64;
    for c in 0..n {
        for i in 0..n {
            for k in i + 1..n {
                if a[c][i] && a[c][k] {
                    triples += 1;
                }
            }
        }
    }
    if triples == 0 {
        0.0
    } else {
        3.0 * triangles as f64 / triples as f64
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Pearson correlation of undirected degrees over both orientations of
/// every undirected edge.
pub fn assortativity(w: &[Vec<f64>]) -> Option<f64> {
    let a = adjacency(w);
    let n = a.len();
    let deg: Vec<f64> = a.iter().map(|row| row.iter().filter(|&&b| b).count() as f64).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            if a[i][j] {
                xs.push(deg[i]);
                ys.push(deg[j]);
            }
        }
    }
    if xs.len() < 4 {
        return None;
    }
    pearson(&xs, &ys)
}

/// Power iteration on the dense Google matrix G = d P + (1 - d)/n, with
/// dangling columns replaced by the uniform vector.
pub fn pagerank(w: &[Vec<f64>], d: f64) -> Vec<f64> {
    let n = w.len();
    let nf = n as f64;
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        let out = out_strength(w, i);
        for j in 0..n {
            let p = if out > 0.0 { w[i][j] / out } else { 1.0 / nf };
            g[j][i] = d * p + (1.0 - d) / nf;
        }
    }
    let mut x = vec![1.0 / nf; n];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..n).map(|j| (0..n).map(|i| g[j][i] * x[i]).sum()).collect();
        let delta: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    x
}

/// Q = (1/2m) Σ_ij [A_ij - k_i k_j / 2m] δ(c_i, c_j) with A = W + Wᵀ.
pub fn modularity(w: &[Vec<f64>], partition: &[usize]) -> f64 {
    let n = w.len();
    let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { w[i][j] + w[j][i] }).collect()).collect();
    let k: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if partition[i] == partition[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// [intercept, β...] from the normal equations XᵀX β = Xᵀy with a ones
/// column prepended.
pub fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len() + 1;
    let aug: Vec<Vec<f64>> = rows.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (r, yi) in aug.iter().zip(y) {
        for i in 0..p {
            xty[i] += r[i] * yi;
            for j in 0..p {
                xtx[i][j] += r[i] * r[j];
            }
        }
    }
    solve(xtx, xty)
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp()
}

/// ε-SVR dual in β = α - α*: -½ βᵀKβ - ε Σ|β| + yᵀβ.
pub fn svr_dual(rows: &[Vec<f64>], y: &[f64], beta: &[f64], gamma: f64, epsilon: f64) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * beta[j] * rbf(gamma, &rows[i], &rows[j]);
        }
    }
    -0.5 * quad - epsilon * beta.iter().map(|b| b.abs()).sum::<f64>() + beta.iter().zip(y).map(|(b, yi)| b * yi).sum::<f64>()
}

/// A random β with Σβ = 0 and |β_i| ≤ cost.
pub fn feasible_beta(r: &mut rng::Rng, n: usize, cost: f64) -> Vec<f64> {
    let mut b: Vec<f64> = (0..n).map(|_| r.gen_range(-cost..cost)).collect();
    let shift = b.iter().sum::<f64>() / n as f64;
    b.iter_mut().for_each(|v| *v -= shift);
    let max = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > cost {
        let s = cost / max;
        b.iter_mut().for_each(|v| *v *= s);
    }
    b
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Interventional Shapley values by averaging marginal contributions over
/// all n! orderings; v(S) is the mean prediction over `background` rows
/// with the S columns taken from `x`.
pub fn shapley_by_permutations(f: &dyn Fn(&[f64]) -> f64, x: &[f64], background: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let value = |in_s: &[bool]| -> f64 {
        background
            .iter()
            .map(|b| {
                let z: Vec<f64> = (0..n).map(|j| if in_s[j] { x[j] } else { b[j] }).collect();
                f(&z)
            })
            .sum::<f64>()
            / background.len() as f64
    };
    let perms = permutations(n);
    let mut phi = vec![0.0; n];
    for p in &perms {
        let mut in_s = vec![false; n];
        let mut prev = value(&in_s);
        for &j in p {
            in_s[j] = true;
            let cur = value(&in_s);
            phi[j] += cur - prev;
            prev = cur;
        }
    }
    phi.iter().map(|v| v / perms.len() as f64).collect()
}
