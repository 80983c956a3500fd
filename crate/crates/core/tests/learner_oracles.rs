mod oracles;

use proptest::prelude::*;
use rand::Rng;
use tradenet::learners::{
    enet_objective, fit_enet, fit_gbt, fit_ols, fit_svr_rbf, EnetParams, GbtParams, GrowPolicy, Loss, SvrParams,
};
use tradenet::matrix::Matrix;
use tradenet::rng;

fn regression(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut r = rng::seeded(seed);
    let beta: Vec<f64> = (0..p).map(|_| r.gen_range(-3.0..3.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
    let y = rows.iter().map(|x| 0.7 + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + r.gen_range(-0.5..0.5)).collect();
    (rows, y)
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

#[test]
fn ols_matches_normal_equations() {
    for seed in 0..50 {
        let p = 1 + seed as usize % 6;
        let (rows, y) = regression(seed, 40, p);
        let m = fit_ols(&Matrix::from_rows(&rows).unwrap(), &y, &names(p)).unwrap();
        let want = oracles::normal_equations(&rows, &y);
        assert!((m.intercept - want[0]).abs() <= 1e-8, "seed {seed}");
        for (a, b) in m.coefficients.iter().zip(&want[1..]) {
            assert!((a - b).abs() <= 1e-8, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn unpenalized_enet_is_ols() {
    for seed in 0..20 {
        let (rows, y) = regression(100 + seed, 60, 4);
        let x = Matrix::from_rows(&rows).unwrap();
        let e = fit_enet(&x, &y, &EnetParams { penalty: 0.0, mixture: 0.5 }).unwrap();
        let want = oracles::normal_equations(&rows, &y);
        assert!((e.intercept - want[0]).abs() <= 1e-6);
        for (a, b) in e.coefficients.iter().zip(&want[1..]) {
            assert!((a - b).abs() <= 1e-6, "seed {seed}: {a} vs {b}");
        }
    }
}

/// KKT conditions: for θ_j ≠ 0 the gradient of the smooth part equals
/// -λ1 sign(θ_j); for θ_j = 0 it lies within [-λ1, λ1].
#[test]
fn enet_solution_satisfies_subgradient_conditions() {
    for seed in 0..20 {
        let (rows, y) = regression(200 + seed, 80, 5);
        let x = Matrix::from_rows(&rows).unwrap();
        let params = EnetParams { penalty: 0.3, mixture: [0.0, 0.5, 1.0][seed as usize % 3] };
        let e = fit_enet(&x, &y, &params).unwrap();
        let m = y.len() as f64;
        let resid: Vec<f64> = rows.iter().zip(&y).map(|(r, yi)| yi - e.predict_row(r)).collect();
        assert!(resid.iter().sum::<f64>().abs() / m <= 1e-6);
        for (j, theta) in e.coefficients.iter().enumerate() {
            let g = -rows.iter().zip(&resid).map(|(r, ri)| r[j] * ri).sum::<f64>() / m + 2.0 * params.l2() * theta;
            if *theta != 0.0 {
                assert!((g + params.l1() * theta.signum()).abs() <= 1e-6, "seed {seed} coef {j}: {g}");
            } else {
                assert!(g.abs() <= params.l1() + 1e-6, "seed {seed} coef {j}: {g}");
            }
        }
        let base = enet_objective(&x, &y, &e, &params);
        let mut r = rng::seeded(seed);
        for _ in 0..200 {
            let mut other = e.clone();
            let j = r.gen_range(0..other.coefficients.len());
            other.coefficients[j] += r.gen_range(-0.01..0.01);
            assert!(enet_objective(&x, &y, &other, &params) >= base - 1e-12);
        }
    }
}

#[test]
fn boosting_never_increases_training_loss() {
    for (seed, policy) in [(1, GrowPolicy::DepthWise), (2, GrowPolicy::LeafWise), (3, GrowPolicy::DepthWise)] {
        let (rows, mut y) = regression(300 + seed, 120, 3);
        for (i, v) in y.iter_mut().enumerate() {
            *v += (rows[i][0] * 2.0).sin() * 3.0;
        }
        let mut params = GbtParams::new(policy);
        params.n_trees = 60;
        if seed == 3 {
            params.loss = Loss::Huber { delta: 1.0 };
        }
        let model = fit_gbt(&Matrix::from_rows(&rows).unwrap(), &y, &params, seed).unwrap();
        for w in model.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{policy:?}: {} -> {}", w[0], w[1]);
        }
    }
}

proptest! {
    #[test]
    fn loss_gradients_match_central_differences(y in -50.0f64..50.0, f in -50.0f64..50.0, delta in 0.1f64..5.0) {
        for loss in [Loss::Squared, Loss::Huber { delta }] {
            let e = f - y;
            // skip the Huber kink, where the derivative jumps
            prop_assume!(((e.abs() - delta).abs()) > 1e-3);
            let h = 1e-6;
            let fd = (loss.value(y, f + h) - loss.value(y, f - h)) / (2.0 * h);
            let (g, _) = loss.gradient(y, f);
            prop_assert!((g - fd).abs() <= 1e-6 * (1.0 + g.abs()), "{loss:?}: {g} vs {fd}");
            let fd2 = (loss.gradient(y, f + h).0 - loss.gradient(y, f - h).0) / (2.0 * h);
            prop_assert!((loss.gradient(y, f).1 - fd2).abs() <= 1e-6);
        }
    }
}

#[test]
fn svr_dual_beats_random_feasible_points() {
    let rows = vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![2.0, -1.0], vec![-1.0, 1.5], vec![0.5, 2.0], vec![-2.0, -0.5]];
    let y = vec![0.3, 1.1, -0.4, 2.0, 1.4, -1.2];
    let params = SvrParams { cost: 1.0, gamma: 0.5, epsilon: 0.1, max_iter: 10_000_000 };
    let model = fit_svr_rbf(&Matrix::from_rows(&rows).unwrap(), &y, &params).unwrap();
    let beta = model.dual_coefficients(rows.len());
    assert!(beta.iter().sum::<f64>().abs() <= 1e-9);
    assert!(beta.iter().all(|b| b.abs() <= params.cost + 1e-12));
    let best = oracles::svr_dual(&rows, &y, &beta, params.gamma, params.epsilon);
    let mut r = rng::seeded(17);
    for _ in 0..10_000 {
        let b = oracles::feasible_beta(&mut r, rows.len(), params.cost);
        let v = oracles::svr_dual(&rows, &y, &b, params.gamma, params.epsilon);
        assert!(v <= best + 1e-9, "feasible point {b:?} has dual {v} > {best}");
    }
    // predictions follow from β and ρ
    for x in &rows {
        let direct: f64 = rows.iter().zip(&beta).map(|(s, b)| b * oracles::rbf(params.gamma, s, x)).sum::<f64>() - model.rho;
        assert!((direct - model.predict_row(x)).abs() <= 1e-12);
    }
}
