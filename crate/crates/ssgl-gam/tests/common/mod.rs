//! Independent reference implementations used by the acceptance suite.
//! These deliberately avoid the library's solver code paths: the
//! proximal-gradient solver and the Newton–Raphson GLM fitter only share
//! the `Mat` container with the code under test.

use ssgl_gam::family::Family;
use ssgl_gam::linalg::{norm2, qr_thin, solve_upper, Mat};
use ssgl_gam::solver::Coef;

/// Weighted group-lasso objective
/// 0.5 sum_i w_i (z_i - b - sum_j U_j g_j)_i^2 + sum_j lambda_j ||g_j||.
pub fn group_lasso_objective(
    z: &[f64],
    w: &[f64],
    blocks: &[Mat],
    lambdas: &[f64],
    coef: &Coef,
) -> f64 {
    let n = z.len();
    let mut eta = vec![coef.intercept; n];
    for (block, g) in blocks.iter().zip(&coef.groups) {
        let c = block.matvec(g);
        for (e, v) in eta.iter_mut().zip(&c) {
            *e += v;
        }
    }
    let fit: f64 = (0..n).map(|i| 0.5 * w[i] * (z[i] - eta[i]).powi(2)).sum();
    let pen: f64 = lambdas
        .iter()
        .zip(&coef.groups)
        .map(|(&l, g)| l * norm2(g))
        .sum();
    fit + pen
}

/// Proximal gradient descent on the weighted group lasso with an
/// unpenalized intercept, run to a tight fixed-point tolerance. Step
/// size 1/L with L an upper bound on the Hessian spectral norm.
pub fn prox_gradient_group_lasso(
    z: &[f64],
    w: &[f64],
    blocks: &[Mat],
    lambdas: &[f64],
    tol: f64,
    max_iter: usize,
) -> Coef {
    let n = z.len();
    let p = blocks.len();
    let d = blocks[0].ncols();
    // Hessian of the smooth part is [1 U]' W [1 U]; bound its spectral
    // norm by the weighted Frobenius norm.
    let mut l_bound = w.iter().sum::<f64>(); // intercept column
    for block in blocks {
        for k in 0..d {
            let col = block.col(k);
            l_bound += (0..n).map(|i| w[i] * col[i] * col[i]).sum::<f64>();
        }
    }
    let step = 1.0 / l_bound.max(1e-12);
    let mut coef = Coef::zeros(p, d);
    for _ in 0..max_iter {
        // residual r_i = w_i (z_i - eta_i)
        let mut eta = vec![coef.intercept; n];
        for (block, g) in blocks.iter().zip(&coef.groups) {
            let c = block.matvec(g);
            for (e, v) in eta.iter_mut().zip(&c) {
                *e += v;
            }
        }
        let r: Vec<f64> = (0..n).map(|i| w[i] * (z[i] - eta[i])).collect();
        let mut max_change: f64 = (step * r.iter().sum::<f64>()).abs();
        let new_intercept = coef.intercept + step * r.iter().sum::<f64>();
        let mut new_groups = Vec::with_capacity(p);
        for (j, block) in blocks.iter().enumerate() {
            let grad = block.tr_matvec(&r);
            let cand: Vec<f64> = coef.groups[j]
                .iter()
                .zip(&grad)
                .map(|(&c, &g)| c + step * g)
                .collect();
            let nc = norm2(&cand);
            let thresh = step * lambdas[j];
            let shrunk: Vec<f64> = if nc <= thresh {
                vec![0.0; d]
            } else {
                let s = 1.0 - thresh / nc;
                cand.iter().map(|&v| s * v).collect()
            };
            for (a, b) in shrunk.iter().zip(&coef.groups[j]) {
                max_change = max_change.max((a - b).abs());
            }
            new_groups.push(shrunk);
        }
        coef.intercept = new_intercept;
        coef.groups = new_groups;
        if max_change < tol {
            break;
        }
    }
    coef
}

/// Newton–Raphson for an unpenalized canonical-link GLM with design
/// [1 X], iterated to 1e-12 on the coefficient change.
pub fn newton_glm(family: &Family, y: &[f64], x: &Mat) -> Vec<f64> {
    let n = x.nrows();
    let k = x.ncols() + 1;
    let full = Mat::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
    let mut theta = vec![0.0; k];
    for _ in 0..200 {
        let eta = full.matvec(&theta);
        let mu: Vec<f64> = eta.iter().map(|&e| family.link_inv(e)).collect();
        let wts: Vec<f64> = mu.iter().map(|&m| family.var_fun(m).unwrap()).collect();
        // solve (F' W F) delta = F'(y - mu) via QR of sqrt(W) F
        let a = Mat::from_fn(n, k, |i, j| wts[i].sqrt() * full.get(i, j));
        let b: Vec<f64> = (0..n).map(|i| (y[i] - mu[i]) / wts[i].sqrt().max(1e-300)).collect();
        let (q, r) = qr_thin(&a).unwrap();
        let qtb = q.tr_matvec(&b);
        let delta = solve_upper(&r, &qtb).unwrap();
        let mut max_change = 0.0f64;
        for (t, dl) in theta.iter_mut().zip(&delta) {
            *t += dl;
            max_change = max_change.max(dl.abs());
        }
        if max_change < 1e-12 {
            break;
        }
    }
    theta
}

pub fn median(values: &[f64]) -> f64 {
    let mut s: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    assert!(!s.is_empty(), "median of empty/non-finite sample");
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}
