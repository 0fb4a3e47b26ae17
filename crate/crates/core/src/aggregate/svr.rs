//! Epsilon-insensitive support vector regression with an RBF kernel,
//! solved in the dual by sequential minimal optimization with
//! second-order working set selection.
//!
//! The `2n` dual variables are `alpha_i` (label +1, linear term `eps - y_i`)
//! and `alpha_i*` (label -1, linear term `eps + y_i`); the regression
//! coefficient of sample `i` is `alpha_i - alpha_i*`.

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl SvrParams {
    pub fn new(c: f64, epsilon: f64, gamma: f64) -> Self {
        Self {
            c,
            epsilon,
            gamma,
            tolerance: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

/// Fitted expansion `f(x) = sum_i coef_i K(sv_i, x) + bias`. Only samples
/// with nonzero coefficients are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrFit {
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl SvrFit {
    pub fn predict(&self, x: &[f64], gamma: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * rbf(sv, x, gamma))
            .sum::<f64>()
            + self.bias
    }
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub fn fit_svr(x: &[Vec<f64>], y: &[f64], p: &SvrParams) -> Result<SvrFit> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidData(format!("{} samples with {} targets", n, y.len())));
    }
    if !(p.c > 0.0) || !(p.epsilon >= 0.0) || !(p.gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "SVR needs C > 0, epsilon >= 0, gamma > 0 (got {}, {}, {})",
            p.c, p.epsilon, p.gamma
        )));
    }
    let kernel: Vec<f64> = (0..n * n).map(|k| rbf(&x[k / n], &x[k % n], p.gamma)).collect();
    let k = |i: usize, j: usize| kernel[(i % n) * n + j % n];
    let m = 2 * n;
    let sign = |i: usize| if i < n { 1.0 } else { -1.0 };
    let c = p.c;

    let mut alpha = vec![0.0; m];
    let mut grad: Vec<f64> = (0..m).map(|i| if i < n { p.epsilon - y[i] } else { p.epsilon + y[i - n] }).collect();
    let qd: Vec<f64> = (0..m).map(|i| k(i, i)).collect();
    let below_upper = |a: f64| a < c;
    let above_lower = |a: f64| a > 0.0;

    let mut iter = 0;
    loop {
        // First index: maximal violation.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..m {
            if sign(t) > 0.0 {
                if below_upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = Some(t);
                }
            } else if above_lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = Some(t);
            }
        }
        // Second index: largest guaranteed decrease of the objective.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..m {
                let qit = sign(i) * sign(t) * k(i, t);
                let (viol, grad_diff, quad) = if sign(t) > 0.0 {
                    if !above_lower(alpha[t]) {
                        continue;
                    }
                    (grad[t], gmax + grad[t], qd[i] + qd[t] - 2.0 * sign(i) * qit)
                } else {
                    if !below_upper(alpha[t]) {
                        continue;
                    }
                    (-grad[t], gmax - grad[t], qd[i] + qd[t] + 2.0 * sign(i) * qit)
                };
                gmax2 = gmax2.max(viol);
                if grad_diff > 0.0 {
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best_obj {
                        best_obj = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gmax + gmax2 >= p.tolerance => (i, j),
            _ => break,
        };
        iter += 1;
        if iter > p.max_iter {
            return Err(Error::NonConvergence(p.max_iter));
        }

        let qij = sign(i) * sign(j) * k(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if sign(i) != sign(j) {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
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
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
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
        for t in 0..m {
            grad[t] += sign(t) * (sign(i) * k(i, t) * di + sign(j) * k(j, t) * dj);
        }
    }

    // Offset from the free variables, or the middle of the feasible
    // interval when every variable sits at a bound.
    let (mut ub, mut lb, mut free_sum, mut free_n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..m {
        let yg = sign(t) * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_n += 1;
            free_sum += yg;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };

    let mut fit = SvrFit {
        support: Vec::new(),
        coef: Vec::new(),
        bias: -rho,
    };
    for s in 0..n {
        let coef = alpha[s] - alpha[s + n];
        if coef != 0.0 {
            fit.support.push(x[s].clone());
            fit.coef.push(coef);
        }
    }
    Ok(fit)
}
