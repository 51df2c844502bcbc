//! C-SVC dual solver.
//!
//! Minimizes `1/2 a'Qa - e'a` subject to `0 <= a_i <= C` and `y'a = 0`, with
//! `Q_ij = y_i y_j K_ij`. Each step picks the maximal-violating index `i` and
//! the partner `j` giving the largest second-order decrease, then solves the
//! two-variable subproblem in closed form.

use serde::{Deserialize, Serialize};

use super::kernel::KernelMatrix;
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoParams {
    pub c_reg: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Iteration budget; `0` means `max(100_000, 100 n)`.
    pub max_iter: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            c_reg: 1.0,
            tol: 1e-3,
            max_iter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl BinarySolution {
    /// Decision value at training point `i`.
    pub fn decision(&self, k: &KernelMatrix, y: &[f64], i: usize) -> f64 {
        (0..y.len()).map(|j| self.alpha[j] * y[j] * k.get(i, j)).sum::<f64>() + self.bias
    }

    /// Dual objective `sum a - 1/2 a'Qa` (to be maximized).
    pub fn dual_objective(&self, k: &KernelMatrix, y: &[f64]) -> f64 {
        let n = y.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += self.alpha[i] * self.alpha[j] * y[i] * y[j] * k.get(i, j);
            }
        }
        self.alpha.iter().sum::<f64>() - 0.5 * quad
    }

    /// Largest violation of the KKT margin conditions.
    pub fn kkt_violation(&self, k: &KernelMatrix, y: &[f64], c_reg: f64) -> f64 {
        (0..y.len())
            .map(|i| {
                let m = y[i] * self.decision(k, y, i);
                let a = self.alpha[i];
                if a <= 0.0 {
                    (1.0 - m).max(0.0)
                } else if a >= c_reg {
                    (m - 1.0).max(0.0)
                } else {
                    (m - 1.0).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Trains one binary machine on a precomputed kernel matrix with labels in {-1, +1}.
pub fn smo_train_binary(k: &KernelMatrix, y: &[f64], params: &SmoParams) -> Result<BinarySolution> {
    let n = y.len();
    if k.n != n {
        return Err(Error::LengthMismatch { left: k.n, right: n });
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(Error::SingleClass);
    }
    let c = params.c_reg;
    let max_iter = if params.max_iter == 0 { (100 * n).max(100_000) } else { params.max_iter };
    let q = |i: usize, j: usize| y[i] * y[j] * k.get(i, j);
    let qd: Vec<f64> = (0..n).map(|i| k.get(i, i)).collect();

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    loop {
        // Maximal violator in I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if in_up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
                if !in_low {
                    continue;
                }
                let yg = y[t] * grad[t];
                gmax2 = gmax2.max(yg);
                let b = gmax + yg;
                if b > 0.0 {
                    let a = qd[i] + qd[t] - 2.0 * y[i] * y[t] * q(i, t);
                    let obj = -(b * b) / if a > 0.0 { a } else { TAU };
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else { break };
        if gmax + gmax2 < params.tol {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence { iterations });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
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
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Offset from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };
    Ok(BinarySolution {
        alpha,
        bias: -rho,
        iterations,
    })
}
