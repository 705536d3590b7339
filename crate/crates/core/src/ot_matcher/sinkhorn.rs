use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornConfig {
    /// Entropic regularization strength.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Largest tolerated absolute marginal violation before rounding.
    pub marginal_tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iters: 200,
            marginal_tol: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.marginal_tol.is_nan() || self.marginal_tol <= 0.0 {
            return Err(Error::Config(format!(
                "marginal_tol must be positive, got {}",
                self.marginal_tol
            )));
        }
        Ok(())
    }
}

/// Feasible coupling between two marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    /// `n x m` nonnegative flow whose row/column sums match the marginals.
    pub flow: Matrix,
    pub row_marginals: Vec<f64>,
    pub col_marginals: Vec<f64>,
    /// `Σ c_ij x_ij` under `flow`.
    pub cost: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before the tolerance was met; `flow`
    /// is still made feasible by the final rounding pass.
    pub converged: bool,
    /// Marginal violation of the Gibbs plan at exit, before rounding.
    pub violation: f64,
    pub(crate) epsilon: f64,
    pub(crate) f: Vec<f64>,
    pub(crate) g: Vec<f64>,
}

impl TransportPlan {
    /// Unrounded entropic plan `exp((f_i + g_j - c_ij) / ε)`.
    pub fn gibbs_plan(&self, cost: &Matrix) -> Matrix {
        let (n, m) = cost.shape();
        let mut p = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                p.set(i, j, ((self.f[i] + self.g[j] - cost.get(i, j)) / self.epsilon).exp());
            }
        }
        p
    }

    pub fn max_marginal_violation(&self) -> f64 {
        marginal_violation(&self.flow, &self.row_marginals, &self.col_marginals)
    }
}

pub fn marginal_violation(flow: &Matrix, u: &[f64], v: &[f64]) -> f64 {
    let (n, m) = flow.shape();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        worst = worst.max((flow.row(i).iter().sum::<f64>() - u[i]).abs());
    }
    for j in 0..m {
        worst = worst.max(((0..n).map(|i| flow.get(i, j)).sum::<f64>() - v[j]).abs());
    }
    worst
}

pub(crate) fn check_marginal(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Config(format!("{name} marginal is empty")));
    }
    if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Config(format!("{name} marginal has non-positive mass")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} marginal sums to {total}, expected 1")));
    }
    Ok(())
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + it.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Entropic OT by log-domain Sinkhorn scaling on the kernel `exp(-c/ε)`.
pub fn sinkhorn(cost: &Matrix, u: &[f64], v: &[f64], cfg: &SinkhornConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let (n, m) = cost.shape();
    if u.len() != n || v.len() != m {
        return Err(Error::Dimension {
            op: "sinkhorn",
            left: (n, m),
            right: (u.len(), v.len()),
        });
    }
    check_marginal("row", u)?;
    check_marginal("column", v)?;
    if !cost.is_finite() {
        return Err(Error::Numeric("cost matrix has non-finite entries".into()));
    }

    let eps = cfg.epsilon;
    let log_u: Vec<f64> = u.iter().map(|x| x.ln()).collect();
    let log_v: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    while iterations < cfg.max_iters {
        iterations += 1;
        for i in 0..n {
            let row = cost.row(i);
            f[i] = eps * log_u[i] - eps * log_sum_exp((0..m).map(|j| (g[j] - row[j]) / eps));
        }
        for j in 0..m {
            g[j] = eps * log_v[j] - eps * log_sum_exp((0..n).map(|i| (f[i] - cost.get(i, j)) / eps));
        }
        // columns are exact after the g update; rows carry the residual
        violation = (0..n)
            .map(|i| {
                let row = cost.row(i);
                let s: f64 = (0..m).map(|j| ((f[i] + g[j] - row[j]) / eps).exp()).sum();
                (s - u[i]).abs()
            })
            .fold(0.0, f64::max);
        if violation <= cfg.marginal_tol {
            break;
        }
    }
    let converged = violation <= cfg.marginal_tol;

    let mut plan = TransportPlan {
        flow: Matrix::zeros(n, m),
        row_marginals: u.to_vec(),
        col_marginals: v.to_vec(),
        cost: 0.0,
        iterations,
        converged,
        violation,
        epsilon: eps,
        f,
        g,
    };
    plan.flow = round_to_feasible(plan.gibbs_plan(cost), u, v);
    plan.cost = cost.data().iter().zip(plan.flow.data()).map(|(c, x)| c * x).sum();
    Ok(plan)
}

/// Projects a nonnegative matrix onto the transport polytope of `(u, v)`:
/// shrink rows and columns that carry too much mass, then spread the
/// remaining deficit as a rank-one correction.
pub fn round_to_feasible(mut x: Matrix, u: &[f64], v: &[f64]) -> Matrix {
    let (n, m) = x.shape();
    for i in 0..n {
        let s: f64 = x.row(i).iter().sum();
        if s > u[i] {
            let k = u[i] / s;
            x.row_mut(i).iter_mut().for_each(|e| *e *= k);
        }
    }
    for j in 0..m {
        let s: f64 = (0..n).map(|i| x.get(i, j)).sum();
        if s > v[j] {
            let k = v[j] / s;
            for i in 0..n {
                x.set(i, j, x.get(i, j) * k);
            }
        }
    }
    let err_r: Vec<f64> = (0..n)
        .map(|i| (u[i] - x.row(i).iter().sum::<f64>()).max(0.0))
        .collect();
    let err_c: Vec<f64> = (0..m)
        .map(|j| (v[j] - (0..n).map(|i| x.get(i, j)).sum::<f64>()).max(0.0))
        .collect();
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            for j in 0..m {
                x.set(i, j, x.get(i, j) + err_r[i] * err_c[j] / total);
            }
        }
    }
    x
}
