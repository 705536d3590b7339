use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::sinkhorn::TransportPlan;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// How the transport plan's dependence on the cost enters the gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanGradient {
    /// Differentiates through the Sinkhorn fixed point: exact for the
    /// converged entropic plan.
    #[default]
    Implicit,
    /// Holds the plan constant (`∂R/∂c = -x`). This is the exact gradient
    /// of the regularized objective, not of `R`.
    Envelope,
}

/// `∂R/∂c` for `R = -Σ c_ij x_ij(c)` where `x(c)` is the entropic plan.
///
/// With `P = exp((f ⊕ g - C)/ε)` and `A = C ⊙ P`, perturbing the marginal
/// equations gives the adjoint system
/// `[diag(P1) P; Pᵀ diag(Pᵀ1)] [α; β] = [A1; Aᵀ1]`, after which
/// `∂R/∂c_ij = -P_ij (1 + (α_i + β_j - c_ij) / ε)`. The system has the
/// one-dimensional null space `(1, -1)`, fixed here by `β_{m-1} = 0`.
pub fn plan_cost_gradient(cost: &Matrix, plan: &TransportPlan, mode: PlanGradient) -> Result<Matrix> {
    if mode == PlanGradient::Envelope {
        return Ok(plan.flow.map(|x| -x));
    }
    let (n, m) = cost.shape();
    let p = plan.gibbs_plan(cost);
    let eps = plan.epsilon;
    let k = n + m - 1;
    let mut sys = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..n {
        for j in 0..m {
            let pij = p.get(i, j);
            let aij = cost.get(i, j) * pij;
            sys[(i, i)] += pij;
            rhs[i] += aij;
            if j + 1 < m {
                sys[(n + j, n + j)] += pij;
                sys[(i, n + j)] = pij;
                sys[(n + j, i)] = pij;
                rhs[n + j] += aij;
            }
        }
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Numeric("singular adjoint system in plan gradient".into()))?;
    let mut grad = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let beta = if j + 1 < m { sol[n + j] } else { 0.0 };
            let pij = p.get(i, j);
            grad.set(i, j, -pij * (1.0 + (sol[i] + beta - cost.get(i, j)) / eps));
        }
    }
    Ok(grad)
}

/// Chains `∂R/∂c` through `c_ij = 1 - cos(p_i, w_j)` into both embedding
/// sets. Zero-norm rows receive zero gradient.
pub fn chain_cosine(parts: &Matrix, words: &Matrix, d_cost: &Matrix) -> (Matrix, Matrix) {
    let (n, d) = parts.shape();
    let m = words.rows();
    let unit = |x: &Matrix| -> (Matrix, Vec<f64>) {
        let mut u = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(norm);
            if norm > 0.0 {
                u.row_mut(r).iter_mut().for_each(|v| *v /= norm);
            }
        }
        (u, norms)
    };
    let (ph, pn) = unit(parts);
    let (wh, wn) = unit(words);
    let mut gp = Matrix::zeros(n, d);
    let mut gw = Matrix::zeros(m, d);
    for i in 0..n {
        for j in 0..m {
            if pn[i] == 0.0 || wn[j] == 0.0 {
                continue;
            }
            // dR/dcos = -dR/dc
            let s = -d_cost.get(i, j);
            if s == 0.0 {
                continue;
            }
            let cos: f64 = ph.row(i).iter().zip(wh.row(j)).map(|(a, b)| a * b).sum();
            for k in 0..d {
                let (pk, wk) = (ph.get(i, k), wh.get(j, k));
                gp.set(i, k, gp.get(i, k) + s * (wk - cos * pk) / pn[i]);
                gw.set(j, k, gw.get(j, k) + s * (pk - cos * wk) / wn[j]);
            }
        }
    }
    (gp, gw)
}
