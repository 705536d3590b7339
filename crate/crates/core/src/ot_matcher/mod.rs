//! Part-to-word matching by optimal transport over cosine costs.
//!
//! The similarity of a shape and a text is minus the transport cost of the
//! entropic plan between uniform masses on parts and on words. A Chamfer
//! (nearest-neighbour) variant and an exact LP oracle live alongside.

mod exact;
mod gradient;
mod sinkhorn;

pub use exact::{exact_emd_oracle, EXACT_MAX_CELLS};
pub use gradient::{chain_cosine, plan_cost_gradient, PlanGradient};
pub use sinkhorn::{marginal_violation, round_to_feasible, sinkhorn, SinkhornConfig, TransportPlan};

use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Pairwise cosine distances with bookkeeping for zero-norm rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    /// `c_ij = 1 - cos(p_i, w_j)`, in `[0, 2]`.
    pub values: Matrix,
    pub zero_parts: Vec<usize>,
    pub zero_words: Vec<usize>,
}

fn norms(x: &Matrix) -> Vec<f64> {
    (0..x.rows())
        .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// A zero-norm row has cosine 0 (cost 1) against everything.
pub fn cosine_cost(parts: &Matrix, words: &Matrix) -> Result<CostMatrix> {
    if parts.cols() != words.cols() {
        return Err(Error::Dimension {
            op: "cosine_cost",
            left: parts.shape(),
            right: words.shape(),
        });
    }
    let (pn, wn) = (norms(parts), norms(words));
    let dots = parts.matmul_t(words)?;
    let mut values = Matrix::zeros(parts.rows(), words.rows());
    for i in 0..parts.rows() {
        for j in 0..words.rows() {
            let cos = if pn[i] > 0.0 && wn[j] > 0.0 {
                (dots.get(i, j) / (pn[i] * wn[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            values.set(i, j, 1.0 - cos);
        }
    }
    let zeros = |n: &[f64]| n.iter().enumerate().filter(|(_, &x)| x == 0.0).map(|(i, _)| i).collect();
    Ok(CostMatrix {
        values,
        zero_parts: zeros(&pn),
        zero_words: zeros(&wn),
    })
}

pub fn uniform_marginals(n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![1.0 / n as f64; n], vec![1.0 / m as f64; m])
}

/// Result of scoring one part set against one word set.
#[derive(Clone, Debug)]
pub struct EmdScore {
    /// `-Σ c_ij x_ij`, in `[-2, 0]`.
    pub similarity: f64,
    pub plan: TransportPlan,
    pub cost: CostMatrix,
}

fn check_nonempty(parts: &Matrix, words: &Matrix) -> Result<()> {
    if parts.rows() == 0 || words.rows() == 0 {
        return Err(Error::Dimension {
            op: "similarity",
            left: parts.shape(),
            right: words.shape(),
        });
    }
    Ok(())
}

pub fn emd_similarity(parts: &Matrix, words: &Matrix, cfg: &SinkhornConfig) -> Result<EmdScore> {
    check_nonempty(parts, words)?;
    let cost = cosine_cost(parts, words)?;
    let (u, v) = uniform_marginals(parts.rows(), words.rows());
    let plan = sinkhorn(&cost.values, &u, &v, cfg)?;
    Ok(EmdScore {
        similarity: (-plan.cost).clamp(-2.0, 0.0),
        plan,
        cost,
    })
}

/// Gradients of `upstream * R_EMD` with respect to parts and words.
pub fn emd_gradient(
    parts: &Matrix,
    words: &Matrix,
    cfg: &SinkhornConfig,
    upstream: f64,
    mode: PlanGradient,
) -> Result<(Matrix, Matrix)> {
    let score = emd_similarity(parts, words, cfg)?;
    emd_gradient_from(parts, words, &score, upstream, mode)
}

/// Same as [`emd_gradient`] but reuses an already computed score.
pub fn emd_gradient_from(
    parts: &Matrix,
    words: &Matrix,
    score: &EmdScore,
    upstream: f64,
    mode: PlanGradient,
) -> Result<(Matrix, Matrix)> {
    if upstream == 0.0 {
        return Ok((
            Matrix::zeros(parts.rows(), parts.cols()),
            Matrix::zeros(words.rows(), words.cols()),
        ));
    }
    let mut d_cost = plan_cost_gradient(&score.cost.values, &score.plan, mode)?;
    d_cost.scale_assign(upstream);
    Ok(chain_cosine(parts, words, &d_cost))
}

/// Nearest-neighbour coupling: every part and every word is matched only to
/// its single cheapest counterpart (lowest index on ties).
#[derive(Clone, Debug)]
pub struct ChamferScore {
    /// `-½ [mean_i min_j c_ij + mean_j min_i c_ij]`.
    pub similarity: f64,
    /// Weights `W` with `similarity = -Σ W_ij c_ij`.
    pub weights: Matrix,
    pub cost: CostMatrix,
}

pub fn chamfer_similarity(parts: &Matrix, words: &Matrix) -> Result<ChamferScore> {
    check_nonempty(parts, words)?;
    let cost = cosine_cost(parts, words)?;
    let c = &cost.values;
    let (n, m) = c.shape();
    let mut weights = Matrix::zeros(n, m);
    let argmin = |vals: &mut dyn Iterator<Item = f64>| {
        let mut best = (0, f64::INFINITY);
        for (k, x) in vals.enumerate() {
            if x < best.1 {
                best = (k, x);
            }
        }
        best.0
    };
    for i in 0..n {
        let j = argmin(&mut c.row(i).iter().copied());
        weights.set(i, j, weights.get(i, j) + 0.5 / n as f64);
    }
    for j in 0..m {
        let i = argmin(&mut (0..n).map(|i| c.get(i, j)));
        weights.set(i, j, weights.get(i, j) + 0.5 / m as f64);
    }
    let total: f64 = c.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
    Ok(ChamferScore {
        similarity: (-total).clamp(-2.0, 0.0),
        weights,
        cost,
    })
}

/// Scoring rule used for shape/text similarity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    #[default]
    Emd,
    Chamfer,
}

impl Matcher {
    pub fn similarity(self, parts: &Matrix, words: &Matrix, cfg: &SinkhornConfig) -> Result<f64> {
        match self {
            Matcher::Emd => Ok(emd_similarity(parts, words, cfg)?.similarity),
            Matcher::Chamfer => Ok(chamfer_similarity(parts, words)?.similarity),
        }
    }

    /// Similarity together with its gradients with respect to both sets.
    pub fn similarity_with_grad(
        self,
        parts: &Matrix,
        words: &Matrix,
        cfg: &SinkhornConfig,
        mode: PlanGradient,
    ) -> Result<(f64, Matrix, Matrix)> {
        match self {
            Matcher::Emd => {
                let score = emd_similarity(parts, words, cfg)?;
                let (gp, gw) = emd_gradient_from(parts, words, &score, 1.0, mode)?;
                Ok((score.similarity, gp, gw))
            }
            Matcher::Chamfer => {
                let score = chamfer_similarity(parts, words)?;
                let d_cost = score.weights.map(|w| -w);
                let (gp, gw) = chain_cosine(parts, words, &d_cost);
                Ok((score.similarity, gp, gw))
            }
        }
    }
}

#[cfg(test)]
mod tests;
