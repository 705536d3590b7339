//! Exact transportation-problem optimum for tiny instances, by enumerating
//! every basis of the transportation polytope.
//!
//! A basis is a spanning tree of the complete bipartite graph between rows
//! and columns (n + m - 1 cells). Each tree determines a unique basic
//! solution; the feasible ones are exactly the polytope's vertices, and the
//! LP optimum is attained at one of them.

use super::sinkhorn::check_marginal;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Largest `n * m` the oracle accepts.
pub const EXACT_MAX_CELLS: usize = 25;

const FEAS_TOL: f64 = 1e-12;

struct TreeSearch<'a> {
    cost: &'a Matrix,
    u: &'a [f64],
    v: &'a [f64],
    n: usize,
    m: usize,
    parent: Vec<usize>,
    size: Vec<usize>,
    undo: Vec<(usize, usize)>,
    chosen: Vec<(usize, usize)>,
    best: f64,
    bases: usize,
}

impl TreeSearch<'_> {
    fn find(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.undo.push((big, small));
    }

    fn rollback(&mut self) {
        let (big, small) = self.undo.pop().expect("union to undo");
        self.parent[small] = small;
        self.size[big] -= self.size[small];
    }

    fn search(&mut self, cell: usize, need: usize) {
        if need == 0 {
            self.evaluate();
            return;
        }
        let total = self.n * self.m;
        if total - cell < need {
            return;
        }
        let (i, j) = (cell / self.m, cell % self.m);
        let (a, b) = (self.find(i), self.find(self.n + j));
        if a != b {
            self.union(a, b);
            self.chosen.push((i, j));
            self.search(cell + 1, need - 1);
            self.chosen.pop();
            self.rollback();
        }
        self.search(cell + 1, need);
    }

    /// Basic solution of the current spanning tree by peeling leaves.
    fn evaluate(&mut self) {
        self.bases += 1;
        let nodes = self.n + self.m;
        let mut remaining: Vec<f64> = self.u.iter().chain(self.v).copied().collect();
        let mut degree = vec![0usize; nodes];
        for &(i, j) in &self.chosen {
            degree[i] += 1;
            degree[self.n + j] += 1;
        }
        let mut alive = vec![true; self.chosen.len()];
        let mut total = 0.0;
        for _ in 0..self.chosen.len() {
            let Some(leaf) = (0..nodes).find(|&x| degree[x] == 1) else {
                return;
            };
            let Some(e) = (0..self.chosen.len()).find(|&e| {
                alive[e] && (self.chosen[e].0 == leaf || self.n + self.chosen[e].1 == leaf)
            }) else {
                return;
            };
            let (i, j) = self.chosen[e];
            let other = if i == leaf { self.n + j } else { i };
            let flow = remaining[leaf];
            if flow < -FEAS_TOL {
                return;
            }
            remaining[leaf] = 0.0;
            remaining[other] -= flow;
            degree[leaf] -= 1;
            degree[other] -= 1;
            alive[e] = false;
            total += flow * self.cost.get(i, j);
        }
        if remaining.iter().all(|r| r.abs() <= 1e-9) && total < self.best {
            self.best = total;
        }
    }
}

/// Minimum of `Σ c_ij x_ij` over couplings of `u` and `v`.
pub fn exact_emd_oracle(cost: &Matrix, u: &[f64], v: &[f64]) -> Result<f64> {
    let (n, m) = cost.shape();
    if n * m > EXACT_MAX_CELLS {
        return Err(Error::Size {
            n,
            m,
            cap: EXACT_MAX_CELLS,
        });
    }
    if u.len() != n || v.len() != m {
        return Err(Error::Dimension {
            op: "exact_emd_oracle",
            left: (n, m),
            right: (u.len(), v.len()),
        });
    }
    check_marginal("row", u)?;
    check_marginal("column", v)?;
    let mut search = TreeSearch {
        cost,
        u,
        v,
        n,
        m,
        parent: (0..n + m).collect(),
        size: vec![1; n + m],
        undo: Vec::new(),
        chosen: Vec::new(),
        best: f64::INFINITY,
        bases: 0,
    };
    search.search(0, n + m - 1);
    if search.best.is_finite() {
        Ok(search.best)
    } else {
        Err(Error::Numeric("no feasible basis found".into()))
    }
}
