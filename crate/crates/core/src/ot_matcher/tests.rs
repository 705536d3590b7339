use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::random_matrix;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows)
}

fn tight() -> SinkhornConfig {
    SinkhornConfig {
        epsilon: 0.05,
        max_iters: 100_000,
        marginal_tol: 1e-9,
    }
}

/// Brute-force assignment optimum for square uniform problems.
fn best_permutation_cost(c: &Matrix) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, c: &Matrix, best: &mut f64) {
        let n = perm.len();
        if k == n {
            let s: f64 = (0..n).map(|i| c.get(i, perm[i])).sum();
            *best = best.min(s / n as f64);
            return;
        }
        for i in k..n {
            perm.swap(k, i);
            permute(k + 1, perm, c, best);
            perm.swap(k, i);
        }
    }
    let mut best = f64::INFINITY;
    permute(0, &mut (0..c.rows()).collect(), c, &mut best);
    best
}

#[test]
fn cosine_cost_cases() {
    let c = cosine_cost(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]])).unwrap();
    assert_eq!(c.values, m(&[&[0.0, 1.0, 2.0]]));
    assert!(c.zero_parts.is_empty());

    let c = cosine_cost(&m(&[&[0.0, 0.0]]), &m(&[&[3.0, 1.0]])).unwrap();
    assert_eq!(c.values, m(&[&[1.0]]));
    assert_eq!(c.zero_parts, vec![0]);

    assert!(cosine_cost(&Matrix::zeros(1, 2), &Matrix::zeros(1, 3)).is_err());
}

#[test]
fn uniform_marginal_cases() {
    let (u, v) = uniform_marginals(4, 1);
    assert_eq!(u, vec![0.25; 4]);
    assert_eq!(v, vec![1.0]);
    for (n, k) in [(3, 7), (5, 2), (9, 9)] {
        let (u, v) = uniform_marginals(n, k);
        assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forced_single_cell_plan() {
    let plan = sinkhorn(&m(&[&[0.7]]), &[1.0], &[1.0], &SinkhornConfig::default()).unwrap();
    assert_eq!(plan.flow, m(&[&[1.0]]));
    assert!((plan.cost - 0.7).abs() < 1e-15);
    assert!(plan.converged);
}

#[test]
fn constant_cost_gives_product_coupling() {
    let u = [0.2, 0.3, 0.5];
    let v = [0.6, 0.4];
    let plan = sinkhorn(&Matrix::filled(3, 2, 0.8), &u, &v, &SinkhornConfig::default()).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            assert!((plan.flow.get(i, j) - u[i] * v[j]).abs() < 1e-9);
        }
    }
}

#[test]
fn anti_diagonal_cost_is_near_zero() {
    let c = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
    let cfg = SinkhornConfig {
        epsilon: 0.01,
        ..SinkhornConfig::default()
    };
    let (u, v) = uniform_marginals(2, 2);
    let plan = sinkhorn(&c, &u, &v, &cfg).unwrap();
    let exact = exact_emd_oracle(&c, &u, &v).unwrap();
    assert_eq!(exact, 0.0);
    assert!((plan.cost - exact).abs() < 5e-3);
}

#[test]
fn rejects_bad_inputs() {
    let c = Matrix::zeros(2, 2);
    assert!(sinkhorn(&c, &[0.5, 0.5], &[1.0, 0.0], &SinkhornConfig::default()).is_err());
    assert!(sinkhorn(&c, &[0.5, 0.6], &[0.5, 0.5], &SinkhornConfig::default()).is_err());
    let bad = SinkhornConfig {
        epsilon: 0.0,
        ..SinkhornConfig::default()
    };
    assert!(sinkhorn(&c, &[0.5, 0.5], &[0.5, 0.5], &bad).is_err());
}

#[test]
fn non_convergence_is_flagged_but_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = random_matrix(6, 7, 0.0, 2.0, &mut rng);
    let (u, v) = uniform_marginals(6, 7);
    let cfg = SinkhornConfig {
        epsilon: 0.005,
        max_iters: 2,
        marginal_tol: 1e-12,
    };
    let plan = sinkhorn(&c, &u, &v, &cfg).unwrap();
    assert!(!plan.converged);
    assert_eq!(plan.iterations, 2);
    assert!(plan.max_marginal_violation() < 1e-12);
    assert!(plan.flow.data().iter().all(|&x| x >= 0.0));
}

#[test]
fn small_epsilon_stays_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = random_matrix(4, 5, 0.0, 2.0, &mut rng);
    let (u, v) = uniform_marginals(4, 5);
    let cfg = SinkhornConfig {
        epsilon: 1e-4,
        max_iters: 50_000,
        marginal_tol: 1e-9,
    };
    let plan = sinkhorn(&c, &u, &v, &cfg).unwrap();
    assert!(plan.flow.is_finite());
    let exact = exact_emd_oracle(&c, &u, &v).unwrap();
    assert!(plan.cost - exact < 1e-4 * (1.0 + 20f64.ln()) + 1e-9);
}

#[test]
fn oracle_cases() {
    assert_eq!(exact_emd_oracle(&m(&[&[0.3]]), &[1.0], &[1.0]).unwrap(), 0.3);
    let v = exact_emd_oracle(&m(&[&[1.0, 2.0], &[3.0, 4.0]]), &[0.5, 0.5], &[0.5, 0.5]).unwrap();
    assert!((v - 2.5).abs() < 1e-12);
    let err = exact_emd_oracle(&Matrix::zeros(5, 6), &[0.2; 5], &[1.0 / 6.0; 6]);
    assert!(matches!(err, Err(Error::Size { .. })));
}

#[test]
fn oracle_matches_assignment_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..=5 {
        for _ in 0..4 {
            let c = random_matrix(n, n, 0.0, 2.0, &mut rng);
            let (u, v) = uniform_marginals(n, n);
            let exact = exact_emd_oracle(&c, &u, &v).unwrap();
            assert!((exact - best_permutation_cost(&c)).abs() < 1e-12);
        }
    }
}

#[test]
fn oracle_handles_non_uniform_marginals() {
    // the cheap column can only absorb 0.25, the rest must pay 1
    let c = m(&[&[0.0, 1.0], &[0.0, 1.0]]);
    let v = exact_emd_oracle(&c, &[0.5, 0.5], &[0.25, 0.75]).unwrap();
    assert!((v - 0.75).abs() < 1e-12);
}

#[test]
fn similarity_extremes() {
    let cfg = SinkhornConfig::default();
    let p = m(&[&[1.0, 2.0]]);
    assert!(emd_similarity(&p, &p, &cfg).unwrap().similarity.abs() < 1e-12);
    let q = m(&[&[-1.0, -2.0]]);
    assert!((emd_similarity(&p, &q, &cfg).unwrap().similarity + 2.0).abs() < 1e-12);
    assert!(chamfer_similarity(&p, &p).unwrap().similarity.abs() < 1e-12);
}

#[test]
fn similarity_within_entropic_bound_of_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = tight();
    for _ in 0..10 {
        let parts = random_matrix(3, 5, -1.0, 1.0, &mut rng);
        let words = random_matrix(4, 5, -1.0, 1.0, &mut rng);
        let score = emd_similarity(&parts, &words, &cfg).unwrap();
        let (u, v) = uniform_marginals(3, 4);
        let exact = exact_emd_oracle(&score.cost.values, &u, &v).unwrap();
        let gap = -score.similarity - exact;
        assert!(gap >= -1e-9 && gap <= cfg.epsilon * (1.0 + 12f64.ln()), "gap {gap}");
    }
}

#[test]
fn chamfer_anti_diagonal() {
    let parts = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let words = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
    let s = chamfer_similarity(&parts, &words).unwrap();
    assert_eq!(s.cost.values, m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    assert_eq!(s.similarity, 0.0);
}

#[test]
fn swapping_sides_transposes_plan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = tight();
    let parts = random_matrix(3, 4, -1.0, 1.0, &mut rng);
    let words = random_matrix(5, 4, -1.0, 1.0, &mut rng);
    let a = emd_similarity(&parts, &words, &cfg).unwrap();
    let b = emd_similarity(&words, &parts, &cfg).unwrap();
    assert!((a.similarity - b.similarity).abs() < 1e-8);
    let bt = b.plan.flow.transpose();
    for (x, y) in a.plan.flow.data().iter().zip(bt.data()) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn cost_invariant_to_positive_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let parts = random_matrix(3, 4, -1.0, 1.0, &mut rng);
    let words = random_matrix(2, 4, -1.0, 1.0, &mut rng);
    let mut scaled = parts.clone();
    scaled.row_mut(1).iter_mut().for_each(|x| *x *= 4.0);
    let a = cosine_cost(&parts, &words).unwrap().values;
    let b = cosine_cost(&scaled, &words).unwrap().values;
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= 4.0 * f64::EPSILON);
    }
}

fn fd_similarity_grad(parts: &Matrix, words: &Matrix, cfg: &SinkhornConfig, h: f64) -> (Matrix, Matrix) {
    let r = |p: &Matrix, w: &Matrix| -emd_similarity(p, w, cfg).unwrap().plan.cost;
    let mut gp = Matrix::zeros(parts.rows(), parts.cols());
    let mut gw = Matrix::zeros(words.rows(), words.cols());
    for k in 0..parts.len() {
        let (mut a, mut b) = (parts.clone(), parts.clone());
        a.data_mut()[k] += h;
        b.data_mut()[k] -= h;
        gp.data_mut()[k] = (r(&a, words) - r(&b, words)) / (2.0 * h);
    }
    for k in 0..words.len() {
        let (mut a, mut b) = (words.clone(), words.clone());
        a.data_mut()[k] += h;
        b.data_mut()[k] -= h;
        gw.data_mut()[k] = (r(parts, &a) - r(parts, &b)) / (2.0 * h);
    }
    (gp, gw)
}

fn max_rel(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[test]
fn implicit_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = tight();
    for _ in 0..5 {
        let parts = random_matrix(2, 4, -1.0, 1.0, &mut rng);
        let words = random_matrix(3, 4, -1.0, 1.0, &mut rng);
        let (gp, gw) = emd_gradient(&parts, &words, &cfg, 1.0, PlanGradient::Implicit).unwrap();
        let (np, nw) = fd_similarity_grad(&parts, &words, &cfg, 1e-6);
        assert!(max_rel(&gp, &np) < 1e-3 && max_rel(&gw, &nw) < 1e-3);
    }
}

#[test]
fn single_pair_gradient_is_cosine_gradient() {
    let p = m(&[&[1.0, 2.0, -0.5]]);
    let w = m(&[&[0.3, -1.0, 2.0]]);
    let (gp, _) = emd_gradient(&p, &w, &SinkhornConfig::default(), 1.0, PlanGradient::Implicit).unwrap();
    let (ge, _) = emd_gradient(&p, &w, &SinkhornConfig::default(), 1.0, PlanGradient::Envelope).unwrap();
    // d cos / dp = w/(|p||w|) - cos p/|p|^2
    let (pn, wn) = (5.25f64.sqrt(), 5.09f64.sqrt());
    let dot = 0.3 - 2.0 - 1.0;
    for k in 0..3 {
        let want = w.get(0, k) / (pn * wn) - dot / (pn * wn) * p.get(0, k) / (pn * pn);
        assert!((gp.get(0, k) - want).abs() < 1e-12);
        assert!((ge.get(0, k) - want).abs() < 1e-12);
    }
}

#[test]
fn zero_upstream_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let parts = random_matrix(2, 3, -1.0, 1.0, &mut rng);
    let words = random_matrix(4, 3, -1.0, 1.0, &mut rng);
    let (gp, gw) = emd_gradient(&parts, &words, &SinkhornConfig::default(), 0.0, PlanGradient::Implicit).unwrap();
    assert_eq!(gp.max_abs() + gw.max_abs(), 0.0);
}

#[test]
fn envelope_is_gradient_of_regularized_objective() {
    // -(f·u + g·v) is minus the entropic OT value; its cost gradient is -P
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = tight();
    let c = random_matrix(3, 4, 0.0, 2.0, &mut rng);
    let (u, v) = uniform_marginals(3, 4);
    let dual = |c: &Matrix| {
        let p = sinkhorn(c, &u, &v, &cfg).unwrap();
        -(p.f.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() + p.g.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
    };
    let plan = sinkhorn(&c, &u, &v, &cfg).unwrap();
    let env = plan_cost_gradient(&c, &plan, PlanGradient::Envelope).unwrap();
    for k in 0..c.len() {
        let (mut a, mut b) = (c.clone(), c.clone());
        a.data_mut()[k] += 1e-6;
        b.data_mut()[k] -= 1e-6;
        let fd = (dual(&a) - dual(&b)) / 2e-6;
        assert!((fd - env.data()[k]).abs() < 1e-6, "{fd} vs {}", env.data()[k]);
    }
}

#[test]
fn chamfer_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = SinkhornConfig::default();
    let parts = random_matrix(3, 4, -1.0, 1.0, &mut rng);
    let words = random_matrix(4, 4, -1.0, 1.0, &mut rng);
    let (_, gp, _) = Matcher::Chamfer
        .similarity_with_grad(&parts, &words, &cfg, PlanGradient::Implicit)
        .unwrap();
    for k in 0..parts.len() {
        let (mut a, mut b) = (parts.clone(), parts.clone());
        a.data_mut()[k] += 1e-7;
        b.data_mut()[k] -= 1e-7;
        let fd = (chamfer_similarity(&a, &words).unwrap().similarity
            - chamfer_similarity(&b, &words).unwrap().similarity)
            / 2e-7;
        assert!((fd - gp.data()[k]).abs() < 1e-6);
    }
}

#[test]
fn scores_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SinkhornConfig::default();
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let k = rng.random_range(1..6);
        let parts = random_matrix(n, 3, -1.0, 1.0, &mut rng);
        let words = random_matrix(k, 3, -1.0, 1.0, &mut rng);
        for matcher in [Matcher::Emd, Matcher::Chamfer] {
            let s = matcher.similarity(&parts, &words, &cfg).unwrap();
            assert!((-2.0..=0.0).contains(&s));
        }
    }
}
