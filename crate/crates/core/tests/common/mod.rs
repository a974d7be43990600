//! Reference implementations used only by tests. None of these call the
//! operators they check; objectives are recomputed from scratch.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use patchrank::rng::SeededRng;
use patchrank::{GroupAxis, MemoryFrame, Params, RankingInstance, SolverState};

pub fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

pub fn random_vector(rng: &mut SeededRng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.normal())
}

/// Sparse-ish random matrix: each entry is zeroed with probability 1/3 so
/// that thresholds hit exact zeros and whole groups.
pub fn random_test_matrix(rng: &mut SeededRng, max_dim: usize) -> DMatrix<f64> {
    let rows = 1 + rng.below(max_dim);
    let cols = 1 + rng.below(max_dim);
    let scale = rng.uniform_range(0.1, 3.0);
    DMatrix::from_fn(rows, cols, |_, _| if rng.below(3) == 0 { 0.0 } else { scale * rng.normal() })
}

// ---------------------------------------------------------------- norms

pub fn abs_sum(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

pub fn groups(rows: usize, cols: usize, axis: GroupAxis) -> Vec<Vec<(usize, usize)>> {
    match axis {
        GroupAxis::Rows => (0..rows).map(|i| (0..cols).map(|j| (i, j)).collect()).collect(),
        GroupAxis::Columns => (0..cols).map(|j| (0..rows).map(|i| (i, j)).collect()).collect(),
    }
}

pub fn singletons(rows: usize, cols: usize) -> Vec<Vec<(usize, usize)>> {
    (0..cols).flat_map(|j| (0..rows).map(move |i| vec![(i, j)])).collect()
}

pub fn group_norm_sum(m: &DMatrix<f64>, groups: &[Vec<(usize, usize)>]) -> f64 {
    groups
        .iter()
        .map(|g| g.iter().map(|&ix| m[ix] * m[ix]).sum::<f64>().sqrt())
        .sum()
}

/// Sum of singular values. Evaluation only: the Gram-eigenvalue route loses
/// about 1e-8 per vanishing singular value, too coarse for optimality checks.
pub fn trace_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().sum()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// `0.5 ||x - m||^2 + tau * penalty(x)`.
pub fn prox_objective(x: &DMatrix<f64>, m: &DMatrix<f64>, tau: f64, penalty: f64) -> f64 {
    0.5 * (x - m).norm_squared() + tau * penalty
}

// ---------------------------------------------------------------- prox oracles

fn project_cone(x: &mut [f64], t: &mut f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= *t {
        return;
    }
    if norm <= -*t {
        x.iter_mut().for_each(|v| *v = 0.0);
        *t = 0.0;
        return;
    }
    let a = 0.5 * (norm + *t);
    x.iter_mut().for_each(|v| *v *= a / norm);
    *t = a;
}

fn project_epigraph(x: &mut DMatrix<f64>, t: &mut [f64], groups: &[Vec<(usize, usize)>]) {
    for (g, tg) in groups.iter().zip(t.iter_mut()) {
        let mut vals: Vec<f64> = g.iter().map(|&ix| x[ix]).collect();
        project_cone(&mut vals, tg);
        for (&ix, v) in g.iter().zip(vals) {
            x[ix] = v;
        }
    }
}

/// Accelerated projected gradient on the epigraph form
/// `min 0.5 ||X - M||^2 + tau sum_g t_g  s.t. ||X_g|| <= t_g`.
pub fn group_prox_oracle(m: &DMatrix<f64>, tau: f64, groups: &[Vec<(usize, usize)>], iters: usize) -> DMatrix<f64> {
    let step = 0.5;
    let mut x = DMatrix::zeros(m.nrows(), m.ncols());
    let mut t = vec![0.0; groups.len()];
    let (mut xp, mut tp) = (x.clone(), t.clone());
    let mut momentum = 1.0f64;
    for _ in 0..iters {
        let next_m = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_m;
        let yx = &x + (&x - &xp) * beta;
        let yt: Vec<f64> = t.iter().zip(&tp).map(|(a, b)| a + beta * (a - b)).collect();
        let mut nx = &yx - (&yx - m) * step;
        let mut nt: Vec<f64> = yt.iter().map(|v| v - step * tau).collect();
        project_epigraph(&mut nx, &mut nt, groups);
        xp = std::mem::replace(&mut x, nx);
        tp = std::mem::replace(&mut t, nt);
        momentum = next_m;
    }
    x
}

fn project_psd(p: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(p.clone());
    let clipped = eig.eigenvalues.map(|e| e.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Accelerated projected gradient over the semidefinite lifting of the trace norm:
/// `min 0.5 ||P12 - M||^2 + (tau / 2) tr P  s.t. P = [[W1, P12], [P12^T, W2]] >= 0`.
pub fn trace_prox_oracle(m: &DMatrix<f64>, tau: f64, iters: usize) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let k = r + c;
    let step = 1.0;
    let grad = |p: &DMatrix<f64>| {
        let mut g = DMatrix::identity(k, k) * (0.5 * tau);
        let d = (p.view((0, r), (r, c)) - m) * 0.5;
        g.view_mut((0, r), (r, c)).copy_from(&d);
        g.view_mut((r, 0), (c, r)).copy_from(&d.transpose());
        g
    };
    let mut p = DMatrix::zeros(k, k);
    let mut pp = p.clone();
    let mut momentum = 1.0f64;
    for _ in 0..iters {
        let next_m = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let y = &p + (&p - &pp) * ((momentum - 1.0) / next_m);
        let next = project_psd(&(&y - grad(&y) * step));
        pp = std::mem::replace(&mut p, next);
        momentum = next_m;
    }
    p.view((0, r), (r, c)).into_owned()
}

/// Projected gradient for `min 0.5 ||X - M||^2  s.t. X >= 0`.
pub fn nonneg_oracle(m: &DMatrix<f64>, iters: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(m.nrows(), m.ncols());
    for _ in 0..iters {
        x = (&x - (&x - m) * 0.5).map(|v| v.max(0.0));
    }
    x
}

// ---------------------------------------------------------------- first-order conditions

/// Worst violation of `(M - X) / tau in subdifferential of sum_g ||X_g||`.
pub fn group_optimality_gap(x: &DMatrix<f64>, m: &DMatrix<f64>, tau: f64, groups: &[Vec<(usize, usize)>]) -> f64 {
    let mut worst = 0.0f64;
    for g in groups {
        let norm = g.iter().map(|&ix| x[ix] * x[ix]).sum::<f64>().sqrt();
        if norm > 0.0 {
            for &ix in g {
                worst = worst.max((m[ix] - x[ix] - tau * x[ix] / norm).abs());
            }
        } else {
            let r = g.iter().map(|&ix| m[ix] * m[ix]).sum::<f64>().sqrt();
            worst = worst.max(r - tau);
        }
    }
    worst
}

/// For `G = (M - X) / tau`: spectral norm excess over 1 and the gap in
/// `<G, X> = ||X||_*`, both scaled by `tau`.
pub fn trace_optimality_gap(x: &DMatrix<f64>, m: &DMatrix<f64>, tau: f64) -> f64 {
    let g = (m - x) / tau;
    let excess = (spectral_norm(&g) - 1.0).max(0.0);
    let alignment = (g.dot(x) - trace_norm(x)).abs();
    tau * excess.max(alignment / (1.0 + trace_norm(x)))
}

/// Worst KKT violation of the nonnegative projection.
pub fn nonneg_optimality_gap(x: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    x.iter()
        .zip(m.iter())
        .map(|(&a, &b)| {
            let mult = a - b;
            (-a).max(-mult).max((a * mult).abs()).max(0.0)
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- ranking data

pub fn random_instance(rng: &mut SeededRng, p: usize, n: usize, memory: usize) -> RankingInstance {
    let features = random_matrix(rng, p, n, 1.0);
    let mut queries = DVector::zeros(n);
    queries[rng.below(n)] = 1.0;
    for i in 0..n {
        if rng.below(4) == 0 {
            queries[i] = 1.0;
        }
    }
    let mut prior = DMatrix::from_fn(n, n, |_, _| if rng.below(3) == 0 { rng.uniform() } else { 0.0 });
    prior = (&prior + prior.transpose()) * 0.5;
    prior.fill_diagonal(0.0);
    let weights = [0.3, 0.3, 0.2];
    let memory = (0..memory)
        .map(|k| MemoryFrame {
            features: random_matrix(rng, p, n, 1.0),
            ranking: DVector::from_fn(n, |_, _| rng.uniform()),
            weight: weights[k % 3],
        })
        .collect();
    RankingInstance::new(features, queries, prior, memory, Params::default()).unwrap()
}

pub fn random_state(rng: &mut SeededRng, p: usize, n: usize) -> SolverState {
    let mut s = SolverState::zeros(p, n, rng.uniform_range(0.05, 5.0));
    s.graph = random_matrix(rng, n, n, 0.5);
    s.group_error = random_matrix(rng, p, n, 0.3);
    s.l1_split = random_matrix(rng, n, n, 0.5);
    s.lowrank_split = random_matrix(rng, n, n, 0.5);
    s.nonneg_split = random_matrix(rng, n, n, 0.5).map(f64::abs);
    s.ranking = random_vector(rng, n, 1.0);
    s.predictor = random_vector(rng, p, 1.0);
    s.bias = rng.normal();
    s.dual_recon = random_matrix(rng, p, n, 0.5);
    s.dual_l1 = random_matrix(rng, n, n, 0.5);
    s.dual_lowrank = random_matrix(rng, n, n, 0.5);
    s.dual_nonneg = random_matrix(rng, n, n, 0.5);
    s
}

pub fn pairwise(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(v.len(), v.len(), |i, j| (v[i] - v[j]).powi(2))
}

// ---------------------------------------------------------------- block subproblems

pub fn lowrank_subproblem(s: &SolverState, params: &Params, b: &DMatrix<f64>) -> f64 {
    let mu = s.penalty;
    params.gamma * trace_norm(b) + 0.5 * mu * (&s.graph - b + &s.dual_lowrank / mu).norm_squared()
}

pub fn nonneg_subproblem(s: &SolverState, params: &Params, a: &DMatrix<f64>) -> f64 {
    let mu = s.penalty;
    let r = pairwise(&s.ranking);
    0.5 * params.beta2 * a.dot(&r) + 0.5 * mu * (&s.graph - a + &s.dual_nonneg / mu).norm_squared()
}

/// Prediction loss of `(w, b)` over the current frame and memory, plus the ridge.
pub fn prediction_subproblem(inst: &RankingInstance, v: &DVector<f64>, w: &DVector<f64>, b: f64) -> f64 {
    let fit = |x: &DMatrix<f64>, target: &DVector<f64>| (x.transpose() * w).add_scalar(b) - target;
    let mut total = inst.params.delta * fit(&inst.features, v).norm_squared();
    for m in &inst.memory {
        total += m.weight * fit(&m.features, &m.ranking).norm_squared();
    }
    total + inst.params.ridge * w.norm_squared()
}

/// The uncorrected forms of the four updates.
pub mod uncorrected {
    use super::*;

    pub fn lowrank(s: &SolverState, inst: &RankingInstance) -> DMatrix<f64> {
        let mu = s.penalty;
        let arg = &inst.features - &inst.features * &s.graph + &s.dual_lowrank / mu;
        patchrank::prox::svt(&arg, inst.params.gamma / mu).unwrap()
    }

    pub fn nonneg(s: &SolverState, inst: &RankingInstance) -> DMatrix<f64> {
        let mu = s.penalty;
        let arg = &s.graph + &s.dual_nonneg / mu - pairwise(&s.ranking) * (inst.params.beta1 / mu);
        arg.map(|x| x.max(0.0))
    }

    fn normal_matrix(inst: &RankingInstance) -> DMatrix<f64> {
        let p = inst.features.nrows();
        let x = &inst.features;
        let mut lhs = x * x.transpose() * inst.params.delta + DMatrix::identity(p, p) * inst.params.ridge;
        for m in &inst.memory {
            lhs += &m.features * m.features.transpose() * m.weight;
        }
        lhs
    }

    pub fn predictor(s: &SolverState, inst: &RankingInstance) -> DVector<f64> {
        let n = inst.features.ncols();
        let ones_b = DVector::from_element(n, s.bias);
        let mut rhs = &inst.features * (&ones_b - &s.ranking) * inst.params.delta;
        for m in &inst.memory {
            rhs += &m.features * (&ones_b - &m.ranking) * m.weight;
        }
        normal_matrix(inst).lu().solve(&rhs).unwrap()
    }

    pub fn bias(s: &SolverState, inst: &RankingInstance) -> f64 {
        let w = &s.predictor;
        let mut num = inst.params.delta * ((inst.features.transpose() * w) - &s.ranking).sum();
        let mut den = inst.params.delta;
        for m in &inst.memory {
            num += m.weight * ((m.features.transpose() * w) - &m.ranking).sum();
            den += m.weight;
        }
        -num / den
    }
}

// ---------------------------------------------------------------- fixed-graph quadratic oracle

/// Global minimizer of
/// `beta2 * 0.5 sum_ij S_ij (v_i - v_j)^2 + delta ||X^T w + 1 b - v||^2 + lambda ||v - y||^2 + ridge ||w||^2`
/// as one stacked least-squares problem in `(v, w, b)`, solved by SVD.
pub fn fixed_graph_oracle(inst: &RankingInstance) -> (DVector<f64>, DVector<f64>, f64) {
    let (p, n) = inst.features.shape();
    let prm = &inst.params;
    let vars = n + p + 1;
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let wgt = 0.5 * (inst.prior[(i, j)] + inst.prior[(j, i)]);
            if wgt > 0.0 {
                let c = (prm.beta2 * wgt).sqrt();
                rows.push((vec![(i, c), (j, -c)], 0.0));
            }
        }
    }
    let sd = prm.delta.sqrt();
    for i in 0..n {
        let mut r: Vec<(usize, f64)> = (0..p).map(|k| (n + k, sd * inst.features[(k, i)])).collect();
        r.push((n + p, sd));
        r.push((i, -sd));
        rows.push((r, 0.0));
    }
    let sl = prm.lambda.sqrt();
    for i in 0..n {
        rows.push((vec![(i, sl)], sl * inst.queries[i]));
    }
    let sr = prm.ridge.sqrt();
    for k in 0..p {
        rows.push((vec![(n + k, sr)], 0.0));
    }
    let mut a = DMatrix::zeros(rows.len(), vars);
    let mut rhs = DVector::zeros(rows.len());
    for (r, (entries, target)) in rows.iter().enumerate() {
        for &(c, val) in entries {
            a[(r, c)] += val;
        }
        rhs[r] = *target;
    }
    let sol = a.svd(true, true).solve(&rhs, 1e-14).unwrap();
    (sol.rows(0, n).into_owned(), sol.rows(n, p).into_owned(), sol[n + p])
}
