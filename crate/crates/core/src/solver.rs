//! Augmented Lagrange multiplier solver for the relaxed ranking model.
//!
//! Each update is the exact minimizer of its block subproblem with all other
//! variables fixed. Four closed forms differ from the commonly quoted ones:
//!
//! * `B = svt(Z + Y3/mu, gamma/mu)`: the argument is the split target of `Z = B`.
//! * `A = [Z + Y4/mu - beta2/(2 mu) R]_+`: the smoothness weight enters as `beta2 / 2`.
//! * `w` solves the normal equations with right-hand side `sum X_k (v_k - 1 b)`.
//! * `b` divides by `n * (sum delta_k + delta)`, since `1^T 1 = n`.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph;
use crate::model::{self, MemoryFrame, Params, RankingInstance, Residuals, SolverState};
use crate::prox::{self, DenseMatrix};

/// Which parts of the model participate in a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    /// Graph learning plus temporal memory.
    #[default]
    #[serde(rename = "full")]
    Full,
    /// Memory terms dropped.
    #[serde(rename = "noT")]
    NoTemporal,
    /// Graph frozen to the prior; only the ranking, predictor and bias are updated.
    #[serde(rename = "noG")]
    NoGraph,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "noT" | "not" | "no-temporal" => Ok(Mode::NoTemporal),
            "noG" | "nog" | "no-graph" => Ok(Mode::NoGraph),
            _ => Err(Error::Param(format!("unknown mode {s:?}, expected full|noT|noG"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::NoTemporal => "noT",
            Mode::NoGraph => "noG",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Penalty used during this iteration.
    pub mu: f64,
    pub objective: f64,
    pub residuals: Residuals,
    /// Largest elementwise change of any primal variable.
    pub max_delta: f64,
}

#[derive(Debug, Clone)]
pub struct RankingResult {
    pub state: SolverState,
    pub iterations: usize,
    /// Primal changes and all constraint residuals are at most `eps_conv`.
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl RankingResult {
    /// Foreground weights `v`.
    pub fn ranking(&self) -> &DVector<f64> {
        &self.state.ranking
    }

    pub fn predictor(&self) -> &DVector<f64> {
        &self.state.predictor
    }

    pub fn bias(&self) -> f64 {
        self.state.bias
    }

    pub fn graph(&self) -> &DenseMatrix {
        &self.state.graph
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        write_trace_csv(&self.trace, out)
    }
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "iter,mu,objective,r1,r2,r3,r4,max_delta")?;
    for row in trace {
        let r = row.residuals;
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            row.iter, row.mu, row.objective, r.recon, r.l1, r.lowrank, r.nonneg, row.max_delta
        )?;
    }
    Ok(())
}

/// `U = soft(Z + Y2/mu, alpha/mu)`.
pub fn update_l1_split(state: &SolverState, params: &Params) -> DenseMatrix {
    let mu = state.penalty;
    let target = &state.graph + &state.dual_l1 / mu;
    let tau = params.alpha / mu;
    target.map(|x| prox::shrink_scalar(x, tau))
}

/// `B = svt(Z + Y3/mu, gamma/mu)`.
pub fn update_lowrank_split(state: &SolverState, params: &Params) -> Result<DenseMatrix> {
    let mu = state.penalty;
    prox::svt(&(&state.graph + &state.dual_lowrank / mu), params.gamma / mu).map_err(|e| match e {
        Error::Numeric { detail, .. } => Error::Numeric { iteration: state.iter, variable: "B", detail },
        other => other,
    })
}

/// `A = [Z + Y4/mu - beta2/(2 mu) R]_+` with `R_ij = (v_i - v_j)^2`.
pub fn update_nonneg_split(state: &SolverState, params: &Params, pairwise: &DenseMatrix) -> DenseMatrix {
    let mu = state.penalty;
    let target = &state.graph + &state.dual_nonneg / mu - pairwise * (params.beta2 / (2.0 * mu));
    prox::nonneg_project(&target)
}

/// `E = l21_shrink(X - XZ + Y1/mu, 1/mu)`.
pub fn update_group_error(state: &SolverState, inst: &RankingInstance) -> DenseMatrix {
    let mu = state.penalty;
    let x = &inst.features;
    let target = x - x * &state.graph + &state.dual_recon / mu;
    prox::l21_shrink(&target, 1.0 / mu, inst.params.group_axis).expect("1/mu is a valid threshold")
}

/// Solves `(X^T X + (3 + 2 beta1/mu) I) Z = X^T X - X^T E + B + A + U + (2 beta1/mu) S
/// + (X^T Y1 - Y2 - Y3 - Y4)/mu`.
pub fn update_graph(state: &SolverState, inst: &RankingInstance) -> Result<DenseMatrix> {
    let mu = state.penalty;
    let x = &inst.features;
    let n = inst.len();
    let fit = 2.0 * inst.params.beta1 / mu;
    let gram = x.tr_mul(x);
    let lhs = &gram + DenseMatrix::identity(n, n) * (3.0 + fit);
    let rhs = &gram - x.tr_mul(&state.group_error)
        + &state.lowrank_split
        + &state.nonneg_split
        + &state.l1_split
        + &inst.prior * fit
        + (x.tr_mul(&state.dual_recon) - &state.dual_l1 - &state.dual_lowrank - &state.dual_nonneg) / mu;
    let chol = lhs.cholesky().ok_or_else(|| Error::Numeric {
        iteration: state.iter,
        variable: "Z",
        detail: "graph system is not positive definite".into(),
    })?;
    Ok(chol.solve(&rhs))
}

/// Solves `((delta + lambda) I + beta2 (D - Z_sym)) v = lambda y + delta (X^T w + 1 b)`.
pub fn update_ranking(state: &SolverState, inst: &RankingInstance) -> Result<DVector<f64>> {
    let p = &inst.params;
    let n = inst.len();
    let lap = graph::sym_laplacian(&state.graph)?;
    let lhs = lap * p.beta2 + DenseMatrix::identity(n, n) * (p.delta + p.lambda);
    let prediction = inst.features.tr_mul(&state.predictor).add_scalar(state.bias);
    let rhs = &inst.queries * p.lambda + prediction * p.delta;
    solve_symmetric(lhs, &rhs).ok_or_else(|| Error::Numeric {
        iteration: state.iter,
        variable: "v",
        detail: "ranking system is singular".into(),
    })
}

/// Solves `(delta X X^T + sum delta_k X_k X_k^T + ridge I) w
/// = delta X (v - 1 b) + sum delta_k X_k (v_k - 1 b)`.
pub fn update_predictor(state: &SolverState, inst: &RankingInstance, memory: &[MemoryFrame]) -> Result<DVector<f64>> {
    let p = &inst.params;
    let dim = inst.dim();
    let b = state.bias;
    let x = &inst.features;
    let mut lhs = (x * x.transpose()) * p.delta + DenseMatrix::identity(dim, dim) * p.ridge;
    let mut rhs = x * state.ranking.add_scalar(-b) * p.delta;
    for m in memory {
        lhs += (&m.features * m.features.transpose()) * m.weight;
        rhs += &m.features * m.ranking.add_scalar(-b) * m.weight;
    }
    solve_symmetric(lhs, &rhs).ok_or_else(|| Error::Numeric {
        iteration: state.iter,
        variable: "w",
        detail: "predictor normal equations are singular".into(),
    })
}

/// `b = -[sum delta_k 1^T (X_k^T w - v_k) + delta 1^T (X^T w - v)] / (n (sum delta_k + delta))`.
pub fn update_bias(state: &SolverState, inst: &RankingInstance, memory: &[MemoryFrame]) -> f64 {
    let p = &inst.params;
    let n = inst.len() as f64;
    let gap = |x: &DenseMatrix, v: &DVector<f64>| (x.tr_mul(&state.predictor) - v).sum();
    let mut num = p.delta * gap(&inst.features, &state.ranking);
    let mut den = p.delta;
    for m in memory {
        num += m.weight * gap(&m.features, &m.ranking);
        den += m.weight;
    }
    -num / (n * den)
}

/// Dual ascent on all four constraints, then `mu = min(mu_max, rho mu)`.
pub fn step_multipliers(state: &mut SolverState, inst: &RankingInstance) {
    let mu = state.penalty;
    let x = &inst.features;
    let z = &state.graph;
    state.dual_recon += (x - x * z - &state.group_error) * mu;
    state.dual_l1 += (z - &state.l1_split) * mu;
    state.dual_lowrank += (z - &state.lowrank_split) * mu;
    state.dual_nonneg += (z - &state.nonneg_split) * mu;
    state.penalty = (inst.params.rho * mu).min(inst.params.mu_max);
}

fn solve_symmetric(lhs: DenseMatrix, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = lhs.clone().cholesky() {
        return Some(chol.solve(rhs));
    }
    lhs.lu().solve(rhs)
}

/// Runs the ALM iteration on `inst` until the primal variables stop moving and
/// all constraints hold to `eps_conv`, or `max_iter` is reached.
pub fn solve(inst: &RankingInstance, mode: Mode) -> Result<RankingResult> {
    inst.validate()?;
    let params = &inst.params;
    let memory: &[MemoryFrame] = match mode {
        Mode::NoTemporal => &[],
        _ => &inst.memory,
    };
    let (p, n) = inst.features.shape();
    let mut state = SolverState::zeros(p, n, params.mu0);
    if mode == Mode::NoGraph {
        // a feasible, frozen split: Z = U = B = A = S, E = X - XS
        state.graph = inst.prior.clone();
        state.l1_split = inst.prior.clone();
        state.lowrank_split = inst.prior.clone();
        state.nonneg_split = inst.prior.clone();
        state.group_error = &inst.features - &inst.features * &inst.prior;
    }

    let mut trace = Vec::with_capacity(params.max_iter);
    let mut converged = false;
    while state.iter < params.max_iter {
        let iter = state.iter;
        let mu = state.penalty;
        let prev = state.clone();

        if mode != Mode::NoGraph {
            state.l1_split = update_l1_split(&state, params);
            debug_check(iter, "U", subproblem::l1_split(&prev, params, &prev.l1_split), subproblem::l1_split(&state, params, &state.l1_split));
            state.lowrank_split = update_lowrank_split(&state, params)?;
            debug_check_lowrank(iter, &prev, &state, params);
            let pairwise = graph::pairwise_sq(&state.ranking);
            state.nonneg_split = update_nonneg_split(&state, params, &pairwise);
            debug_check(
                iter,
                "A",
                subproblem::nonneg_split(&state, params, &pairwise, &prev.nonneg_split),
                subproblem::nonneg_split(&state, params, &pairwise, &state.nonneg_split),
            );
            state.group_error = update_group_error(&state, inst);
            debug_check(
                iter,
                "E",
                subproblem::group_error(&state, inst, &prev.group_error),
                subproblem::group_error(&state, inst, &state.group_error),
            );
            let before = subproblem::graph(&state, inst, &state.graph);
            state.graph = update_graph(&state, inst)?;
            debug_check(iter, "Z", before, subproblem::graph(&state, inst, &state.graph));
            ensure_finite(iter, "U", state.l1_split.iter())?;
            ensure_finite(iter, "B", state.lowrank_split.iter())?;
            ensure_finite(iter, "A", state.nonneg_split.iter())?;
            ensure_finite(iter, "E", state.group_error.iter())?;
            ensure_finite(iter, "Z", state.graph.iter())?;
        }

        state.ranking = update_ranking(&state, inst)?;
        ensure_finite(iter, "v", state.ranking.iter())?;
        let before = subproblem::prediction(&state, inst, memory, &prev.predictor, state.bias);
        state.predictor = update_predictor(&state, inst, memory)?;
        ensure_finite(iter, "w", state.predictor.iter())?;
        debug_check(iter, "w", before, subproblem::prediction(&state, inst, memory, &state.predictor, state.bias));
        let before = subproblem::prediction(&state, inst, memory, &state.predictor, state.bias);
        state.bias = update_bias(&state, inst, memory);
        ensure_finite(iter, "b", std::iter::once(&state.bias))?;
        debug_check(iter, "b", before, subproblem::prediction(&state, inst, memory, &state.predictor, state.bias));

        if mode != Mode::NoGraph {
            step_multipliers(&mut state, inst);
        }
        state.iter += 1;

        let residuals = model::residuals(&state, inst)?;
        let max_delta = max_change(&prev, &state);
        let objective = model::objective_with_memory(&state, inst, memory)?;
        trace.push(TraceRow { iter: state.iter, mu, objective, residuals, max_delta });
        if max_delta <= params.eps_conv && residuals.max() <= params.eps_conv {
            converged = true;
            break;
        }
    }

    Ok(RankingResult { iterations: state.iter, state, converged, trace })
}

fn max_change(a: &SolverState, b: &SolverState) -> f64 {
    let dm = |x: &DenseMatrix, y: &DenseMatrix| (x - y).amax();
    [
        dm(&a.group_error, &b.group_error),
        dm(&a.graph, &b.graph),
        dm(&a.l1_split, &b.l1_split),
        dm(&a.lowrank_split, &b.lowrank_split),
        dm(&a.nonneg_split, &b.nonneg_split),
        (&a.ranking - &b.ranking).amax(),
        (&a.predictor - &b.predictor).amax(),
        (a.bias - b.bias).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn ensure_finite<'a>(iteration: usize, variable: &'static str, mut values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if values.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { iteration, variable, detail: "non-finite value".into() })
    }
}

#[inline]
fn debug_check(iter: usize, variable: &str, before: f64, after: f64) {
    debug_assert!(
        after <= before + 1e-9 * (1.0 + before.abs()),
        "{variable}-update increased its subproblem at iteration {iter}: {before} -> {after}"
    );
}

#[cfg(debug_assertions)]
fn debug_check_lowrank(iter: usize, prev: &SolverState, state: &SolverState, params: &Params) {
    if let (Some(before), Some(after)) = (
        subproblem::lowrank_split(state, params, &prev.lowrank_split),
        subproblem::lowrank_split(state, params, &state.lowrank_split),
    ) {
        debug_check(iter, "B", before, after);
    }
}

#[cfg(not(debug_assertions))]
fn debug_check_lowrank(_: usize, _: &SolverState, _: &SolverState, _: &Params) {}

/// Block subproblem objectives, used to assert the exact-minimizer property of
/// every update in debug builds.
mod subproblem {
    use super::*;

    pub fn l1_split(state: &SolverState, params: &Params, u: &DenseMatrix) -> f64 {
        let mu = state.penalty;
        params.alpha * prox::l1_norm(u) + 0.5 * mu * (&state.graph - u + &state.dual_l1 / mu).norm_squared()
    }

    #[cfg_attr(not(debug_assertions), allow(dead_code))]
    pub fn lowrank_split(state: &SolverState, params: &Params, b: &DenseMatrix) -> Option<f64> {
        let mu = state.penalty;
        let nuclear = prox::nuclear_norm(b).ok()?;
        Some(params.gamma * nuclear + 0.5 * mu * (&state.graph - b + &state.dual_lowrank / mu).norm_squared())
    }

    pub fn nonneg_split(state: &SolverState, params: &Params, pairwise: &DenseMatrix, a: &DenseMatrix) -> f64 {
        let mu = state.penalty;
        0.5 * params.beta2 * a.component_mul(pairwise).sum()
            + 0.5 * mu * (&state.graph - a + &state.dual_nonneg / mu).norm_squared()
    }

    pub fn group_error(state: &SolverState, inst: &RankingInstance, e: &DenseMatrix) -> f64 {
        let mu = state.penalty;
        let x = &inst.features;
        prox::l21_norm(e, inst.params.group_axis)
            + 0.5 * mu * (x - x * &state.graph - e + &state.dual_recon / mu).norm_squared()
    }

    pub fn graph(state: &SolverState, inst: &RankingInstance, z: &DenseMatrix) -> f64 {
        let mu = state.penalty;
        let x = &inst.features;
        inst.params.beta1 * (z - &inst.prior).norm_squared()
            + 0.5
                * mu
                * ((x - x * z - &state.group_error + &state.dual_recon / mu).norm_squared()
                    + (z - &state.l1_split + &state.dual_l1 / mu).norm_squared()
                    + (z - &state.lowrank_split + &state.dual_lowrank / mu).norm_squared()
                    + (z - &state.nonneg_split + &state.dual_nonneg / mu).norm_squared())
    }

    pub fn prediction(
        state: &SolverState,
        inst: &RankingInstance,
        memory: &[MemoryFrame],
        w: &DVector<f64>,
        b: f64,
    ) -> f64 {
        model::prediction_loss(inst, memory, &state.ranking, w, b) + inst.params.ridge * w.norm_squared()
    }
}
