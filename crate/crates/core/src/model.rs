//! Problem definition for the unified ranking model: parameters, instances,
//! solver state, and evaluation of the relaxed objective and its constraint
//! residuals.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph;
use crate::prox::{self, DenseMatrix, GroupAxis};

/// Hyperparameters of the ranking model and its ALM solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    /// l1 weight on the learned graph.
    pub alpha: f64,
    /// Nuclear-norm weight on the learned graph.
    pub gamma: f64,
    /// Fidelity of the learned graph to the prior graph.
    pub beta1: f64,
    /// Graph smoothness weight of the ranking.
    pub beta2: f64,
    /// Weight of the current-frame linear prediction term.
    pub delta: f64,
    /// Query fitting weight.
    pub lambda: f64,
    /// Memory weight of the previous frame.
    pub delta_prev: f64,
    /// Memory weight of the first frame.
    pub delta_first: f64,
    pub rho: f64,
    pub mu0: f64,
    pub mu_max: f64,
    pub eps_conv: f64,
    pub max_iter: usize,
    /// Ridge added to the normal equations of the linear predictor.
    pub ridge: f64,
    /// Grouping of the l2,1 error norm.
    pub group_axis: GroupAxis,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            gamma: 0.08,
            beta1: 20.0,
            beta2: 0.9,
            delta: 0.3,
            lambda: 1.0,
            delta_prev: 0.3,
            delta_first: 0.3,
            rho: 1.3,
            mu0: 1e-6,
            mu_max: 1e10,
            eps_conv: 1e-6,
            max_iter: 50,
            ridge: 1e-8,
            group_axis: GroupAxis::Rows,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("delta", self.delta),
            ("lambda", self.lambda),
            ("mu0", self.mu0),
            ("mu_max", self.mu_max),
            ("eps_conv", self.eps_conv),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Param(format!("{name} must be positive, got {value}")));
            }
        }
        for (name, value) in [("delta_prev", self.delta_prev), ("delta_first", self.delta_first), ("ridge", self.ridge)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Param(format!("{name} must be nonnegative, got {value}")));
            }
        }
        if !(self.rho.is_finite() && self.rho > 1.0) {
            return Err(Error::Param(format!("rho must exceed 1, got {}", self.rho)));
        }
        if self.mu_max < self.mu0 {
            return Err(Error::Param("mu_max must be >= mu0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Param("max_iter must be >= 1".into()));
        }
        Ok(())
    }

    /// Sets one parameter by name, as used by `--param name=value`.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let real = || {
            value
                .parse::<f64>()
                .map_err(|_| Error::Param(format!("{name}: cannot parse {value:?} as a number")))
        };
        match name {
            "alpha" => self.alpha = real()?,
            "gamma" => self.gamma = real()?,
            "beta1" => self.beta1 = real()?,
            "beta2" => self.beta2 = real()?,
            "delta" => self.delta = real()?,
            "lambda" => self.lambda = real()?,
            "delta_prev" => self.delta_prev = real()?,
            "delta_first" => self.delta_first = real()?,
            "rho" => self.rho = real()?,
            "mu0" => self.mu0 = real()?,
            "mu_max" => self.mu_max = real()?,
            "eps_conv" | "eps" => self.eps_conv = real()?,
            "ridge" => self.ridge = real()?,
            "max_iter" => {
                self.max_iter = value
                    .parse()
                    .map_err(|_| Error::Param(format!("max_iter: cannot parse {value:?} as a count")))?
            }
            "group_axis" => {
                self.group_axis = match value {
                    "rows" => GroupAxis::Rows,
                    "columns" | "cols" => GroupAxis::Columns,
                    _ => return Err(Error::Param(format!("group_axis must be rows or columns, got {value:?}"))),
                }
            }
            _ => return Err(Error::Param(format!("unknown parameter {name:?}"))),
        }
        Ok(())
    }
}

/// Features and learned ranking of an earlier frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryFrame {
    pub features: DenseMatrix,
    pub ranking: DVector<f64>,
    pub weight: f64,
}

/// One ranking problem: current features, queries, prior graph and memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceDoc", into = "InstanceDoc")]
pub struct RankingInstance {
    /// `p x n`, one column per patch.
    pub features: DenseMatrix,
    /// Query indicator in {0, 1}.
    pub queries: DVector<f64>,
    /// `n x n` prior graph.
    pub prior: DenseMatrix,
    pub memory: Vec<MemoryFrame>,
    pub params: Params,
}

impl RankingInstance {
    pub fn new(
        features: DenseMatrix,
        queries: DVector<f64>,
        prior: DenseMatrix,
        memory: Vec<MemoryFrame>,
        params: Params,
    ) -> Result<Self> {
        let inst = Self { features, queries, prior, memory, params };
        inst.validate()?;
        Ok(inst)
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let (p, n) = self.features.shape();
        if p == 0 || n == 0 {
            return Err(Error::Input("feature matrix must have positive dimensions".into()));
        }
        if self.queries.len() != n {
            return Err(Error::dim("queries", n, self.queries.len()));
        }
        if self.prior.shape() != (n, n) {
            return Err(Error::dim("prior graph", format!("{n}x{n}"), format!("{:?}", self.prior.shape())));
        }
        if !self.queries.iter().all(|&q| q == 0.0 || q == 1.0) {
            return Err(Error::Input("queries must be 0/1 indicators".into()));
        }
        if !self.queries.iter().any(|&q| q == 1.0) {
            return Err(Error::Input("at least one query is required".into()));
        }
        if !all_finite(self.features.iter()) || !all_finite(self.prior.iter()) {
            return Err(Error::Input("features and prior graph must be finite".into()));
        }
        for (k, frame) in self.memory.iter().enumerate() {
            if frame.features.shape() != (p, n) {
                return Err(Error::dim("memory features", format!("{p}x{n}"), format!("frame {k}: {:?}", frame.features.shape())));
            }
            if frame.ranking.len() != n {
                return Err(Error::dim("memory ranking", n, frame.ranking.len()));
            }
            if !all_finite(frame.features.iter()) || !all_finite(frame.ranking.iter()) {
                return Err(Error::Input(format!("memory frame {k} has non-finite entries")));
            }
            if !(frame.weight.is_finite() && frame.weight >= 0.0) {
                return Err(Error::Input(format!("memory frame {k} weight must be >= 0")));
            }
        }
        self.params.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn all_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    it.all(|x| x.is_finite())
}

fn row_major(m: &DenseMatrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, data: &[f64], what: &'static str) -> Result<DenseMatrix> {
    if data.len() != rows * cols {
        return Err(Error::dim(what, rows * cols, data.len()));
    }
    Ok(DenseMatrix::from_row_slice(rows, cols, data))
}

#[derive(Serialize, Deserialize)]
struct MemoryDoc {
    #[serde(rename = "X")]
    x: Vec<f64>,
    v: Vec<f64>,
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    p: usize,
    n: usize,
    #[serde(rename = "X")]
    x: Vec<f64>,
    y: Vec<f64>,
    #[serde(rename = "S")]
    s: Vec<f64>,
    #[serde(default)]
    memory: Vec<MemoryDoc>,
    #[serde(default)]
    params: Params,
}

impl From<RankingInstance> for InstanceDoc {
    fn from(inst: RankingInstance) -> Self {
        InstanceDoc {
            p: inst.dim(),
            n: inst.len(),
            x: row_major(&inst.features),
            y: inst.queries.iter().copied().collect(),
            s: row_major(&inst.prior),
            memory: inst
                .memory
                .iter()
                .map(|m| MemoryDoc {
                    x: row_major(&m.features),
                    v: m.ranking.iter().copied().collect(),
                    delta: m.weight,
                })
                .collect(),
            params: inst.params,
        }
    }
}

impl TryFrom<InstanceDoc> for RankingInstance {
    type Error = Error;

    fn try_from(doc: InstanceDoc) -> Result<Self> {
        let (p, n) = (doc.p, doc.n);
        let memory = doc
            .memory
            .into_iter()
            .map(|m| {
                Ok(MemoryFrame {
                    features: from_row_major(p, n, &m.x, "memory X")?,
                    ranking: DVector::from_vec(m.v),
                    weight: m.delta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RankingInstance::new(
            from_row_major(p, n, &doc.x, "X")?,
            DVector::from_vec(doc.y),
            from_row_major(n, n, &doc.s, "S")?,
            memory,
            doc.params,
        )
    }
}

/// Primal and dual variables of the ALM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// Learned graph `Z`, `n x n`.
    pub graph: DenseMatrix,
    /// Group-sparse reconstruction error `E`, `p x n`.
    pub group_error: DenseMatrix,
    /// Split copy of `Z` carrying the l1 term (`U`).
    pub l1_split: DenseMatrix,
    /// Split copy of `Z` carrying the nuclear norm (`B`).
    pub lowrank_split: DenseMatrix,
    /// Nonnegative split copy of `Z` carrying the smoothness term (`A`).
    pub nonneg_split: DenseMatrix,
    /// Patch ranking `v`.
    pub ranking: DVector<f64>,
    /// Linear predictor `w`.
    pub predictor: DVector<f64>,
    /// Predictor intercept `b`.
    pub bias: f64,
    /// Multiplier of `X = XZ + E` (`Y1`, `p x n`).
    pub dual_recon: DenseMatrix,
    /// Multiplier of `Z = U` (`Y2`).
    pub dual_l1: DenseMatrix,
    /// Multiplier of `Z = B` (`Y3`).
    pub dual_lowrank: DenseMatrix,
    /// Multiplier of `Z = A` (`Y4`).
    pub dual_nonneg: DenseMatrix,
    /// Penalty `mu`.
    pub penalty: f64,
    pub iter: usize,
}

impl SolverState {
    /// All-zero primal and dual variables for `p`-dimensional features over `n` patches.
    pub fn zeros(p: usize, n: usize, penalty: f64) -> Self {
        let nn = || DenseMatrix::zeros(n, n);
        Self {
            graph: nn(),
            group_error: DenseMatrix::zeros(p, n),
            l1_split: nn(),
            lowrank_split: nn(),
            nonneg_split: nn(),
            ranking: DVector::zeros(n),
            predictor: DVector::zeros(p),
            bias: 0.0,
            dual_recon: DenseMatrix::zeros(p, n),
            dual_l1: nn(),
            dual_lowrank: nn(),
            dual_nonneg: nn(),
            penalty,
            iter: 0,
        }
    }

    pub fn check_dims(&self, inst: &RankingInstance) -> Result<()> {
        let (p, n) = inst.features.shape();
        let square = [
            ("Z", &self.graph),
            ("U", &self.l1_split),
            ("B", &self.lowrank_split),
            ("A", &self.nonneg_split),
            ("Y2", &self.dual_l1),
            ("Y3", &self.dual_lowrank),
            ("Y4", &self.dual_nonneg),
        ];
        for (name, m) in square {
            if m.shape() != (n, n) {
                return Err(Error::dim("solver state", format!("{name}: {n}x{n}"), format!("{:?}", m.shape())));
            }
        }
        for (name, m) in [("E", &self.group_error), ("Y1", &self.dual_recon)] {
            if m.shape() != (p, n) {
                return Err(Error::dim("solver state", format!("{name}: {p}x{n}"), format!("{:?}", m.shape())));
            }
        }
        if self.ranking.len() != n {
            return Err(Error::dim("solver state", format!("v: {n}"), self.ranking.len()));
        }
        if self.predictor.len() != p {
            return Err(Error::dim("solver state", format!("w: {p}"), self.predictor.len()));
        }
        Ok(())
    }
}

/// `sum_k weight_k * ||X_k^T w + 1 b - v_k||^2` over the given frames plus the
/// current-frame term.
pub(crate) fn prediction_loss(
    inst: &RankingInstance,
    memory: &[MemoryFrame],
    ranking: &DVector<f64>,
    predictor: &DVector<f64>,
    bias: f64,
) -> f64 {
    let fit = |x: &DenseMatrix, v: &DVector<f64>| (x.tr_mul(predictor).add_scalar(bias) - v).norm_squared();
    let current = inst.params.delta * fit(&inst.features, ranking);
    current
        + memory
            .iter()
            .map(|m| m.weight * fit(&m.features, &m.ranking))
            .sum::<f64>()
}

/// The relaxed objective at `state`; constraints are reported by [`residuals`].
pub fn objective(state: &SolverState, inst: &RankingInstance) -> Result<f64> {
    objective_with_memory(state, inst, &inst.memory)
}

pub(crate) fn objective_with_memory(
    state: &SolverState,
    inst: &RankingInstance,
    memory: &[MemoryFrame],
) -> Result<f64> {
    state.check_dims(inst)?;
    let p = &inst.params;
    let z = &state.graph;
    let value = prox::l21_norm(&state.group_error, p.group_axis)
        + p.alpha * prox::l1_norm(z)
        + p.gamma * prox::nuclear_norm(z)?
        + p.beta1 * (z - &inst.prior).norm_squared()
        + p.beta2 * graph::smoothness(z, &state.ranking)?
        + prediction_loss(inst, memory, &state.ranking, &state.predictor, state.bias)
        + p.lambda * (&state.ranking - &inst.queries).norm_squared();
    Ok(value)
}

/// Max-abs violations of `X = XZ + E`, `Z = U`, `Z = B`, `Z = A`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Residuals {
    pub recon: f64,
    pub l1: f64,
    pub lowrank: f64,
    pub nonneg: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.recon.max(self.l1).max(self.lowrank).max(self.nonneg)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.recon, self.l1, self.lowrank, self.nonneg]
    }
}

pub fn residuals(state: &SolverState, inst: &RankingInstance) -> Result<Residuals> {
    state.check_dims(inst)?;
    let x = &inst.features;
    let z = &state.graph;
    Ok(Residuals {
        recon: (x - x * z - &state.group_error).amax(),
        l1: (z - &state.l1_split).amax(),
        lowrank: (z - &state.lowrank_split).amax(),
        nonneg: (z - &state.nonneg_split).amax(),
    })
}
