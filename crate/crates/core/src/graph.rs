//! Prior patch graph and graph-Laplacian quantities.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::prox::DenseMatrix;

/// 8-connected neighborhood graph over patch cells with Gaussian-kernel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchAdjacency {
    /// `(row, col)` grid position of each node, in node order.
    pub cells: Vec<(i32, i32)>,
    pub weights: DenseMatrix,
}

impl PatchAdjacency {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Number of undirected edges with positive weight.
    pub fn edge_count(&self) -> usize {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.weights[(i, j)] > 0.0)
            .count()
    }
}

/// Row-major cells of an `rows x cols` grid.
pub fn grid_cells(rows: usize, cols: usize) -> Vec<(i32, i32)> {
    (0..rows as i32)
        .flat_map(|r| (0..cols as i32).map(move |c| (r, c)))
        .collect()
}

#[inline]
fn are_neighbors(a: (i32, i32), b: (i32, i32)) -> bool {
    a != b && (a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1
}

/// Prior graph over a full `rows x cols` grid; `features` has one column per cell
/// in row-major cell order.
pub fn build_prior_graph(rows: usize, cols: usize, features: &DenseMatrix) -> Result<PatchAdjacency> {
    build_prior_graph_over(grid_cells(rows, cols), features)
}

/// Prior graph over an arbitrary set of grid cells.
///
/// `S_ij = exp(-||x_i - x_j||^2 / (2 sigma^2))` for 8-neighbors, where `sigma` is
/// the mean feature distance over all neighbor pairs (1 when that mean is 0).
pub fn build_prior_graph_over(cells: Vec<(i32, i32)>, features: &DenseMatrix) -> Result<PatchAdjacency> {
    let n = cells.len();
    if features.ncols() != n {
        return Err(Error::dim("build_prior_graph", format!("{n} feature columns"), features.ncols()));
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if are_neighbors(cells[i], cells[j]) {
                let d2 = (features.column(i) - features.column(j)).norm_squared();
                pairs.push((i, j, d2));
            }
        }
    }
    let mean_dist = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|p| p.2.sqrt()).sum::<f64>() / pairs.len() as f64
    };
    let sigma = if mean_dist > 0.0 { mean_dist } else { 1.0 };
    let mut weights = DenseMatrix::zeros(n, n);
    for (i, j, d2) in pairs {
        let w = (-d2 / (2.0 * sigma * sigma)).exp();
        weights[(i, j)] = w;
        weights[(j, i)] = w;
    }
    Ok(PatchAdjacency { cells, weights })
}

/// Diagonal of the degree matrix: `D_ii = sum_j Z_ij`.
pub fn degree(z: &DenseMatrix) -> Result<DVector<f64>> {
    if !z.is_square() {
        return Err(Error::dim("degree", "square matrix", format!("{}x{}", z.nrows(), z.ncols())));
    }
    Ok(DVector::from_iterator(z.nrows(), z.row_iter().map(|r| r.sum())))
}

/// `R_ij = (v_i - v_j)^2`.
pub fn pairwise_sq(v: &DVector<f64>) -> DenseMatrix {
    let n = v.len();
    DenseMatrix::from_fn(n, n, |i, j| (v[i] - v[j]).powi(2))
}

/// `0.5 * sum_ij Z_ij (v_i - v_j)^2`.
pub fn smoothness(z: &DenseMatrix, v: &DVector<f64>) -> Result<f64> {
    check_square_matching(z, v, "smoothness")?;
    let n = v.len();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            acc += z[(i, j)] * (v[i] - v[j]).powi(2);
        }
    }
    Ok(0.5 * acc)
}

/// Graph Laplacian `D - Z` of the symmetrized weights `(Z + Z^T) / 2`.
pub fn sym_laplacian(z: &DenseMatrix) -> Result<DenseMatrix> {
    if !z.is_square() {
        return Err(Error::dim("sym_laplacian", "square matrix", format!("{}x{}", z.nrows(), z.ncols())));
    }
    let sym = (z + z.transpose()) * 0.5;
    let d = degree(&sym)?;
    Ok(DenseMatrix::from_diagonal(&d) - sym)
}

fn check_square_matching(z: &DenseMatrix, v: &DVector<f64>, context: &'static str) -> Result<()> {
    if !z.is_square() || z.nrows() != v.len() {
        return Err(Error::dim(
            context,
            format!("{0}x{0} graph", v.len()),
            format!("{}x{}", z.nrows(), z.ncols()),
        ));
    }
    Ok(())
}
