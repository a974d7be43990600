//! Proximal operators for the nonsmooth terms of the ranking objective.
//!
//! Each operator returns the exact minimizer of `tau * g(X) + 0.5 * ||X - M||_F^2`
//! for its regularizer `g`.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

const SVD_EPS: f64 = 1e-14;
const SVD_MAX_ITER: usize = 10_000;

/// Which slices of a matrix form the groups of the l2,1 norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupAxis {
    /// `||E||_{2,1} = sum_i ||E_{i,:}||_2`
    #[default]
    Rows,
    /// `||E||_{2,1} = sum_j ||E_{:,j}||_2`
    Columns,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::Param(format!("threshold must be finite and >= 0, got {tau}")))
    }
}

/// Elementwise shrinkage `sign(m) * max(|m| - tau, 0)`.
pub fn soft_threshold(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    check_tau(tau)?;
    Ok(m.map(|x| shrink_scalar(x, tau)))
}

#[inline]
pub(crate) fn shrink_scalar(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Singular value thresholding: `U * max(S - tau, 0) * V^T` from a full SVD.
pub fn svt(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    check_tau(tau)?;
    if tau == 0.0 {
        return Ok(m.clone());
    }
    let svd = full_svd(m)?;
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let shrunk = svd.singular_values.map(|s| (s - tau).max(0.0));
    let mut scaled_u = u;
    for (j, s) in shrunk.iter().enumerate() {
        scaled_u.column_mut(j).scale_mut(*s);
    }
    Ok(scaled_u * v_t)
}

fn full_svd(m: &DenseMatrix) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(m.clone(), true, true, SVD_EPS, SVD_MAX_ITER).ok_or_else(|| Error::Numeric {
        iteration: SVD_MAX_ITER,
        variable: "svd",
        detail: format!(
            "SVD of {}x{} matrix did not converge within {SVD_MAX_ITER} sweeps (eps {SVD_EPS:e}, max |m| {:e})",
            m.nrows(),
            m.ncols(),
            m.amax()
        ),
    })
}

/// Group shrinkage: each group `g` becomes `max(1 - tau / ||g||_2, 0) * g`.
pub fn l21_shrink(m: &DenseMatrix, tau: f64, axis: GroupAxis) -> Result<DenseMatrix> {
    check_tau(tau)?;
    let mut out = m.clone();
    match axis {
        GroupAxis::Rows => {
            for mut row in out.row_iter_mut() {
                let scale = group_scale(row.norm(), tau);
                row.scale_mut(scale);
            }
        }
        GroupAxis::Columns => {
            for mut col in out.column_iter_mut() {
                let scale = group_scale(col.norm(), tau);
                col.scale_mut(scale);
            }
        }
    }
    Ok(out)
}

#[inline]
fn group_scale(norm: f64, tau: f64) -> f64 {
    if norm > tau {
        1.0 - tau / norm
    } else {
        0.0
    }
}

/// Euclidean projection onto the nonnegative orthant.
pub fn nonneg_project(m: &DenseMatrix) -> DenseMatrix {
    m.map(|x| x.max(0.0))
}

pub fn l1_norm(m: &DenseMatrix) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

pub fn l21_norm(m: &DenseMatrix, axis: GroupAxis) -> f64 {
    match axis {
        GroupAxis::Rows => m.row_iter().map(|r| r.norm()).sum(),
        GroupAxis::Columns => m.column_iter().map(|c| c.norm()).sum(),
    }
}

pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    let sv = SVD::try_new(m.clone(), false, false, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numeric {
            iteration: SVD_MAX_ITER,
            variable: "svd",
            detail: format!("singular values of {}x{} matrix did not converge", m.nrows(), m.ncols()),
        })?
        .singular_values;
    Ok(sv.iter().copied().collect())
}

pub fn nuclear_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}
