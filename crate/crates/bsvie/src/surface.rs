//! Solution-surface storage: adapted processes `Y`, two-parameter fields
//! `Z(t_i, t_j)`, and the diagnostics attached to a finished solve.

use serde::Serialize;
use thiserror::Error;

use crate::grid::PartitionPlan;
use crate::norms::NormReport;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FieldError {
    #[error("Z({i}, {j}) read before being populated")]
    Unpopulated { i: usize, j: usize },
    #[error("Z({i}, {j}) is in the below-diagonal block, which does not exist in adapted mode")]
    LowerBlockAbsent { i: usize, j: usize },
}

/// Per-path process values on every grid node; `m` components per path.
///
/// Values at node `j` are expected to be measurable with respect to the path
/// history up to `j`; on enumerated ensembles this is checkable exactly via
/// [`crate::ensemble::PathEnsemble::is_adapted_at`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    paths: usize,
    nodes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl AdaptedProcess {
    pub fn zeros(paths: usize, nodes: usize, dim: usize) -> Self {
        Self { paths, nodes, dim, data: vec![0.0; paths * nodes * dim] }
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Slice of length `paths * dim` at a node, path-major.
    pub fn at(&self, node: usize) -> &[f64] {
        let w = self.paths * self.dim;
        &self.data[node * w..(node + 1) * w]
    }

    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        let w = self.paths * self.dim;
        &mut self.data[node * w..(node + 1) * w]
    }

    pub fn value(&self, node: usize, path: usize, k: usize) -> f64 {
        self.data[(node * self.paths + path) * self.dim + k]
    }

    /// Component slice for one path at one node.
    pub fn components(&self, node: usize, path: usize) -> &[f64] {
        let base = (node * self.paths + path) * self.dim;
        &self.data[base..base + self.dim]
    }
}

/// Discrete two-parameter field `Z(t_i, t_j)`: outer node index
/// `i in 0..=N`, inner step index `j in 0..N`, values in `R^{m x d}`.
///
/// The block with `j >= i` is the above-diagonal part; `j < i` is the
/// below-diagonal (martingale-representation) part, only present for
/// M-solutions. Every `(i, j)` cell carries a populated flag and reads of
/// unpopulated cells fail, so ordering bugs in the induction surface loudly.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoParamField {
    paths: usize,
    outer: usize,
    inner: usize,
    dim_y: usize,
    dim_w: usize,
    allow_lower: bool,
    data: Vec<f64>,
    populated: Vec<bool>,
}

impl TwoParamField {
    pub fn new(
        paths: usize,
        steps: usize,
        dim_y: usize,
        dim_w: usize,
        allow_lower: bool,
    ) -> Self {
        let outer = steps + 1;
        Self {
            paths,
            outer,
            inner: steps,
            dim_y,
            dim_w,
            allow_lower,
            data: vec![0.0; outer * steps * paths * dim_y * dim_w],
            populated: vec![false; outer * steps],
        }
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    /// Number of outer nodes (`N + 1`).
    pub fn outer_nodes(&self) -> usize {
        self.outer
    }

    /// Number of inner steps (`N`).
    pub fn inner_steps(&self) -> usize {
        self.inner
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    pub fn allows_lower(&self) -> bool {
        self.allow_lower
    }

    /// Width of one `(i, j)` cell: `paths * dim_y * dim_w`.
    fn cell_width(&self) -> usize {
        self.paths * self.dim_y * self.dim_w
    }

    fn cell_base(&self, i: usize, j: usize) -> usize {
        (i * self.inner + j) * self.cell_width()
    }

    pub fn is_populated(&self, i: usize, j: usize) -> bool {
        self.populated[i * self.inner + j]
    }

    /// Checked read of the `(i, j)` cell: `paths * m * d` values, path-major.
    pub fn block(&self, i: usize, j: usize) -> Result<&[f64], FieldError> {
        if j < i && !self.allow_lower {
            return Err(FieldError::LowerBlockAbsent { i, j });
        }
        if !self.is_populated(i, j) {
            return Err(FieldError::Unpopulated { i, j });
        }
        let base = self.cell_base(i, j);
        Ok(&self.data[base..base + self.cell_width()])
    }

    /// `m x d` matrix (row-major) for one path, checked.
    pub fn entry(&self, i: usize, j: usize, path: usize) -> Result<&[f64], FieldError> {
        let block = self.block(i, j)?;
        let w = self.dim_y * self.dim_w;
        Ok(&block[path * w..(path + 1) * w])
    }

    /// Write a full `(i, j)` cell and mark it populated. Overwriting an
    /// already populated cell is allowed (the Fredholm pass recomputes
    /// identical values after a halving).
    pub fn set_block(&mut self, i: usize, j: usize, values: &[f64]) {
        assert!(
            !(j < i && !self.allow_lower),
            "writing the lower block of an adapted-mode field"
        );
        let width = self.cell_width();
        assert_eq!(values.len(), width);
        let base = self.cell_base(i, j);
        self.data[base..base + width].copy_from_slice(values);
        self.populated[i * self.inner + j] = true;
    }

    /// Fill the above-diagonal block with a constant and mark it populated;
    /// also fills the lower block when the field allows it.
    pub fn fill_constant(&mut self, value: f64) {
        for i in 0..self.outer {
            for j in 0..self.inner {
                if j < i && !self.allow_lower {
                    continue;
                }
                let base = self.cell_base(i, j);
                let w = self.cell_width();
                self.data[base..base + w].fill(value);
                self.populated[i * self.inner + j] = true;
            }
        }
    }

    /// Mark a cell populated without writing (used to seed the zero iterate).
    pub fn mark_populated(&mut self, i: usize, j: usize) {
        assert!(!(j < i && !self.allow_lower));
        self.populated[i * self.inner + j] = true;
    }
}

/// Residual magnitudes: worst path-by-path absolute value plus a pooled
/// relative L2 that is meaningful for regression estimators.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct ResidualSummary {
    pub max_abs: f64,
    pub rel_l2: f64,
}

/// Picard history for one subinterval attempt.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SubintervalRecord {
    /// Node-index range `[lo, hi]` of the attempt.
    pub lo: usize,
    pub hi: usize,
    /// Number of measured iterations (the bootstrap application of the map
    /// to the initial iterate is not counted).
    pub iterations: usize,
    /// `dist_k = ||iterate_k - iterate_{k-1}||` in the discrete M^p norm.
    pub distances: Vec<f64>,
    /// `rho_k = dist_k / dist_{k-1}` for `k >= 2`.
    pub contraction_factors: Vec<f64>,
    pub converged: bool,
    /// The attempt was abandoned and split in two.
    pub halved: bool,
    /// The attempt itself came from splitting a longer subinterval.
    pub from_halving: bool,
}

/// Everything a solve reports besides the surfaces themselves.
#[derive(Debug, Clone, Serialize, PartialEq, Default)]
pub struct SolveDiagnostics {
    pub partition: Option<PartitionPlan>,
    pub subintervals: Vec<SubintervalRecord>,
    pub m_identity_residual: Option<ResidualSummary>,
    pub equation_residual: Option<ResidualSummary>,
    pub solution_norm: Option<NormReport>,
    pub hp_norm: Option<NormReport>,
    /// Inner steps where the regression design matrix was rank-deficient and
    /// a lower polynomial degree was used.
    pub estimator_degree_fallbacks: usize,
    pub converged: bool,
}

/// Discrete solution pair plus diagnostics.
#[derive(Debug, Clone)]
pub struct SolutionSurface {
    pub y: AdaptedProcess,
    pub z: TwoParamField,
    pub diagnostics: SolveDiagnostics,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_block_read_fails_in_adapted_mode() {
        let f = TwoParamField::new(4, 3, 1, 1, false);
        assert_eq!(f.block(2, 0).unwrap_err(), FieldError::LowerBlockAbsent { i: 2, j: 0 });
    }

    #[test]
    fn unpopulated_read_fails() {
        let f = TwoParamField::new(4, 3, 1, 1, true);
        assert_eq!(f.block(1, 2).unwrap_err(), FieldError::Unpopulated { i: 1, j: 2 });
    }

    #[test]
    fn write_then_read_round_trips() {
        let mut f = TwoParamField::new(2, 2, 1, 1, true);
        f.set_block(1, 0, &[3.0, 4.0]);
        assert_eq!(f.block(1, 0).unwrap(), &[3.0, 4.0]);
        assert_eq!(f.entry(1, 0, 1).unwrap(), &[4.0]);
    }

    #[test]
    #[should_panic]
    fn adapted_mode_lower_write_panics() {
        let mut f = TwoParamField::new(2, 2, 1, 1, false);
        f.set_block(1, 0, &[1.0, 1.0]);
    }
}
