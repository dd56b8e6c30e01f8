//! Stochastic Fredholm pass: once `[boundary, T]` is solved, each earlier
//! outer node's terminal data is pushed from `T` down to the boundary by a
//! single backward recursion over the solved region, with the generator
//! frozen at the solved `Y` and (M-solution mode) the already-extended
//! below-diagonal block. The recursion also yields the final
//! `Z(t_i, t_j)` cells for `t_j` in the solved region.

use rayon::prelude::*;

use super::bsde::{bsde_family_step, FrozenIterate};
use super::{SolveContext, SolverError};
use crate::ensemble::EnsembleKind;
use crate::surface::{AdaptedProcess, TwoParamField};

/// Modified terminal data for the next subinterval: per outer node `i` in
/// `[lo, hi)`, the value row at node `hi` (measurable there) and the final
/// coefficient cells for `j in [hi, N)`.
pub struct FredholmBlock {
    pub rows: Vec<(usize, Vec<f64>)>,
    pub z_cells: Vec<(usize, Vec<(usize, Vec<f64>)>)>,
}

pub fn fredholm_extend(
    ctx: &SolveContext<'_>,
    psi_rows: &[Vec<f64>],
    (lo, hi): (usize, usize),
    solved_y: &AdaptedProcess,
    solved_z: &TwoParamField,
    m_mode: bool,
) -> Result<FredholmBlock, SolverError> {
    let n = ctx.ensemble.grid().steps();
    debug_assert!(hi <= n && lo < hi);
    let frame = FrozenIterate { y: solved_y, z: m_mode.then_some(solved_z) };

    let computed: Vec<(usize, super::bsde::BsdeRow)> = (lo..hi)
        .into_par_iter()
        .map(|i| Ok((i, bsde_family_step(ctx, i, n, hi, &psi_rows[i], &frame)?)))
        .collect::<Result<_, SolverError>>()?;

    let mut rows = Vec::with_capacity(hi - lo);
    let mut z_cells = Vec::with_capacity(hi - lo);
    for (i, row) in computed {
        // The pushed-down terminal data must be measurable at the boundary;
        // on enumerated ensembles prefix groups verify this exactly.
        if ctx.ensemble.kind() == EnsembleKind::BernoulliEnumerated
            && !ctx.ensemble.is_adapted_at(&row.lambda, ctx.spec.dim_y, hi)
        {
            return Err(SolverError::MeasurabilityCheck { node: hi });
        }
        let cells = row
            .z_cells
            .into_iter()
            .enumerate()
            .map(|(offset, cell)| (hi + offset, cell))
            .collect();
        rows.push((i, row.lambda));
        z_cells.push((i, cells));
    }
    Ok(FredholmBlock { rows, z_cells })
}
