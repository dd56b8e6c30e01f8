//! Partition planning: solve the contraction budget rule for the maximal
//! admissible subinterval length.

use crate::dsl::{estimate_lipschitz, SampleBox};
use crate::grid::{PartitionPlan, TimeGrid};
use crate::problem::{PNormConfig, ProblemSpec};

use super::{SolverError, SolverOptions};

/// Resolve the three Lipschitz constants: declared values win, otherwise a
/// seeded sampling estimate over a default box.
pub(crate) fn resolve_constants(
    spec: &ProblemSpec,
    opts: &SolverOptions,
) -> Result<[f64; 3], SolverError> {
    let declared = spec.lipschitz_constants();
    if declared.iter().all(Option::is_some) {
        return Ok([declared[0].unwrap(), declared[1].unwrap(), declared[2].unwrap()]);
    }
    let sample_box = SampleBox::for_horizon(spec.horizon);
    let estimated = estimate_lipschitz(
        &spec.generator,
        spec.dims(),
        &sample_box,
        opts.lipschitz_samples,
        opts.lipschitz_seed,
    )?;
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = declared[i].unwrap_or(estimated[i]);
    }
    Ok(out)
}

/// Choose the partition from the budget rule
/// `C_hat * max(eta^(p/q), eta) = kappa_target` with
/// `C_hat = c_cal * (1 + L1 + L2 + L3)^p`, capping `eta` at `T` and snapping
/// subinterval lengths down to whole grid steps. A generator that does not
/// read any unknown (`L1 = L2 = L3 = 0`) makes the fixed-point map constant,
/// so the whole interval is a single piece.
///
/// Errors when the solved `eta` falls below the grid step: no admissible
/// partition exists on this grid.
pub fn choose_partition(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    opts: &SolverOptions,
) -> Result<PartitionPlan, SolverError> {
    let constants = resolve_constants(spec, opts)?;
    choose_partition_with_constants(spec, grid, constants, opts)
}

pub(crate) fn choose_partition_with_constants(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    constants: [f64; 3],
    opts: &SolverOptions,
) -> Result<PartitionPlan, SolverError> {
    let l_sum: f64 = constants.iter().sum();
    if l_sum == 0.0 {
        return Ok(PartitionPlan::whole(grid, opts.kappa_target));
    }
    let pq = PNormConfig::new(spec.p)
        .map_err(|e| SolverError::Validation(e.to_string()))?;
    let c_hat = opts.c_cal * (1.0 + l_sum).powf(pq.p);
    let budget = opts.kappa_target / c_hat;
    // Largest eta with C_hat * eta^(p/q) <= kappa AND C_hat * eta <= kappa.
    let eta = budget.powf(pq.q / pq.p).min(budget).min(grid.horizon());
    Ok(PartitionPlan::from_eta(grid, eta, opts.kappa_target)?)
}
