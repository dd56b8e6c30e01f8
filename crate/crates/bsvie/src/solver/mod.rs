//! The solver: a parametrised family of backward recursions, Picard
//! iteration on contraction subintervals, martingale-representation
//! extension of the below-diagonal block, a stochastic Fredholm pass that
//! produces the next subinterval's terminal data, and right-to-left
//! induction over a planned partition of `[0, T]`.

mod bsde;
mod fredholm;
mod partition;
mod picard;

pub use bsde::{bsde_family_step, BsdeRow, FrozenIterate};
pub use fredholm::{fredholm_extend, FredholmBlock};
pub use partition::choose_partition;
pub use picard::{extend_m_part, picard_solve_subinterval, PicardInit, PicardResult};

use rayon::prelude::*;
use thiserror::Error;

use crate::dsl::{EvalError, TerminalArgs};
use crate::ensemble::PathEnsemble;
use crate::estimator::{CondExpEstimator, EstimatorError};
use crate::grid::{GridError, PartitionPlan};
use crate::norms;
use crate::problem::{validate_problem, ProblemSpec, SolveMode};
use crate::reduce::pairwise_sum_range;
use crate::surface::{
    AdaptedProcess, FieldError, ResidualSummary, SolutionSurface, SolveDiagnostics, TwoParamField,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("problem rejected: {0}")]
    Validation(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("field access out of order: {0}")]
    Field(#[from] FieldError),
    #[error("norm evaluation failed: {0}")]
    Norm(String),
    #[error("modified terminal data at node {node} failed the adaptedness check")]
    MeasurabilityCheck { node: usize },
}

impl From<crate::norms::NormError> for SolverError {
    fn from(e: crate::norms::NormError) -> Self {
        SolverError::Norm(e.to_string())
    }
}

/// How the first Picard iterate is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// `(y, z) = 0`, whose below-diagonal completion is consistently zero.
    #[default]
    Zero,
    /// `y(t_j)` set to the adapted projection of that node's terminal data.
    TerminalPropagated,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Picard stopping tolerance in the fixed-point norm.
    pub tol: f64,
    /// Iteration cap per subinterval attempt.
    pub max_iter: usize,
    /// Contraction budget the partition is solved against.
    pub kappa_target: f64,
    /// Calibration constant in `C_hat = c_cal * (1 + L1 + L2 + L3)^p`.
    pub c_cal: f64,
    pub init: InitStrategy,
    /// Explicit partition boundaries (descending node indices `N ... 0`),
    /// bypassing the planner.
    pub partition_override: Option<Vec<usize>>,
    /// Sample count for Lipschitz estimation when no bounds are declared.
    pub lipschitz_samples: usize,
    pub lipschitz_seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            kappa_target: 0.5,
            c_cal: 8.0,
            init: InitStrategy::Zero,
            partition_override: None,
            lipschitz_samples: 2000,
            lipschitz_seed: 0,
        }
    }
}

/// A finished (or abandoned) solve. `converged` is false when some
/// subinterval exhausted its iteration budget or could not be halved
/// further; the surface then holds the best iterate for the region that was
/// reached and diagnostics say which pieces failed.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub surface: SolutionSurface,
    pub converged: bool,
}

/// Shared references the per-operation solver functions work against.
pub struct SolveContext<'a> {
    pub spec: &'a ProblemSpec,
    pub ensemble: &'a PathEnsemble,
    pub estimator: &'a CondExpEstimator,
}

impl<'a> SolveContext<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        ensemble: &'a PathEnsemble,
        estimator: &'a CondExpEstimator,
    ) -> Self {
        Self { spec, ensemble, estimator }
    }
}

impl SolveContext<'_> {
    pub fn h(&self) -> f64 {
        self.ensemble.grid().step()
    }

    pub fn node(&self, i: usize) -> f64 {
        self.ensemble.grid().node(i)
    }
}

/// Evaluate the terminal condition row `psi(t_i, W(T))` for every node:
/// `rows[i]` has `paths * m` values.
pub fn terminal_rows(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
) -> Result<Vec<Vec<f64>>, SolverError> {
    let n = ensemble.grid().steps();
    let paths = ensemble.paths();
    let d = ensemble.dim();
    let m = spec.dim_y;
    let x = ensemble.values_at(n);
    (0..=n)
        .into_par_iter()
        .map(|i| {
            let t = ensemble.grid().node(i);
            let mut row = vec![0.0; paths * m];
            for p in 0..paths {
                let args = TerminalArgs { t, x: &x[p * d..(p + 1) * d] };
                for (k, e) in spec.terminal.iter().enumerate() {
                    row[p * m + k] = e.eval(&args)?;
                }
            }
            Ok(row)
        })
        .collect()
}

/// Solve in M-solution mode (both `Z` blocks populated over `[0, T]`).
pub fn solve_msolution(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    estimator: &CondExpEstimator,
    opts: &SolverOptions,
) -> Result<SolveOutcome, SolverError> {
    run_driver(spec, ensemble, estimator, opts, SolveMode::MSolution)
}

/// Solve the simple equation in adapted mode (no `zeta`, no lower block).
pub fn solve_adapted(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    estimator: &CondExpEstimator,
    opts: &SolverOptions,
) -> Result<SolveOutcome, SolverError> {
    run_driver(spec, ensemble, estimator, opts, SolveMode::Adapted)
}

fn run_driver(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    estimator: &CondExpEstimator,
    opts: &SolverOptions,
    mode: SolveMode,
) -> Result<SolveOutcome, SolverError> {
    if spec.mode != mode {
        return Err(SolverError::Validation(format!(
            "spec is in {} mode but the {} driver was called",
            spec.mode, mode
        )));
    }
    let report = validate_problem(spec);
    if !report.passed() {
        return Err(SolverError::Validation(report.failure_summary()));
    }
    if ensemble.dim() != spec.dim_w {
        return Err(SolverError::Validation(format!(
            "ensemble Brownian dimension {} does not match the problem's d = {}",
            ensemble.dim(),
            spec.dim_w
        )));
    }
    if (ensemble.grid().horizon() - spec.horizon).abs() > 0.0 {
        return Err(SolverError::Validation(
            "ensemble grid horizon differs from the problem horizon".into(),
        ));
    }
    let m_mode = mode == SolveMode::MSolution;
    let ctx = SolveContext { spec, ensemble, estimator };
    let grid = ensemble.grid();
    let n = grid.steps();
    let paths = ensemble.paths();

    let plan = match &opts.partition_override {
        Some(boundaries) => {
            PartitionPlan::from_boundaries(grid, boundaries.clone(), opts.kappa_target)?
        }
        None => choose_partition(spec, grid, opts)?,
    };

    let mut surface_y = AdaptedProcess::zeros(paths, n + 1, spec.dim_y);
    let mut surface_z = TwoParamField::new(paths, n, spec.dim_y, spec.dim_w, m_mode);
    let mut diag = SolveDiagnostics {
        partition: Some(plan.clone()),
        estimator_degree_fallbacks: estimator.degree_fallbacks(),
        ..SolveDiagnostics::default()
    };

    let psi_rows = terminal_rows(spec, ensemble)?;
    let mut pending = plan.subintervals();
    pending.reverse(); // pop() yields the rightmost pending subinterval
    let mut current_rows: Vec<Option<Vec<f64>>> = vec![None; n + 1];

    let mut cur = pending.pop().expect("plan has at least one subinterval");
    for i in cur.0..=n {
        current_rows[i] = Some(psi_rows[i].clone());
    }
    let mut from_halving = false;
    let mut converged = true;

    loop {
        let (lo, hi) = cur;
        let owned_hi = if hi == n { n } else { hi - 1 };
        let result = picard_solve_subinterval(
            &ctx,
            (lo, hi),
            &current_rows,
            opts,
            m_mode,
            from_halving,
        )?;
        match result {
            PicardResult::Converged { y, z, record } | PicardResult::MaxIter { y, z, record } => {
                let ok = record.converged;
                diag.subintervals.push(record);
                for i in lo..=owned_hi {
                    surface_y.at_mut(i).copy_from_slice(y.at(i));
                    for j in i..hi {
                        surface_z.set_block(i, j, z.block(i, j)?);
                    }
                    if m_mode {
                        for j in lo..i {
                            surface_z.set_block(i, j, z.block(i, j)?);
                        }
                    }
                }
                if !ok {
                    converged = false;
                    break;
                }
                if lo == 0 {
                    break;
                }
                let next = pending.pop().expect("partition reaches 0");
                if m_mode {
                    // Extend every solved row's below-diagonal block down to
                    // the next boundary (skipping cells a previous pass
                    // already produced, e.g. after a halving).
                    let cells: Vec<(usize, Vec<(usize, Vec<f64>)>)> = (lo..=n)
                        .into_par_iter()
                        .map(|i| {
                            let missing: Vec<usize> = (next.0..lo)
                                .filter(|&j| !surface_z.is_populated(i, j))
                                .collect();
                            let ext =
                                extend_m_part(&ctx, surface_y.at(i), missing.into_iter())?;
                            Ok((i, ext))
                        })
                        .collect::<Result<_, SolverError>>()?;
                    for (i, ext) in cells {
                        for (j, cell) in ext {
                            surface_z.set_block(i, j, &cell);
                        }
                    }
                }
                let block = fredholm_extend(
                    &ctx,
                    &psi_rows,
                    (next.0, next.1),
                    &surface_y,
                    &surface_z,
                    m_mode,
                )?;
                for (i, row) in block.rows {
                    current_rows[i] = Some(row);
                }
                for (i, cells) in block.z_cells {
                    for (j, cell) in cells {
                        surface_z.set_block(i, j, &cell);
                    }
                }
                cur = next;
                from_halving = false;
            }
            PicardResult::HalveRequested { record } => {
                diag.subintervals.push(record);
                if hi - lo <= 1 {
                    // Nothing left to halve: report non-convergence.
                    converged = false;
                    break;
                }
                let mid = (lo + hi) / 2;
                pending.push((lo, mid));
                cur = (mid, hi);
                from_halving = true;
            }
        }
    }

    diag.converged = converged;
    if converged {
        if m_mode {
            diag.m_identity_residual = Some(m_identity_residual(&surface_y, &surface_z, ensemble)?);
        }
        diag.equation_residual =
            Some(equation_residual(spec, &surface_y, &surface_z, ensemble, &psi_rows)?);
        diag.solution_norm = Some(norms::mp_norm(&surface_y, &surface_z, spec.p, ensemble)?);
        diag.hp_norm = Some(norms::hp_norm(&surface_y, &surface_z, spec.p, ensemble)?);
    }

    Ok(SolveOutcome {
        surface: SolutionSurface { y: surface_y, z: surface_z, diagnostics: diag },
        converged,
    })
}

/// Residual of the discretised equation, per path and outer node:
/// `Y_i - psi_i - sum_{j >= i} h g(t_i, t_j, Y_j, Z_ij, Z_ji) + sum_{j >= i} Z_ij dW_j`.
///
/// Near machine precision on exact-prefix runs; on regression runs the
/// pathwise value carries martingale noise and only the relative L2 figure
/// is meaningful.
pub fn equation_residual(
    spec: &ProblemSpec,
    y: &AdaptedProcess,
    z: &TwoParamField,
    ensemble: &PathEnsemble,
    psi_rows: &[Vec<f64>],
) -> Result<ResidualSummary, SolverError> {
    let n = ensemble.grid().steps();
    let paths = ensemble.paths();
    let h = ensemble.grid().step();
    let m = spec.dim_y;
    let d = spec.dim_w;
    let m_mode = z.allows_lower();

    let per_node: Vec<(f64, f64, f64)> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let t = ensemble.grid().node(i);
            let mut acc = vec![0.0; paths * m];
            for p in 0..paths {
                for k in 0..m {
                    acc[p * m + k] = y.value(i, p, k) - psi_rows[i][p * m + k];
                }
            }
            for j in i..n {
                let s = ensemble.grid().node(j);
                let zij = z.block(i, j)?;
                let zeta = if m_mode && i < n { Some(z.block(j, i)?) } else { None };
                let dw = ensemble.increments_at(j);
                let w = ensemble.values_at(j);
                for p in 0..paths {
                    let args = crate::dsl::GeneratorArgs {
                        t,
                        s,
                        y: y.components(j, p),
                        z: &zij[p * m * d..(p + 1) * m * d],
                        zeta: zeta.map(|c| &c[p * m * d..(p + 1) * m * d]),
                        w: &w[p * d..(p + 1) * d],
                        dim_w: d,
                    };
                    for k in 0..m {
                        let g = spec.generator[k].eval(&args)?;
                        let mut stoch = 0.0;
                        for l in 0..d {
                            stoch += zij[(p * m + k) * d + l] * dw[p * d + l];
                        }
                        acc[p * m + k] += -h * g + stoch;
                    }
                }
            }
            let max_abs = acc.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let sq = pairwise_sum_range(0, paths, |p| {
                (0..m).map(|k| acc[p * m + k] * acc[p * m + k]).sum()
            }) / paths as f64;
            let scale = pairwise_sum_range(0, paths, |p| {
                (0..m).map(|k| y.value(i, p, k).powi(2)).sum()
            }) / paths as f64;
            Ok((max_abs, sq, scale))
        })
        .collect::<Result<_, SolverError>>()?;

    Ok(summarise(&per_node, h))
}

/// Residual of the representation identity
/// `Y_i = E[Y_i] + sum_{j < i} Z_ij dW_j`, path by path.
pub fn m_identity_residual(
    y: &AdaptedProcess,
    z: &TwoParamField,
    ensemble: &PathEnsemble,
) -> Result<ResidualSummary, SolverError> {
    let n = ensemble.grid().steps();
    let paths = ensemble.paths();
    let h = ensemble.grid().step();
    let m = y.dim();
    let d = z.dim_w();

    let per_node: Vec<(f64, f64, f64)> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let row = y.at(i);
            let mut acc = vec![0.0; paths * m];
            let mut centred_sq = 0.0;
            for k in 0..m {
                let mean = pairwise_sum_range(0, paths, |p| row[p * m + k]) / paths as f64;
                for p in 0..paths {
                    acc[p * m + k] = row[p * m + k] - mean;
                }
                centred_sq += pairwise_sum_range(0, paths, |p| {
                    let c = row[p * m + k] - mean;
                    c * c
                }) / paths as f64;
            }
            for j in 0..i {
                let zij = z.block(i, j)?;
                let dw = ensemble.increments_at(j);
                for p in 0..paths {
                    for k in 0..m {
                        for l in 0..d {
                            acc[p * m + k] -= zij[(p * m + k) * d + l] * dw[p * d + l];
                        }
                    }
                }
            }
            let max_abs = acc.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let sq = pairwise_sum_range(0, paths, |p| {
                (0..m).map(|k| acc[p * m + k] * acc[p * m + k]).sum()
            }) / paths as f64;
            Ok((max_abs, sq, centred_sq))
        })
        .collect::<Result<_, SolverError>>()?;

    Ok(summarise(&per_node, h))
}

/// Fold per-node `(max_abs, mean_sq, mean_scale_sq)` triples into a summary.
/// The relative L2 pools numerator and denominator over time; a vanishing
/// denominator with a vanishing numerator reads as zero.
fn summarise(per_node: &[(f64, f64, f64)], h: f64) -> ResidualSummary {
    let max_abs = per_node.iter().fold(0.0f64, |a, (m, _, _)| a.max(*m));
    let num: f64 = per_node.iter().map(|(_, sq, _)| h * sq).sum();
    let den: f64 = per_node.iter().map(|(_, _, sc)| h * sc).sum();
    let rel_l2 = if den > 0.0 {
        (num / den).sqrt()
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    ResidualSummary { max_abs, rel_l2 }
}
