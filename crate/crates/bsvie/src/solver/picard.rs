//! Picard iteration of the fixed-point map on one subinterval, with
//! measured contraction factors and a halving signal when the map visibly
//! fails to contract.

use rayon::prelude::*;

use crate::norms::mp_distance_range;
use crate::surface::{AdaptedProcess, SubintervalRecord, TwoParamField};

use super::bsde::{bsde_family_step, FrozenIterate};
use super::{InitStrategy, SolveContext, SolverError, SolverOptions};

pub use super::InitStrategy as PicardInit;

/// Outcome of one subinterval attempt. `Converged` and `MaxIter` carry the
/// last iterate; `HalveRequested` reports measured non-contraction and asks
/// the driver to split the subinterval.
pub enum PicardResult {
    Converged { y: AdaptedProcess, z: TwoParamField, record: SubintervalRecord },
    MaxIter { y: AdaptedProcess, z: TwoParamField, record: SubintervalRecord },
    HalveRequested { record: SubintervalRecord },
}

/// Martingale-representation cells `Z(t_i, t_j) = (1/h) E[Y_i dW_j | F_j]`
/// for the supplied inner steps. `y_row` is `paths * m`, each returned cell
/// `paths * m * d`.
pub fn extend_m_part(
    ctx: &SolveContext<'_>,
    y_row: &[f64],
    js: impl Iterator<Item = usize>,
) -> Result<Vec<(usize, Vec<f64>)>, SolverError> {
    let ens = ctx.ensemble;
    let paths = ens.paths();
    let m = ctx.spec.dim_y;
    let d = ctx.spec.dim_w;
    let mut column = vec![0.0; paths];
    let mut out = Vec::new();
    for j in js {
        let mut cell = vec![0.0; paths * m * d];
        for k in 0..m {
            for p in 0..paths {
                column[p] = y_row[p * m + k];
            }
            let coeffs = ctx.estimator.martingale_coeffs(&column, ens, j)?;
            for p in 0..paths {
                for l in 0..d {
                    cell[(p * m + k) * d + l] = coeffs[p * d + l];
                }
            }
        }
        out.push((j, cell));
    }
    Ok(out)
}

struct Iterate {
    y: AdaptedProcess,
    z: TwoParamField,
}

fn empty_iterate(ctx: &SolveContext<'_>, lo: usize, hi: usize, m_mode: bool) -> Iterate {
    let n = ctx.ensemble.grid().steps();
    let paths = ctx.ensemble.paths();
    let owned_hi = if hi == n { n } else { hi - 1 };
    let y = AdaptedProcess::zeros(paths, n + 1, ctx.spec.dim_y);
    let mut z = TwoParamField::new(paths, n, ctx.spec.dim_y, ctx.spec.dim_w, m_mode);
    for i in lo..=owned_hi {
        for j in i..hi {
            z.mark_populated(i, j);
        }
        if m_mode {
            for j in lo..i {
                z.mark_populated(i, j);
            }
        }
    }
    Iterate { y, z }
}

/// One application of the fixed-point map against a frozen iterate: run the
/// backward recursion for every owned outer node, then (M-solution mode)
/// complete the new iterate's below-diagonal block inside the subinterval.
fn apply_map(
    ctx: &SolveContext<'_>,
    lo: usize,
    hi: usize,
    rows: &[Option<Vec<f64>>],
    frozen: &Iterate,
    m_mode: bool,
) -> Result<Iterate, SolverError> {
    let n = ctx.ensemble.grid().steps();
    let owned_hi = if hi == n { n } else { hi - 1 };
    let mut next = empty_iterate(ctx, lo, hi, m_mode);

    let frame = FrozenIterate { y: &frozen.y, z: m_mode.then_some(&frozen.z) };
    let computed: Vec<(usize, super::bsde::BsdeRow)> = (lo..=owned_hi)
        .into_par_iter()
        .map(|i| {
            let terminal = rows[i].as_ref().ok_or_else(|| {
                SolverError::Validation(format!("no terminal data for outer node {i}"))
            })?;
            let row = bsde_family_step(ctx, i, hi, i, terminal, &frame)?;
            Ok((i, row))
        })
        .collect::<Result<_, SolverError>>()?;
    for (i, row) in computed {
        next.y.at_mut(i).copy_from_slice(&row.lambda);
        for (offset, cell) in row.z_cells.iter().enumerate() {
            next.z.set_block(i, i + offset, cell);
        }
    }

    if m_mode {
        let extensions: Vec<(usize, Vec<(usize, Vec<f64>)>)> = (lo..=owned_hi)
            .into_par_iter()
            .map(|i| Ok((i, extend_m_part(ctx, next.y.at(i), lo..i)?)))
            .collect::<Result<_, SolverError>>()?;
        for (i, cells) in extensions {
            for (j, cell) in cells {
                next.z.set_block(i, j, &cell);
            }
        }
    }
    Ok(next)
}

/// Iterate the map on `[lo, hi]` until the fixed-point distance between
/// successive iterates falls below `tol`.
///
/// Iteration counting: the map is applied once to the initial iterate as a
/// bootstrap, then each counted iteration applies it again and measures the
/// distance. A constant map therefore converges at iteration 1 with
/// distance zero. When the measured ratio `rho_k = dist_k / dist_{k-1}` is
/// `>= 1` for two consecutive iterations the attempt is abandoned and the
/// driver is asked to halve the subinterval.
pub fn picard_solve_subinterval(
    ctx: &SolveContext<'_>,
    (lo, hi): (usize, usize),
    rows: &[Option<Vec<f64>>],
    opts: &SolverOptions,
    m_mode: bool,
    from_halving: bool,
) -> Result<PicardResult, SolverError> {
    let init = match opts.init {
        InitStrategy::Zero => empty_iterate(ctx, lo, hi, m_mode),
        InitStrategy::TerminalPropagated => terminal_propagated(ctx, lo, hi, rows, m_mode)?,
    };
    let mut cur = apply_map(ctx, lo, hi, rows, &init, m_mode)?;

    let mut distances = Vec::new();
    let mut rhos = Vec::new();
    let h = ctx.h();
    let p = ctx.spec.p;

    for k in 1..=opts.max_iter {
        let next = apply_map(ctx, lo, hi, rows, &cur, m_mode)?;
        let dist = mp_distance_range(&next.y, &next.z, &cur.y, &cur.z, p, h, lo, hi)?;
        if k >= 2 {
            let prev = distances[k - 2];
            rhos.push(if prev > 0.0 { dist / prev } else { 0.0 });
        }
        distances.push(dist);
        cur = next;

        let record = |converged: bool, halved: bool| SubintervalRecord {
            lo,
            hi,
            iterations: k,
            distances: distances.clone(),
            contraction_factors: rhos.clone(),
            converged,
            halved,
            from_halving,
        };

        if dist < opts.tol {
            return Ok(PicardResult::Converged { y: cur.y, z: cur.z, record: record(true, false) });
        }
        let len = rhos.len();
        if len >= 2 && rhos[len - 1] >= 1.0 && rhos[len - 2] >= 1.0 {
            return Ok(PicardResult::HalveRequested { record: record(false, true) });
        }
    }

    let record = SubintervalRecord {
        lo,
        hi,
        iterations: opts.max_iter,
        distances,
        contraction_factors: rhos,
        converged: false,
        halved: false,
        from_halving,
    };
    Ok(PicardResult::MaxIter { y: cur.y, z: cur.z, record })
}

/// Nonzero initial iterate: each owned node's `y` is the adapted projection
/// of its terminal data, with the below-diagonal block completed to match.
fn terminal_propagated(
    ctx: &SolveContext<'_>,
    lo: usize,
    hi: usize,
    rows: &[Option<Vec<f64>>],
    m_mode: bool,
) -> Result<Iterate, SolverError> {
    let n = ctx.ensemble.grid().steps();
    let paths = ctx.ensemble.paths();
    let m = ctx.spec.dim_y;
    let owned_hi = if hi == n { n } else { hi - 1 };
    let mut iterate = empty_iterate(ctx, lo, hi, m_mode);
    let mut column = vec![0.0; paths];
    for i in lo..=owned_hi {
        let row = rows[i].as_ref().ok_or_else(|| {
            SolverError::Validation(format!("no terminal data for outer node {i}"))
        })?;
        if i == n {
            // The terminal node's data is already measurable there.
            iterate.y.at_mut(i).copy_from_slice(row);
            continue;
        }
        for k in 0..m {
            for p in 0..paths {
                column[p] = row[p * m + k];
            }
            let ce = ctx.estimator.cond_exp(&column, ctx.ensemble, i)?;
            for p in 0..paths {
                iterate.y.at_mut(i)[p * m + k] = ce.values[p];
            }
        }
    }
    if m_mode {
        for i in lo..=owned_hi {
            let cells = extend_m_part(ctx, iterate.y.at(i), lo..i)?;
            for (j, cell) in cells {
                iterate.z.set_block(i, j, &cell);
            }
        }
    }
    Ok(iterate)
}
