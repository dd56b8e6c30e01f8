//! Discrete norm estimators and empirical inequality checks.
//!
//! All time integrals use left-endpoint quadrature (`h`-weighted sums over
//! nodes `0..N`), matching the backward Euler convention of the solver.
//! Expectations are ensemble means with deterministic pairwise reduction.

use serde::Serialize;
use thiserror::Error;

use crate::dsl::Expr;
use crate::ensemble::PathEnsemble;
use crate::estimator::CondExpEstimator;
use crate::problem::{ProblemSpec, SolveMode};
use crate::reduce::{pairwise_sum_range, pairwise_sum};
use crate::surface::{AdaptedProcess, TwoParamField};

#[derive(Debug, Error)]
pub enum NormError {
    #[error("surfaces live on different grids or ensembles")]
    ShapeMismatch,
    #[error("field block required by the norm is not populated: {0}")]
    Field(#[from] crate::surface::FieldError),
    #[error("stability probe solve failed: {0}")]
    Probe(#[from] Box<crate::solver::SolverError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NormKind {
    /// `[E int |Y|^p dt + E int (int |Z(t,s)|^2 ds)^(p/2) dt]^(1/p)` with the
    /// inner integral over the populated region (full square for
    /// M-solutions, `s >= t` in adapted mode).
    Hp,
    /// Same shape but the inner integral always runs over `s in [t, T]`;
    /// this is the fixed-point metric of the solver.
    Mp,
}

/// A norm evaluation. `value^p = y_part + z_part`.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct NormReport {
    pub kind: NormKind,
    pub value: f64,
    pub p: f64,
    pub y_part: f64,
    pub z_part: f64,
    pub sample_count: usize,
}

fn component_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Shared kernel for both norms: `z_inner_lo(i)` gives the start of the
/// inner `j` range at outer node `i` (the end is always `N`).
fn norm_parts<FLo: Fn(usize) -> usize>(
    y: &AdaptedProcess,
    z: &TwoParamField,
    p: f64,
    h: f64,
    inner_lo: FLo,
) -> Result<(f64, f64), NormError> {
    let paths = y.paths();
    let steps = z.inner_steps();
    if z.paths() != paths || y.nodes() != steps + 1 {
        return Err(NormError::ShapeMismatch);
    }
    let m = y.dim();
    let md = z.dim_y() * z.dim_w();
    let mut y_part = 0.0;
    let mut z_part = 0.0;
    for i in 0..steps {
        let row = y.at(i);
        let y_mean = pairwise_sum_range(0, paths, |pth| {
            component_norm(&row[pth * m..(pth + 1) * m]).powf(p)
        }) / paths as f64;
        y_part += h * y_mean;

        let lo = inner_lo(i);
        let mut blocks = Vec::with_capacity(steps.saturating_sub(lo));
        for j in lo..steps {
            blocks.push(z.block(i, j)?);
        }
        let z_mean = pairwise_sum_range(0, paths, |pth| {
            let mut acc = 0.0;
            for block in &blocks {
                let cell = &block[pth * md..(pth + 1) * md];
                acc += cell.iter().map(|v| v * v).sum::<f64>() * h;
            }
            acc.powf(p / 2.0)
        }) / paths as f64;
        z_part += h * z_mean;
    }
    Ok((y_part, z_part))
}

/// The solution-space norm over `[0, T]`.
pub fn hp_norm(
    y: &AdaptedProcess,
    z: &TwoParamField,
    p: f64,
    ensemble: &PathEnsemble,
) -> Result<NormReport, NormError> {
    let h = ensemble.grid().step();
    let full_square = z.allows_lower();
    let (y_part, z_part) = norm_parts(y, z, p, h, |i| if full_square { 0 } else { i })?;
    Ok(NormReport {
        kind: NormKind::Hp,
        value: (y_part + z_part).powf(1.0 / p),
        p,
        y_part,
        z_part,
        sample_count: ensemble.paths(),
    })
}

/// The fixed-point norm of `(y, z)` over `[0, T]` (inner integral `s >= t`).
pub fn mp_norm(
    y: &AdaptedProcess,
    z: &TwoParamField,
    p: f64,
    ensemble: &PathEnsemble,
) -> Result<NormReport, NormError> {
    let h = ensemble.grid().step();
    let (y_part, z_part) = norm_parts(y, z, p, h, |i| i)?;
    Ok(NormReport {
        kind: NormKind::Mp,
        value: (y_part + z_part).powf(1.0 / p),
        p,
        y_part,
        z_part,
        sample_count: ensemble.paths(),
    })
}

/// Distance between two surfaces in the fixed-point norm, restricted to
/// outer nodes `[lo, hi)` with inner range `[max(i, lo), hi)`. This is the
/// Picard stopping metric; `(lo, hi) = (0, N)` gives the full-interval norm
/// of the difference.
pub fn mp_distance_range(
    ya: &AdaptedProcess,
    za: &TwoParamField,
    yb: &AdaptedProcess,
    zb: &TwoParamField,
    p: f64,
    h: f64,
    lo: usize,
    hi: usize,
) -> Result<f64, NormError> {
    let paths = ya.paths();
    if yb.paths() != paths || za.paths() != paths || zb.paths() != paths {
        return Err(NormError::ShapeMismatch);
    }
    let m = ya.dim();
    let md = za.dim_y() * za.dim_w();
    let mut total = 0.0;
    for i in lo..hi {
        let ra = ya.at(i);
        let rb = yb.at(i);
        let y_mean = pairwise_sum_range(0, paths, |pth| {
            let mut acc = 0.0;
            for k in 0..m {
                let dv = ra[pth * m + k] - rb[pth * m + k];
                acc += dv * dv;
            }
            acc.sqrt().powf(p)
        }) / paths as f64;

        let mut blocks = Vec::with_capacity(hi - i);
        for j in i..hi {
            blocks.push((za.block(i, j)?, zb.block(i, j)?));
        }
        let z_mean = pairwise_sum_range(0, paths, |pth| {
            let mut acc = 0.0;
            for (ba, bb) in &blocks {
                for c in 0..md {
                    let dv = ba[pth * md + c] - bb[pth * md + c];
                    acc += dv * dv * h;
                }
            }
            acc.powf(p / 2.0)
        }) / paths as f64;
        total += h * (y_mean + z_mean);
    }
    Ok(total.powf(1.0 / p))
}

/// Full-interval fixed-point distance between two surfaces.
pub fn mp_norm_distance(
    a: (&AdaptedProcess, &TwoParamField),
    b: (&AdaptedProcess, &TwoParamField),
    p: f64,
    ensemble: &PathEnsemble,
) -> Result<f64, NormError> {
    let steps = ensemble.grid().steps();
    if a.0.nodes() != steps + 1 || b.0.nodes() != steps + 1 {
        return Err(NormError::ShapeMismatch);
    }
    mp_distance_range(a.0, a.1, b.0, b.1, p, ensemble.grid().step(), 0, steps)
}

/// Both directions of the martingale moment inequalities for the
/// below-diagonal block of `z`:
/// `lhs = E int |sum_{j<i} z(t_i,t_j) dW_j|^p dt` and
/// `rhs = E int (sum_{j<i} |z(t_i,t_j)|^2 h)^(p/2) dt`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentInequalityReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; `None` when the denominator vanishes.
    pub forward_ratio: Option<f64>,
    /// `rhs / lhs`.
    pub reverse_ratio: Option<f64>,
}

pub fn check_moment_inequalities(
    z: &TwoParamField,
    p: f64,
    ensemble: &PathEnsemble,
) -> Result<MomentInequalityReport, NormError> {
    let paths = ensemble.paths();
    let steps = ensemble.grid().steps();
    let h = ensemble.grid().step();
    let d = ensemble.dim();
    let m = z.dim_y();
    let md = m * d;
    if z.paths() != paths || z.inner_steps() != steps {
        return Err(NormError::ShapeMismatch);
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 0..=steps {
        if i == 0 {
            continue; // empty stochastic integral at t_0
        }
        let mut blocks = Vec::with_capacity(i);
        for j in 0..i {
            blocks.push(z.block(i, j)?);
        }
        let lhs_mean = pairwise_sum_range(0, paths, |pth| {
            let mut acc = vec![0.0; m];
            for (j, block) in blocks.iter().enumerate() {
                let cell = &block[pth * md..(pth + 1) * md];
                for k in 0..m {
                    for l in 0..d {
                        acc[k] += cell[k * d + l] * ensemble.increment(j, pth, l);
                    }
                }
            }
            component_norm(&acc).powf(p)
        }) / paths as f64;
        let rhs_mean = pairwise_sum_range(0, paths, |pth| {
            let mut acc = 0.0;
            for block in &blocks {
                let cell = &block[pth * md..(pth + 1) * md];
                acc += cell.iter().map(|v| v * v).sum::<f64>() * h;
            }
            acc.powf(p / 2.0)
        }) / paths as f64;
        lhs += h * lhs_mean;
        rhs += h * rhs_mean;
    }
    Ok(MomentInequalityReport {
        lhs,
        rhs,
        forward_ratio: (rhs != 0.0).then(|| lhs / rhs),
        reverse_ratio: (lhs != 0.0).then(|| rhs / lhs),
    })
}

/// One row of the stability table: perturbation scale, input distance
/// `[E int |dPsi|^p dt]^(1/p)`, output distance in the solution norm, and
/// their ratio.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StabilityRow {
    pub scale: f64,
    pub input_distance: f64,
    pub output_distance: f64,
    pub amplification: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
}

/// Solve the problem and a terminal-perturbed copy `psi + scale * dpsi` on
/// the same ensemble (common random numbers), for `scale` and `2 * scale`,
/// and report input/output distances. For affine problems under exact
/// estimation the output distance is exactly linear in the scale.
pub fn stability_probe(
    spec: &ProblemSpec,
    dpsi: &[Expr],
    scale: f64,
    ensemble: &PathEnsemble,
    estimator: &CondExpEstimator,
    opts: &crate::solver::SolverOptions,
) -> Result<StabilityReport, NormError> {
    use crate::dsl::{BinOp, Expr as E};
    assert_eq!(dpsi.len(), spec.dim_y, "one perturbation component per Y component");
    let solve = |s: &ProblemSpec| -> Result<crate::solver::SolveOutcome, NormError> {
        let run = match s.mode {
            SolveMode::MSolution => crate::solver::solve_msolution(s, ensemble, estimator, opts),
            SolveMode::Adapted => crate::solver::solve_adapted(s, ensemble, estimator, opts),
        };
        run.map_err(|e| NormError::Probe(Box::new(e)))
    };
    let base = solve(spec)?;
    let mut rows = Vec::new();
    for factor in [1.0, 2.0] {
        let eps = scale * factor;
        let mut perturbed = spec.clone();
        perturbed.terminal = spec
            .terminal
            .iter()
            .zip(dpsi)
            .map(|(psi, d)| {
                E::Bin(
                    BinOp::Add,
                    Box::new(psi.clone()),
                    Box::new(E::Bin(
                        BinOp::Mul,
                        Box::new(E::Lit(eps)),
                        Box::new(d.clone()),
                    )),
                )
            })
            .collect();
        let shifted = solve(&perturbed)?;
        let input_distance = terminal_distance(spec, eps, dpsi, ensemble)
            .map_err(|_| NormError::ShapeMismatch)?;
        let output_distance = mp_norm_distance(
            (&base.surface.y, &base.surface.z),
            (&shifted.surface.y, &shifted.surface.z),
            spec.p,
            ensemble,
        )?;
        let amplification = if input_distance > 0.0 {
            output_distance / input_distance
        } else {
            0.0
        };
        rows.push(StabilityRow { scale: eps, input_distance, output_distance, amplification });
    }
    Ok(StabilityReport { rows })
}

/// `[E int |eps * dpsi(t)|^p dt]^(1/p)` by left-endpoint quadrature.
fn terminal_distance(
    spec: &ProblemSpec,
    eps: f64,
    dpsi: &[Expr],
    ensemble: &PathEnsemble,
) -> Result<f64, crate::dsl::EvalError> {
    let steps = ensemble.grid().steps();
    let paths = ensemble.paths();
    let h = ensemble.grid().step();
    let d = ensemble.dim();
    let x = ensemble.values_at(steps);
    let mut total = 0.0;
    let mut comp = vec![0.0; spec.dim_y];
    for i in 0..steps {
        let t = ensemble.grid().node(i);
        let mut per_path = vec![0.0; paths];
        for (pth, slot) in per_path.iter_mut().enumerate() {
            let args = crate::dsl::TerminalArgs { t, x: &x[pth * d..(pth + 1) * d] };
            for (k, e) in dpsi.iter().enumerate() {
                comp[k] = eps * e.eval(&args)?;
            }
            *slot = component_norm(&comp).powf(spec.p);
        }
        total += h * pairwise_sum(&per_path) / paths as f64;
    }
    Ok(total.powf(1.0 / spec.p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    fn constant_surfaces(
        paths: usize,
        steps: usize,
        y_value: f64,
        z_value: f64,
        allow_lower: bool,
    ) -> (AdaptedProcess, TwoParamField) {
        let mut y = AdaptedProcess::zeros(paths, steps + 1, 1);
        for i in 0..=steps {
            y.at_mut(i).fill(y_value);
        }
        let mut z = TwoParamField::new(paths, steps, 1, 1, allow_lower);
        z.fill_constant(z_value);
        (y, z)
    }

    #[test]
    fn constant_y_norm() {
        // Y = c, Z = 0 on [0, T]: value = (c^p T)^(1/p).
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let ens = PathEnsemble::gaussian(1, 16, &grid, 1).unwrap();
        let (y, z) = constant_surfaces(16, 8, 1.5, 0.0, true);
        for p in [1.5, 2.0, 3.0] {
            let r = hp_norm(&y, &z, p, &ens).unwrap();
            let expect = (1.5f64.powf(p) * 2.0).powf(1.0 / p);
            assert!((r.value - expect).abs() < 1e-12);
            assert!((r.value.powf(p) - (r.y_part + r.z_part)).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_field_full_square_norm_is_one() {
        // Y = 0, Z = 1 on the full square with T = 1: the inner integral is
        // T for every t, so the norm is exactly 1 on the discrete grid too.
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let ens = PathEnsemble::gaussian(1, 4, &grid, 1).unwrap();
        let (y, z) = constant_surfaces(4, 8, 0.0, 1.0, true);
        for p in [1.5, 2.0] {
            let r = hp_norm(&y, &z, p, &ens).unwrap();
            assert!((r.value - 1.0).abs() < 1e-12, "p = {p}: {}", r.value);
        }
    }

    #[test]
    fn norms_are_p_homogeneous() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
        let paths = ens.paths();
        let mut y = AdaptedProcess::zeros(paths, 5, 1);
        for i in 0..=4 {
            for p in 0..paths {
                y.at_mut(i)[p] = ens.value(i, p, 0) + 0.3;
            }
        }
        let mut z = TwoParamField::new(paths, 4, 1, 1, true);
        for i in 0..=4 {
            for j in 0..4 {
                let vals: Vec<f64> = (0..paths).map(|p| ens.value(j, p, 0) * 0.5 - 0.1).collect();
                z.set_block(i, j, &vals);
            }
        }
        let mut y2 = y.clone();
        let mut z2 = z.clone();
        for i in 0..=4 {
            for v in y2.at_mut(i) {
                *v *= 2.0;
            }
            for j in 0..4 {
                let doubled: Vec<f64> = z.block(i, j).unwrap().iter().map(|v| v * 2.0).collect();
                z2.set_block(i, j, &doubled);
            }
        }
        for p in [1.25, 1.5, 2.0] {
            let a = hp_norm(&y, &z, p, &ens).unwrap().value;
            let b = hp_norm(&y2, &z2, p, &ens).unwrap().value;
            assert!((b - 2.0 * a).abs() < 1e-12 * a.max(1.0));
            let am = mp_norm(&y, &z, p, &ens).unwrap().value;
            let bm = mp_norm(&y2, &z2, p, &ens).unwrap().value;
            assert!((bm - 2.0 * am).abs() < 1e-12 * am.max(1.0));
        }
    }

    #[test]
    fn distance_of_equal_surfaces_is_zero() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let ens = PathEnsemble::gaussian(9, 8, &grid, 1).unwrap();
        let (y, z) = constant_surfaces(8, 4, 0.7, -0.2, true);
        assert_eq!(mp_norm_distance((&y, &z), (&y, &z), 1.5, &ens).unwrap(), 0.0);
        let (y0, z0) = constant_surfaces(8, 4, 0.0, 0.0, true);
        let d = mp_norm_distance((&y, &z), (&y0, &z0), 1.5, &ens).unwrap();
        // Against zero, the distance is the norm of (y, z) itself.
        let n = mp_norm(&y, &z, 1.5, &ens).unwrap().value;
        assert!((d - n).abs() < 1e-14);
    }

    #[test]
    fn zero_field_moment_report() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
        let (_, z) = constant_surfaces(ens.paths(), 4, 0.0, 0.0, true);
        let r = check_moment_inequalities(&z, 1.5, &ens).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.forward_ratio.is_none() && r.reverse_ratio.is_none());
    }

    #[test]
    fn unit_field_is_an_isometry_at_p_two_on_the_tree() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
        let (_, z) = constant_surfaces(ens.paths(), 8, 0.0, 1.0, true);
        let r = check_moment_inequalities(&z, 2.0, &ens).unwrap();
        let ratio = r.forward_ratio.unwrap();
        assert!((ratio - 1.0).abs() <= 1e-12, "ratio {ratio}");
    }
}
