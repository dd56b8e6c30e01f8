//! CSV surface exports and the JSON run reports.
//!
//! Output is byte-deterministic for a fixed (config, seed): floats print in
//! shortest round-trip form, rows follow grid order, and JSON fields follow
//! struct declaration order. The single exception is `wall_clock_ms`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use bsvie::ensemble::PathEnsemble;
use bsvie::norms::NormReport;
use bsvie::problem::ValidationReport;
use bsvie::reduce::pairwise_sum_range;
use bsvie::surface::SolutionSurface;

/// Quantile levels reported in `y_surface.csv`.
pub const QUANTILES: [f64; 3] = [0.10, 0.50, 0.90];

/// `t, mean_Y, lp_moment_Y, q10, q50, q90` per node (plus a leading
/// `component` column for vector problems).
pub fn y_surface_csv(surface: &SolutionSurface, ensemble: &PathEnsemble, p: f64) -> String {
    let paths = surface.y.paths();
    let m = surface.y.dim();
    let mut out = String::new();
    if m == 1 {
        out.push_str("t,mean_Y,lp_moment_Y,q10,q50,q90\n");
    } else {
        out.push_str("component,t,mean_Y,lp_moment_Y,q10,q50,q90\n");
    }
    let mut sorted = vec![0.0; paths];
    for i in 0..surface.y.nodes() {
        let t = ensemble.grid().node(i);
        let row = surface.y.at(i);
        for k in 0..m {
            let mean = pairwise_sum_range(0, paths, |pth| row[pth * m + k]) / paths as f64;
            let lp = (pairwise_sum_range(0, paths, |pth| row[pth * m + k].abs().powf(p))
                / paths as f64)
                .powf(1.0 / p);
            for (pth, slot) in sorted.iter_mut().enumerate() {
                *slot = row[pth * m + k];
            }
            sorted.sort_by(f64::total_cmp);
            let q = |level: f64| -> f64 {
                let pos = level * (paths - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let frac = pos - lo as f64;
                sorted[lo] * (1.0 - frac) + sorted[hi] * frac
            };
            if m == 1 {
                let _ = writeln!(
                    out,
                    "{t},{mean},{lp},{q10},{q50},{q90}",
                    q10 = q(QUANTILES[0]),
                    q50 = q(QUANTILES[1]),
                    q90 = q(QUANTILES[2]),
                );
            } else {
                let _ = writeln!(
                    out,
                    "{k},{t},{mean},{lp},{q10},{q50},{q90}",
                    q10 = q(QUANTILES[0]),
                    q50 = q(QUANTILES[1]),
                    q90 = q(QUANTILES[2]),
                );
            }
        }
    }
    out
}

/// `t_i, t_j, l2_mean_Z` over populated cells,
/// `l2_mean_Z = sqrt(mean |Z(t_i, t_j)|_F^2)`.
pub fn z_surface_csv(surface: &SolutionSurface, ensemble: &PathEnsemble) -> String {
    let paths = surface.z.paths();
    let md = surface.z.dim_y() * surface.z.dim_w();
    let mut out = String::from("t_i,t_j,l2_mean_Z\n");
    for i in 0..surface.z.outer_nodes() {
        for j in 0..surface.z.inner_steps() {
            if !surface.z.is_populated(i, j) {
                continue;
            }
            let block = surface.z.block(i, j).expect("populated");
            let mean_sq = pairwise_sum_range(0, paths, |pth| {
                block[pth * md..(pth + 1) * md].iter().map(|v| v * v).sum()
            }) / paths as f64;
            let _ = writeln!(
                out,
                "{},{},{}",
                ensemble.grid().node(i),
                ensemble.grid().node(j),
                mean_sq.sqrt()
            );
        }
    }
    out
}

/// Per-path dump of `Y` (`--dump-paths`): `path, t, Y_k...` rows.
pub fn y_paths_csv(surface: &SolutionSurface, ensemble: &PathEnsemble) -> String {
    let m = surface.y.dim();
    let mut out = String::from("path,t");
    for k in 0..m {
        let _ = write!(out, ",Y_{k}");
    }
    out.push('\n');
    for pth in 0..surface.y.paths() {
        for i in 0..surface.y.nodes() {
            let _ = write!(out, "{pth},{}", ensemble.grid().node(i));
            for k in 0..m {
                let _ = write!(out, ",{}", surface.y.value(i, pth, k));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(serde::Serialize)]
pub struct Residuals {
    pub equation: Option<bsvie::surface::ResidualSummary>,
    pub m_identity: Option<bsvie::surface::ResidualSummary>,
}

#[derive(serde::Serialize)]
pub struct Norms {
    pub solution_mp: Option<NormReport>,
    pub solution_hp: Option<NormReport>,
}

/// The solve report written to `report.json`.
#[derive(serde::Serialize)]
pub struct SolveReport {
    pub config: std::collections::BTreeMap<String, String>,
    pub validation: ValidationReport,
    pub partition: Option<bsvie::grid::PartitionPlan>,
    pub subintervals: Vec<bsvie::surface::SubintervalRecord>,
    pub residuals: Residuals,
    pub norms: Norms,
    pub estimator_degree_fallbacks: usize,
    pub converged: bool,
    pub wall_clock_ms: f64,
}

/// The verify report written to `verify_report.json`.
#[derive(serde::Serialize)]
pub struct VerifyReport {
    pub case: String,
    pub estimator: String,
    pub config: std::collections::BTreeMap<String, String>,
    pub reference: String,
    pub blocks: bsvie::oracles::DiscrepancyReport,
    pub closed_form_blocks: Option<bsvie::oracles::DiscrepancyReport>,
    pub closed_form_rel_y: Option<f64>,
    pub thresholds: Thresholds,
    pub pass: bool,
    pub wall_clock_ms: f64,
}

#[derive(serde::Serialize)]
pub struct Thresholds {
    pub tree_max_abs: Option<f64>,
    pub closed_form_max_abs: Option<f64>,
    pub closed_form_rel_y: Option<f64>,
    pub regress_rel_l2_y: Option<f64>,
    pub regress_rel_l2_z: Option<f64>,
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(dir, name, &text)
}
