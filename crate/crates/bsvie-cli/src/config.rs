//! Run configuration: the flat `key = value` file holding both the problem
//! definition and the run settings, plus command-line overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use bsvie::problem::{parse_kv_text, ProblemSpec};

/// Conditional-expectation estimator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum EstimatorChoice {
    Exact,
    Regress { degree: usize },
}

impl EstimatorChoice {
    pub fn parse(raw: &str) -> Result<Self> {
        if raw == "exact" {
            return Ok(Self::Exact);
        }
        if let Some(deg) = raw.strip_prefix("regress:") {
            let degree: usize =
                deg.parse().with_context(|| format!("bad regression degree '{deg}'"))?;
            if degree > 12 {
                bail!("regression degree {degree} is unreasonably large");
            }
            return Ok(Self::Regress { degree });
        }
        bail!("estimator must be 'exact' or 'regress:<degree>', got '{raw}'")
    }

    pub fn label(&self) -> String {
        match self {
            Self::Exact => "exact".into(),
            Self::Regress { degree } => format!("regress:{degree}"),
        }
    }
}

/// Everything a run needs: problem spec plus numeric knobs. Flag overrides
/// are applied after the file is read.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub paths: usize,
    pub grid: usize,
    pub seed: u64,
    pub estimator: EstimatorChoice,
    pub tol: f64,
    pub max_iter: usize,
    pub kappa_target: f64,
    pub c_cal: f64,
    pub out_dir: PathBuf,
}

const RUN_KEYS: &[&str] = &[
    "paths", "grid", "seed", "estimator", "tol", "max_iter", "kappa_target", "c_cal", "out_dir",
];

fn problem_key(key: &str) -> bool {
    matches!(
        key,
        "horizon" | "dim_y" | "dim_w" | "p" | "mode" | "lipschitz_l1" | "lipschitz_l2"
            | "lipschitz_l3" | "lipschitz_eps"
    ) || key == "terminal"
        || key == "generator"
        || key.starts_with("terminal_")
        || key.starts_with("generator_")
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let map = parse_kv_text(text)?;
        for key in map.keys() {
            if !problem_key(key) && !RUN_KEYS.contains(&key.as_str()) {
                bail!("unknown config key '{key}'");
            }
        }
        let problem = ProblemSpec::from_kv_map(&map)?;
        let get_or = |key: &str, default: f64| -> Result<f64> {
            match map.get(key) {
                None => Ok(default),
                Some(raw) => raw.parse().with_context(|| format!("bad value for '{key}'")),
            }
        };
        let get_usize = |key: &str, default: usize| -> Result<usize> {
            match map.get(key) {
                None => Ok(default),
                Some(raw) => raw.parse().with_context(|| format!("bad value for '{key}'")),
            }
        };
        Ok(Self {
            problem,
            paths: get_usize("paths", 10_000)?,
            grid: get_usize("grid", 8)?,
            seed: get_or("seed", 0.0)? as u64,
            estimator: EstimatorChoice::parse(
                map.get("estimator").map(String::as_str).unwrap_or("regress:3"),
            )?,
            tol: get_or("tol", 1e-10)?,
            max_iter: get_usize("max_iter", 50)?,
            kappa_target: get_or("kappa_target", 0.5)?,
            c_cal: get_or("c_cal", 8.0)?,
            out_dir: PathBuf::from(map.get("out_dir").cloned().unwrap_or_else(|| "out".into())),
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_text(&text)
    }

    /// Range checks that mirror problem validation for the run knobs.
    pub fn check(&self) -> Result<()> {
        if self.paths == 0 {
            bail!("paths must be at least 1");
        }
        if self.grid == 0 {
            bail!("grid must have at least 1 step");
        }
        if !(self.tol >= 0.0) {
            bail!("tol must be nonnegative");
        }
        if self.max_iter == 0 {
            bail!("max_iter must be at least 1");
        }
        if !(self.kappa_target > 0.0) || !(self.c_cal > 0.0) {
            bail!("kappa_target and c_cal must be positive");
        }
        Ok(())
    }

    /// Echo of the effective configuration for the JSON report.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut map: BTreeMap<String, String> = bsvie::problem::parse_kv_text(&self.problem.to_kv_text())
            .expect("round trip")
            .into_iter()
            .collect();
        map.insert("paths".into(), self.paths.to_string());
        map.insert("grid".into(), self.grid.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("estimator".into(), self.estimator.label());
        map.insert("tol".into(), format!("{}", self.tol));
        map.insert("max_iter".into(), self.max_iter.to_string());
        map.insert("kappa_target".into(), format!("{}", self.kappa_target));
        map.insert("c_cal".into(), format!("{}", self.c_cal));
        map.insert("out_dir".into(), self.out_dir.display().to_string());
        map
    }
}
