//! Problem specifications: terminal condition, generator, exponent, solve
//! mode, Lipschitz metadata, hypothesis validation, and the flat
//! `key = value` config format.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::dsl::{parse_expr, Expr, ExprContext, ParseError, TimePairArgs};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("missing config key '{0}'")]
    MissingKey(String),
    #[error("bad value for '{key}': {msg}")]
    BadValue { key: String, msg: String },
    #[error("in '{key}': {source}")]
    BadExpr {
        key: String,
        #[source]
        source: ParseError,
    },
    #[error("malformed config line {line}: expected 'key = value'")]
    BadLine { line: usize },
    #[error("hypothesis validation failed: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveMode {
    MSolution,
    Adapted,
}

impl fmt::Display for SolveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveMode::MSolution => write!(f, "m-solution"),
            SolveMode::Adapted => write!(f, "adapted"),
        }
    }
}

/// One Lipschitz bound `L_i`: a constant or a deterministic `(t, s)` kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum LipschitzBound {
    Constant(f64),
    Kernel(Expr),
}

/// Conjugate-exponent pair `1/p + 1/q = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PNormConfig {
    pub p: f64,
    pub q: f64,
}

impl PNormConfig {
    pub fn new(p: f64) -> Result<Self, ProblemError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(ProblemError::BadValue {
                key: "p".into(),
                msg: format!("exponent must be finite and > 1, got {p}"),
            });
        }
        let q = p / (p - 1.0);
        debug_assert!((1.0 / p + 1.0 / q - 1.0).abs() < 1e-12);
        Ok(Self { p, q })
    }
}

/// A BSVIE problem: `Y(t) = psi(t) + int_t^T g ds - int_t^T Z dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    /// Horizon `T`.
    pub horizon: f64,
    /// State dimension `m` (components of `Y`).
    pub dim_y: usize,
    /// Brownian dimension `d`.
    pub dim_w: usize,
    /// Integrability exponent `p > 1`.
    pub p: f64,
    pub mode: SolveMode,
    /// Terminal condition, one expression per `Y` component, in `(t, x)`.
    pub terminal: Vec<Expr>,
    /// Generator, one expression per `Y` component, in `(t, s, y, z, zeta, w)`.
    pub generator: Vec<Expr>,
    /// Declared bounds `[L1, L2, L3]`; estimated by sampling when absent.
    pub lipschitz: [Option<LipschitzBound>; 3],
    /// The epsilon in the `L2^(2+eps)` integrability condition. Only needed
    /// when `L2` is a kernel; any positive value works for constants.
    pub lipschitz_eps: Option<f64>,
}

impl ProblemSpec {
    pub fn dims(&self) -> (usize, usize) {
        (self.dim_y, self.dim_w)
    }

    /// Resolve each declared Lipschitz bound to a usable constant: constants
    /// pass through, kernels are replaced by their sup over a quadrature
    /// grid. `None` entries stay `None` (caller estimates by sampling).
    pub fn lipschitz_constants(&self) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        for (slot, bound) in out.iter_mut().zip(&self.lipschitz) {
            *slot = match bound {
                None => None,
                Some(LipschitzBound::Constant(c)) => Some(*c),
                Some(LipschitzBound::Kernel(k)) => Some(kernel_sup(k, self.horizon)),
            };
        }
        out
    }
}

const QUADRATURE_POINTS: usize = 256;

/// Sup of a `(t, s)` kernel over the triangle `0 <= t <= s <= T` on a fixed
/// evaluation grid.
fn kernel_sup(kernel: &Expr, horizon: f64) -> f64 {
    let n = QUADRATURE_POINTS;
    let mut sup = 0.0f64;
    for it in 0..=n {
        let t = horizon * it as f64 / n as f64;
        for is in it..=n {
            let s = horizon * is as f64 / n as f64;
            if let Ok(v) = kernel.eval(&TimePairArgs { t, s }) {
                sup = sup.max(v.abs());
            }
        }
    }
    sup
}

/// Left-endpoint quadrature of `|K(a, b)|^power` in the inner variable, sup
/// over the outer one. `orientation` selects which argument integrates.
fn kernel_sup_integral(
    kernel: &Expr,
    horizon: f64,
    power: f64,
    inner_is_first_arg: bool,
) -> f64 {
    let n = QUADRATURE_POINTS;
    let h = horizon / n as f64;
    let mut sup = 0.0f64;
    for outer_idx in 0..=n {
        let outer = horizon * outer_idx as f64 / n as f64;
        let mut acc = 0.0;
        // Inner variable runs over [0, outer] when it is the first argument
        // (integrals of L(s, t) ds over s <= t) and over [outer, T] otherwise.
        let (lo, hi) = if inner_is_first_arg { (0, outer_idx) } else { (outer_idx, n) };
        for inner_idx in lo..hi {
            let inner = horizon * inner_idx as f64 / n as f64;
            let (t, s) = if inner_is_first_arg { (inner, outer) } else { (outer, inner) };
            if let Ok(v) = kernel.eval(&TimePairArgs { t, s }) {
                acc += v.abs().powf(power) * h;
            }
        }
        sup = sup.max(acc);
    }
    sup
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Pass/fail per hypothesis, in a fixed order.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failure_summary(&self) -> String {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Check the standing hypotheses: `p > 1`, mode/exponent compatibility
/// (M-solutions need `1 < p <= 2`; `p = 2` is admitted as the classical
/// case), zeta-independence of the generator in adapted mode, and — for
/// kernel-valued bounds — finiteness of the integrability conditions by
/// quadrature. Constant bounds satisfy every sup-integral condition
/// automatically on a finite horizon.
pub fn validate_problem(spec: &ProblemSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(CheckResult { name: name.into(), passed, detail });
    };

    let p_ok = spec.p.is_finite() && spec.p > 1.0;
    push("p_gt_1", p_ok, format!("p = {}", spec.p));

    let mode_ok = match spec.mode {
        SolveMode::MSolution => spec.p <= 2.0,
        SolveMode::Adapted => true,
    };
    push(
        "mode_p_compatible",
        mode_ok,
        if mode_ok {
            format!("mode {} admits p = {}", spec.mode, spec.p)
        } else {
            format!("m-solution mode requires 1 < p <= 2, got p = {}", spec.p)
        },
    );

    let zeta_used = spec.generator.iter().any(Expr::uses_zeta);
    let zeta_ok = spec.mode == SolveMode::MSolution || !zeta_used;
    push(
        "zeta_free_in_adapted_mode",
        zeta_ok,
        if zeta_ok {
            "ok".into()
        } else {
            "generator reads zeta but the adapted equation has no below-diagonal argument".into()
        },
    );

    push(
        "dimensions",
        spec.dim_y >= 1
            && spec.dim_w >= 1
            && spec.terminal.len() == spec.dim_y
            && spec.generator.len() == spec.dim_y,
        format!(
            "m = {}, d = {}, |terminal| = {}, |generator| = {}",
            spec.dim_y,
            spec.dim_w,
            spec.terminal.len(),
            spec.generator.len()
        ),
    );

    push("horizon_positive", spec.horizon > 0.0, format!("T = {}", spec.horizon));

    // Integrability of the Lipschitz data. For kernels the relevant
    // sup-integrals are evaluated numerically and only need to be finite.
    let q = if p_ok { spec.p / (spec.p - 1.0) } else { f64::NAN };
    for (idx, bound) in spec.lipschitz.iter().enumerate() {
        let name = format!("lipschitz_l{}_integrable", idx + 1);
        match bound {
            None => push(&name, true, "not declared; estimated by sampling".into()),
            Some(LipschitzBound::Constant(c)) => {
                let ok = c.is_finite() && *c >= 0.0;
                push(&name, ok, format!("constant {c}"));
            }
            Some(LipschitzBound::Kernel(k)) => {
                let (value, detail) = match idx {
                    0 => {
                        // L1: the exponent depends on the regime of p.
                        if spec.p > 2.0 {
                            let v = kernel_sup_integral(k, spec.horizon, q, false);
                            (v, format!("sup_t int_t^T L1(t,s)^q ds = {v}"))
                        } else {
                            let v = kernel_sup_integral(k, spec.horizon, spec.p, true);
                            (v, format!("sup_t int_0^t L1(s,t)^p ds = {v}"))
                        }
                    }
                    1 => {
                        let Some(eps) = spec.lipschitz_eps else {
                            push(
                                &name,
                                false,
                                "kernel-valued L2 requires lipschitz_eps".into(),
                            );
                            continue;
                        };
                        let v = kernel_sup_integral(k, spec.horizon, 2.0 + eps, false);
                        (v, format!("sup_t int_t^T L2(t,s)^(2+eps) ds = {v}"))
                    }
                    _ => {
                        if spec.p < 2.0 {
                            let exp = 2.0 * spec.p / (2.0 - spec.p);
                            let v = kernel_sup_integral(k, spec.horizon, exp, true);
                            (v, format!("sup_t int_0^t L3(s,t)^(2p/(2-p)) ds = {v}"))
                        } else {
                            let v = kernel_sup(k, spec.horizon);
                            (v, format!("sup |L3| = {v} (p >= 2: boundedness suffices)"))
                        }
                    }
                };
                push(&name, value.is_finite(), detail);
            }
        }
    }

    ValidationReport { checks }
}

// ---------------------------------------------------------------------------
// Flat key = value config format
// ---------------------------------------------------------------------------

/// Parse `key = value` lines into an ordered map. `#` starts a comment,
/// blank lines are skipped, values run to the end of the line.
pub fn parse_kv_text(text: &str) -> Result<BTreeMap<String, String>, ProblemError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ProblemError::BadLine { line: idx + 1 });
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64, ProblemError> {
    let raw = map.get(key).ok_or_else(|| ProblemError::MissingKey(key.into()))?;
    raw.parse().map_err(|_| ProblemError::BadValue {
        key: key.into(),
        msg: format!("not a number: '{raw}'"),
    })
}

fn parse_usize(map: &BTreeMap<String, String>, key: &str, default: usize) -> Result<usize, ProblemError> {
    match map.get(key) {
        None => Ok(default),
        Some(raw) => raw.parse().map_err(|_| ProblemError::BadValue {
            key: key.into(),
            msg: format!("not a count: '{raw}'"),
        }),
    }
}

impl ProblemSpec {
    /// Read a spec from a parsed key map, ignoring unrelated keys.
    ///
    /// Recognised keys: `horizon`, `dim_y`, `dim_w`, `p`, `mode`,
    /// `terminal` (or `terminal_<k>` for vector problems), `generator`
    /// (or `generator_<k>`), `lipschitz_l1` / `_l2` / `_l3`, `lipschitz_eps`.
    pub fn from_kv_map(map: &BTreeMap<String, String>) -> Result<Self, ProblemError> {
        let horizon = parse_f64(map, "horizon")?;
        let dim_y = parse_usize(map, "dim_y", 1)?;
        let dim_w = parse_usize(map, "dim_w", 1)?;
        let p = parse_f64(map, "p")?;
        let mode = match map.get("mode").map(String::as_str) {
            Some("m-solution") | None => SolveMode::MSolution,
            Some("adapted") => SolveMode::Adapted,
            Some(other) => {
                return Err(ProblemError::BadValue {
                    key: "mode".into(),
                    msg: format!("expected 'm-solution' or 'adapted', got '{other}'"),
                })
            }
        };
        let dims = (dim_y, dim_w);
        let component_exprs = |base: &str, ctx: ExprContext| -> Result<Vec<Expr>, ProblemError> {
            if dim_y == 1 {
                let raw = map.get(base).ok_or_else(|| ProblemError::MissingKey(base.into()))?;
                return Ok(vec![parse_expr(raw, ctx, dims)
                    .map_err(|source| ProblemError::BadExpr { key: base.into(), source })?]);
            }
            (0..dim_y)
                .map(|k| {
                    let key = format!("{base}_{k}");
                    let raw = map.get(&key).ok_or_else(|| ProblemError::MissingKey(key.clone()))?;
                    parse_expr(raw, ctx, dims)
                        .map_err(|source| ProblemError::BadExpr { key, source })
                })
                .collect()
        };
        let terminal = component_exprs("terminal", ExprContext::Terminal)?;
        let generator = component_exprs("generator", ExprContext::Generator)?;
        let mut lipschitz = [None, None, None];
        for (i, slot) in lipschitz.iter_mut().enumerate() {
            let key = format!("lipschitz_l{}", i + 1);
            if map.contains_key(&key) {
                *slot = Some(LipschitzBound::Constant(parse_f64(map, &key)?));
            }
        }
        let lipschitz_eps = if map.contains_key("lipschitz_eps") {
            Some(parse_f64(map, "lipschitz_eps")?)
        } else {
            None
        };
        Ok(Self { horizon, dim_y, dim_w, p, mode, terminal, generator, lipschitz, lipschitz_eps })
    }

    pub fn from_kv_text(text: &str) -> Result<Self, ProblemError> {
        Self::from_kv_map(&parse_kv_text(text)?)
    }

    /// Serialise to the flat config format. Floats print in shortest
    /// round-trip form and expressions in canonical form, so
    /// `from_kv_text(to_kv_text(spec)) == spec` exactly.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("horizon", format!("{}", self.horizon));
        kv("dim_y", format!("{}", self.dim_y));
        kv("dim_w", format!("{}", self.dim_w));
        kv("p", format!("{}", self.p));
        kv("mode", self.mode.to_string());
        if self.dim_y == 1 {
            kv("terminal", self.terminal[0].to_string());
            kv("generator", self.generator[0].to_string());
        } else {
            for (k, e) in self.terminal.iter().enumerate() {
                kv(&format!("terminal_{k}"), e.to_string());
            }
            for (k, e) in self.generator.iter().enumerate() {
                kv(&format!("generator_{k}"), e.to_string());
            }
        }
        for (i, bound) in self.lipschitz.iter().enumerate() {
            if let Some(LipschitzBound::Constant(c)) = bound {
                kv(&format!("lipschitz_l{}", i + 1), format!("{c}"));
            }
            // Kernel bounds are an API-level feature and not representable in
            // the flat format.
        }
        if let Some(eps) = self.lipschitz_eps {
            kv("lipschitz_eps", format!("{eps}"));
        }
        out
    }
}
