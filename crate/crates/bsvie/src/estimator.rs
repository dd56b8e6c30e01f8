//! Conditional-expectation and martingale-representation estimators.
//!
//! Two kinds sit behind one interface:
//!
//! * **exact-prefix** — on enumerated Bernoulli ensembles, `E[V | F_{t_j}]`
//!   is the mean over each block of paths sharing their first `j`
//!   increments. This is the exact discrete conditional expectation, so the
//!   solver's algebra can be tested to machine precision.
//! * **regress** — least-squares projection of `V` onto a polynomial basis
//!   in the current Brownian value `W(t_j)`, the Longstaff-Schwartz
//!   estimator. Design matrices depend only on `(ensemble, j)` and are
//!   factorised once up front; a rank-deficient design falls back to a lower
//!   degree (at `t_0` the basis degenerates to a constant and the fit is the
//!   plain mean).
//!
//! The representation coefficient `Z(., t_j)` is estimated from the
//! increment covariation `(1/h) E[V dW_j | F_{t_j}]`, which is exact on
//! one-dimensional trees and lower-variance than differencing regressions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ensemble::{EnsembleKind, PathEnsemble};
use crate::reduce::pairwise_sum;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("exact-prefix estimation requires a Bernoulli-enumerated ensemble")]
    NeedsEnumerated,
    #[error("value vector has {got} entries, ensemble has {want} paths")]
    LengthMismatch { got: usize, want: usize },
    #[error("estimator was built for a different ensemble")]
    EnsembleMismatch,
    #[error("regression solve failed: {0}")]
    Solve(String),
}

/// Output of a conditional-expectation estimate.
#[derive(Debug, Clone)]
pub struct CondExp {
    /// `E[V | F_{t_j}]` per path.
    pub values: Vec<f64>,
    /// Fitted basis coefficients (regression kind only), graded order.
    pub coefficients: Option<Vec<f64>>,
    /// Polynomial degree actually used (regression kind only).
    pub degree_used: Option<usize>,
}

/// Monomial multi-indices over `d` variables with total degree `<= degree`,
/// in graded lexicographic order. Degree 3 in one variable gives
/// `[1, w, w^2, w^3]`.
fn monomials(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut idx = vec![0usize; dim];
        fill_monomials(&mut idx, 0, total, &mut out);
    }
    out
}

fn fill_monomials(idx: &mut Vec<usize>, pos: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
    if pos == idx.len() - 1 {
        idx[pos] = remaining;
        out.push(idx.clone());
        return;
    }
    for take in (0..=remaining).rev() {
        idx[pos] = take;
        fill_monomials(idx, pos + 1, remaining - take, out);
    }
}

struct StepFactor {
    design: DMatrix<f64>,
    svd: nalgebra::linalg::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    degree_used: usize,
}

struct RegressionCache {
    fingerprint: (usize, usize, usize, u64),
    requested_degree: usize,
    steps: Vec<StepFactor>,
}

fn ensemble_fingerprint(ens: &PathEnsemble) -> (usize, usize, usize, u64) {
    (ens.paths(), ens.grid().steps(), ens.dim(), ens.seed())
}

const RANK_TOLERANCE: f64 = 1e-9;

fn build_step_factor(ens: &PathEnsemble, j: usize, degree: usize) -> StepFactor {
    let paths = ens.paths();
    let w = ens.values_at(j);
    let d = ens.dim();
    let mut deg = degree;
    loop {
        let basis = monomials(d, deg);
        let cols = basis.len();
        let design = DMatrix::from_fn(paths, cols, |row, col| {
            basis[col]
                .iter()
                .enumerate()
                .map(|(l, &a)| w[row * d + l].powi(a as i32))
                .product()
        });
        let svd = nalgebra::linalg::SVD::new(design.clone(), true, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > smax * RANK_TOLERANCE).count();
        if rank == cols || deg == 0 {
            return StepFactor { design, svd, degree_used: deg };
        }
        deg -= 1;
    }
}

/// Estimator for `E[. | F_{t_j}]` on a fixed ensemble.
pub enum CondExpEstimator {
    ExactPrefix,
    Regress(Box<RegressState>),
}

pub struct RegressState {
    cache: RegressionCache,
}

impl CondExpEstimator {
    pub fn exact_prefix() -> Self {
        CondExpEstimator::ExactPrefix
    }

    /// Build the regression estimator, factorising the per-step design
    /// matrices for `degree` (falling back where rank-deficient).
    pub fn regression(ens: &PathEnsemble, degree: usize) -> Self {
        let steps = (0..ens.grid().steps())
            .map(|j| build_step_factor(ens, j, degree))
            .collect();
        CondExpEstimator::Regress(Box::new(RegressState {
            cache: RegressionCache {
                fingerprint: ensemble_fingerprint(ens),
                requested_degree: degree,
                steps,
            },
        }))
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, CondExpEstimator::ExactPrefix)
    }

    /// Steps where the design matrix forced a lower degree than requested.
    pub fn degree_fallbacks(&self) -> usize {
        match self {
            CondExpEstimator::ExactPrefix => 0,
            CondExpEstimator::Regress(state) => state
                .cache
                .steps
                .iter()
                .filter(|s| s.degree_used < state.cache.requested_degree)
                .count(),
        }
    }

    fn check(&self, values: &[f64], ens: &PathEnsemble) -> Result<(), EstimatorError> {
        if values.len() != ens.paths() {
            return Err(EstimatorError::LengthMismatch { got: values.len(), want: ens.paths() });
        }
        match self {
            CondExpEstimator::ExactPrefix => {
                if ens.kind() != EnsembleKind::BernoulliEnumerated {
                    return Err(EstimatorError::NeedsEnumerated);
                }
            }
            CondExpEstimator::Regress(state) => {
                if state.cache.fingerprint != ensemble_fingerprint(ens) {
                    return Err(EstimatorError::EnsembleMismatch);
                }
            }
        }
        Ok(())
    }

    /// `E[V | F_{t_j}]` per path for a scalar per-path variable `V` that is
    /// measurable at `t_{j+1}` or later. The output is `F_{t_j}`-measurable
    /// by construction.
    pub fn cond_exp(
        &self,
        values: &[f64],
        ens: &PathEnsemble,
        j: usize,
    ) -> Result<CondExp, EstimatorError> {
        self.check(values, ens)?;
        match self {
            CondExpEstimator::ExactPrefix => {
                let group = ens.prefix_group_size(j);
                let mut out = vec![0.0; values.len()];
                for start in (0..values.len()).step_by(group) {
                    let mean = pairwise_sum(&values[start..start + group]) / group as f64;
                    out[start..start + group].fill(mean);
                }
                Ok(CondExp { values: out, coefficients: None, degree_used: None })
            }
            CondExpEstimator::Regress(state) => {
                let factor = &state.cache.steps[j];
                let v = DVector::from_column_slice(values);
                let smax = factor.svd.singular_values.max();
                let beta = factor
                    .svd
                    .solve(&v, smax * RANK_TOLERANCE)
                    .map_err(|e| EstimatorError::Solve(e.to_string()))?;
                let fitted = &factor.design * &beta;
                Ok(CondExp {
                    values: fitted.as_slice().to_vec(),
                    coefficients: Some(beta.as_slice().to_vec()),
                    degree_used: Some(factor.degree_used),
                })
            }
        }
    }

    /// Representation coefficients `(1/h) E[V dW_j | F_{t_j}]`, one row of
    /// `d` values per path. Exact on one-dimensional enumerated ensembles.
    pub fn martingale_coeffs(
        &self,
        values: &[f64],
        ens: &PathEnsemble,
        j: usize,
    ) -> Result<Vec<f64>, EstimatorError> {
        self.check(values, ens)?;
        let paths = ens.paths();
        let d = ens.dim();
        let h = ens.grid().step();
        let dw = ens.increments_at(j);
        let mut out = vec![0.0; paths * d];
        let mut scratch = vec![0.0; paths];
        for l in 0..d {
            for p in 0..paths {
                scratch[p] = values[p] * dw[p * d + l];
            }
            let ce = self.cond_exp(&scratch, ens, j)?;
            for p in 0..paths {
                out[p * d + l] = ce.values[p] / h;
            }
        }
        Ok(out)
    }
}
