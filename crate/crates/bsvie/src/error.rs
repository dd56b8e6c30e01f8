//! Crate-wide error type. Submodules define their own narrow errors and this
//! enum folds them together for callers that cross module boundaries.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Ensemble(#[from] crate::ensemble::EnsembleError),
    #[error(transparent)]
    Parse(#[from] crate::dsl::ParseError),
    #[error(transparent)]
    Eval(#[from] crate::dsl::EvalError),
    #[error(transparent)]
    Problem(#[from] crate::problem::ProblemError),
    #[error(transparent)]
    Estimator(#[from] crate::estimator::EstimatorError),
    #[error(transparent)]
    Field(#[from] crate::surface::FieldError),
    #[error(transparent)]
    Solver(#[from] crate::solver::SolverError),
    #[error(transparent)]
    Norm(#[from] crate::norms::NormError),
    #[error(transparent)]
    Oracle(#[from] crate::oracles::OracleError),
}
