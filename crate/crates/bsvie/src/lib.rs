//! Monte Carlo solver for backward stochastic Volterra integral equations
//! (BSVIEs) of the form
//!
//! ```text
//! Y(t) = psi(t) + integral_t^T g(t, s, Y(s), Z(t,s), Z(s,t)) ds
//!               - integral_t^T Z(t,s) dW(s),       t in [0,T],
//! ```
//!
//! discretised on a uniform grid. Two solution notions are supported:
//!
//! * **M-solutions**: `Z(t,s)` is additionally defined for `s < t` through the
//!   martingale representation of `Y(t)`, and the generator may read the
//!   below-diagonal value `Z(s,t)` (the `zeta` argument).
//! * **Adapted solutions**: the generator is independent of `Z(s,t)` and the
//!   below-diagonal block of `Z` is never materialised.
//!
//! The solver proceeds right-to-left over a partition of `[0,T]` chosen so
//! that the fixed-point map contracts on each subinterval: Picard iteration
//! on the rightmost piece, martingale-representation extension of the
//! below-diagonal block, a stochastic Fredholm pass producing the modified
//! terminal data for the next piece, and induction until `0` is reached.
//!
//! Conditional expectations are estimated either exactly (enumerated
//! Bernoulli-walk ensembles, prefix-group averaging) or by least-squares
//! polynomial regression on the current Brownian value (Gaussian ensembles).
//! The exact mode makes the whole pipeline testable to machine precision at
//! desk scale; the regression mode scales.

pub mod dsl;
pub mod ensemble;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod norms;
pub mod oracles;
pub mod problem;
pub mod reduce;
pub mod solver;
pub mod surface;

pub use ensemble::{EnsembleKind, PathEnsemble};
pub use error::Error;
pub use estimator::CondExpEstimator;
pub use grid::{PartitionPlan, TimeGrid};
pub use problem::{LipschitzBound, PNormConfig, ProblemSpec, SolveMode, ValidationReport};
pub use solver::{solve_adapted, solve_msolution, SolveOutcome, SolverOptions};
pub use surface::{AdaptedProcess, SolutionSurface, TwoParamField};
