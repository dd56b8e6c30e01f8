//! Path ensembles: simulated Brownian paths on a grid, either Gaussian
//! (Monte Carlo) or an enumerated Bernoulli walk (exact desk-scale oracle
//! substrate).
//!
//! The Bernoulli ensemble enumerates every sign sequence with the *first*
//! step in the most significant bit position, so paths sharing their first
//! `j` steps form contiguous blocks of length `2^((N-j)d)`. Prefix-group
//! conditional expectations are then block means.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::TimeGrid;

/// Hard cap on `N * d` for enumerated ensembles (2^20 paths).
pub const ENUMERATION_BOUND: usize = 20;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("path count must be at least 1")]
    NoPaths,
    #[error("enumeration bound exceeded: N*d = {0} > {ENUMERATION_BOUND}")]
    EnumerationBound(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum EnsembleKind {
    Gaussian,
    BernoulliEnumerated,
}

/// Brownian (or Bernoulli-walk) paths with their increments.
///
/// Layouts: values are node-major `((node * M + path) * d + comp)` and
/// increments step-major `((step * M + path) * d + comp)`, so per-time slices
/// across paths are contiguous.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    kind: EnsembleKind,
    paths: usize,
    dim: usize,
    seed: u64,
    values: Vec<f64>,
    increments: Vec<f64>,
}

impl PathEnsemble {
    /// Simulate `paths` Brownian paths with independent N(0, h) increments.
    ///
    /// Each path draws from its own counter-indexed ChaCha stream, so the
    /// ensemble is bit-identical for a given `(seed, paths, N, d)` at any
    /// worker count.
    pub fn gaussian(
        seed: u64,
        paths: usize,
        grid: &TimeGrid,
        dim: usize,
    ) -> Result<Self, EnsembleError> {
        if paths == 0 {
            return Err(EnsembleError::NoPaths);
        }
        assert!(dim >= 1, "Brownian dimension must be at least 1");
        let n = grid.steps();
        let sqrt_h = grid.step().sqrt();
        let per_path: Vec<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|path| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(path as u64);
                (0..n * dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * sqrt_h
                    })
                    .collect()
            })
            .collect();
        let mut increments = vec![0.0; n * paths * dim];
        for (path, draws) in per_path.iter().enumerate() {
            for j in 0..n {
                for l in 0..dim {
                    increments[(j * paths + path) * dim + l] = draws[j * dim + l];
                }
            }
        }
        Ok(Self::from_increments(
            grid.clone(),
            EnsembleKind::Gaussian,
            paths,
            dim,
            seed,
            increments,
        ))
    }

    /// Enumerate all `2^(N*d)` sign paths with increments `±sqrt(h)`.
    pub fn bernoulli(grid: &TimeGrid, dim: usize) -> Result<Self, EnsembleError> {
        assert!(dim >= 1, "Brownian dimension must be at least 1");
        let n = grid.steps();
        let bits = n * dim;
        if bits > ENUMERATION_BOUND {
            return Err(EnsembleError::EnumerationBound(bits));
        }
        let paths = 1usize << bits;
        let sqrt_h = grid.step().sqrt();
        let mut increments = vec![0.0; n * paths * dim];
        for path in 0..paths {
            for j in 0..n {
                for l in 0..dim {
                    let bit = bits - 1 - (j * dim + l);
                    let sign = if (path >> bit) & 1 == 1 { 1.0 } else { -1.0 };
                    increments[(j * paths + path) * dim + l] = sign * sqrt_h;
                }
            }
        }
        Ok(Self::from_increments(
            grid.clone(),
            EnsembleKind::BernoulliEnumerated,
            paths,
            dim,
            0,
            increments,
        ))
    }

    fn from_increments(
        grid: TimeGrid,
        kind: EnsembleKind,
        paths: usize,
        dim: usize,
        seed: u64,
        increments: Vec<f64>,
    ) -> Self {
        let n = grid.steps();
        let mut values = vec![0.0; (n + 1) * paths * dim];
        for j in 0..n {
            for path in 0..paths {
                for l in 0..dim {
                    let prev = values[(j * paths + path) * dim + l];
                    let dw = increments[(j * paths + path) * dim + l];
                    values[((j + 1) * paths + path) * dim + l] = prev + dw;
                }
            }
        }
        Self { grid, kind, paths, dim, seed, values, increments }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `W` values at a node: slice of length `paths * dim`, path-major.
    pub fn values_at(&self, node: usize) -> &[f64] {
        let m = self.paths * self.dim;
        &self.values[node * m..(node + 1) * m]
    }

    /// Increments over step `j`: slice of length `paths * dim`, path-major.
    pub fn increments_at(&self, step: usize) -> &[f64] {
        let m = self.paths * self.dim;
        &self.increments[step * m..(step + 1) * m]
    }

    /// Component `l` of `W(t_node)` on `path`.
    pub fn value(&self, node: usize, path: usize, l: usize) -> f64 {
        self.values[(node * self.paths + path) * self.dim + l]
    }

    /// Component `l` of the increment over step `j` on `path`.
    pub fn increment(&self, step: usize, path: usize, l: usize) -> f64 {
        self.increments[(step * self.paths + path) * self.dim + l]
    }

    /// Size of a prefix group at step `j` on an enumerated ensemble: the
    /// number of consecutive paths sharing their first `j` increments.
    pub fn prefix_group_size(&self, j: usize) -> usize {
        debug_assert_eq!(self.kind, EnsembleKind::BernoulliEnumerated);
        self.paths >> (j * self.dim).min(self.paths.trailing_zeros() as usize)
    }

    /// Check that per-path `values` (stride `width` per path) are constant
    /// within every prefix group at step `j`. Exact comparison; only
    /// meaningful on enumerated ensembles.
    pub fn is_adapted_at(&self, values: &[f64], width: usize, j: usize) -> bool {
        debug_assert_eq!(values.len(), self.paths * width);
        if self.kind != EnsembleKind::BernoulliEnumerated {
            return true;
        }
        let group = self.prefix_group_size(j);
        for start in (0..self.paths).step_by(group) {
            let head = &values[start * width..(start + 1) * width];
            for p in start + 1..start + group {
                if &values[p * width..(p + 1) * width] != head {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduce::{pairwise_sum, pairwise_sum_by};

    #[test]
    fn gaussian_moments_at_terminal() {
        // Independent check of the tolerance windows: for M paths the mean of
        // W(T) has std 1/sqrt(M) and the sample variance has std ~ sqrt(2/M);
        // the asserted windows are > 3 sigma wide.
        let m = 100_000;
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let ens = PathEnsemble::gaussian(7, m, &grid, 1).unwrap();
        let wt = ens.values_at(1);
        let mean = pairwise_sum(wt) / m as f64;
        let var = pairwise_sum_by(wt, |w| (w - mean) * (w - mean)) / (m as f64 - 1.0);
        let mean_3sigma = 3.0 / (m as f64).sqrt();
        let var_3sigma = 3.0 * (2.0 / m as f64).sqrt();
        assert!(mean.abs() < mean_3sigma.max(0.02), "mean {mean}");
        assert!((var - 1.0).abs() < var_3sigma.max(0.02), "var {var}");
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.02);
    }

    #[test]
    fn paths_start_at_zero() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let ens = PathEnsemble::gaussian(1, 5, &grid, 2).unwrap();
        assert!(ens.values_at(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let a = PathEnsemble::gaussian(42, 257, &grid, 2).unwrap();
        let b = PathEnsemble::gaussian(42, 257, &grid, 2).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.increments, b.increments);
    }

    #[test]
    fn values_are_cumulative_increments() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let ens = PathEnsemble::gaussian(3, 11, &grid, 1).unwrap();
        for p in 0..11 {
            for j in 0..4 {
                let step = ens.value(j, p, 0) + ens.increment(j, p, 0);
                assert_eq!(step, ens.value(j + 1, p, 0));
            }
        }
    }

    #[test]
    fn bernoulli_two_steps_terminal_values() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
        assert_eq!(ens.paths(), 4);
        let s = 0.5f64.sqrt();
        let mut wt: Vec<f64> = (0..4).map(|p| ens.value(2, p, 0)).collect();
        wt.sort_by(f64::total_cmp);
        let expect = [-2.0 * s, 0.0, 0.0, 2.0 * s];
        for (a, b) in wt.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bernoulli_two_dims_one_step() {
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let ens = PathEnsemble::bernoulli(&grid, 2).unwrap();
        assert_eq!(ens.paths(), 4);
        let s = 1.0f64.sqrt();
        let mut pairs: Vec<(f64, f64)> =
            (0..4).map(|p| (ens.increment(0, p, 0), ens.increment(0, p, 1))).collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pairs, vec![(-s, -s), (-s, s), (s, -s), (s, s)]);
    }

    #[test]
    fn bernoulli_bound() {
        let grid = TimeGrid::new(1.0, 21).unwrap();
        assert!(matches!(
            PathEnsemble::bernoulli(&grid, 1),
            Err(EnsembleError::EnumerationBound(21))
        ));
    }

    #[test]
    fn prefix_groups_share_history() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
        for j in 0..=4 {
            // W(t_j) per path must be constant within each prefix group at j.
            let w: Vec<f64> = (0..ens.paths()).map(|p| ens.value(j, p, 0)).collect();
            assert!(ens.is_adapted_at(&w, 1, j));
        }
        // W(T) is not F_{t_1}-measurable.
        let wt: Vec<f64> = (0..ens.paths()).map(|p| ens.value(4, p, 0)).collect();
        assert!(!ens.is_adapted_at(&wt, 1, 1));
    }
}
