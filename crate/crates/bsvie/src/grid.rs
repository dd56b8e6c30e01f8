//! Uniform time grids and subinterval partitions.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("step count must be at least 1")]
    EmptyGrid,
    #[error("partition target eta = {eta} is below the grid step h = {h}; refine the grid or weaken the problem constants")]
    EtaBelowStep { eta: f64, h: f64 },
}

/// Uniform grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Build the uniform grid with `steps` steps over `[0, horizon]`.
    pub fn new(horizon: f64, steps: usize) -> Result<Self, GridError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(GridError::BadHorizon(horizon));
        }
        if steps == 0 {
            return Err(GridError::EmptyGrid);
        }
        // t_i = T * (i/N) so that t_N == T exactly and nodes are strictly increasing.
        let nodes = (0..=steps)
            .map(|i| horizon * (i as f64 / steps as f64))
            .collect();
        Ok(Self { horizon, steps, nodes })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `N`; the grid has `N + 1` nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step size `h = T / N`.
    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Right-to-left partition `T = T_0 > T_1 > ... > T_K = 0` of the grid,
/// stored as node indices `N = b_0 > b_1 > ... > b_K = 0`.
///
/// Each subinterval spans at most `eta` in time. `eta` is the solution of the
/// contraction budget rule computed by the partition planner; `kappa_target`
/// is the budget it was solved against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionPlan {
    boundaries: Vec<usize>,
    eta: f64,
    kappa_target: f64,
}

impl PartitionPlan {
    /// Build a plan from a raw subinterval length target.
    ///
    /// The length is snapped down to a whole number of grid steps; the
    /// leftmost subinterval absorbs the remainder. Errors if `eta < h`.
    pub fn from_eta(grid: &TimeGrid, eta: f64, kappa_target: f64) -> Result<Self, GridError> {
        let h = grid.step();
        let steps_per = (eta / h).floor() as usize;
        if steps_per == 0 {
            return Err(GridError::EtaBelowStep { eta, h });
        }
        let mut boundaries = vec![grid.steps()];
        let mut b = grid.steps();
        while b > 0 {
            b = b.saturating_sub(steps_per);
            boundaries.push(b);
        }
        Ok(Self { boundaries, eta, kappa_target })
    }

    /// Single subinterval `[0, T]`.
    pub fn whole(grid: &TimeGrid, kappa_target: f64) -> Self {
        Self {
            boundaries: vec![grid.steps(), 0],
            eta: grid.horizon(),
            kappa_target,
        }
    }

    /// Plan from explicit boundary node indices (descending, `N ... 0`).
    pub fn from_boundaries(
        grid: &TimeGrid,
        boundaries: Vec<usize>,
        kappa_target: f64,
    ) -> Result<Self, GridError> {
        assert!(
            boundaries.first() == Some(&grid.steps())
                && boundaries.last() == Some(&0)
                && boundaries.windows(2).all(|w| w[0] > w[1]),
            "boundaries must descend from N to 0"
        );
        let eta = boundaries
            .windows(2)
            .map(|w| (w[0] - w[1]) as f64 * grid.step())
            .fold(0.0f64, f64::max);
        Ok(Self { boundaries, eta, kappa_target })
    }

    /// Node indices of the boundaries, descending from `N` to `0`.
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Subintervals as `(lo, hi)` node-index pairs, rightmost first.
    pub fn subintervals(&self) -> Vec<(usize, usize)> {
        self.boundaries
            .windows(2)
            .map(|w| (w[1], w[0]))
            .collect()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn kappa_target(&self) -> f64 {
        self.kappa_target
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_nodes() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.step(), 0.25);
    }

    #[test]
    fn single_step_grid() {
        let g = TimeGrid::new(2.0, 1).unwrap();
        assert_eq!(g.nodes(), &[0.0, 2.0]);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(matches!(TimeGrid::new(1.0, 0), Err(GridError::EmptyGrid)));
        assert!(matches!(TimeGrid::new(0.0, 4), Err(GridError::BadHorizon(_))));
        assert!(matches!(TimeGrid::new(-1.0, 4), Err(GridError::BadHorizon(_))));
    }

    #[test]
    fn terminal_node_is_exact() {
        // T/N is not exactly representable here; the terminal node must still be T.
        let g = TimeGrid::new(0.7, 3).unwrap();
        assert_eq!(g.node(3), 0.7);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn partition_covers_grid_without_gaps() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let plan = PartitionPlan::from_eta(&g, 0.3, 0.5).unwrap();
        // 0.3 snaps down to 2 steps of 0.125.
        assert_eq!(plan.boundaries(), &[8, 6, 4, 2, 0]);
        let subs = plan.subintervals();
        assert_eq!(subs.first().unwrap().1, 8);
        assert_eq!(subs.last().unwrap().0, 0);
        for w in subs.windows(2) {
            assert_eq!(w[0].0, w[1].1);
        }
    }

    #[test]
    fn partition_remainder_goes_left() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let plan = PartitionPlan::from_eta(&g, 0.4, 0.5).unwrap();
        assert_eq!(plan.boundaries(), &[8, 5, 2, 0]);
    }

    #[test]
    fn eta_below_step_is_an_error() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        assert!(matches!(
            PartitionPlan::from_eta(&g, 0.1, 0.5),
            Err(GridError::EtaBelowStep { .. })
        ));
    }
}
