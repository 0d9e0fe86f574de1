//! Shared time discretization.
//!
//! All solver quantities live on one grid `0 = t_0 < ... < t_M = T`.
//! Market coefficients are piecewise constant per cell `[t_j, t_{j+1})`;
//! solved paths (consumption rate, Y-processes) are node-valued.

use std::sync::Arc;

use thiserror::Error;

/// Relative tolerance used to match a query time against a grid node.
const NODE_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid needs at least two points")]
    TooFewPoints,
    #[error("grid must start at 0 (got {0})")]
    NonzeroStart(f64),
    #[error("grid points must be strictly increasing (violation at index {0})")]
    NotIncreasing(usize),
    #[error("grid points must be finite")]
    NonFinite,
    #[error("time {0} is not a grid point")]
    OffGrid(f64),
}

/// Strictly increasing time points `0 = t_0 < ... < t_M = T`.
///
/// Cheap to clone; the point data is shared.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    points: Arc<[f64]>,
}

impl PartialEq for TimeGrid {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
    }
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self, GridError> {
        if points.len() < 2 {
            return Err(GridError::TooFewPoints);
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(GridError::NonFinite);
        }
        if points[0] != 0.0 {
            return Err(GridError::NonzeroStart(points[0]));
        }
        for i in 1..points.len() {
            if points[i] <= points[i - 1] {
                return Err(GridError::NotIncreasing(i));
            }
        }
        Ok(Self { points: points.into() })
    }

    /// Uniform grid with `n_cells` cells on `[0, horizon]`.
    pub fn uniform(horizon: f64, n_cells: usize) -> Result<Self, GridError> {
        if n_cells == 0 {
            return Err(GridError::TooFewPoints);
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GridError::NonFinite);
        }
        let points = (0..=n_cells)
            .map(|i| horizon * i as f64 / n_cells as f64)
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn n_nodes(&self) -> usize {
        self.points.len()
    }

    pub fn n_cells(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn node(&self, m: usize) -> f64 {
        self.points[m]
    }

    pub fn cell_width(&self, j: usize) -> f64 {
        self.points[j + 1] - self.points[j]
    }

    /// Index of the node equal to `t` (within a small relative tolerance).
    pub fn node_index(&self, t: f64) -> Result<usize, GridError> {
        let tol = NODE_MATCH_TOL * self.horizon().max(1.0);
        let idx = self.points.partition_point(|&p| p < t - tol);
        if idx < self.points.len() && (self.points[idx] - t).abs() <= tol {
            Ok(idx)
        } else {
            Err(GridError::OffGrid(t))
        }
    }

    /// Index of the cell containing `t` under the half-open convention
    /// `[t_j, t_{j+1})`, with `t = T` assigned to the last cell.
    pub fn cell_index(&self, t: f64) -> Result<usize, GridError> {
        let tol = NODE_MATCH_TOL * self.horizon().max(1.0);
        if t < -tol || t > self.horizon() + tol {
            return Err(GridError::OffGrid(t));
        }
        let idx = self.points.partition_point(|&p| p <= t + tol);
        Ok(idx.saturating_sub(1).min(self.n_cells() - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_endpoints() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.n_cells(), 4);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.horizon(), 1.0);
        assert!((g.cell_width(2) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.5]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn node_lookup_on_and_off_grid() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        assert_eq!(g.node_index(0.3).unwrap(), 3);
        assert_eq!(g.node_index(1.0).unwrap(), 10);
        assert!(g.node_index(0.35).is_err());
    }

    #[test]
    fn cell_lookup_half_open() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.cell_index(0.0).unwrap(), 0);
        assert_eq!(g.cell_index(0.25).unwrap(), 1);
        assert_eq!(g.cell_index(0.26).unwrap(), 1);
        assert_eq!(g.cell_index(1.0).unwrap(), 3);
        assert!(g.cell_index(1.5).is_err());
    }
}
