//! Deterministic numerical kernels: quadrature, backward RK4, and the
//! numeric Riccati oracle used to certify closed-form solutions.

use thiserror::Error;

use crate::grid::{GridError, TimeGrid};

/// Substeps per grid cell used by the fixed-step integrators.
pub const DEFAULT_REFINE: usize = 10;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("values length {got} does not match expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("values must be finite")]
    NonFinite,
    #[error("integration bounds must satisfy a <= b")]
    BadBounds,
    #[error("solution became non-finite at t = {t}")]
    BlowUp { t: f64 },
}

/// How a [`GridFunction`]'s values attach to its grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// One value per grid node; evaluated by linear interpolation.
    Node,
    /// One value per grid cell, constant on `[t_j, t_{j+1})`.
    Cell,
}

/// Scalar function of time sampled on a [`TimeGrid`].
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: TimeGrid,
    values: Vec<f64>,
    sampling: Sampling,
}

impl GridFunction {
    pub fn node_valued(grid: TimeGrid, values: Vec<f64>) -> Result<Self, OdeError> {
        if values.len() != grid.n_nodes() {
            return Err(OdeError::LengthMismatch { got: values.len(), expected: grid.n_nodes() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite);
        }
        Ok(Self { grid, values, sampling: Sampling::Node })
    }

    pub fn cell_valued(grid: TimeGrid, values: Vec<f64>) -> Result<Self, OdeError> {
        if values.len() != grid.n_cells() {
            return Err(OdeError::LengthMismatch { got: values.len(), expected: grid.n_cells() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite);
        }
        Ok(Self { grid, values, sampling: Sampling::Cell })
    }

    pub fn constant(grid: TimeGrid, value: f64, sampling: Sampling) -> Self {
        let n = match sampling {
            Sampling::Node => grid.n_nodes(),
            Sampling::Cell => grid.n_cells(),
        };
        Self { grid, values: vec![value; n], sampling }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Node value at index `m` (node-valued functions only).
    pub fn node_value(&self, m: usize) -> f64 {
        debug_assert_eq!(self.sampling, Sampling::Node);
        self.values[m]
    }

    /// Cell value at index `j` (cell-valued functions only).
    pub fn cell_value(&self, j: usize) -> f64 {
        debug_assert_eq!(self.sampling, Sampling::Cell);
        self.values[j]
    }

    /// Evaluates at an arbitrary `t` in `[0, T]`: constant per cell for
    /// cell-valued data, linear interpolation for node-valued data.
    pub fn eval(&self, t: f64) -> f64 {
        let j = self
            .grid
            .cell_index(t.clamp(0.0, self.grid.horizon()))
            .expect("clamped t is always inside the grid");
        match self.sampling {
            Sampling::Cell => self.values[j],
            Sampling::Node => {
                let (t0, t1) = (self.grid.node(j), self.grid.node(j + 1));
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                self.values[j] * (1.0 - w) + self.values[j + 1] * w
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            sampling: self.sampling,
        }
    }
}

/// Integrates `f` over `[a, b]` with both endpoints on the grid.
///
/// Cell-valued data integrates exactly; node-valued data uses the
/// trapezoid rule on the grid nodes.
pub fn integrate(f: &GridFunction, a: f64, b: f64) -> Result<f64, OdeError> {
    let grid = f.grid();
    let ia = grid.node_index(a)?;
    let ib = grid.node_index(b)?;
    if ia > ib {
        return Err(OdeError::BadBounds);
    }
    let mut total = 0.0;
    match f.sampling() {
        Sampling::Cell => {
            for j in ia..ib {
                total += f.cell_value(j) * grid.cell_width(j);
            }
        }
        Sampling::Node => {
            for j in ia..ib {
                total += 0.5 * (f.node_value(j) + f.node_value(j + 1)) * grid.cell_width(j);
            }
        }
    }
    Ok(total)
}

/// Classical fourth-order Runge-Kutta marched backward from `t = T` to
/// `t = 0` with [`DEFAULT_REFINE`] substeps per grid cell.
///
/// Returns the node-valued solution path of `dy/dt = rhs(t, y)` with
/// `y(T) = terminal`.
pub fn rk4_backward(
    rhs: impl Fn(f64, f64) -> f64,
    terminal: f64,
    grid: &TimeGrid,
) -> Result<GridFunction, OdeError> {
    rk4_backward_refined(rhs, terminal, grid, DEFAULT_REFINE)
}

/// [`rk4_backward`] with an explicit substep count per grid cell.
pub fn rk4_backward_refined(
    rhs: impl Fn(f64, f64) -> f64,
    terminal: f64,
    grid: &TimeGrid,
    refine: usize,
) -> Result<GridFunction, OdeError> {
    if !terminal.is_finite() {
        return Err(OdeError::NonFinite);
    }
    let refine = refine.max(1);
    let n_cells = grid.n_cells();
    let mut values = vec![0.0; grid.n_nodes()];
    values[n_cells] = terminal;
    let mut y = terminal;
    for j in (0..n_cells).rev() {
        let h = grid.cell_width(j) / refine as f64;
        let t_right = grid.node(j + 1);
        for s in 0..refine {
            let t = t_right - s as f64 * h;
            let k1 = rhs(t, y);
            let k2 = rhs(t - 0.5 * h, y - 0.5 * h * k1);
            let k3 = rhs(t - 0.5 * h, y - 0.5 * h * k2);
            let k4 = rhs(t - h, y - h * k3);
            y -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !y.is_finite() {
                return Err(OdeError::BlowUp { t: t - h });
            }
        }
        values[j] = y;
    }
    GridFunction::node_valued(grid.clone(), values)
}

/// Numeric oracle for the consumption Riccati equation
/// `y' = y^2 + B(t) y`, `y(T) = d`, with cell-constant `B`.
///
/// Integrates cell by cell so every RK4 stage inside a cell sees that
/// cell's coefficient. Blow-ups are reported, never clamped.
pub fn riccati_numeric(b: &GridFunction, d: f64, grid: &TimeGrid) -> Result<GridFunction, OdeError> {
    assert_eq!(b.sampling(), Sampling::Cell, "riccati_numeric expects cell-valued B");
    if !d.is_finite() {
        return Err(OdeError::NonFinite);
    }
    let n_cells = grid.n_cells();
    let mut values = vec![0.0; grid.n_nodes()];
    values[n_cells] = d;
    let mut y = d;
    for j in (0..n_cells).rev() {
        let bj = b.cell_value(j);
        let f = |yy: f64| yy * yy + bj * yy;
        let h = grid.cell_width(j) / DEFAULT_REFINE as f64;
        for s in 0..DEFAULT_REFINE {
            let k1 = f(y);
            let k2 = f(y - 0.5 * h * k1);
            let k3 = f(y - 0.5 * h * k2);
            let k4 = f(y - h * k3);
            y -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !y.is_finite() {
                let t = grid.node(j + 1) - (s + 1) as f64 * h;
                return Err(OdeError::BlowUp { t });
            }
        }
        values[j] = y;
    }
    GridFunction::node_valued(grid.clone(), values)
}
