//! Closed-form mean-field equilibrium for deterministic coefficients:
//! common-noise loading `Z0`, investment rate `pi*`, the consumption
//! Riccati data `(A, B, D)`, the consumption rate `c*`, and the
//! recovered `Y`-processes and externality decomposition.

use thiserror::Error;

use crate::grid::TimeGrid;
use crate::model::{validate, ModelError, Population, Regime};
use crate::ode::{GridFunction, OdeError};

/// Tolerance for the cross-check between the two algebraic forms of `pi*`.
const PI_FORMS_TOL: f64 = 1e-12;

/// Tolerance on the recovered `Y_tilde` vanishing at the horizon.
const Y_TILDE_TERMINAL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

/// Riccati coefficients of the equilibrium consumption equation
/// `y' = y^2 + B y`, `y(T) = D`, one set per type.
#[derive(Debug, Clone)]
pub struct RiccatiData {
    /// Drift aggregate `A`, cell-valued, one function per type.
    pub a: Vec<GridFunction>,
    /// Riccati coefficient `B`, cell-valued, one function per type.
    pub b: Vec<GridFunction>,
    /// Terminal value `D > 0`, one per type.
    pub d: Vec<f64>,
}

/// Mean-field equilibrium of a validated population.
#[derive(Debug, Clone)]
pub struct MfgEquilibrium {
    grid: TimeGrid,
    /// Equilibrium investment rate, cell-valued, per type.
    pub pi_star: Vec<GridFunction>,
    /// Equilibrium consumption rate, node-valued, per type, with the
    /// bequest convention `c*(T) = 1`. The rate's continuous limit at
    /// `T` is `D`; see [`MfgEquilibrium::consumption_rate`].
    pub c_star: Vec<GridFunction>,
    /// Common-noise loading of the value BSDE, cell-valued, per type.
    /// The idiosyncratic loading `Z` is identically zero.
    pub z0: Vec<GridFunction>,
    /// `Y_tilde`, node-valued, per type; zero at the horizon.
    pub y_tilde: Vec<GridFunction>,
    /// `Y_hat = -psi log delta + (psi/theta_tilde)(log alpha + Y_tilde)`,
    /// node-valued, per type.
    pub y_hat: Vec<GridFunction>,
    /// Deterministic part of the equilibrium log-externality `nu_hat*`
    /// (the common-noise wealth fluctuation is attached by simulation).
    /// Carries the definition's asymmetric terminal clause: the node at
    /// `T` holds the wealth term only.
    pub nu_hat_det: GridFunction,
    /// Running externality on `[0, T]`, continuous at `T` (the node at
    /// `T` holds the left limit `E[log D] + E[log X]_det`). This is the
    /// path entering running-consumption arguments; `nu_hat_det`'s
    /// terminal value enters the bequest.
    pub nu_hat_running: GridFunction,
    /// Deterministic part of `E[log X* | F0]`, node-valued.
    pub mean_log_wealth_det: GridFunction,
    /// Common-noise loading of the externality, `E-bar[pi* sigma0]`,
    /// cell-valued.
    pub w0_loading: GridFunction,
    pub riccati: RiccatiData,
}

impl MfgEquilibrium {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_types(&self) -> usize {
        self.pi_star.len()
    }

    /// Consumption rate path with its continuous terminal limit `D`
    /// (the rate that actually drives the wealth SDE and the
    /// utility recursion; `c_star` carries the bequest convention).
    pub fn consumption_rate(&self, k: usize) -> GridFunction {
        let mut values = self.c_star[k].values().to_vec();
        *values.last_mut().unwrap() = self.riccati.d[k];
        GridFunction::node_valued(self.grid.clone(), values).expect("same shape as c_star")
    }

    /// Deterministic part of the value-BSDE process `Y` of type `k`:
    /// `Y_tilde - theta (1-gamma) * mean_log_wealth_det`.
    pub fn y_det(&self, k: usize, population: &Population) -> GridFunction {
        let p = &population.agent(k).prefs;
        let coeff = p.theta * (1.0 - p.gamma);
        let values = self.y_tilde[k]
            .values()
            .iter()
            .zip(self.mean_log_wealth_det.values())
            .map(|(yt, nu)| yt - coeff * nu)
            .collect();
        GridFunction::node_valued(self.grid.clone(), values).expect("node shape")
    }
}

fn validated(population: &Population) -> Result<(), MfgError> {
    // Either regime is acceptable to the solver; a population passing
    // neither is rejected with the primary-regime diagnostics.
    let primary = validate(population, Regime::Primary);
    if primary.is_ok() {
        return Ok(());
    }
    let alternative = validate(population, Regime::Alternative);
    if alternative.is_ok() {
        return Ok(());
    }
    Err(primary.into_result().unwrap_err().into())
}

/// Per-cell equilibrium quantities shared by the solver stages.
struct CellQuantities {
    /// `Z0` per type per cell: `z0[k][j]`.
    z0: Vec<Vec<f64>>,
    /// `pi*` per type per cell.
    pi: Vec<Vec<f64>>,
}

fn cell_quantities(population: &Population) -> Result<CellQuantities, MfgError> {
    let n_cells = population.grid().n_cells();
    let n_types = population.n_types();
    let mut z0 = vec![vec![0.0; n_cells]; n_types];
    let mut pi = vec![vec![0.0; n_cells]; n_types];
    for j in 0..n_cells {
        // E-bar[sigma0 h / (gamma s)] and the equilibrium denominator.
        let inner = population.mean_over_types(|_, a| {
            a.market.sigma0[j] * a.market.h[j] / (a.prefs.gamma * a.market.total_variance(j))
        });
        let denom = 1.0
            + population.mean_over_types(|_, a| {
                a.prefs.theta * (1.0 - a.prefs.gamma) * a.market.sigma0[j] * a.market.sigma0[j]
                    / (a.prefs.gamma * a.market.total_variance(j))
            });
        for (k, (_, a)) in population.types().enumerate() {
            let p = &a.prefs;
            let s = a.market.total_variance(j);
            let gs = p.gamma * s;
            let z = -p.theta * (1.0 - p.gamma) * inner / denom;
            // Closed form of the equilibrium investment rate.
            let pi_closed = a.market.h[j] / gs
                - (a.market.sigma0[j] / gs) * (p.theta * (1.0 - p.gamma) * inner / denom);
            // Pointwise-maximizer form; must agree with the closed form.
            let pi_alt = (a.market.h[j] + a.market.sigma0[j] * z) / gs;
            if (pi_closed - pi_alt).abs() > PI_FORMS_TOL * (1.0 + pi_closed.abs()) {
                return Err(MfgError::Internal(format!(
                    "pi* forms disagree for type {k} in cell {j}: {pi_closed} vs {pi_alt}"
                )));
            }
            z0[k][j] = z;
            pi[k][j] = pi_closed;
        }
    }
    Ok(CellQuantities { z0, pi })
}

/// Common-noise loading `Z0` of every type at grid time `t`
/// (the idiosyncratic loading `Z` is identically zero).
pub fn compute_z0(population: &Population, t: f64) -> Result<Vec<f64>, MfgError> {
    validated(population)?;
    let j = population.grid().cell_index(t).map_err(ModelError::from)?;
    population.grid().node_index(t).map_err(ModelError::from)?;
    let q = cell_quantities(population)?;
    Ok(q.z0.iter().map(|path| path[j]).collect())
}

/// Equilibrium investment rate of every type at grid time `t`.
pub fn compute_pi_star(population: &Population, t: f64) -> Result<Vec<f64>, MfgError> {
    validated(population)?;
    let j = population.grid().cell_index(t).map_err(ModelError::from)?;
    population.grid().node_index(t).map_err(ModelError::from)?;
    let q = cell_quantities(population)?;
    Ok(q.pi.iter().map(|path| path[j]).collect())
}

fn riccati_from_cells(
    population: &Population,
    cells: &CellQuantities,
) -> Result<RiccatiData, MfgError> {
    let grid = population.grid();
    let n_cells = grid.n_cells();
    let n_types = population.n_types();

    // E-bar[theta (psi - 1)] is time-independent.
    let kappa_bar = population.mean_over_types(|_, a| a.prefs.theta * (a.prefs.psi - 1.0));

    let mut a_vals = vec![vec![0.0; n_cells]; n_types];
    let mut b_vals = vec![vec![0.0; n_cells]; n_types];
    for j in 0..n_cells {
        // E-bar[r + pi* h - pi*^2 (sigma^2 + sigma0^2) / 2].
        let mean_drift = population.mean_over_types(|k, a| {
            let pi = cells.pi[k][j];
            a.market.r[j] + pi * a.market.h[j] - 0.5 * pi * pi * a.market.total_variance(j)
        });
        for (k, (_, agent)) in population.types().enumerate() {
            let p = &agent.prefs;
            let s = agent.market.total_variance(j);
            let z0 = cells.z0[k][j];
            let hz = agent.market.h[j] + agent.market.sigma0[j] * z0;
            a_vals[k][j] = 0.5 * z0 * z0
                + (1.0 - p.gamma) * agent.market.r[j]
                + (1.0 - p.gamma) / (2.0 * p.gamma) * hz * hz / s
                - p.delta * p.theta_tilde()
                - p.theta * (1.0 - p.gamma) * mean_drift;
        }
        let mean_pa = population.mean_over_types(|k, a| {
            a.prefs.psi / a.prefs.theta_tilde() * a_vals[k][j]
        });
        for (k, (_, agent)) in population.types().enumerate() {
            let p = &agent.prefs;
            b_vals[k][j] = p.psi / p.theta_tilde() * a_vals[k][j]
                - p.theta * (p.psi - 1.0) / (kappa_bar + 1.0) * mean_pa;
        }
    }

    let mean_m = population.mean_over_types(|_, a| log_terminal_exponent(&a.prefs));
    let mut d = Vec::with_capacity(n_types);
    for (_, agent) in population.types() {
        let p = &agent.prefs;
        let m = log_terminal_exponent(p);
        d.push((p.theta * (p.psi - 1.0) / (kappa_bar + 1.0) * mean_m - m).exp());
    }

    let a = a_vals
        .into_iter()
        .map(|v| GridFunction::cell_valued(grid.clone(), v))
        .collect::<Result<Vec<_>, _>>()?;
    let b = b_vals
        .into_iter()
        .map(|v| GridFunction::cell_valued(grid.clone(), v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RiccatiData { a, b, d })
}

/// `-psi log delta + (psi / theta_tilde) log alpha`.
fn log_terminal_exponent(p: &crate::model::PreferenceParams) -> f64 {
    -p.psi * p.delta.ln() + p.psi / p.theta_tilde() * p.alpha.ln()
}

/// Riccati data `(A, B, D)` for every type of a validated population.
pub fn compute_riccati_data(population: &Population) -> Result<RiccatiData, MfgError> {
    validated(population)?;
    let cells = cell_quantities(population)?;
    riccati_from_cells(population, &cells)
}

/// Evaluates the closed-form solution of `y' = y^2 + B y`, `y(T) = d`
/// on the grid nodes:
///
/// `y(t) = d / ( exp(int_t^T B) + d * int_t^T exp(int_t^s B) ds )`.
///
/// Both integrals are exact for cell-constant `B` (the inner
/// exponential integrates in closed form per cell).
pub fn riccati_closed_form(b: &GridFunction, d: f64) -> Result<GridFunction, MfgError> {
    let grid = b.grid().clone();
    let n_cells = grid.n_cells();
    // suffix[m] = int_{t_m}^T B.
    let mut suffix = vec![0.0; grid.n_nodes()];
    for m in (0..n_cells).rev() {
        suffix[m] = suffix[m + 1] + b.cell_value(m) * grid.cell_width(m);
    }
    // tail[m] = int_{t_m}^T exp(int_{t_m}^s B) ds, built backward:
    // tail[m] = g(B_m, w_m) + exp(B_m w_m) * tail[m+1],
    // with g(b, w) = (exp(b w) - 1) / b the exact cell integral.
    let mut tail = vec![0.0; grid.n_nodes()];
    for m in (0..n_cells).rev() {
        let bm = b.cell_value(m);
        let w = grid.cell_width(m);
        let g = if bm.abs() < 1e-14 { w } else { (bm * w).exp_m1() / bm };
        tail[m] = g + (bm * w).exp() * tail[m + 1];
    }
    let values: Vec<f64> = (0..grid.n_nodes())
        .map(|m| d / (suffix[m].exp() + d * tail[m]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MfgError::Internal(
            "closed-form Riccati evaluation produced a non-finite value".to_string(),
        ));
    }
    Ok(GridFunction::node_valued(grid, values)?)
}

/// Equilibrium consumption rate of every type, node-valued, with the
/// bequest convention `c*(T) = 1`.
pub fn solve_consumption(population: &Population) -> Result<Vec<GridFunction>, MfgError> {
    validated(population)?;
    let cells = cell_quantities(population)?;
    let riccati = riccati_from_cells(population, &cells)?;
    consumption_from_riccati(population.grid(), &riccati)
}

fn consumption_from_riccati(
    grid: &TimeGrid,
    riccati: &RiccatiData,
) -> Result<Vec<GridFunction>, MfgError> {
    let mut out = Vec::with_capacity(riccati.d.len());
    for (b, &d) in riccati.b.iter().zip(&riccati.d) {
        if !(d.is_finite() && d > 0.0) {
            return Err(MfgError::Internal(format!(
                "Riccati terminal value must be positive, got {d}"
            )));
        }
        let y = riccati_closed_form(b, d)?;
        if y.values()[..grid.n_cells()].iter().any(|&v| v <= 0.0) {
            return Err(MfgError::Internal(
                "consumption rate left the positive domain".to_string(),
            ));
        }
        let mut values = y.values().to_vec();
        *values.last_mut().unwrap() = 1.0;
        out.push(GridFunction::node_valued(grid.clone(), values)?);
    }
    Ok(out)
}

/// Solves the full mean-field equilibrium: rates, Riccati data, the
/// recovered `Y_hat` / `Y_tilde` processes, and the deterministic part
/// of the externality `nu_hat*`.
pub fn solve_mfg(population: &Population) -> Result<MfgEquilibrium, MfgError> {
    validated(population)?;
    let grid = population.grid().clone();
    let n_cells = grid.n_cells();
    let n_nodes = grid.n_nodes();
    let n_types = population.n_types();

    let cells = cell_quantities(population)?;
    let riccati = riccati_from_cells(population, &cells)?;
    let c_star = consumption_from_riccati(&grid, &riccati)?;

    // log of the consumption *rate* on every node (terminal limit D).
    let log_rate: Vec<Vec<f64>> = (0..n_types)
        .map(|k| {
            let mut v: Vec<f64> = c_star[k].values().iter().map(|c| c.ln()).collect();
            v[n_nodes - 1] = riccati.d[k].ln();
            v
        })
        .collect();

    let kappa_bar = population.mean_over_types(|_, a| a.prefs.theta * (a.prefs.psi - 1.0));

    // Invert the consumption/Y_hat relation: averaging
    // log c* = kappa/(1+kappa_bar) E[Y_hat] - Y_hat over types gives
    // E[Y_hat] = -(1 + kappa_bar) E[log c*], one scalar equation per node.
    let mut y_hat_vals = vec![vec![0.0; n_nodes]; n_types];
    let mut y_tilde_vals = vec![vec![0.0; n_nodes]; n_types];
    for m in 0..n_nodes {
        let mean_log_rate = population.mean_over_types(|k, _| log_rate[k][m]);
        let mean_y_hat = -(1.0 + kappa_bar) * mean_log_rate;
        for (k, (_, agent)) in population.types().enumerate() {
            let p = &agent.prefs;
            let y_hat =
                p.theta * (p.psi - 1.0) / (1.0 + kappa_bar) * mean_y_hat - log_rate[k][m];
            let tt = p.theta_tilde();
            y_hat_vals[k][m] = y_hat;
            y_tilde_vals[k][m] = tt / p.psi * y_hat + tt * p.delta.ln() - p.alpha.ln();
        }
    }
    for (k, path) in y_tilde_vals.iter().enumerate() {
        let terminal = path[n_nodes - 1];
        if terminal.abs() > Y_TILDE_TERMINAL_TOL {
            return Err(MfgError::Internal(format!(
                "Y_tilde(T) = {terminal} for type {k}, expected 0"
            )));
        }
    }

    // Deterministic part of E[log X* | F0]: the common-noise stochastic
    // integral is attached by the simulation module. The consumption
    // integral per cell is exact via (log y)' = y + B.
    let mut mean_log_wealth = vec![0.0; n_nodes];
    mean_log_wealth[0] = population.mean_over_types(|_, a| a.x0.ln());
    for j in 0..n_cells {
        let dt = grid.cell_width(j);
        let incr = population.mean_over_types(|k, a| {
            let pi = cells.pi[k][j];
            let drift =
                a.market.r[j] + pi * a.market.h[j] - 0.5 * pi * pi * a.market.total_variance(j);
            let consumption_int =
                (log_rate[k][j + 1] - log_rate[k][j]) - riccati.b[k].cell_value(j) * dt;
            drift * dt - consumption_int
        });
        mean_log_wealth[j + 1] = mean_log_wealth[j] + incr;
    }

    // nu_hat* deterministic part: E[log c*] + E[log X*]_det on [0, T),
    // wealth term only at T. The running variant keeps the consumption
    // term's left limit at T.
    let nu_hat_running: Vec<f64> = (0..n_nodes)
        .map(|m| {
            population.mean_over_types(|k, _| log_rate[k][m]) + mean_log_wealth[m]
        })
        .collect();
    let mut nu_hat_det = nu_hat_running.clone();
    nu_hat_det[n_nodes - 1] = mean_log_wealth[n_nodes - 1];

    let w0_loading: Vec<f64> = (0..n_cells)
        .map(|j| population.mean_over_types(|k, a| cells.pi[k][j] * a.market.sigma0[j]))
        .collect();

    let to_cell = |vals: Vec<Vec<f64>>| -> Result<Vec<GridFunction>, MfgError> {
        vals.into_iter()
            .map(|v| GridFunction::cell_valued(grid.clone(), v).map_err(MfgError::from))
            .collect()
    };
    let to_node = |vals: Vec<Vec<f64>>| -> Result<Vec<GridFunction>, MfgError> {
        vals.into_iter()
            .map(|v| GridFunction::node_valued(grid.clone(), v).map_err(MfgError::from))
            .collect()
    };

    Ok(MfgEquilibrium {
        grid: grid.clone(),
        pi_star: to_cell(cells.pi)?,
        c_star,
        z0: to_cell(cells.z0)?,
        y_tilde: to_node(y_tilde_vals)?,
        y_hat: to_node(y_hat_vals)?,
        nu_hat_det: GridFunction::node_valued(grid.clone(), nu_hat_det)?,
        nu_hat_running: GridFunction::node_valued(grid.clone(), nu_hat_running)?,
        mean_log_wealth_det: GridFunction::node_valued(grid.clone(), mean_log_wealth)?,
        w0_loading: GridFunction::cell_valued(grid, w0_loading)?,
        riccati,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentType, MarketCoefficients, PreferenceParams};
    use crate::ode::riccati_numeric;

    fn worked_prefs() -> PreferenceParams {
        PreferenceParams { delta: 0.1, gamma: 2.0, psi: 2.0, theta: 0.5, alpha: 1.0 }
    }

    fn worked_population(n_cells: usize) -> Population {
        let grid = TimeGrid::uniform(1.0, n_cells).unwrap();
        let agent = AgentType {
            prefs: worked_prefs(),
            market: MarketCoefficients::constant(0.02, 0.05, 0.2, 0.1, n_cells),
            x0: 1.0,
        };
        Population::single(agent, grid)
    }

    #[test]
    fn z0_worked_example() {
        let pop = worked_population(10);
        let z0 = compute_z0(&pop, 0.0).unwrap();
        assert!((z0[0] - 0.025 / 0.95).abs() < 1e-12);
    }

    #[test]
    fn z0_vanishes_without_competition_or_common_noise() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let mut agent = AgentType {
            prefs: worked_prefs(),
            market: MarketCoefficients::constant(0.02, 0.05, 0.2, 0.1, 10),
            x0: 1.0,
        };
        agent.prefs.theta = 0.0;
        let pop = Population::single(agent.clone(), grid.clone());
        assert_eq!(compute_z0(&pop, 0.5).unwrap()[0], 0.0);

        agent.prefs.theta = 0.5;
        agent.market.sigma0 = vec![0.0; 10];
        let pop = Population::single(agent, grid);
        assert_eq!(compute_z0(&pop, 0.5).unwrap()[0], 0.0);
    }

    #[test]
    fn pi_star_worked_example() {
        let pop = worked_population(10);
        let pi = compute_pi_star(&pop, 0.0).unwrap();
        assert!((pi[0] - (0.5 + 0.025 / 0.95)).abs() < 1e-12);
        // Merton ratio at theta = 0.
        let grid = pop.grid().clone();
        let mut agent = pop.agent(0).clone();
        agent.prefs.theta = 0.0;
        let merton = compute_pi_star(&Population::single(agent, grid), 0.0).unwrap();
        assert!((merton[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pi_star_zero_premium() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let agent = AgentType {
            prefs: worked_prefs(),
            market: MarketCoefficients::constant(0.02, 0.0, 0.2, 0.1, 10),
            x0: 1.0,
        };
        let pop = Population::single(agent, grid);
        assert_eq!(compute_pi_star(&pop, 0.0).unwrap()[0], 0.0);
    }

    #[test]
    fn riccati_data_worked_example() {
        let pop = worked_population(10);
        let rd = compute_riccati_data(&pop).unwrap();
        assert!((rd.a[0].cell_value(0) - 0.186191135734072).abs() < 1e-12);
        assert!((rd.b[0].cell_value(0) + 0.124127423822715).abs() < 1e-12);
        assert!((rd.d[0] - 0.1f64.powf(4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn riccati_d_is_one_for_unit_rates() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let mut prefs = worked_prefs();
        prefs.delta = 1.0;
        prefs.alpha = 1.0;
        let agent = AgentType {
            prefs,
            market: MarketCoefficients::constant(0.02, 0.05, 0.2, 0.1, 10),
            x0: 1.0,
        };
        let pop = Population::single(agent, grid);
        let rd = compute_riccati_data(&pop).unwrap();
        assert!((rd.d[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_bernoulli_solution() {
        // B = 0, D = 1, T = 1: y(0) = 1/(1 + (T - t)) = 0.5.
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let b = GridFunction::constant(grid.clone(), 0.0, crate::ode::Sampling::Cell);
        let y = riccati_closed_form(&b, 1.0).unwrap();
        assert!((y.node_value(0) - 0.5).abs() < 1e-14);
        assert!((y.node_value(grid.n_cells()) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn consumption_worked_example_matches_rk4() {
        let pop = worked_population(100);
        let c = solve_consumption(&pop).unwrap();
        let rd = compute_riccati_data(&pop).unwrap();
        let oracle = riccati_numeric(&rd.b[0], rd.d[0], pop.grid()).unwrap();
        let n = pop.grid().n_cells();
        for m in 0..n {
            assert!(
                (c[0].node_value(m) - oracle.node_value(m)).abs() < 1e-9,
                "node {m}: closed {} vs rk4 {}",
                c[0].node_value(m),
                oracle.node_value(m)
            );
        }
        // Frozen expected value from the RK4 oracle.
        assert!((c[0].node_value(0) - 0.050076).abs() < 2e-6);
        assert_eq!(c[0].node_value(n), 1.0);
    }

    #[test]
    fn closed_form_matches_rk4_on_nonuniform_grid() {
        let points = vec![0.0, 0.05, 0.2, 0.21, 0.5, 0.9, 1.0];
        let grid = TimeGrid::new(points).unwrap();
        let agent = AgentType {
            prefs: worked_prefs(),
            market: MarketCoefficients {
                r: vec![0.02, 0.02, 0.01, 0.01, 0.03, 0.03],
                h: vec![0.05, 0.04, 0.04, 0.06, 0.06, 0.05],
                sigma: vec![0.2, 0.25, 0.25, 0.2, 0.3, 0.3],
                sigma0: vec![0.1, 0.1, 0.05, 0.05, 0.1, 0.0],
            },
            x0: 1.0,
        };
        let pop = Population::single(agent, grid.clone());
        let eq = solve_mfg(&pop).unwrap();
        let oracle = riccati_numeric(&eq.riccati.b[0], eq.riccati.d[0], &grid).unwrap();
        let rate = eq.consumption_rate(0);
        for m in 0..grid.n_nodes() {
            assert!(
                (rate.node_value(m) - oracle.node_value(m)).abs() < 1e-6,
                "node {m}"
            );
        }
        assert!(eq.y_tilde[0].node_value(grid.n_nodes() - 1).abs() < 1e-12);
    }

    #[test]
    fn solve_mfg_y_tilde_terminal_zero_and_finite() {
        let pop = worked_population(100);
        let eq = solve_mfg(&pop).unwrap();
        let n = pop.grid().n_cells();
        assert!(eq.y_tilde[0].node_value(n).abs() < 1e-12);
        assert!(eq.y_tilde[0].node_value(0).is_finite());
        // Y_hat at T equals -psi log delta + (psi/theta_tilde) log alpha.
        let p = worked_prefs();
        let m_t = -p.psi * p.delta.ln() + p.psi / p.theta_tilde() * p.alpha.ln();
        assert!((eq.y_hat[0].node_value(n) - m_t).abs() < 1e-12);
    }

    #[test]
    fn identical_types_give_identical_outputs() {
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let agent = AgentType {
            prefs: worked_prefs(),
            market: MarketCoefficients::constant(0.02, 0.05, 0.2, 0.1, 50),
            x0: 1.0,
        };
        let pop = Population::new(vec![(0.5, agent.clone()), (0.5, agent)], grid);
        let eq = solve_mfg(&pop).unwrap();
        for m in 0..=50 {
            assert_eq!(eq.c_star[0].node_value(m), eq.c_star[1].node_value(m));
            assert_eq!(eq.y_tilde[0].node_value(m), eq.y_tilde[1].node_value(m));
        }
        for j in 0..50 {
            assert_eq!(eq.pi_star[0].cell_value(j), eq.pi_star[1].cell_value(j));
        }
        // Single-type population with the same parameters must coincide.
        let single = worked_population(50);
        let eq1 = solve_mfg(&single).unwrap();
        for m in 0..=50 {
            assert!((eq.c_star[0].node_value(m) - eq1.c_star[0].node_value(m)).abs() < 1e-14);
        }
    }

    #[test]
    fn theta_zero_decouples_consumption() {
        // Type 1 at theta = 0 keeps its single-agent consumption
        // regardless of the second type's parameters.
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let mut solo_agent = AgentType {
            prefs: worked_prefs(),
            market: MarketCoefficients::constant(0.02, 0.05, 0.2, 0.1, 50),
            x0: 1.0,
        };
        solo_agent.prefs.theta = 0.0;
        let solo = solve_mfg(&Population::single(solo_agent.clone(), grid.clone())).unwrap();

        let mut other = solo_agent.clone();
        other.prefs.gamma = 3.0;
        other.prefs.psi = 1.5;
        other.prefs.theta = 0.8;
        other.market = MarketCoefficients::constant(0.01, 0.03, 0.3, 0.05, 50);
        let mixed =
            solve_mfg(&Population::new(vec![(0.6, solo_agent), (0.4, other)], grid)).unwrap();
        for m in 0..=50 {
            assert!(
                (mixed.c_star[0].node_value(m) - solo.c_star[0].node_value(m)).abs() < 1e-12
            );
        }
    }
}
