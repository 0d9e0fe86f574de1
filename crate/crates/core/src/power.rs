//! Time-additive power-utility benchmark.
//!
//! At `psi * gamma = 1` the Epstein-Zin aggregator collapses to
//! `delta c^{1-gamma}/(1-gamma) - delta v`, i.e. classical discounted
//! power utility. This module re-derives the equilibrium consumption
//! rate for that case from the HJB side, with the exponents specialized
//! by hand and the Riccati equation integrated numerically, as an
//! independent code path against the general solver.

use crate::grid::TimeGrid;
use crate::model::{AgentType, Population};
use crate::ode::{riccati_numeric, GridFunction, OdeError};

/// Single-agent Merton consumption rate with bequest, RK4-integrated:
/// `c' = c^2 + B c` with `B = [(1-gamma)(r + h^2/(2 gamma s)) - delta]/gamma`
/// and `c(T) = (delta/alpha)^{1/gamma}`.
pub fn merton_consumption_rk4(agent: &AgentType, grid: &TimeGrid) -> Result<GridFunction, OdeError> {
    let p = &agent.prefs;
    let b: Vec<f64> = (0..grid.n_cells())
        .map(|j| {
            let s = agent.market.total_variance(j);
            let h = agent.market.h[j];
            ((1.0 - p.gamma) * (agent.market.r[j] + h * h / (2.0 * p.gamma * s)) - p.delta)
                / p.gamma
        })
        .collect();
    let b = GridFunction::cell_valued(grid.clone(), b)?;
    let d = (p.delta / p.alpha).powf(1.0 / p.gamma);
    riccati_numeric(&b, d, grid)
}

/// Textbook constant-coefficient Merton consumption rate:
/// `c(t)^{-1} = e^{B (T-t)} / D + (e^{B (T-t)} - 1) / B`.
pub fn merton_consumption_closed(
    delta: f64,
    gamma: f64,
    alpha: f64,
    r: f64,
    h: f64,
    total_variance: f64,
    horizon: f64,
    t: f64,
) -> f64 {
    let b = ((1.0 - gamma) * (r + h * h / (2.0 * gamma * total_variance)) - delta) / gamma;
    let d = (delta / alpha).powf(1.0 / gamma);
    let tau = horizon - t;
    let e = (b * tau).exp();
    let tail = if b.abs() < 1e-14 { tau } else { (b * tau).exp_m1() / b };
    1.0 / (e / d + tail)
}

/// Mean-field consumption rates in the power-utility reduction
/// (`theta_tilde = 1`, so `psi/theta_tilde = psi`), everything written
/// out with the specialized exponents and solved with the RK4 oracle.
///
/// The caller is responsible for the population actually sitting at
/// `psi * gamma = 1`; away from it this is simply a different model.
pub fn power_reduction_consumption(
    population: &Population,
) -> Result<Vec<GridFunction>, OdeError> {
    let grid = population.grid();
    let n_cells = grid.n_cells();
    let n_types = population.n_types();

    // Equilibrium investment, recomputed locally.
    let mut z0 = vec![vec![0.0; n_cells]; n_types];
    let mut pi = vec![vec![0.0; n_cells]; n_types];
    for j in 0..n_cells {
        let mut inner = 0.0;
        let mut denom = 1.0;
        for (w, a) in population.types() {
            let p = &a.prefs;
            let gs = p.gamma * a.market.total_variance(j);
            inner += w * a.market.sigma0[j] * a.market.h[j] / gs;
            denom += w * p.theta * (1.0 - p.gamma) * a.market.sigma0[j] * a.market.sigma0[j] / gs;
        }
        for (k, (_, a)) in population.types().enumerate() {
            let p = &a.prefs;
            let gs = p.gamma * a.market.total_variance(j);
            z0[k][j] = -p.theta * (1.0 - p.gamma) * inner / denom;
            pi[k][j] = (a.market.h[j] + a.market.sigma0[j] * z0[k][j]) / gs;
        }
    }

    let kappa_bar: f64 =
        population.types().map(|(w, a)| w * a.prefs.theta * (a.prefs.psi - 1.0)).sum();

    // A with delta theta_tilde -> delta, B with psi/theta_tilde -> psi.
    let mut a_vals = vec![vec![0.0; n_cells]; n_types];
    let mut b_vals = vec![vec![0.0; n_cells]; n_types];
    for j in 0..n_cells {
        let mean_drift: f64 = population
            .types()
            .enumerate()
            .map(|(k, (w, a))| {
                let s = a.market.total_variance(j);
                w * (a.market.r[j] + pi[k][j] * a.market.h[j] - 0.5 * pi[k][j] * pi[k][j] * s)
            })
            .sum();
        for (k, (_, a)) in population.types().enumerate() {
            let p = &a.prefs;
            let s = a.market.total_variance(j);
            let hz = a.market.h[j] + a.market.sigma0[j] * z0[k][j];
            a_vals[k][j] = 0.5 * z0[k][j] * z0[k][j]
                + (1.0 - p.gamma) * a.market.r[j]
                + (1.0 - p.gamma) / (2.0 * p.gamma) * hz * hz / s
                - p.delta
                - p.theta * (1.0 - p.gamma) * mean_drift;
        }
        let mean_pa: f64 = population
            .types()
            .enumerate()
            .map(|(k, (w, a))| w * a.prefs.psi * a_vals[k][j])
            .sum();
        for (k, (_, a)) in population.types().enumerate() {
            let p = &a.prefs;
            b_vals[k][j] =
                p.psi * a_vals[k][j] - p.theta * (p.psi - 1.0) / (kappa_bar + 1.0) * mean_pa;
        }
    }

    // Terminal values with psi/theta_tilde -> psi.
    let mean_m: f64 = population
        .types()
        .map(|(w, a)| {
            let p = &a.prefs;
            w * (-p.psi * p.delta.ln() + p.psi * p.alpha.ln())
        })
        .sum();

    let mut out = Vec::with_capacity(n_types);
    for (k, (_, a)) in population.types().enumerate() {
        let p = &a.prefs;
        let m = -p.psi * p.delta.ln() + p.psi * p.alpha.ln();
        let d = (p.theta * (p.psi - 1.0) / (kappa_bar + 1.0) * mean_m - m).exp();
        let b = GridFunction::cell_valued(grid.clone(), b_vals[k].clone())?;
        out.push(riccati_numeric(&b, d, grid)?);
    }
    Ok(out)
}
