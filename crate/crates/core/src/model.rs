//! Domain types, parameter validation, and the population-average
//! operator used by every equilibrium formula.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, TimeGrid};

/// Guard below which the equilibrium denominator
/// `1 + E[theta (1-gamma) sigma0^2 / (gamma (sigma^2 + sigma0^2))]`
/// is treated as singular.
pub const EQUILIBRIUM_DENOM_MIN: f64 = 1e-6;

/// Tolerance on the population weights summing to one.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Parameter regime selecting which preference inequalities are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `psi * gamma >= 1` and `psi > 1`.
    Primary,
    /// `psi * gamma <= 1`, `gamma < 1` and `psi > 1`; enables the
    /// power-utility reduction at `psi * gamma = 1`.
    Alternative,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid population: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Epstein-Zin preference parameters of one agent type.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PreferenceParams {
    /// Discount rate, per unit time.
    pub delta: f64,
    /// Relative risk aversion.
    pub gamma: f64,
    /// Elasticity of intertemporal substitution.
    pub psi: f64,
    /// Competition parameter weighting the population benchmark.
    pub theta: f64,
    /// Bequest rate.
    pub alpha: f64,
}

impl PreferenceParams {
    /// `(1 - gamma) / (1 - 1/psi)`, always derived, never stored.
    pub fn theta_tilde(&self) -> f64 {
        (1.0 - self.gamma) / (1.0 - 1.0 / self.psi)
    }
}

/// Deterministic market coefficient paths, one value per grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketCoefficients {
    /// Interest rate.
    pub r: Vec<f64>,
    /// Risk premium.
    pub h: Vec<f64>,
    /// Idiosyncratic volatility.
    pub sigma: Vec<f64>,
    /// Common-noise volatility.
    pub sigma0: Vec<f64>,
}

impl MarketCoefficients {
    pub fn constant(r: f64, h: f64, sigma: f64, sigma0: f64, n_cells: usize) -> Self {
        Self {
            r: vec![r; n_cells],
            h: vec![h; n_cells],
            sigma: vec![sigma; n_cells],
            sigma0: vec![sigma0; n_cells],
        }
    }

    /// Total instantaneous variance `sigma^2 + sigma0^2` in cell `j`.
    pub fn total_variance(&self, j: usize) -> f64 {
        self.sigma[j] * self.sigma[j] + self.sigma0[j] * self.sigma0[j]
    }
}

/// One population type: preferences, market coefficients, initial wealth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentType {
    pub prefs: PreferenceParams,
    pub market: MarketCoefficients,
    /// Initial wealth, strictly positive.
    pub x0: f64,
}

/// Weighted finite mixture of agent types on a shared time grid.
#[derive(Debug, Clone)]
pub struct Population {
    types: Vec<(f64, AgentType)>,
    grid: TimeGrid,
}

impl Population {
    pub fn new(types: Vec<(f64, AgentType)>, grid: TimeGrid) -> Self {
        Self { types, grid }
    }

    pub fn single(agent: AgentType, grid: TimeGrid) -> Self {
        Self::new(vec![(1.0, agent)], grid)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.types[k].0
    }

    pub fn agent(&self, k: usize) -> &AgentType {
        &self.types[k].1
    }

    pub fn types(&self) -> impl Iterator<Item = (f64, &AgentType)> {
        self.types.iter().map(|(w, a)| (*w, a))
    }

    /// Weighted type average of `extractor` at grid time `t`.
    ///
    /// This realizes the conditional expectation over the type
    /// distribution; `t` must be a grid node.
    pub fn population_mean(
        &self,
        extractor: impl Fn(&AgentType, f64) -> f64,
        t: f64,
    ) -> Result<f64, ModelError> {
        self.grid.node_index(t)?;
        Ok(self.types.iter().map(|(w, a)| w * extractor(a, t)).sum())
    }

    /// Weighted type average of a per-type value, indexed form.
    pub(crate) fn mean_over_types(&self, f: impl Fn(usize, &AgentType) -> f64) -> f64 {
        self.types
            .iter()
            .enumerate()
            .map(|(k, (w, a))| w * f(k, a))
            .sum()
    }
}

/// Validation outcome: empty means the population is usable by every
/// downstream solver.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<(), ModelError> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(ModelError::Invalid(self.violations))
        }
    }
}

pub(crate) fn check_prefs(prefs: &PreferenceParams, regime: Regime, label: &str, out: &mut Vec<String>) {
    let p = prefs;
    if !(p.delta.is_finite() && p.delta > 0.0) {
        out.push(format!("{label}: delta must be positive"));
    }
    if !(p.gamma.is_finite() && p.gamma > 0.0) {
        out.push(format!("{label}: gamma must be positive"));
    }
    if (p.gamma - 1.0).abs() < 1e-9 {
        out.push(format!("{label}: gamma must differ from 1"));
    }
    if !(p.psi.is_finite() && p.psi > 1.0) {
        out.push(format!("{label}: psi must exceed 1"));
    }
    if !(p.theta.is_finite() && p.theta >= 0.0) {
        out.push(format!("{label}: theta must be non-negative"));
    }
    if !(p.alpha.is_finite() && p.alpha > 0.0) {
        out.push(format!("{label}: alpha must be positive"));
    }
    if p.gamma.is_finite() && p.psi.is_finite() && p.psi > 1.0 && p.gamma > 0.0 {
        match regime {
            Regime::Primary => {
                if p.psi * p.gamma < 1.0 {
                    out.push(format!("{label}: primary regime requires psi*gamma >= 1"));
                }
            }
            Regime::Alternative => {
                if p.psi * p.gamma > 1.0 + 1e-12 || p.gamma >= 1.0 {
                    out.push(format!(
                        "{label}: alternative regime requires psi*gamma <= 1 and gamma < 1"
                    ));
                }
            }
        }
    }
}

pub(crate) fn check_market(
    market: &MarketCoefficients,
    n_cells: usize,
    label: &str,
    out: &mut Vec<String>,
) -> bool {
    let paths = [
        ("r", &market.r),
        ("h", &market.h),
        ("sigma", &market.sigma),
        ("sigma0", &market.sigma0),
    ];
    let mut shape_ok = true;
    for (name, path) in paths {
        if path.len() != n_cells {
            out.push(format!(
                "{label}: market path {name} has {} cells, grid has {n_cells}",
                path.len()
            ));
            shape_ok = false;
        } else if path.iter().any(|v| !v.is_finite()) {
            out.push(format!("{label}: market path {name} must be finite"));
            shape_ok = false;
        }
    }
    if shape_ok {
        for j in 0..n_cells {
            if market.total_variance(j) <= 0.0 {
                out.push(format!(
                    "{label}: sigma^2 + sigma0^2 must be positive in every cell (cell {j})"
                ));
                shape_ok = false;
                break;
            }
        }
    }
    shape_ok
}

/// Checks the parameter regime, positivity constraints, grid/market
/// shape, weight normalization, and the singular-denominator guard.
///
/// Returns diagnostics; callers convert to failures via
/// [`ValidationReport::into_result`].
pub fn validate(population: &Population, regime: Regime) -> ValidationReport {
    let mut out = Vec::new();
    let n_cells = population.grid().n_cells();

    if population.n_types() == 0 {
        out.push("population must contain at least one type".to_string());
        return ValidationReport { violations: out };
    }

    let mut weight_sum = 0.0;
    for (k, (w, _)) in population.types.iter().enumerate() {
        if !(w.is_finite() && *w > 0.0) {
            out.push(format!("type {k}: weight must be positive"));
        }
        weight_sum += w;
    }
    if (weight_sum - 1.0).abs() > WEIGHT_SUM_TOL {
        out.push(format!("weights must sum to 1 (got {weight_sum})"));
    }

    let mut markets_ok = true;
    for (k, (_, agent)) in population.types.iter().enumerate() {
        let label = format!("type {k}");
        check_prefs(&agent.prefs, regime, &label, &mut out);
        if !(agent.x0.is_finite() && agent.x0 > 0.0) {
            out.push(format!("{label}: x0 must be positive"));
        }
        markets_ok &= check_market(&agent.market, n_cells, &label, &mut out);
    }

    // Denominator guard for the equilibrium investment formula. Only
    // meaningful once the per-type inputs are in shape.
    if out.is_empty() && markets_ok {
        for j in 0..n_cells {
            let denom = 1.0
                + population.mean_over_types(|_, a| {
                    let p = &a.prefs;
                    p.theta * (1.0 - p.gamma) * a.market.sigma0[j] * a.market.sigma0[j]
                        / (p.gamma * a.market.total_variance(j))
                });
            if denom < EQUILIBRIUM_DENOM_MIN {
                out.push(format!(
                    "singular equilibrium denominator at t = {} (value {denom:.3e})",
                    population.grid().node(j)
                ));
                break;
            }
        }
    }

    ValidationReport { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_prefs() -> PreferenceParams {
        PreferenceParams { delta: 0.1, gamma: 2.0, psi: 2.0, theta: 0.5, alpha: 1.0 }
    }

    fn base_agent(grid: &TimeGrid) -> AgentType {
        AgentType {
            prefs: base_prefs(),
            market: MarketCoefficients::constant(0.02, 0.05, 0.2, 0.1, grid.n_cells()),
            x0: 1.0,
        }
    }

    #[test]
    fn worked_single_type_is_valid() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let pop = Population::single(base_agent(&grid), grid);
        let report = validate(&pop, Regime::Primary);
        assert!(report.is_ok(), "unexpected violations: {:?}", report.violations);
    }

    #[test]
    fn psi_one_is_rejected() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let mut agent = base_agent(&grid);
        agent.prefs.psi = 1.0;
        let pop = Population::single(agent, grid);
        let report = validate(&pop, Regime::Primary);
        assert!(report.violations.iter().any(|v| v.contains("psi must exceed 1")));
    }

    #[test]
    fn singular_denominator_is_rejected() {
        // gamma = 2, sigma = 0.2, sigma0 = 0.1: denom = 1 - 0.1*theta,
        // so theta = 10 makes it exactly zero.
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let mut agent = base_agent(&grid);
        agent.prefs.theta = 10.0;
        let pop = Population::single(agent, grid);
        let report = validate(&pop, Regime::Primary);
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("singular equilibrium denominator")));
    }

    #[test]
    fn alternative_regime_bounds() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let mut agent = base_agent(&grid);
        agent.prefs.gamma = 0.5;
        agent.prefs.psi = 2.0;
        let pop = Population::single(agent.clone(), grid.clone());
        assert!(validate(&pop, Regime::Alternative).is_ok());

        agent.prefs.gamma = 2.0;
        let pop = Population::single(agent, grid);
        assert!(!validate(&pop, Regime::Alternative).is_ok());
    }

    #[test]
    fn population_mean_examples() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let one = Population::single(base_agent(&grid), grid.clone());
        let g = one.population_mean(|a, _| a.prefs.gamma, 0.0).unwrap();
        assert_eq!(g, 2.0);

        let mut a1 = base_agent(&grid);
        a1.x0 = 1.0;
        let mut a2 = base_agent(&grid);
        a2.x0 = 3.0;
        let two = Population::new(vec![(0.5, a1.clone()), (0.5, a2.clone())], grid.clone());
        assert!((two.population_mean(|a, _| a.x0, 0.5).unwrap() - 2.0).abs() < 1e-15);

        let mut a3 = base_agent(&grid);
        a3.x0 = 2.0;
        let three = Population::new(
            vec![(0.2, a1), (0.3, a3), (0.5, a2)],
            grid,
        );
        assert!((three.population_mean(|a, _| a.x0, 1.0).unwrap() - 2.3).abs() < 1e-15);
    }

    #[test]
    fn population_mean_off_grid_errors() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let pop = Population::single(base_agent(&grid), grid);
        assert!(pop.population_mean(|a, _| a.x0, 0.123).is_err());
    }

    #[test]
    fn market_length_mismatch_is_reported() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let mut agent = base_agent(&grid);
        agent.market.sigma.pop();
        let pop = Population::single(agent, grid);
        let report = validate(&pop, Regime::Primary);
        assert!(report.violations.iter().any(|v| v.contains("sigma has 9 cells")));
    }
}
