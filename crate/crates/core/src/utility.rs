//! Epstein-Zin aggregator, its derivatives, and utility evaluation for
//! arbitrary proportional strategies via the homothetic ODE reduction.
//!
//! The evaluator is the engine behind the best-response tests: a single
//! agent's utility is computed exactly (up to ODE error) for any
//! deterministic proportional strategy while the population externality
//! is held fixed.

use thiserror::Error;

use crate::grid::TimeGrid;
use crate::mfg::MfgEquilibrium;
use crate::model::{AgentType, Population, PreferenceParams};
use crate::ode::{GridFunction, OdeError, Sampling};
use crate::simulate::{SimConfig, SimError};

#[derive(Debug, Error)]
pub enum UtilityError {
    #[error("aggregator domain violation: {0}")]
    Domain(String),
    #[error("utility ODE left the positive phi domain at t = {t}")]
    PhiDomainExit { t: f64 },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Epstein-Zin aggregator
/// `f(c, v) = delta c^{1-1/psi} / (1-1/psi) * ((1-gamma) v)^{1-1/theta_tilde}
///            - delta theta_tilde v`.
///
/// Domain: `c > 0` and `(1-gamma) v >= 0` (strictly positive where a
/// negative exponent would blow up).
pub fn aggregator(c_arg: f64, v: f64, prefs: &PreferenceParams) -> Result<f64, UtilityError> {
    let tt = prefs.theta_tilde();
    let gv = (1.0 - prefs.gamma) * v;
    check_domain(c_arg, gv, 1.0 - 1.0 / tt)?;
    let iota = 1.0 - 1.0 / prefs.psi;
    Ok(prefs.delta * c_arg.powf(iota) / iota * gv.powf(1.0 - 1.0 / tt) - prefs.delta * tt * v)
}

/// Analytic partial derivatives `(f_1, f_2)` of the aggregator with
/// respect to consumption and utility.
pub fn aggregator_derivs(
    c_arg: f64,
    v: f64,
    prefs: &PreferenceParams,
) -> Result<(f64, f64), UtilityError> {
    let tt = prefs.theta_tilde();
    let gv = (1.0 - prefs.gamma) * v;
    check_domain(c_arg, gv, 1.0 - 1.0 / tt)?;
    let iota = 1.0 - 1.0 / prefs.psi;
    let f1 = prefs.delta * c_arg.powf(-1.0 / prefs.psi) * gv.powf(1.0 - 1.0 / tt);
    // The v-derivative of the first term carries (1 - 1/tt)(1 - gamma);
    // at theta_tilde = 1 the coefficient vanishes and f_2 = -delta.
    let coeff = (1.0 - 1.0 / tt) * (1.0 - prefs.gamma);
    let first = if coeff == 0.0 {
        0.0
    } else {
        if gv <= 0.0 && -1.0 / tt < 0.0 {
            return Err(UtilityError::Domain(format!(
                "(1-gamma) v must be positive for f_2, got {gv}"
            )));
        }
        prefs.delta * c_arg.powf(iota) / iota * coeff * gv.powf(-1.0 / tt)
    };
    Ok((f1, first - prefs.delta * tt))
}

fn check_domain(c_arg: f64, gv: f64, exponent: f64) -> Result<(), UtilityError> {
    if !(c_arg.is_finite() && c_arg > 0.0) {
        return Err(UtilityError::Domain(format!(
            "consumption argument must be positive, got {c_arg}"
        )));
    }
    if !gv.is_finite() || gv < 0.0 {
        return Err(UtilityError::Domain(format!(
            "(1-gamma) v must be non-negative, got {gv}"
        )));
    }
    if gv == 0.0 && exponent < 0.0 {
        return Err(UtilityError::Domain(
            "(1-gamma) v must be positive for a negative aggregator exponent".to_string(),
        ));
    }
    Ok(())
}

/// Proportional investment/consumption strategy: `pi` is the fraction
/// of wealth in the risky asset (cell-valued), `c` the consumption rate
/// (node-valued, carrying the rate's continuous limit at `T`; terminal
/// wealth is always consumed in full as the bequest).
#[derive(Debug, Clone)]
pub struct ProportionalStrategy {
    pub pi: GridFunction,
    pub c: GridFunction,
}

impl ProportionalStrategy {
    pub fn new(pi: GridFunction, c: GridFunction) -> Self {
        debug_assert_eq!(pi.sampling(), Sampling::Cell);
        debug_assert_eq!(c.sampling(), Sampling::Node);
        Self { pi, c }
    }

    /// Equilibrium strategy of type `k`.
    pub fn from_equilibrium(eq: &MfgEquilibrium, k: usize) -> Self {
        Self { pi: eq.pi_star[k].clone(), c: eq.consumption_rate(k) }
    }

    /// Consumption path scaled by `1 + eps`.
    pub fn scale_consumption(&self, eps: f64) -> Self {
        Self { pi: self.pi.clone(), c: self.c.map(|v| v * (1.0 + eps)) }
    }

    /// Investment path shifted by `eps`.
    pub fn shift_investment(&self, eps: f64) -> Self {
        Self { pi: self.pi.map(|v| v + eps), c: self.c.clone() }
    }
}

/// Population externality held fixed while one agent deviates.
///
/// `log_path` is the running externality entering consumption
/// arguments (continuous on `[0, T]`); `log_terminal` is the value
/// benchmarking the bequest (the equilibrium externality drops its
/// consumption term at `T`); `w0_loading` is the common-noise exposure
/// `q = E-bar[pi* sigma0]` (zero for genuinely deterministic
/// externalities).
#[derive(Debug, Clone)]
pub struct Externality {
    pub log_path: GridFunction,
    pub log_terminal: f64,
    pub w0_loading: GridFunction,
}

impl Externality {
    /// Deterministic externality with no common-noise exposure and a
    /// continuous terminal value.
    pub fn deterministic(log_path: GridFunction) -> Self {
        let grid = log_path.grid().clone();
        let log_terminal = log_path.node_value(grid.n_nodes() - 1);
        let w0_loading = GridFunction::constant(grid, 0.0, Sampling::Cell);
        Self { log_path, log_terminal, w0_loading }
    }

    pub fn from_equilibrium(eq: &MfgEquilibrium) -> Self {
        let last = eq.grid().n_nodes() - 1;
        Self {
            log_path: eq.nu_hat_running.clone(),
            log_terminal: eq.nu_hat_det.node_value(last),
            w0_loading: eq.w0_loading.clone(),
        }
    }
}

/// Utility curve `V_t = phi(t) X_t^{1-gamma} / (1-gamma)` of a
/// proportional strategy, with `V0` evaluated at the agent's `x0`.
#[derive(Debug, Clone)]
pub struct UtilityCurve {
    pub phi: GridFunction,
    pub v0: f64,
}

/// Evaluates the utility of a proportional strategy against a fixed
/// externality by solving the scalar backward ODE
///
/// `phi' = -[(1-gamma)(r + pi h - c - (gamma/2) pi^2 s + pi sigma0 z)
///           + z^2/2] phi
///         - delta theta_tilde [ (c e^{-theta n})^{1-1/psi} phi^{1-1/theta_tilde} - phi ]`
///
/// with `z = -theta (1-gamma) q` the value loading induced by the
/// externality's common-noise exposure and
/// `phi(T) = alpha e^{-theta (1-gamma) n(T)}`.
pub fn evaluate_proportional(
    agent: &AgentType,
    strategy: &ProportionalStrategy,
    externality: &Externality,
    grid: &TimeGrid,
) -> Result<UtilityCurve, UtilityError> {
    let p = agent.prefs;
    let tt = p.theta_tilde();
    let iota = 1.0 - 1.0 / p.psi;
    let n_cells = grid.n_cells();
    let refine = crate::ode::DEFAULT_REFINE;

    let mut phi = p.alpha * (-p.theta * (1.0 - p.gamma) * externality.log_terminal).exp();
    let mut values = vec![0.0; grid.n_nodes()];
    values[n_cells] = phi;

    for j in (0..n_cells).rev() {
        let s = agent.market.total_variance(j);
        let r = agent.market.r[j];
        let h = agent.market.h[j];
        let sigma0 = agent.market.sigma0[j];
        let pi = strategy.pi.cell_value(j);
        let z = -p.theta * (1.0 - p.gamma) * externality.w0_loading.cell_value(j);
        // Investment part of the drift; consumption enters per stage.
        let lin = (1.0 - p.gamma) * (r + pi * h - 0.5 * p.gamma * pi * pi * s + pi * sigma0 * z)
            + 0.5 * z * z;

        let rhs = |t: f64, y: f64| -> f64 {
            if y <= 0.0 {
                return f64::NAN;
            }
            let c = strategy.c.eval(t);
            let n = externality.log_path.eval(t);
            let cc = c * (-p.theta * n).exp();
            -(lin - (1.0 - p.gamma) * c) * y
                - p.delta * tt * (cc.powf(iota) * y.powf(1.0 - 1.0 / tt) - y)
        };

        let step = grid.cell_width(j) / refine as f64;
        let t_right = grid.node(j + 1);
        for ss in 0..refine {
            let t = t_right - ss as f64 * step;
            let k1 = rhs(t, phi);
            let k2 = rhs(t - 0.5 * step, phi - 0.5 * step * k1);
            let k3 = rhs(t - 0.5 * step, phi - 0.5 * step * k2);
            let k4 = rhs(t - step, phi - step * k3);
            phi -= step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !phi.is_finite() || phi <= 0.0 {
                return Err(UtilityError::PhiDomainExit { t: t - step });
            }
        }
        values[j] = phi;
    }

    let v0 = values[0] * agent.x0.powf(1.0 - p.gamma) / (1.0 - p.gamma);
    Ok(UtilityCurve { phi: GridFunction::node_valued(grid.clone(), values)?, v0 })
}

/// Monte Carlo check of the utility recursion for type `k`:
/// estimates `E[ int_0^T f(c* X* e^{-theta nu*}, V*) ds + alpha U(X*_T e^{-theta nu*_T}) ]`
/// with the closed-form `V*` plugged in, and returns
/// `(estimate - V0, standard error)`.
pub fn mc_recursion_residual(
    population: &Population,
    equilibrium: &MfgEquilibrium,
    type_index: usize,
    sim: &SimConfig,
) -> Result<(f64, f64), UtilityError> {
    Ok(crate::simulate::recursion_residual(population, equilibrium, type_index, sim)?)
}
