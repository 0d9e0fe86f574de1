//! Verification check runners. Each returns report entries; the caller
//! bundles them into `verify.json` and derives the exit code.

use anyhow::{bail, Result};

use ezmfg_core::mfg::{solve_mfg, MfgEquilibrium};
use ezmfg_core::model::Population;
use ezmfg_core::nplayer::{mfg_limit_report, CONVERGED_GAP};
use ezmfg_core::ode::riccati_numeric;
use ezmfg_core::power::power_reduction_consumption;
use ezmfg_core::simulate::{
    best_response_gap, fixed_point_residual, CheckResult, SimConfig, DETERMINISTIC_TOL,
    THREE_SIGMA,
};
use ezmfg_core::utility::{aggregator, mc_recursion_residual};

pub const DEFAULT_EPS: [f64; 6] = [-0.1, -0.05, -0.01, 0.01, 0.05, 0.1];
pub const LIMIT_PLAYER_COUNTS: [usize; 5] = [2, 4, 8, 16, 32];

/// Closed-form consumption against the RK4 Riccati oracle, per type.
pub fn riccati_check(population: &Population, eq: &MfgEquilibrium) -> Result<Vec<CheckResult>> {
    let grid = eq.grid();
    let mut out = Vec::new();
    for k in 0..population.n_types() {
        let oracle = riccati_numeric(&eq.riccati.b[k], eq.riccati.d[k], grid)?;
        let rate = eq.consumption_rate(k);
        let gap = (0..grid.n_nodes())
            .map(|m| (rate.node_value(m) - oracle.node_value(m)).abs())
            .fold(0.0f64, f64::max);
        out.push(CheckResult {
            name: format!("riccati_supnorm[type {k}]"),
            estimate: gap,
            std_error: None,
            tolerance: 1e-6,
            pass: gap <= 1e-6,
        });
    }
    Ok(out)
}

pub fn fixed_point_check(
    population: &Population,
    eq: &MfgEquilibrium,
    sim: &SimConfig,
) -> Result<Vec<CheckResult>> {
    Ok(fixed_point_residual(population, eq, sim)?.to_checks())
}

pub fn best_response_check(
    population: &Population,
    eq: &MfgEquilibrium,
    eps: &[f64],
) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for k in 0..population.n_types() {
        let check = best_response_gap(population, eq, k, eps)?;
        for mut c in check.to_checks() {
            c.name = format!("type {k}: {}", c.name);
            out.push(c);
        }
    }
    Ok(out)
}

pub fn recursion_check(
    population: &Population,
    eq: &MfgEquilibrium,
    sim: &SimConfig,
) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for k in 0..population.n_types() {
        let (residual, se) = mc_recursion_residual(population, eq, k, sim)?;
        // Zero wealth volatility leaves no Monte Carlo noise; the
        // residual is then pure quadrature error.
        let (tolerance, pass) = if se > 1e-12 {
            (THREE_SIGMA * se, residual.abs() <= THREE_SIGMA * se)
        } else {
            (DETERMINISTIC_TOL, residual.abs() <= DETERMINISTIC_TOL)
        };
        out.push(CheckResult {
            name: format!("recursion_residual[type {k}]"),
            estimate: residual,
            std_error: Some(se),
            tolerance,
            pass,
        });
    }
    Ok(out)
}

pub fn nplayer_limit_check(population: &Population) -> Result<Vec<CheckResult>> {
    let agent = population.agent(0).clone();
    let report = mfg_limit_report(&agent, population.grid(), &LIMIT_PLAYER_COUNTS)?;
    let mut out = Vec::new();
    for (label, gaps, slope) in [
        ("pi", report.rows.iter().map(|r| r.gap_pi).collect::<Vec<_>>(), report.slope_pi),
        ("c", report.rows.iter().map(|r| r.gap_c).collect::<Vec<_>>(), report.slope_c),
    ] {
        let max_gap = gaps.iter().cloned().fold(0.0f64, f64::max);
        if max_gap <= CONVERGED_GAP {
            out.push(CheckResult {
                name: format!("nplayer_limit_{label}[converged]"),
                estimate: max_gap,
                std_error: None,
                tolerance: CONVERGED_GAP,
                pass: true,
            });
        } else {
            let non_increasing = gaps.windows(2).all(|w| w[1] <= w[0] + CONVERGED_GAP);
            let slope = slope.unwrap_or(f64::INFINITY);
            out.push(CheckResult {
                name: format!("nplayer_limit_{label}[slope]"),
                estimate: slope,
                std_error: None,
                tolerance: -0.9,
                pass: non_increasing && slope <= -0.9,
            });
        }
    }
    Ok(out)
}

/// Alternative-regime reduction (`psi * gamma = 1`): the aggregator
/// collapses to discounted power utility and the consumption rate must
/// match the independent time-additive code path.
pub fn power_reduction_check(
    population: &Population,
    eq: &MfgEquilibrium,
) -> Result<Vec<CheckResult>> {
    for (k, (_, agent)) in population.types().enumerate() {
        let p = &agent.prefs;
        if (p.psi * p.gamma - 1.0).abs() > 1e-9 {
            bail!(
                "type {k}: power-utility reduction requires psi*gamma = 1 \
                 (got psi = {}, gamma = {})",
                p.psi,
                p.gamma
            );
        }
    }

    // Aggregator identity f(c, v) = delta c^{1-gamma}/(1-gamma) - delta v
    // on a 10 x 10 grid of domain points.
    let mut identity_err = 0.0f64;
    for (_, agent) in population.types() {
        let p = agent.prefs;
        for ic in 0..10 {
            let c = 0.1 * 10f64.powf(ic as f64 / 4.5);
            for iv in 0..10 {
                let v = iv as f64 / (1.0 - p.gamma);
                let f = aggregator(c, v, &p).map_err(|e| anyhow::anyhow!("{e}"))?;
                let power = p.delta * c.powf(1.0 - p.gamma) / (1.0 - p.gamma) - p.delta * v;
                identity_err = identity_err.max((f - power).abs());
            }
        }
    }

    let oracle = power_reduction_consumption(population)?;
    let mut gap = 0.0f64;
    for k in 0..population.n_types() {
        let rate = eq.consumption_rate(k);
        for m in 0..eq.grid().n_nodes() {
            gap = gap.max((rate.node_value(m) - oracle[k].node_value(m)).abs());
        }
    }

    Ok(vec![
        CheckResult {
            name: "power_aggregator_identity".to_string(),
            estimate: identity_err,
            std_error: None,
            tolerance: 1e-12,
            pass: identity_err <= 1e-12,
        },
        CheckResult {
            name: "power_consumption_match".to_string(),
            estimate: gap,
            std_error: None,
            tolerance: 1e-10,
            pass: gap <= 1e-10,
        },
    ])
}

/// Convenience wrapper used by `verify` and `report` to get a solved
/// equilibrium (population checks only).
pub fn solved(population: &Population) -> Result<MfgEquilibrium> {
    Ok(solve_mfg(population)?)
}
