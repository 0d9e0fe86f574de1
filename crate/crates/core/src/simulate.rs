//! Exact-in-distribution simulation of equilibrium wealth paths,
//! fixed-point residual estimation, and the best-response harness.
//!
//! Coefficients and rates are piecewise constant per cell (the
//! consumption integral is handled exactly through `(log c)' = c + B`),
//! so log-wealth increments are exactly Gaussian: there is no
//! discretization bias to obscure the residual tests. Randomness comes
//! from a counter-based generator keyed by `(kind, type, path, cell)`;
//! results are a pure function of `(seed, config, inputs)` regardless
//! of worker count.

use serde::Serialize;
use thiserror::Error;

use crate::grid::TimeGrid;
use crate::mfg::MfgEquilibrium;
use crate::model::Population;
use crate::ode::DEFAULT_REFINE;
use crate::utility::{evaluate_proportional, Externality, ProportionalStrategy};

/// Standardized-residual acceptance threshold for statistical checks.
pub const THREE_SIGMA: f64 = 3.0;

/// Deterministic-branch tolerance for residuals that carry no Monte
/// Carlo noise (quadrature only).
pub const DETERMINISTIC_TOL: f64 = 1e-6;

/// Non-positivity tolerance for best-response utility gaps, relative to
/// the ordered utility scale.
pub const BR_GAP_TOL: f64 = 1e-10;

/// Number of path chunks processed independently; fixed so results do
/// not depend on the worker count.
const N_CHUNKS: usize = 64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation config invalid: {0}")]
    Config(String),
    #[error("type index {0} out of range")]
    BadTypeIndex(usize),
    #[error("utility evaluation failed: {0}")]
    Utility(String),
}

/// Monte Carlo configuration.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Reporting grid step; must land on grid nodes.
    pub dt_report: f64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, seed: u64, dt_report: f64, antithetic: bool) -> Self {
        Self { n_paths, seed, dt_report, antithetic }
    }

    fn validate(&self, grid: &TimeGrid) -> Result<Vec<usize>, SimError> {
        if self.n_paths == 0 {
            return Err(SimError::Config("n_paths must be at least 1".to_string()));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(SimError::Config(
                "antithetic sampling requires an even n_paths".to_string(),
            ));
        }
        self.report_nodes(grid)
    }

    /// Node indices of the reporting times `0, dt_report, 2 dt_report, ..., T`.
    pub fn report_nodes(&self, grid: &TimeGrid) -> Result<Vec<usize>, SimError> {
        if !(self.dt_report.is_finite() && self.dt_report > 0.0) {
            return Err(SimError::Config("dt_report must be positive".to_string()));
        }
        let horizon = grid.horizon();
        let k_max = (horizon / self.dt_report).round() as usize;
        if k_max == 0 || (k_max as f64 * self.dt_report - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(SimError::Config(format!(
                "dt_report {} does not divide the horizon {horizon}",
                self.dt_report
            )));
        }
        let mut nodes = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let t = k as f64 * self.dt_report;
            let m = grid.node_index(t).map_err(|_| {
                SimError::Config(format!("reporting time {t} is not a grid node"))
            })?;
            nodes.push(m);
        }
        Ok(nodes)
    }
}

/// Whether each simulated path carries its own common-noise realization
/// (unconditional statistics) or all paths share one common path
/// (statistics conditional on the common filtration).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommonNoise {
    PerPath,
    Shared,
}

// --- counter-based normal generator -----------------------------------

const KIND_COMMON: u64 = 1;
const KIND_IDIO: u64 = 2;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key_hash(seed: u64, kind: u64, a: u64, b: u64, cell: u64, lane: u64) -> u64 {
    let mut state = seed;
    for w in [kind, a, b, cell, lane] {
        state = mix64(state.wrapping_add(GOLDEN).wrapping_add(w));
    }
    state
}

fn uniform_open01(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// One standard normal draw per `(kind, a, b, cell)` key, via Box-Muller.
fn standard_normal(seed: u64, kind: u64, a: u64, b: u64, cell: u64) -> f64 {
    let u1 = uniform_open01(key_hash(seed, kind, a, b, cell, 0));
    let u2 = uniform_open01(key_hash(seed, kind, a, b, cell, 1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

// --- path dynamics ------------------------------------------------------

/// Per-cell Gaussian increment data of the equilibrium wealth SDE.
pub(crate) struct Dynamics {
    n_cells: usize,
    n_types: usize,
    log_x0: Vec<f64>,
    /// Deterministic log-wealth increment per type per cell, with the
    /// consumption integral computed exactly.
    mean_incr: Vec<Vec<f64>>,
    /// `pi sigma sqrt(dt)` per type per cell.
    vol_idio: Vec<Vec<f64>>,
    /// `pi sigma0 sqrt(dt)` per type per cell.
    vol_comm: Vec<Vec<f64>>,
    /// `E-bar[pi sigma0] sqrt(dt)` per cell (externality fluctuation).
    q_sqdt: Vec<f64>,
}

impl Dynamics {
    pub(crate) fn new(population: &Population, eq: &MfgEquilibrium) -> Self {
        let grid = eq.grid();
        let n_cells = grid.n_cells();
        let n_types = population.n_types();
        let log_rate: Vec<Vec<f64>> = (0..n_types)
            .map(|k| eq.consumption_rate(k).values().iter().map(|v| v.ln()).collect())
            .collect();
        let mut mean_incr = vec![vec![0.0; n_cells]; n_types];
        let mut vol_idio = vec![vec![0.0; n_cells]; n_types];
        let mut vol_comm = vec![vec![0.0; n_cells]; n_types];
        let mut q_sqdt = vec![0.0; n_cells];
        for j in 0..n_cells {
            let dt = grid.cell_width(j);
            let sq = dt.sqrt();
            for (k, (w, agent)) in population.types().enumerate() {
                let pi = eq.pi_star[k].cell_value(j);
                let s = agent.market.total_variance(j);
                let drift = agent.market.r[j] + pi * agent.market.h[j] - 0.5 * pi * pi * s;
                let consumption_int =
                    (log_rate[k][j + 1] - log_rate[k][j]) - eq.riccati.b[k].cell_value(j) * dt;
                mean_incr[k][j] = drift * dt - consumption_int;
                vol_idio[k][j] = pi * agent.market.sigma[j] * sq;
                vol_comm[k][j] = pi * agent.market.sigma0[j] * sq;
                q_sqdt[j] += w * vol_comm[k][j];
            }
        }
        Self {
            n_cells,
            n_types,
            log_x0: population.types().map(|(_, a)| a.x0.ln()).collect(),
            mean_incr,
            vol_idio,
            vol_comm,
            q_sqdt,
        }
    }
}

/// One generated path, borrowed by the accumulator callback.
pub(crate) struct PathView<'a> {
    /// Log-wealth nodes per type: `lw[k][m]`.
    pub lw: &'a [Vec<f64>],
    /// Externality common-noise fluctuation `M_t` at nodes.
    pub fluct: &'a [f64],
    /// Signed standard normals of the common factor, per cell.
    pub common: &'a [f64],
}

struct PathBuffers {
    lw: Vec<Vec<f64>>,
    fluct: Vec<f64>,
    common: Vec<f64>,
}

fn generate_path(dynamics: &Dynamics, sim: &SimConfig, mode: CommonNoise, p: usize, buf: &mut PathBuffers) {
    let (src, sign) = if sim.antithetic && p >= sim.n_paths / 2 {
        (p - sim.n_paths / 2, -1.0)
    } else {
        (p, 1.0)
    };
    for j in 0..dynamics.n_cells {
        buf.common[j] = match mode {
            // One conditioning path shared by everything; antithetic
            // mirroring applies only to the idiosyncratic factors.
            CommonNoise::Shared => standard_normal(sim.seed, KIND_COMMON, 0, 0, j as u64),
            CommonNoise::PerPath => {
                sign * standard_normal(sim.seed, KIND_COMMON, 0, src as u64, j as u64)
            }
        };
    }
    buf.fluct[0] = 0.0;
    for j in 0..dynamics.n_cells {
        buf.fluct[j + 1] = buf.fluct[j] + dynamics.q_sqdt[j] * buf.common[j];
    }
    for k in 0..dynamics.n_types {
        buf.lw[k][0] = dynamics.log_x0[k];
        for j in 0..dynamics.n_cells {
            let xi = sign * standard_normal(sim.seed, KIND_IDIO, k as u64, src as u64, j as u64);
            buf.lw[k][j + 1] = buf.lw[k][j]
                + dynamics.mean_incr[k][j]
                + dynamics.vol_idio[k][j] * xi
                + dynamics.vol_comm[k][j] * buf.common[j];
        }
    }
}

/// Deterministic parallel fold over all paths. Paths are split into
/// [`N_CHUNKS`] contiguous ranges; partial accumulators are merged in
/// chunk order, so the result is identical for any worker count.
pub(crate) fn fold_paths<A: Send>(
    dynamics: &Dynamics,
    sim: &SimConfig,
    mode: CommonNoise,
    init: impl Fn() -> A + Sync,
    step: impl Fn(&mut A, usize, &PathView) + Sync,
    merge: impl Fn(A, A) -> A,
) -> A {
    use rayon::prelude::*;
    let n = sim.n_paths;
    let n_chunks = N_CHUNKS.min(n.max(1));
    let partials: Vec<A> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * n / n_chunks;
            let hi = (ci + 1) * n / n_chunks;
            let mut buf = PathBuffers {
                lw: vec![vec![0.0; dynamics.n_cells + 1]; dynamics.n_types],
                fluct: vec![0.0; dynamics.n_cells + 1],
                common: vec![0.0; dynamics.n_cells],
            };
            let mut acc = init();
            for p in lo..hi {
                generate_path(dynamics, sim, mode, p, &mut buf);
                let view = PathView { lw: &buf.lw, fluct: &buf.fluct, common: &buf.common };
                step(&mut acc, p, &view);
            }
            acc
        })
        .collect();
    partials
        .into_iter()
        .reduce(merge)
        .unwrap_or_else(init)
}

// --- materialized simulation --------------------------------------------

/// Simulated log-wealth paths with the common-noise stream.
#[derive(Debug, Clone)]
pub struct SimulatedPaths {
    pub grid: TimeGrid,
    /// `log_wealth[k][p][m]`: type `k`, path `p`, node `m`.
    pub log_wealth: Vec<Vec<Vec<f64>>>,
    /// Brownian increments of the common factor per cell. One row per
    /// path in [`CommonNoise::PerPath`] mode, a single shared row in
    /// [`CommonNoise::Shared`] mode.
    pub common_increments: Vec<Vec<f64>>,
    /// Externality fluctuation `M_t` at nodes, one row per path.
    pub externality_fluctuation: Vec<Vec<f64>>,
    pub mode: CommonNoise,
}

/// Samples equilibrium log-wealth paths exactly per grid cell.
///
/// Intended for inspection at desk scale; the residual estimators
/// stream instead of materializing.
pub fn simulate_log_wealth(
    population: &Population,
    eq: &MfgEquilibrium,
    sim: &SimConfig,
    mode: CommonNoise,
) -> Result<SimulatedPaths, SimError> {
    sim.validate(eq.grid())?;
    let dynamics = Dynamics::new(population, eq);
    let n_types = dynamics.n_types;
    type Acc = Vec<(usize, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)>;
    let rows: Acc = fold_paths(
        &dynamics,
        sim,
        mode,
        Vec::new,
        |acc: &mut Acc, p, view| {
            acc.push((p, view.lw.to_vec(), view.fluct.to_vec(), view.common.to_vec()));
        },
        |mut a, b| {
            a.extend(b);
            a
        },
    );
    let grid = eq.grid().clone();
    let mut log_wealth = vec![Vec::with_capacity(sim.n_paths); n_types];
    let mut fluct = Vec::with_capacity(sim.n_paths);
    let mut common = Vec::new();
    for (p, lw, m, ksi) in rows {
        debug_assert_eq!(p, fluct.len());
        for (k, path) in lw.into_iter().enumerate() {
            log_wealth[k].push(path);
        }
        fluct.push(m);
        let incr: Vec<f64> =
            ksi.iter().enumerate().map(|(j, x)| x * grid.cell_width(j).sqrt()).collect();
        match mode {
            CommonNoise::PerPath => common.push(incr),
            CommonNoise::Shared => {
                if common.is_empty() {
                    common.push(incr);
                }
            }
        }
    }
    Ok(SimulatedPaths {
        grid,
        log_wealth,
        common_increments: common,
        externality_fluctuation: fluct,
        mode,
    })
}

// --- report types ---------------------------------------------------------

/// One verification entry: estimate, its uncertainty, and pass/fail at
/// the stated tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathSummary {
    pub type_id: usize,
    pub mean_log_terminal_wealth: f64,
    pub var_log_terminal_wealth: f64,
}

/// Bundle of verification entries plus path statistics.
#[derive(Debug, Clone, Serialize, Default)]
pub struct SimulationReport {
    pub checks: Vec<CheckResult>,
    pub path_summary: Vec<PathSummary>,
}

impl SimulationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Sample mean and variance of terminal log-wealth per type
/// (unconditional: one common-noise realization per path).
pub fn path_summary(
    population: &Population,
    eq: &MfgEquilibrium,
    sim: &SimConfig,
) -> Result<Vec<PathSummary>, SimError> {
    sim.validate(eq.grid())?;
    let dynamics = Dynamics::new(population, eq);
    let n_types = dynamics.n_types;
    let last = eq.grid().n_nodes() - 1;
    let zero = || vec![(0.0f64, 0.0f64); n_types];
    let (sums, n) = (
        fold_paths(
            &dynamics,
            sim,
            CommonNoise::PerPath,
            zero,
            |acc, _, view| {
                for k in 0..n_types {
                    let x = view.lw[k][last];
                    acc[k].0 += x;
                    acc[k].1 += x * x;
                }
            },
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    x.0 += y.0;
                    x.1 += y.1;
                }
                a
            },
        ),
        sim.n_paths as f64,
    );
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(k, (s, ss))| {
            let mean = s / n;
            let var = if sim.n_paths > 1 { (ss - n * mean * mean) / (n - 1.0) } else { 0.0 };
            PathSummary {
                type_id: k,
                mean_log_terminal_wealth: mean,
                var_log_terminal_wealth: var.max(0.0),
            }
        })
        .collect())
}

// --- fixed-point residual --------------------------------------------------

/// Outcome of the mean-field fixed-point verification.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPointCheck {
    /// Max deviation between the externality reconstructed from the
    /// Y-processes and the consumption/wealth route, over grid times.
    pub algebra_residual: f64,
    /// Deterministic branch (no common noise): max gap between the
    /// RK4-integrated conditional mean log-wealth and the closed form.
    pub deterministic_residual: Option<f64>,
    /// Statistical branch: max standardized residual over reporting
    /// times, and the per-time values.
    pub max_standardized_residual: Option<f64>,
    pub per_time: Vec<(f64, f64)>,
    pub pass: bool,
}

impl FixedPointCheck {
    pub fn to_checks(&self) -> Vec<CheckResult> {
        let mut out = vec![CheckResult {
            name: "fixed_point_algebra".to_string(),
            estimate: self.algebra_residual,
            std_error: None,
            tolerance: 1e-10,
            pass: self.algebra_residual <= 1e-10,
        }];
        if let Some(res) = self.deterministic_residual {
            out.push(CheckResult {
                name: "fixed_point_wealth_deterministic".to_string(),
                estimate: res,
                std_error: None,
                tolerance: DETERMINISTIC_TOL,
                pass: res <= DETERMINISTIC_TOL,
            });
        }
        if let Some(res) = self.max_standardized_residual {
            out.push(CheckResult {
                name: "fixed_point_mc_standardized".to_string(),
                estimate: res,
                std_error: None,
                tolerance: THREE_SIGMA,
                pass: res <= THREE_SIGMA,
            });
        }
        out
    }
}

/// Verifies the fixed point: the externality reconstructed from the
/// solved Y-processes must match the one generated by the optimally
/// controlled wealth. With no common noise the conditional means are
/// deterministic and checked against an independent RK4 route; with
/// common noise the conditional means are estimated by Monte Carlo on a
/// shared common path.
pub fn fixed_point_residual(
    population: &Population,
    eq: &MfgEquilibrium,
    sim: &SimConfig,
) -> Result<FixedPointCheck, SimError> {
    let grid = eq.grid();
    let report_nodes = sim.validate(grid)?;
    let n_nodes = grid.n_nodes();
    let kappa_bar = population_kappa(population);

    // Route 1: reconstruct nu_hat from (Y_tilde, delta, alpha) per the
    // fixed-point display and compare with the emitted deterministic
    // part (consumption route). Exact algebra; quadrature-free.
    let mut algebra_residual = 0.0f64;
    for m in 0..n_nodes - 1 {
        let recon = population.mean_over_types(|k, a| {
            let p = &a.prefs;
            let ratio = p.psi / p.theta_tilde();
            p.psi * p.delta.ln() - ratio * p.alpha.ln() - ratio * eq.y_tilde[k].node_value(m)
        }) / (1.0 + kappa_bar)
            + eq.mean_log_wealth_det.node_value(m);
        algebra_residual = algebra_residual.max((recon - eq.nu_hat_det.node_value(m)).abs());
    }

    let has_common_noise = population
        .types()
        .any(|(_, a)| a.market.sigma0.iter().any(|v| *v != 0.0));

    let dynamics = Dynamics::new(population, eq);

    if !has_common_noise {
        // Route 2 (deterministic): conditional mean log-wealth by RK4 on
        // d/dt x = r + pi h - c(t) - pi^2 s / 2, forward per type.
        let mut max_gap = 0.0f64;
        let mut mean_path = vec![0.0; n_nodes];
        for (k, (w, agent)) in population.types().enumerate() {
            let rate = eq.consumption_rate(k);
            let mut x = agent.x0.ln();
            let mut nodes = vec![x; n_nodes];
            for j in 0..grid.n_cells() {
                let s = agent.market.total_variance(j);
                let pi = eq.pi_star[k].cell_value(j);
                let base = agent.market.r[j] + pi * agent.market.h[j] - 0.5 * pi * pi * s;
                let f = |t: f64| base - rate.eval(t);
                let step = grid.cell_width(j) / DEFAULT_REFINE as f64;
                for ss in 0..DEFAULT_REFINE {
                    let t = grid.node(j) + ss as f64 * step;
                    let k1 = f(t);
                    let k2 = f(t + 0.5 * step);
                    let k4 = f(t + step);
                    x += step / 6.0 * (k1 + 4.0 * k2 + k4);
                }
                nodes[j + 1] = x;
            }
            for m in 0..n_nodes {
                mean_path[m] += w * nodes[m];
            }
        }
        for m in 0..n_nodes {
            max_gap = max_gap.max((mean_path[m] - eq.mean_log_wealth_det.node_value(m)).abs());
        }
        let pass = algebra_residual <= 1e-10 && max_gap <= DETERMINISTIC_TOL;
        return Ok(FixedPointCheck {
            algebra_residual,
            deterministic_residual: Some(max_gap),
            max_standardized_residual: None,
            per_time: Vec::new(),
            pass,
        });
    }

    // Route 2 (statistical): per-path deviation of the type-averaged
    // log-wealth from its conditional mean given the shared common path
    // is a mean-zero idiosyncratic integral; standardize its MC mean.
    let n_report = report_nodes.len();
    let n_types = population.n_types();
    let weights: Vec<f64> = population.types().map(|(w, _)| w).collect();

    // Conditional targets given the shared common stream.
    let mut targets = vec![vec![0.0; n_nodes]; n_types];
    for k in 0..n_types {
        targets[k][0] = dynamics.log_x0[k];
        for j in 0..grid.n_cells() {
            let ksi = standard_normal(sim.seed, KIND_COMMON, 0, 0, j as u64);
            targets[k][j + 1] =
                targets[k][j] + dynamics.mean_incr[k][j] + dynamics.vol_comm[k][j] * ksi;
        }
    }

    let zero = || vec![(0.0f64, 0.0f64); n_report];
    let sums = fold_paths(
        &dynamics,
        sim,
        CommonNoise::Shared,
        zero,
        |acc, _, view| {
            for (i, &m) in report_nodes.iter().enumerate() {
                let mut d = 0.0;
                for k in 0..n_types {
                    d += weights[k] * (view.lw[k][m] - targets[k][m]);
                }
                acc[i].0 += d;
                acc[i].1 += d * d;
            }
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                x.0 += y.0;
                x.1 += y.1;
            }
            a
        },
    );

    let n = sim.n_paths as f64;
    let mut per_time = Vec::with_capacity(n_report);
    let mut max_std = 0.0f64;
    for (i, &m) in report_nodes.iter().enumerate() {
        let mean = sums[i].0 / n;
        let var = if sim.n_paths > 1 {
            ((sums[i].1 - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        let standardized = if se > 0.0 {
            mean.abs() / se
        } else if mean.abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        per_time.push((grid.node(m), standardized));
        max_std = max_std.max(standardized);
    }
    let pass = algebra_residual <= 1e-10 && max_std <= THREE_SIGMA;
    Ok(FixedPointCheck {
        algebra_residual,
        deterministic_residual: None,
        max_standardized_residual: Some(max_std),
        per_time,
        pass,
    })
}

fn population_kappa(population: &Population) -> f64 {
    population
        .types()
        .map(|(w, a)| w * a.prefs.theta * (a.prefs.psi - 1.0))
        .sum()
}

// --- recursion residual -----------------------------------------------------

/// Monte Carlo estimate of the recursive-utility defect for one type:
/// `E[int f ds + alpha U] - V0` and its standard error. Each path
/// carries its own common-noise realization.
pub(crate) fn recursion_residual(
    population: &Population,
    eq: &MfgEquilibrium,
    type_index: usize,
    sim: &SimConfig,
) -> Result<(f64, f64), SimError> {
    let grid = eq.grid();
    sim.validate(grid)?;
    if type_index >= population.n_types() {
        return Err(SimError::BadTypeIndex(type_index));
    }
    let agent = population.agent(type_index);
    let p = agent.prefs;
    let n_nodes = grid.n_nodes();
    let log_rate: Vec<f64> =
        eq.consumption_rate(type_index).values().iter().map(|v| v.ln()).collect();
    let y_det: Vec<f64> = eq.y_det(type_index, population).values().to_vec();
    // Running externality for the aggregator argument; the asymmetric
    // terminal value enters only the bequest.
    let nu_run: Vec<f64> = eq.nu_hat_running.values().to_vec();
    let nu_terminal = eq.nu_hat_det.node_value(n_nodes - 1);
    let widths: Vec<f64> = (0..grid.n_cells()).map(|j| grid.cell_width(j)).collect();
    let theta_coeff = p.theta * (1.0 - p.gamma);
    let tt = p.theta_tilde();
    let iota = 1.0 - 1.0 / p.psi;
    let over = p.alpha / (1.0 - p.gamma);

    let dynamics = Dynamics::new(population, eq);
    let (sum, sumsq) = fold_paths(
        &dynamics,
        sim,
        CommonNoise::PerPath,
        || (0.0f64, 0.0f64),
        |acc, _, view| {
            let lw = &view.lw[type_index];
            let fluct = view.fluct;
            // f(c* X* e^{-theta nu*}, V*) at every node, with
            // V* = alpha X^{1-gamma} e^{Y} / (1-gamma) and both nu* and
            // Y carrying the path's common fluctuation.
            let mut integral = 0.0;
            let mut prev = 0.0;
            for m in 0..n_nodes {
                let nu = nu_run[m] + fluct[m];
                let y = y_det[m] - theta_coeff * fluct[m];
                let log_c_arg = log_rate[m] + lw[m] - p.theta * nu;
                // (1-gamma) V = alpha e^{(1-gamma) lw + y} > 0.
                let gv = p.alpha * ((1.0 - p.gamma) * lw[m] + y).exp();
                let v = gv / (1.0 - p.gamma);
                let f = p.delta * (iota * log_c_arg).exp() / iota * gv.powf(1.0 - 1.0 / tt)
                    - p.delta * tt * v;
                if m > 0 {
                    integral += 0.5 * (prev + f) * widths[m - 1];
                }
                prev = f;
            }
            let nu_t = nu_terminal + fluct[n_nodes - 1];
            let bequest =
                over * ((1.0 - p.gamma) * (lw[n_nodes - 1] - p.theta * nu_t)).exp();
            let total = integral + bequest;
            acc.0 += total;
            acc.1 += total * total;
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    );

    let n = sim.n_paths as f64;
    let mean = sum / n;
    let var = if sim.n_paths > 1 { ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    let se = (var / n).sqrt();
    let v0 = over * ((1.0 - p.gamma) * agent.x0.ln() + y_det[0]).exp();
    Ok((mean - v0, se))
}

// --- best-response harness ---------------------------------------------------

/// Which strategy coordinate is perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    ConsumptionScale,
    InvestmentShift,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapEntry {
    pub kind: PerturbationKind,
    pub eps: f64,
    /// Utility difference `V0(eps) - V0(0)` in the preference order
    /// (for gamma > 1 utilities are negative and larger V is better,
    /// so the plain difference is the ordered gap); non-positive at a
    /// Nash point.
    pub gap: Option<f64>,
    /// Set when the perturbed evaluation left the utility domain.
    pub diagnostic: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioEntry {
    pub kind: PerturbationKind,
    pub eps_small: f64,
    pub eps_large: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BestResponseCheck {
    pub gaps: Vec<GapEntry>,
    pub ratios: Vec<RatioEntry>,
    pub pass: bool,
}

impl BestResponseCheck {
    pub fn to_checks(&self) -> Vec<CheckResult> {
        let mut out = Vec::new();
        for g in &self.gaps {
            let name = match &g.diagnostic {
                Some(d) => format!("best_response_gap[{:?},{}] ({d})", g.kind, g.eps),
                None => format!("best_response_gap[{:?},{}]", g.kind, g.eps),
            };
            out.push(CheckResult {
                name,
                estimate: g.gap.unwrap_or(f64::NAN),
                std_error: None,
                tolerance: BR_GAP_TOL,
                pass: g.pass,
            });
        }
        for r in &self.ratios {
            out.push(CheckResult {
                name: format!("best_response_ratio[{:?},{}/{}]", r.kind, r.eps_large, r.eps_small),
                estimate: r.ratio,
                std_error: None,
                tolerance: 4.5,
                pass: r.pass,
            });
        }
        out
    }
}

/// Perturbs one type's equilibrium strategy and checks that the ordered
/// utility can only fall, with quadratic decay. The externality is held
/// fixed at the equilibrium (individual optimization given the
/// population).
pub fn best_response_gap(
    population: &Population,
    eq: &MfgEquilibrium,
    type_index: usize,
    eps_list: &[f64],
) -> Result<BestResponseCheck, SimError> {
    if type_index >= population.n_types() {
        return Err(SimError::BadTypeIndex(type_index));
    }
    let grid = eq.grid();
    let agent = population.agent(type_index);
    let externality = Externality::from_equilibrium(eq);
    let base_strategy = ProportionalStrategy::from_equilibrium(eq, type_index);
    let base = evaluate_proportional(agent, &base_strategy, &externality, grid)
        .map_err(|e| SimError::Utility(e.to_string()))?;
    let tol = BR_GAP_TOL * base.v0.abs().max(1.0);

    let mut gaps = Vec::new();
    for &kind in &[PerturbationKind::ConsumptionScale, PerturbationKind::InvestmentShift] {
        for &eps in eps_list {
            let strategy = match kind {
                PerturbationKind::ConsumptionScale => base_strategy.scale_consumption(eps),
                PerturbationKind::InvestmentShift => base_strategy.shift_investment(eps),
            };
            match evaluate_proportional(agent, &strategy, &externality, grid) {
                Ok(curve) => {
                    let gap = curve.v0 - base.v0;
                    gaps.push(GapEntry { kind, eps, gap: Some(gap), diagnostic: None, pass: gap <= tol });
                }
                Err(err) => gaps.push(GapEntry {
                    kind,
                    eps,
                    gap: None,
                    diagnostic: Some(err.to_string()),
                    pass: false,
                }),
            }
        }
    }

    // Quadratic decay: gap(2 eps) / gap(eps) ~ 4 for every (eps, 2 eps)
    // pair present in the list.
    let mut ratios = Vec::new();
    for &kind in &[PerturbationKind::ConsumptionScale, PerturbationKind::InvestmentShift] {
        for &eps in eps_list {
            if eps == 0.0 {
                continue;
            }
            let double = 2.0 * eps;
            let find = |e: f64| {
                gaps.iter()
                    .find(|g| g.kind == kind && (g.eps - e).abs() < 1e-15)
                    .and_then(|g| g.gap)
            };
            if let (Some(g1), Some(g2)) = (find(eps), find(double)) {
                if g1 != 0.0 {
                    let ratio = g2 / g1;
                    ratios.push(RatioEntry {
                        kind,
                        eps_small: eps,
                        eps_large: double,
                        ratio,
                        pass: (3.5..=4.5).contains(&ratio),
                    });
                }
            }
        }
    }

    let pass = gaps.iter().all(|g| g.pass) && ratios.iter().all(|r| r.pass);
    Ok(BestResponseCheck { gaps, ratios, pass })
}
