//! Closed-form N-player equilibrium and its convergence to the
//! mean-field limit.
//!
//! Each player benchmarks against the geometric average of the other
//! `N - 1` players, so every population mean of the mean-field formulas
//! becomes a `1/(N-1)`-weighted opponent sum and picks up `O(1/N)`
//! corrections (in particular the opponents' idiosyncratic noises no
//! longer average out, giving nonzero loadings `Z^{ij}`).

use thiserror::Error;

use crate::grid::TimeGrid;
use crate::mfg::{riccati_closed_form, solve_mfg, MfgError};
use crate::model::{check_market, check_prefs, AgentType, Population, Regime, ValidationReport};
use crate::ode::{GridFunction, OdeError};

/// Guard for the per-player investment denominator and `1 + psi^N`.
const NPLAYER_DENOM_MIN: f64 = 1e-6;

/// Guard for the consumption coefficient denominators
/// `1 - theta (psi - 1) / (N - 1)`.
const AB_DENOM_MIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum NPlayerError {
    #[error("invalid game: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("singular 1 + psi^N in cell {cell} (value {value:.3e})")]
    SingularPsiN { cell: usize, value: f64 },
    #[error("singular consumption denominator for player {player}")]
    SingularPlayer { player: usize },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Mfg(#[from] MfgError),
}

/// Finite game of `N >= 2` players on a shared grid.
#[derive(Debug, Clone)]
pub struct NPlayerGame {
    players: Vec<AgentType>,
    grid: TimeGrid,
}

impl NPlayerGame {
    pub fn new(players: Vec<AgentType>, grid: TimeGrid) -> Self {
        Self { players, grid }
    }

    /// `n` identical copies of one type.
    pub fn homogeneous(agent: AgentType, n: usize, grid: TimeGrid) -> Self {
        Self { players: vec![agent; n], grid }
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn player(&self, i: usize) -> &AgentType {
        &self.players[i]
    }

    pub fn players(&self) -> &[AgentType] {
        &self.players
    }

    pub fn validate(&self, regime: Regime) -> ValidationReport {
        let mut out = Vec::new();
        let n = self.players.len();
        if n < 2 {
            out.push("game needs at least 2 players".to_string());
            return ValidationReport { violations: out };
        }
        let n_cells = self.grid.n_cells();
        let mut markets_ok = true;
        for (i, player) in self.players.iter().enumerate() {
            let label = format!("player {i}");
            check_prefs(&player.prefs, regime, &label, &mut out);
            if !(player.x0.is_finite() && player.x0 > 0.0) {
                out.push(format!("{label}: x0 must be positive"));
            }
            markets_ok &= check_market(&player.market, n_cells, &label, &mut out);
        }
        if out.is_empty() && markets_ok {
            for j in 0..n_cells {
                for (i, player) in self.players.iter().enumerate() {
                    if investment_denominator(player, n, j) < NPLAYER_DENOM_MIN {
                        out.push(format!(
                            "player {i}: singular investment denominator in cell {j}"
                        ));
                    }
                }
            }
            for (i, player) in self.players.iter().enumerate() {
                let p = &player.prefs;
                if (1.0 - p.theta * (p.psi - 1.0) / (n as f64 - 1.0)).abs() < AB_DENOM_MIN {
                    out.push(format!("player {i}: singular consumption denominator"));
                }
            }
        }
        ValidationReport { violations: out }
    }
}

/// `Delta^i = gamma^i (sigma^i)^2 + (gamma^i - theta^i (1-gamma^i)/(N-1)) (sigma^{i0})^2`.
fn investment_denominator(player: &AgentType, n: usize, j: usize) -> f64 {
    let p = &player.prefs;
    let s0 = player.market.sigma0[j];
    p.gamma * player.market.sigma[j] * player.market.sigma[j]
        + (p.gamma - p.theta * (1.0 - p.gamma) / (n as f64 - 1.0)) * s0 * s0
}

/// N-player equilibrium paths and coefficients.
#[derive(Debug, Clone)]
pub struct NPlayerEquilibrium {
    grid: TimeGrid,
    /// Investment rate per player, cell-valued.
    pub pi: Vec<GridFunction>,
    /// Consumption rate per player, node-valued, `c_i(T) = 1`.
    pub c: Vec<GridFunction>,
    /// Common-noise loading per player, cell-valued.
    pub zi0: Vec<GridFunction>,
    /// Loading of player `i`'s value process on opponent `j`'s noise,
    /// cell-valued; the diagonal entries are identically zero.
    pub zij: Vec<Vec<GridFunction>>,
    /// `a^i` and `b^i` consumption coefficients.
    pub a_coef: Vec<f64>,
    pub b_coef: Vec<f64>,
    /// `A^i` and `B^i` paths, cell-valued.
    pub a_path: Vec<GridFunction>,
    pub b_path: Vec<GridFunction>,
    /// Riccati terminal values `D^i`.
    pub d: Vec<f64>,
    /// Aggregates `phi^N` and `psi^N`, cell-valued.
    pub phi_n: GridFunction,
    pub psi_n: GridFunction,
}

impl NPlayerEquilibrium {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Consumption rate path of player `i` with its continuous terminal
    /// limit `D^i` instead of the bequest convention.
    pub fn consumption_rate(&self, i: usize) -> GridFunction {
        let mut values = self.c[i].values().to_vec();
        *values.last_mut().unwrap() = self.d[i];
        GridFunction::node_valued(self.grid.clone(), values).expect("same shape as c")
    }
}

fn validated(game: &NPlayerGame) -> Result<(), NPlayerError> {
    let primary = game.validate(Regime::Primary);
    if primary.is_ok() {
        return Ok(());
    }
    if game.validate(Regime::Alternative).is_ok() {
        return Ok(());
    }
    Err(NPlayerError::Invalid(primary.violations))
}

fn aggregates_in_cell(game: &NPlayerGame, j: usize) -> (f64, f64) {
    let n = game.n_players();
    let inv_nm1 = 1.0 / (n as f64 - 1.0);
    let mut phi = 0.0;
    let mut psi = 0.0;
    for player in game.players() {
        let delta_i = investment_denominator(player, n, j);
        let p = &player.prefs;
        let s0 = player.market.sigma0[j];
        phi += player.market.h[j] * s0 / delta_i;
        psi += p.theta * (1.0 - p.gamma) * s0 * s0 / delta_i;
    }
    (inv_nm1 * phi, inv_nm1 * psi)
}

/// Aggregates `(phi^N, psi^N)` at grid time `t`.
pub fn compute_aggregates(game: &NPlayerGame, t: f64) -> Result<(f64, f64), NPlayerError> {
    validated(game)?;
    let j = game
        .grid()
        .cell_index(t)
        .map_err(|e| NPlayerError::Invalid(vec![e.to_string()]))?;
    Ok(aggregates_in_cell(game, j))
}

fn investment_cells(game: &NPlayerGame) -> Result<Vec<Vec<f64>>, NPlayerError> {
    let n = game.n_players();
    let n_cells = game.grid().n_cells();
    let mut pi = vec![vec![0.0; n_cells]; n];
    for j in 0..n_cells {
        let (phi_n, psi_n) = aggregates_in_cell(game, j);
        let one_plus = 1.0 + psi_n;
        if one_plus.abs() < NPLAYER_DENOM_MIN {
            return Err(NPlayerError::SingularPsiN { cell: j, value: one_plus });
        }
        for (i, player) in game.players().iter().enumerate() {
            let delta_i = investment_denominator(player, n, j);
            let p = &player.prefs;
            pi[i][j] = player.market.h[j] / delta_i
                - p.theta * (1.0 - p.gamma) * player.market.sigma0[j] / delta_i * phi_n
                    / one_plus;
        }
    }
    Ok(pi)
}

/// Equilibrium investment rate of every player, cell-valued.
pub fn solve_investment(game: &NPlayerGame) -> Result<Vec<GridFunction>, NPlayerError> {
    validated(game)?;
    let cells = investment_cells(game)?;
    cells
        .into_iter()
        .map(|v| GridFunction::cell_valued(game.grid().clone(), v).map_err(NPlayerError::from))
        .collect()
}

/// Solves the consumption side (and everything it depends on):
/// `Z^{i0}`, `Z^{ij}`, `A^i`, `a^i`, `b^i`, `B^i`, `D^i`, and `c^i`
/// with the terminal convention `c^i(T) = 1`.
pub fn solve_consumption_n(game: &NPlayerGame) -> Result<NPlayerEquilibrium, NPlayerError> {
    solve_nplayer(game)
}

/// Full N-player equilibrium.
pub fn solve_nplayer(game: &NPlayerGame) -> Result<NPlayerEquilibrium, NPlayerError> {
    validated(game)?;
    let grid = game.grid().clone();
    let n = game.n_players();
    let n_cells = grid.n_cells();
    let inv_nm1 = 1.0 / (n as f64 - 1.0);

    let pi = investment_cells(game)?;

    // Loadings: the mean-field conditional expectations become opponent
    // averages, so Z^{i0} = -theta^i (1-gamma^i)/(N-1) sum_{j != i} pi^j sigma^{j0}
    // and Z^{ij} = -theta^i (1-gamma^i)/(N-1) pi^j sigma^j.
    let mut zi0 = vec![vec![0.0; n_cells]; n];
    let mut zij = vec![vec![vec![0.0; n_cells]; n]; n];
    for j in 0..n_cells {
        let total_s0: f64 =
            (0..n).map(|k| pi[k][j] * game.player(k).market.sigma0[j]).sum();
        for i in 0..n {
            let p = &game.player(i).prefs;
            let coeff = -p.theta * (1.0 - p.gamma) * inv_nm1;
            let opp_s0 = total_s0 - pi[i][j] * game.player(i).market.sigma0[j];
            zi0[i][j] = coeff * opp_s0;
            for k in 0..n {
                if k != i {
                    zij[i][k][j] = coeff * pi[k][j] * game.player(k).market.sigma[j];
                }
            }
        }
    }

    // A^i per cell.
    let mut a_path = vec![vec![0.0; n_cells]; n];
    for j in 0..n_cells {
        let drift: Vec<f64> = (0..n)
            .map(|k| {
                let mk = &game.player(k).market;
                let s = mk.total_variance(j);
                mk.r[j] + pi[k][j] * mk.h[j] - 0.5 * s * pi[k][j] * pi[k][j]
            })
            .collect();
        let drift_sum: f64 = drift.iter().sum();
        for i in 0..n {
            let player = game.player(i);
            let p = &player.prefs;
            let s = player.market.total_variance(j);
            let opp_drift = inv_nm1 * (drift_sum - drift[i]);
            let z_sq_sum: f64 = (0..n).map(|k| zij[i][k][j] * zij[i][k][j]).sum();
            let hz = player.market.h[j] + player.market.sigma0[j] * zi0[i][j];
            a_path[i][j] = -p.theta * (1.0 - p.gamma) * opp_drift
                + 0.5 * zi0[i][j] * zi0[i][j]
                + 0.5 * z_sq_sum
                + (1.0 - p.gamma) * player.market.r[j]
                + (1.0 - p.gamma) / (2.0 * p.gamma) * hz * hz / s
                - p.delta * p.theta_tilde();
        }
    }

    // Consumption coefficients. mu^i = theta^i (psi^i - 1)/(N - 1).
    let mut a_coef = vec![0.0; n];
    let mut b_coef = vec![0.0; n];
    let mut mu = vec![0.0; n];
    for i in 0..n {
        let p = &game.player(i).prefs;
        mu[i] = p.theta * (p.psi - 1.0) * inv_nm1;
        let den = 1.0 - mu[i];
        if den.abs() < AB_DENOM_MIN {
            return Err(NPlayerError::SingularPlayer { player: i });
        }
        a_coef[i] = p.theta * (p.psi - 1.0) / den;
        b_coef[i] = (p.psi - 1.0) / (1.0 - p.gamma) / den;
    }
    let kappa: f64 = inv_nm1 * a_coef.iter().sum::<f64>();

    let mut b_path = vec![vec![0.0; n_cells]; n];
    for j in 0..n_cells {
        let sum_ba: f64 = (0..n).map(|k| b_coef[k] * a_path[k][j]).sum();
        for i in 0..n {
            b_path[i][j] =
                b_coef[i] * a_path[i][j] - a_coef[i] / (1.0 + kappa) * inv_nm1 * sum_ba;
        }
    }

    // Terminal values via the linear system for log c at T:
    // log c^i (1 - mu^i) = -m^i - mu^i S, S = sum_k log c^k.
    let m: Vec<f64> = (0..n)
        .map(|i| {
            let p = &game.player(i).prefs;
            -p.psi * p.delta.ln() + p.psi / p.theta_tilde() * p.alpha.ln()
        })
        .collect();
    let s_total: f64 =
        -(0..n).map(|i| m[i] / (1.0 - mu[i])).sum::<f64>() / (1.0 + kappa);
    let d: Vec<f64> =
        (0..n).map(|i| ((-m[i] - mu[i] * s_total) / (1.0 - mu[i])).exp()).collect();

    // Consumption rates via the shared closed-form Riccati solution,
    // terminal value swapped for the bequest convention.
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let b_fun = GridFunction::cell_valued(grid.clone(), b_path[i].clone())?;
        let y = riccati_closed_form(&b_fun, d[i])?;
        let mut values = y.values().to_vec();
        *values.last_mut().unwrap() = 1.0;
        c.push(GridFunction::node_valued(grid.clone(), values)?);
    }

    let cellify = |vals: Vec<Vec<f64>>| -> Result<Vec<GridFunction>, NPlayerError> {
        vals.into_iter()
            .map(|v| GridFunction::cell_valued(grid.clone(), v).map_err(NPlayerError::from))
            .collect()
    };
    let phi_psi: (Vec<f64>, Vec<f64>) = (0..n_cells).map(|j| aggregates_in_cell(game, j)).unzip();

    Ok(NPlayerEquilibrium {
        grid: grid.clone(),
        pi: cellify(pi)?,
        c,
        zi0: cellify(zi0)?,
        zij: zij
            .into_iter()
            .map(cellify)
            .collect::<Result<Vec<_>, _>>()?,
        a_coef,
        b_coef,
        a_path: cellify(a_path)?,
        b_path: cellify(b_path)?,
        d,
        phi_n: GridFunction::cell_valued(grid.clone(), phi_psi.0)?,
        psi_n: GridFunction::cell_valued(grid, phi_psi.1)?,
    })
}

/// One row of the mean-field convergence table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceRow {
    pub n_players: usize,
    pub gap_pi: f64,
    pub gap_c: f64,
}

/// Convergence of homogeneous N-player equilibria to the mean-field
/// limit as `N` grows.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Fitted log-log slope of the gaps versus `N`; `None` when every
    /// gap is already at numerical zero.
    pub slope_pi: Option<f64>,
    pub slope_c: Option<f64>,
}

/// Threshold under which a gap counts as already converged.
pub const CONVERGED_GAP: f64 = 1e-10;

impl ConvergenceReport {
    /// Non-increasing gaps with slope <= -0.9, or all gaps at zero.
    pub fn passes(&self) -> bool {
        let ok = |gaps: Vec<f64>, slope: Option<f64>| {
            if gaps.iter().all(|g| *g <= CONVERGED_GAP) {
                return true;
            }
            let non_increasing = gaps.windows(2).all(|w| w[1] <= w[0] + CONVERGED_GAP);
            non_increasing && slope.map(|s| s <= -0.9).unwrap_or(false)
        };
        ok(self.rows.iter().map(|r| r.gap_pi).collect(), self.slope_pi)
            && ok(self.rows.iter().map(|r| r.gap_c).collect(), self.slope_c)
    }
}

fn fit_slope(rows: &[(f64, f64)]) -> Option<f64> {
    // Least squares on (ln N, ln gap), skipping numerically-zero gaps.
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, g)| *g > CONVERGED_GAP)
        .map(|(n, g)| (n.ln(), g.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Solves homogeneous games of increasing size and tabulates sup-norm
/// gaps of the investment and consumption rates against the mean-field
/// limit of the same type.
pub fn mfg_limit_report(
    agent: &AgentType,
    grid: &TimeGrid,
    ns: &[usize],
) -> Result<ConvergenceReport, NPlayerError> {
    if ns.windows(2).any(|w| w[1] <= w[0]) || ns.iter().any(|n| *n < 2) {
        return Err(NPlayerError::Invalid(vec![
            "player counts must be increasing and at least 2".to_string(),
        ]));
    }
    let population = Population::single(agent.clone(), grid.clone());
    let mfg = solve_mfg(&population)?;
    let mfg_rate = mfg.consumption_rate(0);

    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let game = NPlayerGame::homogeneous(agent.clone(), n, grid.clone());
        let eq = solve_nplayer(&game)?;
        let gap_pi = (0..grid.n_cells())
            .map(|j| (eq.pi[0].cell_value(j) - mfg.pi_star[0].cell_value(j)).abs())
            .fold(0.0f64, f64::max);
        let rate = eq.consumption_rate(0);
        let gap_c = (0..grid.n_nodes())
            .map(|m| (rate.node_value(m) - mfg_rate.node_value(m)).abs())
            .fold(0.0f64, f64::max);
        rows.push(ConvergenceRow { n_players: n, gap_pi, gap_c });
    }
    let slope_pi = fit_slope(&rows.iter().map(|r| (r.n_players as f64, r.gap_pi)).collect::<Vec<_>>());
    let slope_c = fit_slope(&rows.iter().map(|r| (r.n_players as f64, r.gap_c)).collect::<Vec<_>>());
    Ok(ConvergenceReport { rows, slope_pi, slope_c })
}
