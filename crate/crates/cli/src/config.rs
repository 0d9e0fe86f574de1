//! JSON run configuration: parsing, scalar-to-path broadcasting, and
//! conversion into solver inputs.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use ezmfg_core::grid::TimeGrid;
use ezmfg_core::model::{
    AgentType, MarketCoefficients, Population, PreferenceParams, Regime,
};
use ezmfg_core::nplayer::NPlayerGame;
use ezmfg_core::simulate::SimConfig;

/// Market coefficient entry: a scalar broadcast to every cell or one
/// value per cell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ScalarOrPath {
    Scalar(f64),
    PerCell(Vec<f64>),
}

impl ScalarOrPath {
    fn broadcast(&self, n_cells: usize, pointer: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrPath::Scalar(v) => Ok(vec![*v; n_cells]),
            ScalarOrPath::PerCell(values) => {
                if values.len() != n_cells {
                    bail!(
                        "{pointer}: per-cell array has {} entries, grid has {n_cells} cells",
                        values.len()
                    );
                }
                Ok(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MarketConfig {
    pub r: ScalarOrPath,
    pub h: ScalarOrPath,
    pub sigma: ScalarOrPath,
    pub sigma0: ScalarOrPath,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrefsConfig {
    pub delta: f64,
    pub gamma: f64,
    pub psi: f64,
    pub theta: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TypeConfig {
    pub weight: f64,
    pub x0: f64,
    pub prefs: PrefsConfig,
    pub market: MarketConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlayerConfig {
    pub x0: f64,
    pub prefs: PrefsConfig,
    pub market: MarketConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridConfig {
    pub n_cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimSettings {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    /// Reporting step; defaults to a coarse divisor of the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_report: Option<f64>,
}

fn default_paths() -> usize {
    100_000
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { n_paths: default_paths(), seed: 0, antithetic: false, dt_report: None }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub regime: Regime,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub population: Vec<TypeConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub players: Vec<PlayerConfig>,
    #[serde(default)]
    pub sim: SimSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| anyhow!("{}: parse error at line {}, column {}: {e}", path.display(), e.line(), e.column()))?;
        if !(config.horizon.is_finite() && config.horizon > 0.0) {
            bail!("/T: horizon must be positive");
        }
        if config.grid.n_cells == 0 {
            bail!("/grid/n_cells: must be at least 1");
        }
        Ok(config)
    }

    /// Normalizes scalar market entries to per-cell arrays, so that a
    /// reload of the serialized config is field-by-field identical.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.grid.n_cells;
        let mut out = self.clone();
        for (k, t) in out.population.iter_mut().enumerate() {
            t.market = normalize_market(&t.market, n, &format!("/population/{k}/market"))?;
        }
        for (i, p) in out.players.iter_mut().enumerate() {
            p.market = normalize_market(&p.market, n, &format!("/players/{i}/market"))?;
        }
        Ok(out)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.horizon, self.grid.n_cells).map_err(|e| anyhow!("/grid: {e}"))
    }

    pub fn to_population(&self) -> Result<Population> {
        if self.population.is_empty() {
            bail!("/population: at least one type is required");
        }
        let grid = self.time_grid()?;
        let n = self.grid.n_cells;
        let types = self
            .population
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let pointer = format!("/population/{k}/market");
                Ok((t.weight, agent_from(&t.prefs, &t.market, t.x0, n, &pointer)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Population::new(types, grid))
    }

    pub fn to_game(&self) -> Result<NPlayerGame> {
        if self.players.is_empty() {
            bail!("/players: an N-player game description is required");
        }
        let grid = self.time_grid()?;
        let n = self.grid.n_cells;
        let players = self
            .players
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let pointer = format!("/players/{i}/market");
                agent_from(&p.prefs, &p.market, p.x0, n, &pointer)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NPlayerGame::new(players, grid))
    }

    pub fn sim_config(&self) -> SimConfig {
        let dt_report = self.sim.dt_report.unwrap_or_else(|| {
            // Largest of {whole horizon, ~10 cells} that stays on nodes.
            let n = self.grid.n_cells;
            let stride = if n % 10 == 0 { n / 10 } else { 1 };
            self.horizon * stride as f64 / n as f64
        });
        SimConfig::new(self.sim.n_paths, self.sim.seed, dt_report, self.sim.antithetic)
    }
}

fn normalize_market(market: &MarketConfig, n_cells: usize, pointer: &str) -> Result<MarketConfig> {
    Ok(MarketConfig {
        r: ScalarOrPath::PerCell(market.r.broadcast(n_cells, &format!("{pointer}/r"))?),
        h: ScalarOrPath::PerCell(market.h.broadcast(n_cells, &format!("{pointer}/h"))?),
        sigma: ScalarOrPath::PerCell(market.sigma.broadcast(n_cells, &format!("{pointer}/sigma"))?),
        sigma0: ScalarOrPath::PerCell(
            market.sigma0.broadcast(n_cells, &format!("{pointer}/sigma0"))?,
        ),
    })
}

fn agent_from(
    prefs: &PrefsConfig,
    market: &MarketConfig,
    x0: f64,
    n_cells: usize,
    pointer: &str,
) -> Result<AgentType> {
    Ok(AgentType {
        prefs: PreferenceParams {
            delta: prefs.delta,
            gamma: prefs.gamma,
            psi: prefs.psi,
            theta: prefs.theta,
            alpha: prefs.alpha,
        },
        market: MarketCoefficients {
            r: market.r.broadcast(n_cells, &format!("{pointer}/r"))?,
            h: market.h.broadcast(n_cells, &format!("{pointer}/h"))?,
            sigma: market.sigma.broadcast(n_cells, &format!("{pointer}/sigma"))?,
            sigma0: market.sigma0.broadcast(n_cells, &format!("{pointer}/sigma0"))?,
        },
        x0,
    })
}
