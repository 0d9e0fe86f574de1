//! Shared fixtures for the benchmark suite.

use ezmfg_core::grid::TimeGrid;
use ezmfg_core::model::{AgentType, MarketCoefficients, Population, PreferenceParams};
use ezmfg_core::nplayer::NPlayerGame;

pub fn benchmark_agent(n_cells: usize) -> AgentType {
    AgentType {
        prefs: PreferenceParams { delta: 0.1, gamma: 2.0, psi: 2.0, theta: 0.5, alpha: 1.0 },
        market: MarketCoefficients::constant(0.02, 0.05, 0.2, 0.1, n_cells),
        x0: 1.0,
    }
}

pub fn benchmark_population(n_types: usize, n_cells: usize) -> Population {
    let grid = TimeGrid::uniform(1.0, n_cells).unwrap();
    let w = 1.0 / n_types as f64;
    let types = (0..n_types)
        .map(|k| {
            let mut agent = benchmark_agent(n_cells);
            agent.prefs.gamma = 2.0 + 0.2 * k as f64;
            agent.prefs.theta = 0.5 - 0.05 * k as f64;
            (w, agent)
        })
        .collect();
    Population::new(types, grid)
}

pub fn benchmark_game(n_players: usize, n_cells: usize) -> NPlayerGame {
    let grid = TimeGrid::uniform(1.0, n_cells).unwrap();
    NPlayerGame::homogeneous(benchmark_agent(n_cells), n_players, grid)
}
