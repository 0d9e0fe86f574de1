//! Solver library for mean-field and N-player portfolio games under
//! Epstein-Zin preferences with relative performance concerns.
//!
//! For deterministic (possibly time-varying) market coefficients the
//! equilibrium investment and consumption rates have closed forms; the
//! crate computes them and verifies them numerically through four
//! independent routes: an RK4 Riccati oracle, Monte Carlo simulation of
//! the mean-field fixed point, a recursive-utility consistency check,
//! and best-response perturbation tests.

pub mod grid;
pub mod mfg;
pub mod model;
pub mod nplayer;
pub mod ode;
pub mod power;
pub mod simulate;
pub mod utility;

pub use grid::{GridError, TimeGrid};
pub use mfg::{solve_mfg, MfgEquilibrium, MfgError, RiccatiData};
pub use model::{
    validate, AgentType, MarketCoefficients, ModelError, Population, PreferenceParams, Regime,
    ValidationReport,
};
pub use nplayer::{solve_nplayer, NPlayerEquilibrium, NPlayerError, NPlayerGame};
pub use ode::{GridFunction, OdeError, Sampling};
pub use simulate::{SimConfig, SimulationReport};
pub use utility::{ProportionalStrategy, UtilityCurve, UtilityError};
