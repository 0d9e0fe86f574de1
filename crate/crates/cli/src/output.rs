//! Machine-readable outputs: CSV paths, verification JSON, run metadata.
//!
//! Floating-point values are printed with 17 significant digits so
//! files round-trip losslessly and diff byte-for-byte across runs.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use ezmfg_core::mfg::MfgEquilibrium;
use ezmfg_core::nplayer::NPlayerEquilibrium;
use ezmfg_core::simulate::SimulationReport;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// `equilibrium.csv`: one row per (node, type).
pub fn write_equilibrium_csv(path: &Path, eq: &MfgEquilibrium) -> Result<()> {
    let grid = eq.grid();
    let last_cell = grid.n_cells() - 1;
    let mut out = String::from("t,type_id,pi_star,c_star,Z0,A,B,Y_tilde\n");
    for m in 0..grid.n_nodes() {
        let j = m.min(last_cell);
        for k in 0..eq.n_types() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt_float(grid.node(m)),
                k,
                fmt_float(eq.pi_star[k].cell_value(j)),
                fmt_float(eq.c_star[k].node_value(m)),
                fmt_float(eq.z0[k].cell_value(j)),
                fmt_float(eq.riccati.a[k].cell_value(j)),
                fmt_float(eq.riccati.b[k].cell_value(j)),
                fmt_float(eq.y_tilde[k].node_value(m)),
            ));
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// `nplayer.csv`: one row per (node, player).
pub fn write_nplayer_csv(path: &Path, eq: &NPlayerEquilibrium) -> Result<()> {
    let grid = eq.grid();
    let last_cell = grid.n_cells() - 1;
    let mut out = String::from("t,player_id,pi,c,Zi0\n");
    for m in 0..grid.n_nodes() {
        let j = m.min(last_cell);
        for i in 0..eq.pi.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_float(grid.node(m)),
                i,
                fmt_float(eq.pi[i].cell_value(j)),
                fmt_float(eq.c[i].node_value(m)),
                fmt_float(eq.zi0[i].cell_value(j)),
            ));
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn write_verify_json(path: &Path, report: &SimulationReport) -> Result<()> {
    #[derive(Serialize)]
    struct VerifyFile<'a> {
        all_pass: bool,
        #[serde(flatten)]
        report: &'a SimulationReport,
    }
    let body = serde_json::to_string_pretty(&VerifyFile { all_pass: report.all_pass(), report })?;
    std::fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
}

#[derive(Serialize)]
pub struct Versions {
    pub ezmfg_core: &'static str,
    pub ezmfg_cli: &'static str,
}

pub fn write_meta_json(path: &Path, config_bytes: &[u8], seed: u64) -> Result<()> {
    let mut hasher = Sha256::new();
    hasher.update(config_bytes);
    let meta = Meta {
        config_hash: format!("{:x}", hasher.finalize()),
        seed,
        versions: Versions {
            ezmfg_core: env!("CARGO_PKG_VERSION"),
            ezmfg_cli: env!("CARGO_PKG_VERSION"),
        },
    };
    let body = serde_json::to_string_pretty(&meta)?;
    std::fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}
