use std::path::PathBuf;

use clap::Args;
use qngpair::photon_number::{log_grid, oracle_row, OracleRow};
use rayon::prelude::*;

use crate::common::Table;
use crate::error::CliResult;

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Mean photon numbers; defaults to 12 log-spaced values in [0.001, 2].
    #[arg(long, value_delimiter = ',')]
    pub mu: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 10.0, 1e6])]
    pub modes: Vec<f64>,
    /// Efficiencies; defaults to 10 log-spaced values in [0.01, 1].
    #[arg(long, value_delimiter = ',')]
    pub eta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1e-6, 1e-4])]
    pub dark: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const ORACLE_COLUMNS: &[&str] = &[
    "mu",
    "modes",
    "eta",
    "dark_prob",
    "ps",
    "pe",
    "pe_x",
    "pe_xx",
    "threshold",
    "margin",
];

pub fn oracle_grid(
    mu: &[f64],
    modes: &[f64],
    eta: &[f64],
    dark: &[f64],
) -> CliResult<Vec<OracleRow>> {
    let mut points = Vec::with_capacity(mu.len() * modes.len() * eta.len() * dark.len());
    for &m in mu {
        for &k in modes {
            for &e in eta {
                for &d in dark {
                    points.push((m, k, e, d));
                }
            }
        }
    }
    Ok(points
        .par_iter()
        .map(|&(m, k, e, d)| oracle_row(m, k, e, d))
        .collect::<qngpair::Result<Vec<_>>>()?)
}

pub fn run(args: &OracleArgs) -> CliResult<()> {
    let mu = if args.mu.is_empty() {
        log_grid(1e-3, 2.0, 12)
    } else {
        args.mu.clone()
    };
    let eta = if args.eta.is_empty() {
        log_grid(0.01, 1.0, 10)
    } else {
        args.eta.clone()
    };
    let rows = oracle_grid(&mu, &args.modes, &eta, &args.dark)?;
    let mut table = Table::new("oracle", ORACLE_COLUMNS);
    let mut violations = 0;
    for r in &rows {
        if r.margin < -1e-12 {
            violations += 1;
        }
        table.push([
            r.mu,
            r.modes,
            r.eta,
            r.dark_prob,
            r.ps,
            r.pe,
            r.pe_x,
            r.pe_xx,
            r.threshold,
            r.margin,
        ]);
    }
    table.write(args.out.as_deref())?;
    eprintln!("grid points: {}, violations: {violations}", rows.len());
    Ok(())
}
