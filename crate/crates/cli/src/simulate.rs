use std::path::PathBuf;

use clap::Args;
use qngpair::config::{RunConfig, SourceConfig};
use qngpair::simulator::{simulate_qd, simulate_spdc};
use qngpair::timetag::{write_stream, TimeTagStream};
use serde::Serialize;

use crate::common::print_json;
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `pulses` from the config.
    #[arg(long)]
    pub pulses: Option<u64>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output stream; defaults to `output.stream` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    pulses: u64,
    tags: u64,
    out: &'a std::path::Path,
    rep_rate_hz: f64,
    counts: Vec<(String, usize)>,
}

pub fn run_simulation(cfg: &RunConfig) -> CliResult<TimeTagStream> {
    Ok(match &cfg.source {
        SourceConfig::Qd(q) => simulate_qd(q, &cfg.chain, cfg.pulses, cfg.seed)?,
        SourceConfig::Spdc(s) => simulate_spdc(s, &cfg.chain, cfg.pulses, cfg.seed)?,
    })
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(p) = args.pulses {
        cfg.pulses = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.stream.clone())
        .ok_or_else(|| {
            CliError::Config("no output path: pass --out or set output.stream".into())
        })?;
    eprintln!("seed: {}", cfg.seed);

    let stream = run_simulation(&cfg)?;
    let header = write_stream(&out, &stream.header, stream.tags.iter().copied())?;
    let counts = header
        .channels
        .iter()
        .map(|(role, ch)| (role.name().to_string(), stream.count_channel(*ch)))
        .collect();
    print_json(&Summary {
        seed: cfg.seed,
        pulses: cfg.pulses,
        tags: header.tag_count,
        out: &out,
        rep_rate_hz: header.rep_rate_hz(),
        counts,
    })
}
