use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use qngpair::config::{ns_to_ps, RunConfig};
use qngpair::timetag::{
    calibrate_offsets, pulse_arrivals, read_stream_all, Arm, PulseArrivals, Role, TimeTagStream,
};

use crate::error::{CliError, CliResult};

/// Bumped whenever a column is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArmArg {
    X,
    Xx,
}

impl From<ArmArg> for Arm {
    fn from(a: ArmArg) -> Arm {
        match a {
            ArmArg::X => Arm::X,
            ArmArg::Xx => Arm::XX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeraldArg {
    None,
    X,
    Xx,
}

impl HeraldArg {
    fn arm(self) -> Option<Arm> {
        match self {
            HeraldArg::None => None,
            HeraldArg::X => Some(Arm::X),
            HeraldArg::Xx => Some(Arm::XX),
        }
    }
}

/// Analysis settings shared by the stream-based subcommands. Flags override
/// the `[analysis]` section of `--config`.
#[derive(Debug, Clone, Args)]
pub struct AnalysisArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Coincidence window for single-window analyses.
    #[arg(long)]
    pub window_ns: Option<f64>,
    /// Comma-separated ascending windows for sweeps.
    #[arg(long, value_delimiter = ',')]
    pub windows_ns: Vec<f64>,
    /// Correlation histogram bin width.
    #[arg(long)]
    pub bin_ps: Option<u64>,
    /// Correlation histogram half range.
    #[arg(long)]
    pub range_ns: Option<f64>,
    #[arg(long, value_enum)]
    pub herald: Option<HeraldArg>,
    /// Arrival offsets for X1,X2,XX1,XX2; calibrated from the stream when absent.
    #[arg(
        long,
        value_delimiter = ',',
        num_args = 4,
        allow_negative_numbers = true
    )]
    pub offsets_ps: Vec<i64>,
}

impl AnalysisArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let a = &mut cfg.analysis;
        if let Some(w) = self.window_ns {
            a.window_ns = w;
        }
        if !self.windows_ns.is_empty() {
            a.windows_ns = self.windows_ns.clone();
        }
        if let Some(b) = self.bin_ps {
            a.bin_ps = b;
        }
        if let Some(r) = self.range_ns {
            a.range_ns = r;
        }
        if let Some(h) = self.herald {
            a.herald = h.arm();
        }
        if !self.offsets_ps.is_empty() {
            let o: [i64; 4] =
                self.offsets_ps.as_slice().try_into().map_err(|_| {
                    CliError::Config("--offsets-ps takes exactly four values".into())
                })?;
            a.offsets_ps = Some(o);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_stream(path: &Path) -> CliResult<TimeTagStream> {
    Ok(read_stream_all(path)?)
}

/// Fails with "no data" when no photon role ever clicked.
pub fn require_photons(stream: &TimeTagStream) -> CliResult<()> {
    let photon_channels: Vec<u8> = Role::PHOTONS
        .iter()
        .filter_map(|r| stream.header.channel_of(*r))
        .collect();
    if stream
        .tags
        .iter()
        .any(|t| photon_channels.contains(&t.channel))
    {
        Ok(())
    } else {
        Err(CliError::NoData("stream contains no photon tags".into()))
    }
}

pub fn resolve_offsets(stream: &TimeTagStream, cfg: &RunConfig) -> CliResult<[i64; 4]> {
    if let Some(o) = cfg.analysis.offsets_ps {
        return Ok(o);
    }
    let found = calibrate_offsets(&stream.header, stream.iter_ok(), cfg.analysis.offset_bin_ps)?;
    Ok(found.map(|o| o.unwrap_or(0)))
}

pub fn arrivals(stream: &TimeTagStream, offsets: [i64; 4]) -> CliResult<PulseArrivals> {
    Ok(pulse_arrivals(&stream.header, stream.iter_ok(), offsets)?)
}

pub fn parse_roles(list: &str) -> CliResult<Vec<Role>> {
    list.split(',')
        .map(|s| {
            Role::parse(s.trim()).ok_or_else(|| CliError::Config(format!("unknown role '{s}'")))
        })
        .collect()
}

pub fn channels_for(stream: &TimeTagStream, roles: &[Role]) -> CliResult<Vec<u8>> {
    roles
        .iter()
        .map(|r| stream.header.require_channel(*r).map_err(CliError::from))
        .collect()
}

pub fn window_label_ns(window_ps: u64) -> String {
    format!("{}", window_ps as f64 / 1000.0)
}

pub fn ns_list_ps(ns: &[f64]) -> Vec<u64> {
    ns.iter().map(|w| ns_to_ps(*w)).collect()
}

pub fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// CSV with a `# qngpair <name> v<version>` first line.
pub struct Table {
    name: &'static str,
    columns: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, columns: &'static [&'static str]) -> Self {
        Self {
            name,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push<I, T>(&mut self, row: I)
    where
        I: IntoIterator<Item = T>,
        T: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|v| v.to_string()).collect();
        debug_assert_eq!(row.len(), self.columns.len(), "{}", self.name);
        self.rows.push(row);
    }

    pub fn rename(&mut self, name: &'static str) {
        self.name = name;
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> CliResult<()> {
        writeln!(out, "# qngpair {} v{SCHEMA_VERSION}", self.name)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, path: Option<&Path>) -> CliResult<()> {
        self.write_to(open_output(path)?)
    }
}

pub fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_versioned_header() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.push([1.5, 2.0]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# qngpair demo v1\na,b\n1.5,2\n"
        );
    }

    #[test]
    fn roles_parse_from_lists() {
        assert_eq!(parse_roles("x1, XX2").unwrap(), vec![Role::X1, Role::XX2]);
        assert!(matches!(parse_roles("x3"), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_apply_on_top_of_defaults() {
        let args = AnalysisArgs {
            config: None,
            window_ns: Some(0.5),
            windows_ns: vec![0.1, 0.2],
            bin_ps: None,
            range_ns: None,
            herald: Some(HeraldArg::Xx),
            offsets_ps: vec![1, 2, 3, 4],
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.analysis.window_ps(), 500);
        assert_eq!(cfg.analysis.windows_ps(), vec![100, 200]);
        assert_eq!(cfg.analysis.herald, Some(Arm::XX));
        assert_eq!(cfg.analysis.offsets_ps, Some([1, 2, 3, 4]));
        let bad = AnalysisArgs {
            windows_ns: vec![0.2, 0.1],
            ..args
        };
        assert_eq!(
            bad.resolve().unwrap_err().exit_code(),
            crate::error::EXIT_CONFIG
        );
    }
}
