use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use qngpair::criteria::{pair_report, sps_depth};
use qngpair::estimators::{
    g2_from_peaks, hbt_counts, pair_click_stats, photon_stats, prep_report, sweep_row, SinglesMode,
};
use qngpair::polarization::{
    chsh_from_counts, fidelity, fidelity_phase_optimized, phi_plus_state, tomography_reconstruct,
    ChshCounts, TomoProjector, TomographyCounts, TomographyRecord,
};
use qngpair::timetag::{
    correlation_histogram, integrate_peaks, window_sweep, Arm, CorrelationHistogram, Role,
    TimeTagStream,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::common::{
    arrivals, channels_for, load_stream, ns_list_ps, parse_roles, print_json, require_photons,
    resolve_offsets, window_label_ns, AnalysisArgs, ArmArg, Table,
};
use crate::error::{CliError, CliResult};

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Assign clicks to pulses at one window and count them.
    Fold(StreamArgs),
    /// Correlation histogram between two channel groups.
    Correlate {
        #[command(flatten)]
        common: StreamArgs,
        /// Start roles, comma separated.
        #[arg(long, default_value = "x1")]
        a: String,
        /// Stop roles, comma separated.
        #[arg(long, default_value = "x2")]
        b: String,
    },
    /// Singles and doubles of one arm across the configured windows.
    Sweep {
        #[command(flatten)]
        common: StreamArgs,
        #[arg(long, value_enum, default_value = "x")]
        arm: ArmArg,
    },
    /// Photon-number statistics of one arm.
    Hbt {
        #[command(flatten)]
        common: StreamArgs,
        #[arg(long, value_enum, default_value = "x")]
        arm: ArmArg,
    },
    /// Success and error probabilities of the four-detector setup.
    Pairs(StreamArgs),
    /// Zero-delay second-order correlation of one arm.
    G2 {
        #[command(flatten)]
        common: StreamArgs,
        #[arg(long, value_enum, default_value = "x")]
        arm: ArmArg,
    },
    /// Preparation efficiency from the X-XX cross-correlation.
    Prep(StreamArgs),
    /// Two-qubit state reconstruction from projector counts.
    Tomography {
        /// CSV with columns x,xx,count and optional weight.
        #[arg(long)]
        counts: PathBuf,
    },
    /// CHSH value from correlation counts.
    Chsh {
        /// CSV with columns setting,pp,pm,mp,mm; setting = 2 i + j.
        #[arg(long)]
        counts: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Table output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Loaded {
    cfg: qngpair::config::RunConfig,
    stream: TimeTagStream,
    offsets: [i64; 4],
}

fn load(args: &StreamArgs) -> CliResult<Loaded> {
    let cfg = args.analysis.resolve()?;
    let stream = load_stream(&args.stream)?;
    require_photons(&stream)?;
    let offsets = resolve_offsets(&stream, &cfg)?;
    Ok(Loaded {
        cfg,
        stream,
        offsets,
    })
}

impl Loaded {
    fn table(&self, window_ps: u64) -> CliResult<qngpair::timetag::PulseClickTable> {
        Ok(qngpair::timetag::fold_pulses(
            &self.stream.header,
            self.stream.iter_ok(),
            window_ps,
            self.offsets,
        )?)
    }

    fn histogram(&self, a: &[Role], b: &[Role]) -> CliResult<CorrelationHistogram> {
        let (ca, cb) = (
            channels_for(&self.stream, a)?,
            channels_for(&self.stream, b)?,
        );
        Ok(correlation_histogram(
            self.stream.iter_ok(),
            &ca,
            &cb,
            self.cfg.analysis.bin_ps,
            self.cfg.analysis.range_ps(),
        )?)
    }
}

pub fn histogram_table(hist: &CorrelationHistogram) -> Table {
    let mut t = Table::new("correlation", &["delay_ps", "count"]);
    for (i, c) in hist.counts.iter().enumerate() {
        t.push([hist.center_ps(i).to_string(), c.to_string()]);
    }
    t
}

pub fn arm_roles(arm: Arm) -> [Role; 2] {
    let (a, b) = arm.roles();
    [a, b]
}

fn peak_window(loaded: &Loaded) -> u64 {
    loaded.cfg.analysis.peak_window_ps()
}

pub fn run(cmd: &AnalyzeCommand) -> CliResult<()> {
    match cmd {
        AnalyzeCommand::Fold(args) => {
            let l = load(args)?;
            let table = l.table(l.cfg.analysis.window_ps())?;
            let roles: Vec<(&str, u64)> = Role::PHOTONS
                .iter()
                .map(|r| (r.name(), table.count_role(*r)))
                .collect();
            print_json(&json!({
                "n_pulses": table.n_pulses,
                "window_ps": table.window_ps,
                "offsets_ps": l.offsets,
                "pulses_with_clicks": table.clicks.len(),
                "role_clicks": roles,
                "pair_counts": qngpair::estimators::pair_counts(&table),
            }))
        }
        AnalyzeCommand::Correlate { common, a, b } => {
            let l = load(common)?;
            let hist = l.histogram(&parse_roles(a)?, &parse_roles(b)?)?;
            histogram_table(&hist).write(common.out.as_deref())
        }
        AnalyzeCommand::Sweep { common, arm } => {
            let l = load(common)?;
            let table = sweep_table(
                &l.stream,
                &l.cfg,
                l.offsets,
                (*arm).into(),
                l.cfg.analysis.herald,
            )?;
            table.write(common.out.as_deref())
        }
        AnalyzeCommand::Hbt { common, arm } => {
            let l = load(common)?;
            let table = l.table(l.cfg.analysis.window_ps())?;
            let counts = hbt_counts(&table, (*arm).into(), l.cfg.analysis.herald)?;
            let est = photon_stats(&counts, l.cfg.analysis.bs_ratio, SinglesMode::Inclusive)?;
            let depth = sps_depth(&est.stats)?;
            print_json(&json!({
                "window_ps": table.window_ps,
                "counts": counts,
                "estimate": est,
                "stats": est.stats,
                "sps_depth": depth,
            }))
        }
        AnalyzeCommand::Pairs(args) => {
            let l = load(args)?;
            let table = l.table(l.cfg.analysis.window_ps())?;
            let est = pair_click_stats(&table, l.cfg.analysis.pe_aggregation)?;
            let report = pair_report(&est.stats)?;
            print_json(&json!({
                "window_ps": table.window_ps,
                "stats": est.stats,
                "pe_x": est.pe_x,
                "pe_xx": est.pe_xx,
                "any_x_any_xx": est.any_x_any_xx,
                "counts": est.counts,
                "report": report,
            }))
        }
        AnalyzeCommand::G2 { common, arm } => {
            let l = load(common)?;
            let roles = arm_roles((*arm).into());
            let hist = l.histogram(&roles[..1], &roles[1..])?;
            let peaks = integrate_peaks(
                &hist,
                l.stream.header.period_ps(),
                peak_window(&l),
                l.cfg.analysis.n_side_peaks,
            )?;
            if common.out.is_some() {
                histogram_table(&hist).write(common.out.as_deref())?;
            }
            print_json(&json!({ "peaks": peaks, "g2": g2_from_peaks(&peaks)? }))
        }
        AnalyzeCommand::Prep(args) => {
            let l = load(args)?;
            let hist = l.histogram(&arm_roles(Arm::X), &arm_roles(Arm::XX))?;
            let period = l.stream.header.period_ps();
            let reach = ((hist.range_ps as f64 - peak_window(&l) as f64 / 2.0) / period).floor();
            let peaks = integrate_peaks(&hist, period, peak_window(&l), reach.max(0.0) as usize)?;
            if args.out.is_some() {
                histogram_table(&hist).write(args.out.as_deref())?;
            }
            print_json(&json!({ "zero_peak": peaks.zero_peak, "prep": prep_report(&peaks)? }))
        }
        AnalyzeCommand::Tomography { counts } => {
            let counts = read_tomography_counts(counts)?;
            let result = tomography_reconstruct(&counts)?;
            print_json(&tomography_json(&result)?)
        }
        AnalyzeCommand::Chsh { counts } => {
            let counts = read_chsh_counts(counts)?;
            print_json(&chsh_from_counts(&counts)?)
        }
    }
}

pub fn sweep_table(
    stream: &TimeTagStream,
    cfg: &qngpair::config::RunConfig,
    offsets: [i64; 4],
    arm: Arm,
    herald: Option<Arm>,
) -> CliResult<Table> {
    let arr = arrivals(stream, offsets)?;
    let windows = ns_list_ps(&cfg.analysis.windows_ns);
    let mut t = Table::new(
        "sweep",
        &[
            "window_ns",
            "n",
            "r1a",
            "r1b",
            "r2",
            "singles_rate",
            "doubles_rate",
            "ps",
            "sigma_ps",
            "pe",
            "sigma_pe",
        ],
    );
    for table in window_sweep(&arr, &windows)? {
        let r = sweep_row(&table, arm, herald)?;
        t.push([
            window_label_ns(r.window_ps),
            r.n_pulses.to_string(),
            r.r1a.to_string(),
            r.r1b.to_string(),
            r.r2.to_string(),
            r.singles_rate.to_string(),
            r.doubles_rate.to_string(),
            r.ps.to_string(),
            r.sigma_ps.to_string(),
            r.pe.to_string(),
            r.sigma_pe.to_string(),
        ]);
    }
    Ok(t)
}

#[derive(Debug, Deserialize)]
struct TomographyRow {
    x: String,
    xx: String,
    count: f64,
    weight: Option<f64>,
}

pub fn read_tomography_counts(path: &Path) -> CliResult<TomographyCounts> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = Vec::new();
    for row in reader.deserialize::<TomographyRow>() {
        let row = row?;
        let proj = |s: &str| {
            TomoProjector::from_label(s)
                .ok_or_else(|| CliError::Data(format!("unknown projector '{s}'")))
        };
        records.push(TomographyRecord {
            x: proj(&row.x)?,
            xx: proj(&row.xx)?,
            count: row.count,
            weight: row.weight.unwrap_or(1.0),
        });
    }
    if records.is_empty() {
        return Err(CliError::NoData(format!(
            "{} has no count rows",
            path.display()
        )));
    }
    Ok(TomographyCounts { records })
}

#[derive(Debug, Deserialize)]
struct ChshRow {
    setting: usize,
    pp: u64,
    pm: u64,
    mp: u64,
    mm: u64,
}

pub fn read_chsh_counts(path: &Path) -> CliResult<ChshCounts> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut counts = [[0u64; 4]; 4];
    let mut seen = [false; 4];
    for row in reader.deserialize::<ChshRow>() {
        let row = row?;
        if row.setting > 3 || seen[row.setting] {
            return Err(CliError::Data(format!(
                "bad or repeated setting {}",
                row.setting
            )));
        }
        seen[row.setting] = true;
        counts[row.setting] = [row.pp, row.pm, row.mp, row.mm];
    }
    if !seen.iter().any(|s| *s) {
        return Err(CliError::NoData(format!(
            "{} has no count rows",
            path.display()
        )));
    }
    Ok(ChshCounts(counts))
}

#[derive(Serialize)]
pub struct TomographyJson {
    pub rho_real: [[f64; 4]; 4],
    pub rho_imag: [[f64; 4]; 4],
    pub eigenvalues: [f64; 4],
    pub fidelity_phi_plus: f64,
    pub fidelity_phase_optimized: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
}

pub fn tomography_json(r: &qngpair::polarization::TomographyResult) -> CliResult<TomographyJson> {
    Ok(TomographyJson {
        rho_real: r.rho.real_part(),
        rho_imag: r.rho.imag_part(),
        eigenvalues: r.rho.eigenvalues(),
        fidelity_phi_plus: fidelity(&r.rho, &phi_plus_state())?,
        fidelity_phase_optimized: fidelity_phase_optimized(&r.rho),
        log_likelihood: r.log_likelihood,
        iterations: r.iterations,
    })
}
