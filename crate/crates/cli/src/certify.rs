use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use qngpair::criteria::{
    pair_report, sps_depth, Depth, PairClickStats, PhotonNumberStats, QngPairReport, SpsDepth,
};
use qngpair::estimators::{hbt_counts, pair_click_stats, photon_stats, SinglesMode};
use qngpair::timetag::window_sweep;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::common::{
    arrivals, load_stream, ns_list_ps, require_photons, resolve_offsets, AnalysisArgs, ArmArg,
};
use crate::error::{CliError, CliResult};

#[derive(Debug, Subcommand)]
pub enum CertifyCommand {
    /// Single-photon criterion on one arm.
    Sps {
        #[command(flatten)]
        input: CertifyInput,
        #[arg(long, value_enum, default_value = "x")]
        arm: ArmArg,
    },
    /// Coincidence criterion on the four-detector setup.
    Pairs {
        #[command(flatten)]
        input: CertifyInput,
    },
}

#[derive(Debug, Args)]
pub struct CertifyInput {
    /// Statistics JSON, e.g. the output of `analyze pairs` or `analyze hbt`.
    #[arg(long, conflicts_with = "stream", required_unless_present = "stream")]
    pub stats: Option<PathBuf>,
    /// Time-tag stream; evaluated at every window of the sweep.
    #[arg(long)]
    pub stream: Option<PathBuf>,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct PairRow {
    pub window_ns: Option<f64>,
    pub stats: PairClickStats,
    pub report: QngPairReport,
}

#[derive(Debug, Serialize)]
pub struct SpsRow {
    pub window_ns: Option<f64>,
    pub stats: PhotonNumberStats,
    pub depth: SpsDepth,
}

#[derive(Debug, Serialize)]
pub struct Certificate<R> {
    pub mode: &'static str,
    pub rows: Vec<R>,
    pub best: usize,
    pub certified: bool,
}

/// Accepts the bare statistics object or any object carrying it under `stats`.
fn stats_value(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path)?;
    let mut v: Value = serde_json::from_str(&text)?;
    if let Some(inner) = v.get_mut("stats") {
        return Ok(inner.take());
    }
    Ok(v)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairStatsInput {
    ps: f64,
    pe: f64,
    sigma_ps: Option<f64>,
    sigma_pe: Option<f64>,
    #[serde(default)]
    n_pulses: u64,
}

impl PairStatsInput {
    /// Missing σ fall back to Poisson when a pulse count is given.
    fn into_stats(self) -> PairClickStats {
        let poisson = PairClickStats::poisson(self.ps, self.pe, self.n_pulses.max(1));
        let fallback =
            |given: Option<f64>, p: f64| given.unwrap_or(if self.n_pulses > 0 { p } else { 0.0 });
        PairClickStats {
            ps: self.ps,
            pe: self.pe,
            sigma_ps: fallback(self.sigma_ps, poisson.sigma_ps),
            sigma_pe: fallback(self.sigma_pe, poisson.sigma_pe),
            n_pulses: self.n_pulses,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpsStatsInput {
    p1: f64,
    p2plus: f64,
    p0: Option<f64>,
    #[serde(default)]
    sigma_p1: f64,
    #[serde(default)]
    sigma_p2plus: f64,
    #[serde(default)]
    heralded: bool,
}

fn pair_rows(input: &CertifyInput) -> CliResult<Vec<PairRow>> {
    if let Some(path) = &input.stats {
        let parsed: PairStatsInput = serde_json::from_value(stats_value(path)?)?;
        let stats = parsed.into_stats();
        return Ok(vec![PairRow {
            window_ns: None,
            stats,
            report: pair_report(&stats)?,
        }]);
    }
    let cfg = input.analysis.resolve()?;
    let stream = load_stream(input.stream.as_deref().expect("clap requires stream"))?;
    require_photons(&stream)?;
    let offsets = resolve_offsets(&stream, &cfg)?;
    let arr = arrivals(&stream, offsets)?;
    let tables = window_sweep(&arr, &ns_list_ps(&cfg.analysis.windows_ns))?;
    tables
        .iter()
        .zip(&cfg.analysis.windows_ns)
        .map(|(table, w)| {
            let est = pair_click_stats(table, cfg.analysis.pe_aggregation)?;
            Ok(PairRow {
                window_ns: Some(*w),
                stats: est.stats,
                report: pair_report(&est.stats)?,
            })
        })
        .collect()
}

fn sps_rows(input: &CertifyInput, arm: ArmArg) -> CliResult<Vec<SpsRow>> {
    if let Some(path) = &input.stats {
        let p: SpsStatsInput = serde_json::from_value(stats_value(path)?)?;
        let stats = PhotonNumberStats {
            p0: p.p0.unwrap_or(1.0 - p.p1 - p.p2plus),
            p1: p.p1,
            p2plus: p.p2plus,
            sigma_p1: p.sigma_p1,
            sigma_p2plus: p.sigma_p2plus,
            heralded: p.heralded,
        };
        return Ok(vec![SpsRow {
            window_ns: None,
            stats,
            depth: sps_depth(&stats)?,
        }]);
    }
    let cfg = input.analysis.resolve()?;
    let stream = load_stream(input.stream.as_deref().expect("clap requires stream"))?;
    require_photons(&stream)?;
    let offsets = resolve_offsets(&stream, &cfg)?;
    let arr = arrivals(&stream, offsets)?;
    let tables = window_sweep(&arr, &ns_list_ps(&cfg.analysis.windows_ns))?;
    tables
        .iter()
        .zip(&cfg.analysis.windows_ns)
        .map(|(table, w)| {
            let counts = hbt_counts(table, arm.into(), cfg.analysis.herald)?;
            let est = photon_stats(&counts, cfg.analysis.bs_ratio, SinglesMode::Inclusive)?;
            Ok(SpsRow {
                window_ns: Some(*w),
                stats: est.stats,
                depth: sps_depth(&est.stats)?,
            })
        })
        .collect()
}

/// Largest significance, or largest difference when no σ is available.
fn best_pair(rows: &[PairRow]) -> usize {
    let score = |r: &PairRow| r.report.significance.unwrap_or(r.report.difference);
    (0..rows.len())
        .max_by(|a, b| score(&rows[*a]).total_cmp(&score(&rows[*b])).then(b.cmp(a)))
        .unwrap_or(0)
}

fn depth_score(d: Depth) -> f64 {
    d.db().unwrap_or(f64::INFINITY)
}

fn best_sps(rows: &[SpsRow]) -> usize {
    (0..rows.len())
        .max_by(|a, b| {
            depth_score(rows[*a].depth.depth)
                .total_cmp(&depth_score(rows[*b].depth.depth))
                .then(b.cmp(a))
        })
        .unwrap_or(0)
}

fn fmt_depth(d: Option<Depth>) -> String {
    match d {
        Some(Depth::Finite(db)) => format!("{db:.3}"),
        Some(Depth::Unbounded) => "inf".into(),
        None => "-".into(),
    }
}

fn fmt_window(w: Option<f64>) -> String {
    w.map_or_else(|| "-".into(), |w| format!("{w}"))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    if let Some(p) = path {
        let mut f = fs::File::create(p)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
    }
    Ok(())
}

pub fn run(cmd: &CertifyCommand) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match cmd {
        CertifyCommand::Pairs { input } => {
            let rows = pair_rows(input)?;
            let best = best_pair(&rows);
            writeln!(
                out,
                "{:>9} {:>12} {:>12} {:>12} {:>12} {:>9} {:>8} {:>8} {:>7}",
                "window_ns",
                "ps",
                "pe",
                "threshold",
                "difference",
                "sigmas",
                "t_coin",
                "exact",
                "+-"
            )?;
            for (i, r) in rows.iter().enumerate() {
                let rep = &r.report;
                writeln!(
                    out,
                    "{:>9} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>9} {:>8} {:>8} {:>7}{}",
                    fmt_window(r.window_ns),
                    rep.ps,
                    rep.pe,
                    rep.threshold,
                    rep.difference,
                    rep.significance
                        .map_or_else(|| "-".into(), |s| format!("{s:.2}")),
                    fmt_depth(rep.t_coin_db),
                    fmt_depth(rep.t_coin_exact_db),
                    rep.t_coin_sigma_db
                        .map_or_else(|| "-".into(), |s| format!("{s:.3}")),
                    if i == best { "  <- best" } else { "" }
                )?;
            }
            let certified = rows[best].report.certified;
            let cert = Certificate {
                mode: "pairs",
                rows,
                best,
                certified,
            };
            write_json(input.json.as_deref(), &cert)?;
            if !certified {
                let r = &cert.rows[best].report;
                return Err(CliError::NotViolated(format!(
                    "best P_s = {:.6e} does not exceed threshold {:.6e}",
                    r.ps, r.threshold
                )));
            }
            writeln!(out, "certified: yes")?;
        }
        CertifyCommand::Sps { input, arm } => {
            let rows = sps_rows(input, *arm)?;
            let best = best_sps(&rows);
            writeln!(
                out,
                "{:>9} {:>12} {:>12} {:>12} {:>9} {:>7}",
                "window_ns", "p1", "p2plus", "p0", "depth_db", "+-"
            )?;
            for (i, r) in rows.iter().enumerate() {
                writeln!(
                    out,
                    "{:>9} {:>12.5e} {:>12.5e} {:>12.5e} {:>9} {:>7.3}{}",
                    fmt_window(r.window_ns),
                    r.stats.p1,
                    r.stats.p2plus,
                    r.stats.p0,
                    fmt_depth(Some(r.depth.depth)),
                    r.depth.sigma_db,
                    if i == best { "  <- best" } else { "" }
                )?;
            }
            let certified = depth_score(rows[best].depth.depth) > 0.0;
            let cert = Certificate {
                mode: "sps",
                rows,
                best,
                certified,
            };
            write_json(input.json.as_deref(), &cert)?;
            if !certified {
                return Err(CliError::NotViolated(
                    "single-photon depth is not positive in any window".into(),
                ));
            }
            writeln!(out, "certified: yes")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ps: f64, pe: f64, n: u64) -> PairRow {
        let stats = PairClickStats::poisson(ps, pe, n);
        PairRow {
            window_ns: None,
            stats,
            report: pair_report(&stats).unwrap(),
        }
    }

    #[test]
    fn missing_sigmas_fall_back_to_poisson() {
        let s = PairStatsInput {
            ps: 1e-3,
            pe: 1e-6,
            sigma_ps: None,
            sigma_pe: Some(0.5e-6),
            n_pulses: 1_000_000,
        }
        .into_stats();
        assert!((s.sigma_ps - (1e-3f64 / 1e6).sqrt()).abs() < 1e-15);
        assert_eq!(s.sigma_pe, 0.5e-6);
        let exact = PairStatsInput {
            ps: 1e-3,
            pe: 1e-6,
            sigma_ps: None,
            sigma_pe: None,
            n_pulses: 0,
        }
        .into_stats();
        assert_eq!((exact.sigma_ps, exact.sigma_pe), (0.0, 0.0));
    }

    #[test]
    fn best_window_is_largest_significance() {
        let rows = vec![
            row(5.74e-4, 8.55e-7, 1_000_000),
            row(5.74e-4, 8.55e-7, 100_000_000),
            row(1e-4, 1e-6, 1_000_000),
        ];
        assert_eq!(best_pair(&rows), 1);
    }

    #[test]
    fn unbounded_depth_wins() {
        let mk = |p2: f64| {
            let stats = PhotonNumberStats::exact(0.5, p2).unwrap();
            SpsRow {
                window_ns: None,
                stats,
                depth: sps_depth(&stats).unwrap(),
            }
        };
        assert_eq!(best_sps(&[mk(1e-3), mk(0.0), mk(1e-4)]), 1);
    }
}
