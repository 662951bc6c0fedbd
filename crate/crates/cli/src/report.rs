use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use qngpair::config::SourceConfig;
use qngpair::criteria::{
    depth_curve, pair_report, pair_threshold, sps_depth, Depth, PairClickStats,
};
use qngpair::estimators::{
    g2_from_peaks, hbt_counts, pair_click_stats, photon_stats, prep_report, SinglesMode,
};
use qngpair::photon_number::log_grid;
use qngpair::polarization::{
    chsh_expectation, chsh_from_counts, tomography_reconstruct, ChshResult, DensityMatrix,
};
use qngpair::simulator::rabi_preparation_probability;
use qngpair::timetag::{
    correlation_histogram, integrate_peaks, window_sweep, Arm, CorrelationHistogram,
    PulseClickTable, TimeTagStream,
};
use serde_json::json;

use crate::analyze::{arm_roles, histogram_table, read_chsh_counts, read_tomography_counts};
use crate::common::{
    arrivals, channels_for, load_stream, ns_list_ps, opt, require_photons, resolve_offsets,
    window_label_ns, AnalysisArgs, Table,
};
use crate::error::CliResult;

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Tomography counts for the density-matrix bundle; the configured
    /// state is used when absent.
    #[arg(long)]
    pub tomography_counts: Option<PathBuf>,
    /// CHSH counts; the configured state's expectation is used when absent.
    #[arg(long)]
    pub chsh_counts: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

pub const RATE_COLUMNS: &[&str] = &["window_ns", "n", "r1a", "r1b", "r1_sum", "r2"];
pub const SPS_COLUMNS: &[&str] = &["window_ns", "p1", "p2plus", "depth_db", "sigma_db"];
pub const SUCCESS_COLUMNS: &[&str] =
    &["window_ns", "ps", "sigma_ps", "pe", "sigma_pe", "threshold"];
pub const DIFFERENCE_COLUMNS: &[&str] = &["window_ns", "difference", "sigma", "significance"];
pub const BOUNDARY_COLUMNS: &[&str] = &["kind", "transmissivity", "pe", "ps"];
pub const RABI_COLUMNS: &[&str] = &["power_ratio", "pulse_area_rad", "prep_prob"];
pub const DENSITY_COLUMNS: &[&str] = &["row", "col", "real", "imag"];
pub const CHSH_COLUMNS: &[&str] = &["setting", "correlator", "sigma"];

fn depth_cell(d: Depth) -> String {
    match d {
        Depth::Finite(db) => db.to_string(),
        Depth::Unbounded => "inf".into(),
    }
}

fn rate_and_depth_tables(
    tables: &[PulseClickTable],
    herald: Option<Arm>,
    bs_ratio: f64,
    names: (&'static str, &'static str),
) -> CliResult<(Table, Table)> {
    let mut rates = Table::new(names.0, RATE_COLUMNS);
    let mut depths = Table::new(names.1, SPS_COLUMNS);
    for t in tables {
        let w = window_label_ns(t.window_ps);
        let c = match hbt_counts(t, Arm::X, herald) {
            Ok(c) => c,
            Err(qngpair::Error::NoHeralds) => continue,
            Err(e) => return Err(e.into()),
        };
        rates.push([
            w.clone(),
            c.n.to_string(),
            c.r1a.to_string(),
            c.r1b.to_string(),
            (c.r1a + c.r1b).to_string(),
            c.r2.to_string(),
        ]);
        let est = photon_stats(&c, bs_ratio, SinglesMode::Inclusive)?;
        let (depth, sigma) = match sps_depth(&est.stats) {
            Ok(d) => (depth_cell(d.depth), d.sigma_db.to_string()),
            Err(qngpair::Error::NoSinglePhotonSignal) => (String::new(), String::new()),
            Err(e) => return Err(e.into()),
        };
        depths.push([
            w,
            est.stats.p1.to_string(),
            est.stats.p2plus.to_string(),
            depth,
            sigma,
        ]);
    }
    Ok((rates, depths))
}

fn rabi_table(source: &SourceConfig) -> CliResult<Table> {
    let mut t = Table::new("fig1b_rabi", RABI_COLUMNS);
    let damping = match source {
        SourceConfig::Qd(q) => q.rabi_damping,
        SourceConfig::Spdc(_) => return Ok(t),
    };
    for i in 0..=100 {
        let ratio = 4.0 * i as f64 / 100.0;
        let area = qngpair::simulator::power_ratio_to_area(ratio)?;
        t.push([ratio, area, rabi_preparation_probability(area, damping)?]);
    }
    Ok(t)
}

fn density_table(rho: &DensityMatrix) -> Table {
    let mut t = Table::new("fig1c_density", DENSITY_COLUMNS);
    let (re, im) = (rho.real_part(), rho.imag_part());
    for i in 0..4 {
        for j in 0..4 {
            t.push([
                i.to_string(),
                j.to_string(),
                re[i][j].to_string(),
                im[i][j].to_string(),
            ]);
        }
    }
    t
}

fn chsh_table(r: &ChshResult) -> Table {
    let mut t = Table::new("fig1d_chsh", CHSH_COLUMNS);
    for (k, c) in r.correlators.iter().enumerate() {
        t.push([k.to_string(), c.value.to_string(), c.sigma.to_string()]);
    }
    t
}

fn boundary_table(measured: &PairClickStats) -> CliResult<Table> {
    let mut t = Table::new("fig3g_boundary", BOUNDARY_COLUMNS);
    let lo = if measured.pe > 0.0 {
        (measured.pe * 1e-4).min(1e-10)
    } else {
        1e-12
    };
    for pe in log_grid(lo, 1e-2, 200) {
        t.push([
            "boundary".to_string(),
            String::new(),
            pe.to_string(),
            pair_threshold(pe)?.to_string(),
        ]);
    }
    t.push([
        "measured".to_string(),
        "1".to_string(),
        measured.pe.to_string(),
        measured.ps.to_string(),
    ]);
    let curve = depth_curve(measured, &log_grid(1e-2, 1.0, 100))?;
    for p in &curve.points {
        t.push([
            "trajectory".to_string(),
            p.transmissivity.to_string(),
            p.pe.to_string(),
            p.ps.to_string(),
        ]);
    }
    if let Some(c) = curve.critical {
        t.push([
            "critical".to_string(),
            c.transmissivity.to_string(),
            c.pe.to_string(),
            c.ps.to_string(),
        ]);
    }
    Ok(t)
}

fn write_all(dir: &Path, tables: &[(&str, &Table)]) -> CliResult<()> {
    for (file, table) in tables {
        table.write(Some(&dir.join(file)))?;
    }
    Ok(())
}

fn histogram(
    stream: &TimeTagStream,
    a: Arm,
    b: Option<Arm>,
    bin: u64,
    range: u64,
) -> CliResult<CorrelationHistogram> {
    let ra = arm_roles(a);
    let (ca, cb) = match b {
        Some(b) => (
            channels_for(stream, &ra)?,
            channels_for(stream, &arm_roles(b))?,
        ),
        None => (
            channels_for(stream, &ra[..1])?,
            channels_for(stream, &ra[1..])?,
        ),
    };
    Ok(correlation_histogram(
        stream.iter_ok(),
        &ca,
        &cb,
        bin,
        range,
    )?)
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let cfg = args.analysis.resolve()?;
    let stream = load_stream(&args.stream)?;
    require_photons(&stream)?;
    let offsets = resolve_offsets(&stream, &cfg)?;
    let a = &cfg.analysis;

    let arr = arrivals(&stream, offsets)?;
    let tables = window_sweep(&arr, &ns_list_ps(&a.windows_ns))?;
    let (r2b, d2c) =
        rate_and_depth_tables(&tables, None, a.bs_ratio, ("fig2b_rates", "fig2c_depth"))?;
    let (r2e, d2f) = rate_and_depth_tables(
        &tables,
        Some(a.herald.unwrap_or(Arm::XX)),
        a.bs_ratio,
        ("fig2e_rates_heralded", "fig2f_depth_heralded"),
    )?;

    let mut t3e = Table::new("fig3e_success", SUCCESS_COLUMNS);
    let mut t3f = Table::new("fig3f_difference", DIFFERENCE_COLUMNS);
    let mut best: Option<(f64, PairClickStats, u64)> = None;
    for t in &tables {
        let w = window_label_ns(t.window_ps);
        let est = pair_click_stats(t, a.pe_aggregation)?;
        let rep = pair_report(&est.stats)?;
        let s = est.stats;
        t3e.push([
            w.clone(),
            s.ps.to_string(),
            s.sigma_ps.to_string(),
            s.pe.to_string(),
            s.sigma_pe.to_string(),
            rep.threshold.to_string(),
        ]);
        let sigma = rep.significance.map(|z| rep.difference / z);
        t3f.push([
            w,
            rep.difference.to_string(),
            opt(sigma),
            opt(rep.significance),
        ]);
        let score = rep.significance.unwrap_or(rep.difference);
        if best.is_none_or(|(b, _, _)| score > b) {
            best = Some((score, s, t.window_ps));
        }
    }
    let (_, best_stats, best_window) = best.expect("window list is non-empty");
    let t3g = boundary_table(&best_stats)?;

    let period = stream.header.period_ps();
    let (bin, range) = (a.bin_ps, a.range_ps());
    let h3b = histogram(&stream, Arm::X, Some(Arm::XX), bin, range)?;
    let h3c = histogram(&stream, Arm::X, None, bin, range)?;
    let h3d = histogram(&stream, Arm::XX, None, bin, range)?;
    let g2 = |h: &CorrelationHistogram| {
        integrate_peaks(h, period, a.peak_window_ps(), a.n_side_peaks)
            .and_then(|p| g2_from_peaks(&p))
            .ok()
    };
    let prep = integrate_peaks(&h3b, period, a.peak_window_ps(), a.n_side_peaks)
        .and_then(|p| prep_report(&p))
        .ok();

    let state = match &cfg.source {
        SourceConfig::Qd(q) => q.state.density_matrix()?,
        SourceConfig::Spdc(_) => DensityMatrix::phi_plus(),
    };
    let rho = match &args.tomography_counts {
        Some(p) => tomography_reconstruct(&read_tomography_counts(p)?)?.rho,
        None => state.clone(),
    };
    let chsh = match &args.chsh_counts {
        Some(p) => chsh_from_counts(&read_chsh_counts(p)?)?,
        None => chsh_expectation(&state),
    };

    let mut t3b = histogram_table(&h3b);
    let mut t3c = histogram_table(&h3c);
    let mut t3d = histogram_table(&h3d);
    t3b.rename("fig3b_cross_correlation");
    t3c.rename("fig3c_g2_x");
    t3d.rename("fig3d_g2_xx");

    fs::create_dir_all(&args.out)?;
    write_all(
        &args.out,
        &[
            ("fig1b_rabi.csv", &rabi_table(&cfg.source)?),
            ("fig1c_density.csv", &density_table(&rho)),
            ("fig1d_chsh.csv", &chsh_table(&chsh)),
            ("fig2b_rates.csv", &r2b),
            ("fig2c_depth.csv", &d2c),
            ("fig2e_rates_heralded.csv", &r2e),
            ("fig2f_depth_heralded.csv", &d2f),
            ("fig3b_cross_correlation.csv", &t3b),
            ("fig3c_g2_x.csv", &t3c),
            ("fig3d_g2_xx.csv", &t3d),
            ("fig3e_success.csv", &t3e),
            ("fig3f_difference.csv", &t3f),
            ("fig3g_boundary.csv", &t3g),
        ],
    )?;
    let summary = json!({
        "schema_version": crate::common::SCHEMA_VERSION,
        "offsets_ps": offsets,
        "best_window_ns": best_window as f64 / 1000.0,
        "best_pair_report": pair_report(&best_stats)?,
        "g2_x": g2(&h3c),
        "g2_xx": g2(&h3d),
        "prep": prep,
        "chsh_s": chsh.s_value,
        "chsh_sigma": chsh.sigma_s,
        "tomography_from_counts": args.tomography_counts.is_some(),
    });
    fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    eprintln!("wrote report bundles to {}", args.out.display());
    Ok(())
}
