//! Physical quantities from click tables and peak areas, with Poisson
//! uncertainties.

use serde::{Deserialize, Serialize};

use crate::criteria::{PairClickStats, PeAggregation, PhotonNumberStats};
use crate::error::{Error, Result};
use crate::timetag::{Arm, PeakAreas, PulseClickTable, Role};

/// `-ln(0.05)`: 95 % one-sided upper limit on a Poisson mean after zero events.
pub const ZERO_COUNT_UPPER_95: f64 = 2.995_732_273_553_991;

const UNBALANCE_FLAG: f64 = 0.10;
const MULTIPHOTON_FLAG: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickCounts {
    pub r1a: u64,
    pub r1b: u64,
    pub r2: u64,
    /// Pulses, or heralds when `heralded`.
    pub n: u64,
    pub heralded: bool,
}

impl ClickCounts {
    pub fn validate(&self) -> Result<()> {
        if self.r2 > self.r1a.min(self.r1b) || self.r1a > self.n || self.r1b > self.n {
            return Err(Error::InconsistentCounts(format!("{self:?}")));
        }
        Ok(())
    }
}

/// HBT counts for one arm, optionally restricted to pulses where the
/// `herald` arm clicked.
pub fn hbt_counts(table: &PulseClickTable, arm: Arm, herald: Option<Arm>) -> Result<ClickCounts> {
    let (a, b) = arm.roles();
    let (bit_a, bit_b) = (a.bit(), b.bit());
    let gate = herald.map_or(0, Arm::mask);
    let mut c = ClickCounts {
        r1a: 0,
        r1b: 0,
        r2: 0,
        n: if herald.is_some() { 0 } else { table.n_pulses },
        heralded: herald.is_some(),
    };
    for (_, mask) in &table.clicks {
        if herald.is_some() {
            if mask & gate == 0 {
                continue;
            }
            c.n += 1;
        }
        let (ca, cb) = (mask & bit_a != 0, mask & bit_b != 0);
        c.r1a += ca as u64;
        c.r1b += cb as u64;
        c.r2 += (ca && cb) as u64;
    }
    if herald.is_some() && c.n == 0 {
        return Err(Error::NoHeralds);
    }
    if c.n == 0 {
        return Err(Error::NoPulses);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinglesMode {
    /// `(r1a + r1b)/n` with doubles left in.
    #[default]
    Inclusive,
    /// Only trials where exactly one detector clicked.
    Exclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonStatsEstimate {
    pub stats: PhotonNumberStats,
    pub sigma_p0: f64,
    /// `2R(1−R)` differs from 1/2 by more than 10 %.
    pub unbalanced: bool,
    /// `P2+` large enough that neglected higher orders matter.
    pub high_multiphoton: bool,
}

pub fn photon_stats(
    counts: &ClickCounts,
    bs_ratio: f64,
    mode: SinglesMode,
) -> Result<PhotonStatsEstimate> {
    if !(bs_ratio > 0.0 && bs_ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "splitting ratio {bs_ratio} must lie strictly between 0 and 1"
        )));
    }
    counts.validate()?;
    let n = counts.n as f64;
    let split = 2.0 * bs_ratio * (1.0 - bs_ratio);
    let singles = match mode {
        SinglesMode::Inclusive => counts.r1a + counts.r1b,
        SinglesMode::Exclusive => counts.r1a + counts.r1b - 2 * counts.r2,
    };
    let p1 = singles as f64 / n;
    let p2plus = counts.r2 as f64 / (n * split);
    let p0 = 1.0 - p1 - p2plus;
    if p0 < -1e-12 {
        return Err(Error::InconsistentCounts(format!(
            "P1 + P2+ = {} exceeds one",
            p1 + p2plus
        )));
    }
    let sigma_p1 = (singles as f64).sqrt() / n;
    let sigma_p2plus = (counts.r2 as f64).sqrt() / (n * split);
    let stats = PhotonNumberStats {
        p0: p0.max(0.0),
        p1,
        p2plus,
        sigma_p1,
        sigma_p2plus,
        heralded: counts.heralded,
    };
    Ok(PhotonStatsEstimate {
        stats,
        sigma_p0: sigma_p1.hypot(sigma_p2plus),
        unbalanced: (split - 0.5).abs() > UNBALANCE_FLAG * 0.5,
        high_multiphoton: p2plus > MULTIPHOTON_FLAG,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub value: f64,
    pub sigma: f64,
    /// 95 % upper limit, reported when the zero peak is empty.
    pub upper_bound: Option<f64>,
    pub zero_peak: u64,
    pub side_mean: f64,
}

fn side_mean(peaks: &PeakAreas) -> Result<(f64, u64)> {
    if peaks.side_peaks.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two side peaks, got {}",
            peaks.side_peaks.len()
        )));
    }
    let sum = peaks.side_sum();
    Ok((sum as f64 / peaks.side_peaks.len() as f64, sum))
}

/// Zero-delay peak over the mean side peak.
pub fn g2_from_peaks(peaks: &PeakAreas) -> Result<G2Estimate> {
    let (mean, side_sum) = side_mean(peaks)?;
    if side_sum == 0 {
        return Err(Error::EmptySidePeaks);
    }
    let zero = peaks.zero_peak as f64;
    let value = zero / mean;
    let (sigma, upper_bound) = if peaks.zero_peak == 0 {
        (0.0, Some(ZERO_COUNT_UPPER_95 / mean))
    } else {
        (value * (1.0 / zero + 1.0 / side_sum as f64).sqrt(), None)
    };
    Ok(G2Estimate {
        value,
        sigma,
        upper_bound,
        zero_peak: peaks.zero_peak,
        side_mean: mean,
    })
}

/// Mean side peak over the zero-delay peak of the X–XX cross-correlation.
pub fn prep_efficiency(peaks: &PeakAreas) -> Result<Estimate> {
    let (mean, side_sum) = side_mean(peaks)?;
    if peaks.zero_peak == 0 {
        return Err(Error::EmptyZeroPeak);
    }
    let zero = peaks.zero_peak as f64;
    let value = mean / zero;
    let rel = if side_sum == 0 {
        1.0 / zero.sqrt()
    } else {
        (1.0 / zero + 1.0 / side_sum as f64).sqrt()
    };
    Ok(Estimate {
        value,
        sigma: value * rel,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub near: Estimate,
    /// From peaks 20..40, where blinking correlations have decayed.
    pub far: Option<Estimate>,
    pub far_over_near: Option<f64>,
}

/// Preparation efficiency from near peaks `|k| ≤ 5` with the far-peak
/// blinking diagnostic when the peaks reach far enough.
pub fn prep_report(peaks: &PeakAreas) -> Result<PrepReport> {
    let near = prep_efficiency(&peaks.select(1, 5))?;
    let far_peaks = peaks.select(20, 40);
    let far = if far_peaks.side_peaks.len() >= 2 {
        Some(prep_efficiency(&far_peaks)?)
    } else {
        None
    };
    Ok(PrepReport {
        near,
        far,
        far_over_near: far.map(|f| f.value / near.value),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub n_pulses: u64,
    /// `cross[i][j]`: pulses where X detector `i+1` and XX detector `j+1` clicked.
    pub cross: [[u64; 2]; 2],
    pub x_double: u64,
    pub xx_double: u64,
    pub any_x_any_xx: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairClickEstimate {
    pub stats: PairClickStats,
    pub pe_x: Estimate,
    pub pe_xx: Estimate,
    pub any_x_any_xx: Estimate,
    pub counts: PairCounts,
}

pub fn pair_counts(table: &PulseClickTable) -> PairCounts {
    let mut c = PairCounts {
        n_pulses: table.n_pulses,
        cross: [[0; 2]; 2],
        x_double: 0,
        xx_double: 0,
        any_x_any_xx: 0,
    };
    let x = [Role::X1.bit(), Role::X2.bit()];
    let xx = [Role::XX1.bit(), Role::XX2.bit()];
    for (_, mask) in &table.clicks {
        for i in 0..2 {
            for j in 0..2 {
                c.cross[i][j] += (mask & x[i] != 0 && mask & xx[j] != 0) as u64;
            }
        }
        c.x_double += (mask & Arm::X.mask() == Arm::X.mask()) as u64;
        c.xx_double += (mask & Arm::XX.mask() == Arm::XX.mask()) as u64;
        c.any_x_any_xx += (mask & Arm::X.mask() != 0 && mask & Arm::XX.mask() != 0) as u64;
    }
    c
}

fn rate(count: u64, n: f64) -> Estimate {
    Estimate {
        value: count as f64 / n,
        sigma: (count as f64).sqrt() / n,
    }
}

/// `P_s` as the mean of the four cross-detector coincidence rates and
/// `P_e` from the per-arm double clicks combined by `aggregation`.
pub fn pair_click_stats(
    table: &PulseClickTable,
    aggregation: PeAggregation,
) -> Result<PairClickEstimate> {
    if table.n_pulses == 0 {
        return Err(Error::NoPulses);
    }
    let counts = pair_counts(table);
    let n = table.n_pulses as f64;
    let cross: u64 = counts.cross.iter().flatten().sum();
    let pe_x = rate(counts.x_double, n);
    let pe_xx = rate(counts.xx_double, n);
    let doubles = (counts.x_double + counts.xx_double) as f64;
    let (pe, sigma_pe) = match aggregation {
        PeAggregation::Mean => (doubles / (2.0 * n), doubles.sqrt() / (2.0 * n)),
        PeAggregation::Sum => (doubles / n, doubles.sqrt() / n),
        PeAggregation::Max => {
            if pe_x.value >= pe_xx.value {
                (pe_x.value, pe_x.sigma)
            } else {
                (pe_xx.value, pe_xx.sigma)
            }
        }
    };
    Ok(PairClickEstimate {
        stats: PairClickStats {
            ps: cross as f64 / (4.0 * n),
            pe,
            sigma_ps: (cross as f64).sqrt() / (4.0 * n),
            sigma_pe,
            n_pulses: table.n_pulses,
        },
        pe_x,
        pe_xx,
        any_x_any_xx: rate(counts.any_x_any_xx, n),
        counts,
    })
}

/// Per-window rates for one arm plus the pair probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window_ps: u64,
    pub n_pulses: u64,
    pub r1a: u64,
    pub r1b: u64,
    pub r2: u64,
    pub singles_rate: f64,
    pub doubles_rate: f64,
    pub ps: f64,
    pub sigma_ps: f64,
    pub pe: f64,
    pub sigma_pe: f64,
}

pub fn sweep_row(table: &PulseClickTable, arm: Arm, herald: Option<Arm>) -> Result<SweepRow> {
    let c = hbt_counts(table, arm, herald)?;
    let pairs = pair_click_stats(table, PeAggregation::Mean)?;
    let n = c.n as f64;
    Ok(SweepRow {
        window_ps: table.window_ps,
        n_pulses: c.n,
        r1a: c.r1a,
        r1b: c.r1b,
        r2: c.r2,
        singles_rate: (c.r1a + c.r1b) as f64 / n,
        doubles_rate: c.r2 as f64 / n,
        ps: pairs.stats.ps,
        sigma_ps: pairs.stats.sigma_ps,
        pe: pairs.stats.pe,
        sigma_pe: pairs.stats.sigma_pe,
    })
}
