//! Quantum non-Gaussianity witnesses: the single-photon depth, the
//! coincidence threshold for photon pairs, its violation significance and
//! the depth of the coincidence criterion under symmetric loss.
//!
//! Loss with transmissivity `T` applied to both modes maps the pair
//! probabilities as `P_s -> P_s T^2`, `P_e -> P_e T^2`, and the single-photon
//! probabilities as `P1 -> P1 T`, `P2+ -> P2+ T^2` to leading order.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

const DB_PER_NEPER: f64 = 10.0 / std::f64::consts::LN_10;
const BISECTION_FLOOR: f64 = 1e-12;
const BISECTION_TOL: f64 = 1e-12;

/// How the two arms' same-mode double-click probabilities combine into `P_e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeAggregation {
    #[default]
    Mean,
    Sum,
    Max,
}

impl PeAggregation {
    pub fn combine(self, x: f64, xx: f64) -> f64 {
        match self {
            PeAggregation::Mean => 0.5 * (x + xx),
            PeAggregation::Sum => x + xx,
            PeAggregation::Max => x.max(xx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberStats {
    pub p0: f64,
    pub p1: f64,
    pub p2plus: f64,
    pub sigma_p1: f64,
    pub sigma_p2plus: f64,
    /// Normalized per herald rather than per pulse.
    pub heralded: bool,
}

impl PhotonNumberStats {
    /// Exact probabilities, `P0` implied.
    pub fn exact(p1: f64, p2plus: f64) -> Result<Self> {
        let s = Self {
            p0: 1.0 - p1 - p2plus,
            p1,
            p2plus,
            sigma_p1: 0.0,
            sigma_p2plus: 0.0,
            heralded: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("p0", self.p0)?;
        check_probability("p1", self.p1)?;
        check_probability("p2plus", self.p2plus)?;
        if (self.p0 + self.p1 + self.p2plus - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "photon-number probabilities sum to {}",
                self.p0 + self.p1 + self.p2plus
            )));
        }
        if self.sigma_p1 < 0.0 || self.sigma_p2plus < 0.0 {
            return Err(Error::InvalidParameter(
                "negative standard deviation".into(),
            ));
        }
        Ok(())
    }

    /// Probabilities after a loss channel of transmissivity `t`, keeping
    /// only the leading-order scaling.
    pub fn attenuated(&self, t: f64) -> Result<Self> {
        check_probability("transmissivity", t)?;
        let p1 = self.p1 * t;
        let p2plus = self.p2plus * t * t;
        Ok(Self {
            p0: 1.0 - p1 - p2plus,
            p1,
            p2plus,
            sigma_p1: self.sigma_p1 * t,
            sigma_p2plus: self.sigma_p2plus * t * t,
            heralded: self.heralded,
        })
    }
}

/// Depth in dB; `Unbounded` when no finite attenuation destroys the property.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depth {
    Finite(f64),
    Unbounded,
}

impl Depth {
    pub fn db(self) -> Option<f64> {
        match self {
            Depth::Finite(db) => Some(db),
            Depth::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Depth::Unbounded)
    }
}

impl std::fmt::Display for Depth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Depth::Finite(db) => write!(f, "{db:.3} dB"),
            Depth::Unbounded => f.write_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsDepth {
    pub depth: Depth,
    pub sigma_db: f64,
}

/// Single-photon depth `-10 log10(3 P2+ / (2 P1^3))` with delta-method σ.
pub fn sps_depth(stats: &PhotonNumberStats) -> Result<SpsDepth> {
    stats.validate()?;
    if stats.p1 <= 0.0 {
        return Err(Error::NoSinglePhotonSignal);
    }
    if stats.p2plus == 0.0 {
        return Ok(SpsDepth {
            depth: Depth::Unbounded,
            sigma_db: 0.0,
        });
    }
    let ratio = 3.0 * stats.p2plus / (2.0 * stats.p1.powi(3));
    let rel_p2 = stats.sigma_p2plus / stats.p2plus;
    let rel_p1 = 3.0 * stats.sigma_p1 / stats.p1;
    Ok(SpsDepth {
        depth: Depth::Finite(-10.0 * ratio.log10()),
        sigma_db: DB_PER_NEPER * (rel_p2 * rel_p2 + rel_p1 * rel_p1).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairClickStats {
    pub ps: f64,
    pub pe: f64,
    pub sigma_ps: f64,
    pub sigma_pe: f64,
    /// Zero for analytic probabilities.
    pub n_pulses: u64,
}

impl PairClickStats {
    pub fn analytic(ps: f64, pe: f64) -> Self {
        Self {
            ps,
            pe,
            sigma_ps: 0.0,
            sigma_pe: 0.0,
            n_pulses: 0,
        }
    }

    /// Counting statistics with σ = sqrt(p / N).
    pub fn poisson(ps: f64, pe: f64, n_pulses: u64) -> Self {
        let n = n_pulses as f64;
        Self {
            ps,
            pe,
            sigma_ps: (ps / n).sqrt(),
            sigma_pe: (pe / n).sqrt(),
            n_pulses,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("ps", self.ps)?;
        check_probability("pe", self.pe)?;
        if !(self.sigma_ps >= 0.0 && self.sigma_pe >= 0.0) {
            return Err(Error::InvalidParameter(
                "negative standard deviation".into(),
            ));
        }
        Ok(())
    }

    pub fn attenuated(&self, t: f64) -> Result<Self> {
        check_probability("transmissivity", t)?;
        let t2 = t * t;
        Ok(Self {
            ps: self.ps * t2,
            pe: self.pe * t2,
            sigma_ps: self.sigma_ps * t2,
            sigma_pe: self.sigma_pe * t2,
            n_pulses: self.n_pulses,
        })
    }
}

fn threshold_unchecked(pe: f64) -> f64 {
    let root = pe.sqrt();
    0.5 * root + 0.375 * pe + pe * root / 16.0
}

/// Largest success probability reachable by multimode Gaussian pair
/// sources at error probability `pe`.
pub fn pair_threshold(pe: f64) -> Result<f64> {
    check_probability("pe", pe)?;
    Ok(threshold_unchecked(pe))
}

/// d(threshold)/d(pe); infinite at `pe = 0`.
pub fn threshold_slope(pe: f64) -> f64 {
    let root = pe.sqrt();
    0.25 / root + 0.375 + 3.0 * root / 32.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairViolation {
    pub threshold: f64,
    /// `ps - threshold`; positive certifies non-Gaussian coincidences.
    pub difference: f64,
    /// `difference / σ`; `None` for exact probabilities.
    pub significance: Option<f64>,
    /// Set when `pe = 0` and the threshold was evaluated at `pe + σ_pe`.
    pub one_sided: bool,
}

impl PairViolation {
    pub fn certified(&self) -> bool {
        self.difference > 0.0
    }
}

pub fn pair_violation(stats: &PairClickStats) -> Result<PairViolation> {
    stats.validate()?;
    let threshold = threshold_unchecked(stats.pe);
    let difference = stats.ps - threshold;
    if stats.pe == 0.0 && stats.sigma_pe > 0.0 {
        // slope diverges at zero; use the one-sided upper bound on pe
        let bound = threshold_unchecked(stats.sigma_pe.min(1.0));
        let significance = if stats.sigma_ps > 0.0 {
            Some((stats.ps - bound) / stats.sigma_ps)
        } else {
            None
        };
        return Ok(PairViolation {
            threshold,
            difference,
            significance,
            one_sided: true,
        });
    }
    let sigma_thr = if stats.sigma_pe > 0.0 {
        threshold_slope(stats.pe) * stats.sigma_pe
    } else {
        0.0
    };
    let sigma = stats.sigma_ps.hypot(sigma_thr);
    Ok(PairViolation {
        threshold,
        difference,
        significance: (sigma > 0.0).then(|| difference / sigma),
        one_sided: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDepth {
    /// Closed form valid when `pe` is negligible.
    pub approx: Depth,
    /// Smallest transmissivity keeping the criterion violated.
    pub exact: Depth,
    pub sigma_db: f64,
    pub critical_transmissivity: f64,
}

fn margin_at(stats: &PairClickStats, t: f64) -> f64 {
    let t2 = t * t;
    stats.ps * t2 - threshold_unchecked(stats.pe * t2)
}

/// Depth of the coincidence criterion under symmetric loss.
pub fn pair_depth(stats: &PairClickStats) -> Result<PairDepth> {
    stats.validate()?;
    let threshold = threshold_unchecked(stats.pe);
    if stats.ps <= threshold {
        return Err(Error::NotViolated {
            ps: stats.ps,
            threshold,
        });
    }
    if stats.pe == 0.0 {
        return Ok(PairDepth {
            approx: Depth::Unbounded,
            exact: Depth::Unbounded,
            sigma_db: 0.0,
            critical_transmissivity: 0.0,
        });
    }

    let approx = -10.0 * (stats.pe.sqrt() / (2.0 * stats.ps)).log10();

    let (mut lo, mut hi) = (BISECTION_FLOOR, 1.0);
    let critical = if margin_at(stats, lo) >= 0.0 {
        // pe below ~1e-24: the crossing lies under the bracket floor
        lo
    } else {
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if margin_at(stats, mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let exact = -10.0 * critical.log10();

    let rel_ps = stats.sigma_ps / stats.ps;
    let rel_pe = 0.5 * stats.sigma_pe / stats.pe;
    Ok(PairDepth {
        approx: Depth::Finite(approx),
        exact: Depth::Finite(exact),
        sigma_db: DB_PER_NEPER * rel_ps.hypot(rel_pe),
        critical_transmissivity: critical,
    })
}

/// Everything the `certify pairs` report carries for one set of statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QngPairReport {
    pub ps: f64,
    pub pe: f64,
    pub threshold: f64,
    pub difference: f64,
    pub significance: Option<f64>,
    pub one_sided: bool,
    pub certified: bool,
    pub t_coin_db: Option<Depth>,
    pub t_coin_exact_db: Option<Depth>,
    pub t_coin_sigma_db: Option<f64>,
}

pub fn pair_report(stats: &PairClickStats) -> Result<QngPairReport> {
    let violation = pair_violation(stats)?;
    let depth = match pair_depth(stats) {
        Ok(d) => Some(d),
        Err(Error::NotViolated { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(QngPairReport {
        ps: stats.ps,
        pe: stats.pe,
        threshold: violation.threshold,
        difference: violation.difference,
        significance: violation.significance,
        one_sided: violation.one_sided,
        certified: violation.certified(),
        t_coin_db: depth.map(|d| d.approx),
        t_coin_exact_db: depth.map(|d| d.exact),
        t_coin_sigma_db: depth.map(|d| d.sigma_db),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub transmissivity: f64,
    pub pe: f64,
    pub ps: f64,
    pub critical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthCurve {
    pub points: Vec<CurvePoint>,
    /// Point at the exact depth, when the criterion is violated at `T = 1`.
    pub critical: Option<CurvePoint>,
}

/// Loss trajectory `(pe T^2, ps T^2)` over `t_grid`.
pub fn depth_curve(stats: &PairClickStats, t_grid: &[f64]) -> Result<DepthCurve> {
    stats.validate()?;
    let critical_t = match pair_depth(stats) {
        Ok(d) if d.exact.db().is_some() => Some(d.critical_transmissivity),
        Ok(_) | Err(Error::NotViolated { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "transmissivity {t} outside (0, 1]"
            )));
        }
        points.push(CurvePoint {
            transmissivity: t,
            pe: stats.pe * t * t,
            ps: stats.ps * t * t,
            critical: critical_t.is_some_and(|c| (c - t).abs() < 1e-12),
        });
    }
    let critical = critical_t.map(|t| CurvePoint {
        transmissivity: t,
        pe: stats.pe * t * t,
        ps: stats.ps * t * t,
        critical: true,
    });
    Ok(DepthCurve { points, critical })
}
