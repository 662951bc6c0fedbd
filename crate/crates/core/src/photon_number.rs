//! Photon-number laws of Gaussian pair sources and the exact mapping of an
//! arbitrary joint photon-number law through a lossy four-detector chain.
//!
//! The chain has two arms (X and XX). Each arm ends on a beam splitter with
//! one threshold detector per output port. Photons are thinned independently
//! with the arm efficiency, routed by a Bernoulli trial at the splitter, and
//! each detector has an independent dark-click probability per window.

use serde::{Deserialize, Serialize};

use crate::criteria::{PairClickStats, PeAggregation};
use crate::error::{check_probability, Error, Result};

pub const DEFAULT_N_MAX: usize = 20;
pub const TAIL_TOLERANCE: f64 = 1e-9;

/// Truncated joint law over (signal, idler) photon numbers.
///
/// `probs` is row-major with `n_max + 1` columns: entry `n * (n_max + 1) + m`
/// is the probability of `n` photons in the X arm and `m` in the XX arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonPairDistribution {
    n_max: usize,
    probs: Vec<f64>,
    tail_mass: f64,
}

impl PhotonPairDistribution {
    pub fn from_joint(n_max: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != (n_max + 1) * (n_max + 1) {
            return Err(Error::InvalidParameter(format!(
                "joint law needs {} entries for n_max = {n_max}, got {}",
                (n_max + 1) * (n_max + 1),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0)) {
            return Err(Error::InvalidParameter(format!("negative probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        Ok(Self {
            n_max,
            probs,
            tail_mass: (1.0 - total).max(0.0),
        })
    }

    /// Perfectly correlated pairs: `pmf[n]` is the probability of `n` pairs.
    pub fn diagonal(pmf: &[f64]) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidParameter("empty photon-number law".into()));
        }
        let n_max = pmf.len() - 1;
        let mut probs = vec![0.0; (n_max + 1) * (n_max + 1)];
        for (n, p) in pmf.iter().enumerate() {
            probs[n * (n_max + 1) + n] = *p;
        }
        Self::from_joint(n_max, probs)
    }

    /// Cascade emitter: one photon in each arm with probability `prepared`,
    /// plus an independent extra photon per arm with probability `eps_x`,
    /// `eps_xx`.
    pub fn cascade(prepared: f64, eps_x: f64, eps_xx: f64) -> Result<Self> {
        check_probability("prepared", prepared)?;
        check_probability("eps_x", eps_x)?;
        check_probability("eps_xx", eps_xx)?;
        let mut probs = vec![0.0; 9];
        for c in 0..2usize {
            let pc = if c == 1 { prepared } else { 1.0 - prepared };
            for ex in 0..2usize {
                let px = if ex == 1 { eps_x } else { 1.0 - eps_x };
                for exx in 0..2usize {
                    let pxx = if exx == 1 { eps_xx } else { 1.0 - eps_xx };
                    probs[(c + ex) * 3 + (c + exx)] += pc * px * pxx;
                }
            }
        }
        Self::from_joint(2, probs)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn get(&self, n_signal: usize, n_idler: usize) -> f64 {
        if n_signal > self.n_max || n_idler > self.n_max {
            return 0.0;
        }
        self.probs[n_signal * (self.n_max + 1) + n_idler]
    }

    /// Probability mass lost to truncation.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        let w = self.n_max + 1;
        self.probs
            .iter()
            .enumerate()
            .all(|(i, p)| i / w == i % w || *p == 0.0)
    }

    pub fn signal_marginal(&self) -> Vec<f64> {
        let w = self.n_max + 1;
        self.probs.chunks(w).map(|row| row.iter().sum()).collect()
    }

    pub fn idler_marginal(&self) -> Vec<f64> {
        let w = self.n_max + 1;
        (0..w)
            .map(|m| (0..w).map(|n| self.probs[n * w + m]).sum())
            .collect()
    }

    fn check_normalized(&self) -> Result<()> {
        let total = self.total();
        if (total - 1.0).abs() > TAIL_TOLERANCE {
            return Err(Error::Unnormalized(total));
        }
        Ok(())
    }
}

/// Per-mode thermal law summed over `modes` identical modes: the negative
/// binomial with `modes` trials and per-mode mean `mu / modes`. `modes = 1`
/// is the Bose-Einstein law `mu^n / (1 + mu)^(n + 1)`.
pub fn multimode_pmf(mu: f64, modes: f64, n_max: usize) -> Result<Vec<f64>> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mean photon number {mu} must be >= 0"
        )));
    }
    if !(modes >= 1.0) || !modes.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mode count {modes} must be >= 1"
        )));
    }
    let per_mode = mu / modes;
    let ratio = per_mode / (1.0 + per_mode);
    let mut pmf = Vec::with_capacity(n_max + 1);
    // (1 + mu/K)^-K, evaluated through ln_1p for K up to 1e6 and beyond
    let mut p = (-modes * per_mode.ln_1p()).exp();
    for n in 0..=n_max {
        pmf.push(p);
        p *= (n as f64 + modes) / (n as f64 + 1.0) * ratio;
    }
    Ok(pmf)
}

/// Smallest truncation order whose tail mass is at most `tolerance`.
pub fn required_n_max(mu: f64, modes: f64, tolerance: f64) -> Result<usize> {
    let mut n_max = DEFAULT_N_MAX;
    loop {
        let pmf = multimode_pmf(mu, modes, n_max)?;
        let tail = 1.0 - pmf.iter().sum::<f64>();
        if tail <= tolerance {
            return Ok(n_max);
        }
        if n_max > 4096 {
            return Err(Error::TruncationTooSmall {
                n_max,
                tail,
                tolerance,
            });
        }
        n_max *= 2;
    }
}

/// Single-mode two-mode-squeezed-vacuum law on the diagonal.
pub fn tmsv_distribution(mu: f64, n_max: usize) -> Result<PhotonPairDistribution> {
    multimode_distribution(mu, 1.0, n_max)
}

/// `modes` independent identical two-mode-squeezed pairs with total mean
/// `mu_total` per arm.
pub fn multimode_distribution(
    mu_total: f64,
    modes: f64,
    n_max: usize,
) -> Result<PhotonPairDistribution> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be >= 1".into()));
    }
    let pmf = multimode_pmf(mu_total, modes, n_max)?;
    let tail = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
    if tail > TAIL_TOLERANCE {
        return Err(Error::TruncationTooSmall {
            n_max,
            tail,
            tolerance: TAIL_TOLERANCE,
        });
    }
    PhotonPairDistribution::diagonal(&pmf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionChainParams {
    pub eta_x: f64,
    pub eta_xx: f64,
    /// Transmission toward detector 1 of the X arm.
    pub bs_ratio_x: f64,
    pub bs_ratio_xx: f64,
    /// Per-detector dark-click probability within one coincidence window.
    pub dark_prob: f64,
}

impl DetectionChainParams {
    pub fn balanced(eta: f64, dark_prob: f64) -> Self {
        Self {
            eta_x: eta,
            eta_xx: eta,
            bs_ratio_x: 0.5,
            bs_ratio_xx: 0.5,
            dark_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("eta_x", self.eta_x)?;
        check_probability("eta_xx", self.eta_xx)?;
        check_probability("bs_ratio_x", self.bs_ratio_x)?;
        check_probability("bs_ratio_xx", self.bs_ratio_xx)?;
        check_probability("dark_prob", self.dark_prob)
    }
}

/// Exact per-window click probabilities of the four detectors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClickProbabilities {
    pub x1: f64,
    pub x2: f64,
    pub xx1: f64,
    pub xx2: f64,
    /// Both detectors of the X arm click.
    pub x_double: f64,
    pub xx_double: f64,
    /// `cross[i][j]`: X detector `i + 1` and XX detector `j + 1` both click.
    pub cross: [[f64; 2]; 2],
    /// At least one click in each arm.
    pub any_x_any_xx: f64,
}

impl ClickProbabilities {
    /// Mean of the four cross-detector coincidence probabilities.
    pub fn success(&self) -> f64 {
        self.cross.iter().flatten().sum::<f64>() / 4.0
    }

    pub fn error(&self, aggregation: PeAggregation) -> f64 {
        aggregation.combine(self.x_double, self.xx_double)
    }

    pub fn g2_x(&self) -> f64 {
        self.x_double / (self.x1 * self.x2)
    }

    pub fn g2_xx(&self) -> f64 {
        self.xx_double / (self.xx1 * self.xx2)
    }
}

struct ArmResponse {
    click_1: Vec<f64>,
    click_2: Vec<f64>,
    any: Vec<f64>,
    double: Vec<f64>,
}

fn arm_response(n_max: usize, eta: f64, ratio: f64, dark: f64) -> ArmResponse {
    let miss_1 = 1.0 - eta * ratio;
    let miss_2 = 1.0 - eta * (1.0 - ratio);
    let miss_both = 1.0 - eta;
    let quiet = 1.0 - dark;
    let mut r = ArmResponse {
        click_1: Vec::with_capacity(n_max + 1),
        click_2: Vec::with_capacity(n_max + 1),
        any: Vec::with_capacity(n_max + 1),
        double: Vec::with_capacity(n_max + 1),
    };
    for n in 0..=n_max {
        let n = n as i32;
        let none_1 = miss_1.powi(n) * quiet;
        let none_2 = miss_2.powi(n) * quiet;
        let none_both = miss_both.powi(n) * quiet * quiet;
        r.click_1.push(1.0 - none_1);
        r.click_2.push(1.0 - none_2);
        r.any.push(1.0 - none_both);
        r.double.push(1.0 - none_1 - none_2 + none_both);
    }
    r
}

/// Exhaustive enumeration of all click probabilities for `dist` through `chain`.
pub fn detected_click_probabilities(
    dist: &PhotonPairDistribution,
    chain: &DetectionChainParams,
) -> Result<ClickProbabilities> {
    chain.validate()?;
    dist.check_normalized()?;
    let n_max = dist.n_max;
    let x = arm_response(n_max, chain.eta_x, chain.bs_ratio_x, chain.dark_prob);
    let xx = arm_response(n_max, chain.eta_xx, chain.bs_ratio_xx, chain.dark_prob);
    let mut out = ClickProbabilities::default();
    for n in 0..=n_max {
        for m in 0..=n_max {
            let p = dist.get(n, m);
            if p == 0.0 {
                continue;
            }
            out.x1 += p * x.click_1[n];
            out.x2 += p * x.click_2[n];
            out.xx1 += p * xx.click_1[m];
            out.xx2 += p * xx.click_2[m];
            out.x_double += p * x.double[n];
            out.xx_double += p * xx.double[m];
            out.cross[0][0] += p * x.click_1[n] * xx.click_1[m];
            out.cross[0][1] += p * x.click_1[n] * xx.click_2[m];
            out.cross[1][0] += p * x.click_2[n] * xx.click_1[m];
            out.cross[1][1] += p * x.click_2[n] * xx.click_2[m];
            out.any_x_any_xx += p * x.any[n] * xx.any[m];
        }
    }
    Ok(out)
}

/// Exact `(P_s, P_e)` with arm-averaged error probability; σ fields are zero.
pub fn detected_pair_click_probs(
    dist: &PhotonPairDistribution,
    chain: &DetectionChainParams,
) -> Result<PairClickStats> {
    let probs = detected_click_probabilities(dist, chain)?;
    Ok(PairClickStats::analytic(
        probs.success(),
        probs.error(PeAggregation::Mean),
    ))
}

/// One row of the Gaussian-source oracle grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleRow {
    pub mu: f64,
    pub modes: f64,
    pub eta: f64,
    pub dark_prob: f64,
    pub ps: f64,
    pub pe: f64,
    pub pe_x: f64,
    pub pe_xx: f64,
    pub threshold: f64,
    /// `threshold - ps`; non-negative when the criterion is respected.
    pub margin: f64,
}

pub fn oracle_row(mu: f64, modes: f64, eta: f64, dark_prob: f64) -> Result<OracleRow> {
    let n_max = required_n_max(mu, modes, TAIL_TOLERANCE)?;
    let dist = multimode_distribution(mu, modes, n_max)?;
    let chain = DetectionChainParams::balanced(eta, dark_prob);
    let probs = detected_click_probabilities(&dist, &chain)?;
    let ps = probs.success();
    let pe = probs.error(PeAggregation::Mean);
    let threshold = crate::criteria::pair_threshold(pe)?;
    Ok(OracleRow {
        mu,
        modes,
        eta,
        dark_prob,
        ps,
        pe,
        pe_x: probs.x_double,
        pe_xx: probs.xx_double,
        threshold,
        margin: threshold - ps,
    })
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}
