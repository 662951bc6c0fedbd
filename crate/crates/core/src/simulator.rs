//! Monte Carlo time-tag generation for a pulsed biexciton–exciton cascade
//! or an SPDC pair source.
//!
//! Pulses are processed in fixed chunks, each with its own ChaCha stream
//! derived from the seed and the chunk index, so the output does not depend
//! on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::polarization::{DensityMatrix, MeasurementSetting, PolarizationSampler};
use crate::timetag::{Role, StreamHeader, TimeTag, TimeTagStream};

/// Reduced Planck constant in µeV·ps.
pub const HBAR_UEV_PS: f64 = 658.211_956_9;

pub const DEFAULT_REP_RATE_HZ: f64 = 75.84e6;
pub const DEFAULT_TAU_XX_PS: f64 = 120.0;
pub const DEFAULT_TAU_X_PS: f64 = 230.0;
pub const DEFAULT_T0_PS: u64 = 100_000;

const CHUNK_PULSES: u64 = 1 << 16;

/// `sin²(area/2)·exp(−damping·area)`.
pub fn rabi_preparation_probability(area_rad: f64, damping: f64) -> Result<f64> {
    if !(area_rad >= 0.0) || !(damping >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pulse area {area_rad} and damping {damping} must be non-negative"
        )));
    }
    Ok((area_rad / 2.0).sin().powi(2) * (-damping * area_rad).exp())
}

/// Pulse area for a power given relative to the π-pulse power.
pub fn power_ratio_to_area(power_ratio: f64) -> Result<f64> {
    if !(power_ratio >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "power ratio {power_ratio} must be non-negative"
        )));
    }
    Ok(std::f64::consts::PI * power_ratio.sqrt())
}

/// Two-photon polarization state of the emitted pair.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairState {
    #[default]
    PhiPlus,
    Werner {
        p: f64,
    },
    Matrix {
        real: [[f64; 4]; 4],
        imag: [[f64; 4]; 4],
    },
}

impl PairState {
    pub fn density_matrix(&self) -> Result<DensityMatrix> {
        match self {
            PairState::PhiPlus => Ok(DensityMatrix::phi_plus()),
            PairState::Werner { p } => DensityMatrix::werner(*p),
            PairState::Matrix { real, imag } => DensityMatrix::from_parts(real, imag),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QdSourceConfig {
    pub rep_rate_hz: f64,
    pub pulse_area_rad: Option<f64>,
    /// Excitation power over the π-pulse power; used when no area is given.
    pub power_ratio: Option<f64>,
    pub rabi_damping: f64,
    /// Direct preparation probability, bypassing the Rabi model.
    pub prep_prob: Option<f64>,
    pub tau_xx_ps: f64,
    pub tau_x_ps: f64,
    pub blink_on_prob: f64,
    pub blink_switch_prob: f64,
    pub state: PairState,
    pub fss_uev: f64,
    pub eps_x: f64,
    pub eps_xx: f64,
}

impl Default for QdSourceConfig {
    fn default() -> Self {
        Self {
            rep_rate_hz: DEFAULT_REP_RATE_HZ,
            pulse_area_rad: None,
            power_ratio: None,
            rabi_damping: 0.0,
            prep_prob: None,
            tau_xx_ps: DEFAULT_TAU_XX_PS,
            tau_x_ps: DEFAULT_TAU_X_PS,
            blink_on_prob: 1.0,
            blink_switch_prob: 0.0,
            state: PairState::PhiPlus,
            fss_uev: 0.0,
            eps_x: 0.0,
            eps_xx: 0.0,
        }
    }
}

impl QdSourceConfig {
    pub fn preparation_probability(&self) -> Result<f64> {
        if let Some(p) = self.prep_prob {
            check_probability("prep_prob", p)?;
            return Ok(p);
        }
        let area = match (self.pulse_area_rad, self.power_ratio) {
            (Some(a), None) => a,
            (None, Some(r)) => power_ratio_to_area(r)?,
            (None, None) => std::f64::consts::PI,
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either pulse_area_rad or power_ratio, not both".into(),
                ))
            }
        };
        rabi_preparation_probability(area, self.rabi_damping)
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.rep_rate_hz)?;
        self.preparation_probability()?;
        check_positive("tau_xx_ps", self.tau_xx_ps)?;
        check_positive("tau_x_ps", self.tau_x_ps)?;
        check_probability("blink_on_prob", self.blink_on_prob)?;
        check_probability("blink_switch_prob", self.blink_switch_prob)?;
        check_probability("eps_x", self.eps_x)?;
        check_probability("eps_xx", self.eps_xx)?;
        if !self.fss_uev.is_finite() {
            return Err(Error::InvalidParameter("fss_uev must be finite".into()));
        }
        self.state.density_matrix()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpdcSourceConfig {
    pub mu: f64,
    /// Number of modes; `None` means Poissonian (infinitely many modes).
    pub modes: Option<f64>,
    pub rep_rate_hz: f64,
    pub tau_ps: f64,
}

impl Default for SpdcSourceConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            modes: Some(1.0),
            rep_rate_hz: DEFAULT_REP_RATE_HZ,
            tau_ps: 50.0,
        }
    }
}

impl SpdcSourceConfig {
    pub fn validate(&self) -> Result<()> {
        check_rate(self.rep_rate_hz)?;
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mu = {} must be >= 0",
                self.mu
            )));
        }
        if let Some(k) = self.modes {
            if !(k >= 1.0) {
                return Err(Error::InvalidParameter(format!("modes = {k} must be >= 1")));
            }
        }
        check_positive("tau_ps", self.tau_ps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub jitter_sigma_ps: f64,
    pub dead_time_ps: u64,
    /// Fixed cable and electronics delay.
    pub delay_ps: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            jitter_sigma_ps: 0.0,
            dead_time_ps: 0,
            delay_ps: 0.0,
        }
    }
}

impl DetectorConfig {
    fn validate(&self, name: &str) -> Result<()> {
        check_probability(&format!("{name}.efficiency"), self.efficiency)?;
        for (field, v) in [
            ("dark_rate_hz", self.dark_rate_hz),
            ("jitter_sigma_ps", self.jitter_sigma_ps),
            ("delay_ps", self.delay_ps),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name}.{field} = {v} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyncMode {
    /// Pulse times follow from the header clock; no sync tags.
    Implicit,
    /// One sync tag every `divider` pulses.
    Tags { divider: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub x1: DetectorConfig,
    pub x2: DetectorConfig,
    pub xx1: DetectorConfig,
    pub xx2: DetectorConfig,
    /// Fraction of X-arm light sent to detector X1.
    pub bs_ratio_x: f64,
    pub bs_ratio_xx: f64,
    /// Channel ids for sync, X1, X2, XX1, XX2.
    pub channel_ids: [u8; 5],
    pub sync: SyncMode,
    pub t0_ps: u64,
    /// Polarization analyzer axis in front of each arm's detector pair;
    /// outcome +1 goes to detector 1.
    pub analyzer_x: Option<[f64; 3]>,
    pub analyzer_xx: Option<[f64; 3]>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            x1: DetectorConfig::default(),
            x2: DetectorConfig::default(),
            xx1: DetectorConfig::default(),
            xx2: DetectorConfig::default(),
            bs_ratio_x: 0.5,
            bs_ratio_xx: 0.5,
            channel_ids: [0, 1, 2, 3, 4],
            sync: SyncMode::Tags { divider: 1 },
            t0_ps: DEFAULT_T0_PS,
            analyzer_x: None,
            analyzer_xx: None,
        }
    }
}

impl ChannelConfig {
    /// Identical detectors of efficiency `eta` and a balanced split in each arm.
    pub fn uniform(eta: f64, dark_rate_hz: f64) -> Self {
        let det = DetectorConfig {
            efficiency: eta,
            dark_rate_hz,
            ..DetectorConfig::default()
        };
        Self {
            x1: det,
            x2: det,
            xx1: det,
            xx2: det,
            ..Self::default()
        }
    }

    pub fn detectors(&self) -> [&DetectorConfig; 4] {
        [&self.x1, &self.x2, &self.xx1, &self.xx2]
    }

    pub fn detectors_mut(&mut self) -> [&mut DetectorConfig; 4] {
        [&mut self.x1, &mut self.x2, &mut self.xx1, &mut self.xx2]
    }

    pub fn validate(&self) -> Result<()> {
        for (det, role) in self.detectors().iter().zip(Role::PHOTONS) {
            det.validate(role.name())?;
        }
        check_probability("bs_ratio_x", self.bs_ratio_x)?;
        check_probability("bs_ratio_xx", self.bs_ratio_xx)?;
        if let SyncMode::Tags { divider: 0 } = self.sync {
            return Err(Error::InvalidParameter("sync divider must be >= 1".into()));
        }
        for axis in [self.analyzer_x, self.analyzer_xx].into_iter().flatten() {
            MeasurementSetting::new(axis)?;
        }
        self.header(1.0, 1)?;
        Ok(())
    }

    fn header(&self, rep_rate_hz: f64, n_pulses: u64) -> Result<StreamHeader> {
        let mut header = StreamHeader::new(rep_rate_hz)?;
        header.t0_ps = self.t0_ps;
        header.pulse_count = n_pulses;
        let roles = [Role::Sync, Role::X1, Role::X2, Role::XX1, Role::XX2];
        match self.sync {
            SyncMode::Implicit => {
                header.implicit_sync = true;
                header.channels = roles[1..]
                    .iter()
                    .zip(&self.channel_ids[1..])
                    .map(|(r, c)| (*r, *c))
                    .collect();
            }
            SyncMode::Tags { divider } => {
                header.sync_divider = divider;
                header.channels = roles
                    .iter()
                    .zip(&self.channel_ids)
                    .map(|(r, c)| (*r, *c))
                    .collect();
            }
        }
        header.validate()?;
        Ok(header)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "repetition rate {rate} must be > 0"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")));
    }
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn counter_uniform(key: u64, counter: u64) -> f64 {
    let bits = splitmix64(key ^ splitmix64(counter));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Two-state telegraph process: each pulse the state is redrawn from
/// Bernoulli(`on_prob`) with probability `switch_prob`, otherwise kept.
#[derive(Debug, Clone, Copy)]
pub struct Blinking {
    key: u64,
    on_prob: f64,
    switch_prob: f64,
}

impl Blinking {
    pub fn new(seed: u64, on_prob: f64, switch_prob: f64) -> Self {
        Self {
            key: splitmix64(seed ^ 0xb11_4c1e),
            on_prob,
            switch_prob,
        }
    }

    fn always_on(&self) -> bool {
        self.on_prob >= 1.0
    }

    fn initial(&self) -> bool {
        counter_uniform(self.key, u64::MAX) < self.on_prob
    }

    /// State after pulse `k` given the state before it.
    fn step(&self, k: u64, state: bool) -> bool {
        if counter_uniform(self.key, 2 * k) < self.switch_prob {
            counter_uniform(self.key, 2 * k + 1) < self.on_prob
        } else {
            state
        }
    }

    /// State of the last redraw within `range`, if any.
    fn last_redraw(&self, range: std::ops::Range<u64>) -> Option<bool> {
        range
            .rev()
            .find(|k| counter_uniform(self.key, 2 * k) < self.switch_prob)
            .map(|k| counter_uniform(self.key, 2 * k + 1) < self.on_prob)
    }

    /// State entering each chunk.
    fn chunk_start_states(&self, n_pulses: u64) -> Vec<bool> {
        let chunks = n_pulses.div_ceil(CHUNK_PULSES);
        if self.always_on() {
            return vec![true; chunks as usize];
        }
        let last: Vec<Option<bool>> = (0..chunks)
            .into_par_iter()
            .map(|c| self.last_redraw(c * CHUNK_PULSES..((c + 1) * CHUNK_PULSES).min(n_pulses)))
            .collect();
        let mut states = Vec::with_capacity(chunks as usize);
        let mut state = self.initial();
        for l in last {
            states.push(state);
            if let Some(s) = l {
                state = s;
            }
        }
        states
    }

    /// Number of pulses in the bright state.
    pub fn on_count(&self, n_pulses: u64) -> u64 {
        if self.always_on() {
            return n_pulses;
        }
        let starts = self.chunk_start_states(n_pulses);
        starts
            .par_iter()
            .enumerate()
            .map(|(c, start)| {
                let c = c as u64;
                let mut state = *start;
                let mut on = 0;
                for k in c * CHUNK_PULSES..((c + 1) * CHUNK_PULSES).min(n_pulses) {
                    state = self.step(k, state);
                    on += state as u64;
                }
                on
            })
            .sum()
    }
}

/// A photon heading into one arm; `detector` is fixed when a polarization
/// analyzer already decided the output port.
#[derive(Clone, Copy)]
struct Photon {
    arm: usize,
    delay_ps: f64,
    detector: Option<usize>,
}

struct Chain {
    eff: [f64; 4],
    ratio: [f64; 2],
    delay: [f64; 4],
    jitter: [Option<Normal<f64>>; 4],
    dark: [f64; 4],
    channel: [u8; 4],
}

impl Chain {
    fn new(cfg: &ChannelConfig) -> Result<Self> {
        let dets = cfg.detectors();
        let mut jitter = [None; 4];
        for (j, d) in jitter.iter_mut().zip(dets) {
            if d.jitter_sigma_ps > 0.0 {
                *j = Some(
                    Normal::new(0.0, d.jitter_sigma_ps)
                        .map_err(|e| Error::InvalidParameter(e.to_string()))?,
                );
            }
        }
        Ok(Self {
            eff: dets.map(|d| d.efficiency),
            ratio: [cfg.bs_ratio_x, cfg.bs_ratio_xx],
            delay: dets.map(|d| d.delay_ps),
            jitter,
            dark: dets.map(|d| d.dark_rate_hz),
            channel: [
                cfg.channel_ids[1],
                cfg.channel_ids[2],
                cfg.channel_ids[3],
                cfg.channel_ids[4],
            ],
        })
    }

    /// Routes and detects one photon with a single uniform draw.
    fn detect<R: Rng>(&self, photon: Photon, pulse_ps: u64, rng: &mut R, out: &mut Vec<TimeTag>) {
        let base = 2 * photon.arm;
        let u: f64 = rng.random();
        let det = match photon.detector {
            Some(d) => (u < self.eff[base + d]).then_some(base + d),
            None => {
                let p1 = self.ratio[photon.arm] * self.eff[base];
                let p2 = (1.0 - self.ratio[photon.arm]) * self.eff[base + 1];
                if u < p1 {
                    Some(base)
                } else if u < p1 + p2 {
                    Some(base + 1)
                } else {
                    None
                }
            }
        };
        if let Some(d) = det {
            let mut t = pulse_ps as f64 + photon.delay_ps + self.delay[d];
            if let Some(j) = &self.jitter[d] {
                t += j.sample(rng);
            }
            out.push(TimeTag::new(self.channel[d], t.round().max(0.0) as u64));
        }
    }

    fn dark_counts<R: Rng>(&self, start_ps: u64, end_ps: u64, rng: &mut R, out: &mut Vec<TimeTag>) {
        let span = (end_ps - start_ps) as f64;
        for d in 0..4 {
            let mean = self.dark[d] * span * 1e-12;
            if mean <= 0.0 {
                continue;
            }
            let n = Poisson::new(mean).expect("positive mean").sample(rng) as u64;
            for _ in 0..n {
                let t = start_ps + (rng.random::<f64>() * span) as u64;
                out.push(TimeTag::new(self.channel[d], t.min(end_ps - 1)));
            }
        }
    }
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Runs `per_pulse` over all pulses in deterministic chunks, adds dark
/// counts and sync tags, then sorts and applies dead time.
fn run_chunks<F>(
    header: StreamHeader,
    chain: &Chain,
    channels: &ChannelConfig,
    seed: u64,
    blinking: Option<&Blinking>,
    per_pulse: F,
) -> Result<TimeTagStream>
where
    F: Fn(u64, bool, &mut ChaCha8Rng, &mut Vec<TimeTag>) + Sync,
{
    let n_pulses = header.pulse_count;
    let chunks = n_pulses.div_ceil(CHUNK_PULSES);
    let sync_channel = header.channel_of(Role::Sync);
    let divider = header.sync_divider as u64;
    let starts = blinking.map(|b| b.chunk_start_states(n_pulses));
    let parts: Vec<Vec<TimeTag>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let mut out = Vec::new();
            let (first, last) = (c * CHUNK_PULSES, ((c + 1) * CHUNK_PULSES).min(n_pulses));
            let mut on = starts.as_ref().is_none_or(|s| s[c as usize]);
            for k in first..last {
                let t = header.pulse_time_ps(k);
                if let Some(ch) = sync_channel {
                    if k % divider == 0 {
                        out.push(TimeTag::new(ch, t));
                    }
                }
                if let Some(b) = blinking {
                    on = b.step(k, on);
                }
                per_pulse(t, on, &mut rng, &mut out);
            }
            chain.dark_counts(
                header.pulse_time_ps(first),
                header.pulse_time_ps(last),
                &mut rng,
                &mut out,
            );
            out
        })
        .collect();
    let mut tags: Vec<TimeTag> = Vec::with_capacity(parts.iter().map(Vec::len).sum());
    for p in parts {
        tags.extend(p);
    }
    tags.par_sort_unstable();
    apply_dead_time(&mut tags, channels);
    TimeTagStream::new(header, tags)
}

/// Non-paralyzable dead time per channel.
fn apply_dead_time(tags: &mut Vec<TimeTag>, cfg: &ChannelConfig) {
    let mut dead = [0u64; 256];
    for (det, ch) in cfg.detectors().iter().zip(&cfg.channel_ids[1..]) {
        dead[*ch as usize] = det.dead_time_ps;
    }
    if dead.iter().all(|d| *d == 0) {
        return;
    }
    let mut last: [Option<u64>; 256] = [None; 256];
    tags.retain(|t| {
        let ch = t.channel as usize;
        if dead[ch] == 0 {
            return true;
        }
        match last[ch] {
            Some(prev) if t.time_ps - prev < dead[ch] => false,
            _ => {
                last[ch] = Some(t.time_ps);
                true
            }
        }
    });
}

fn check_pulses(n_pulses: u64) -> Result<()> {
    if n_pulses == 0 {
        return Err(Error::InvalidParameter("n_pulses must be >= 1".into()));
    }
    Ok(())
}

pub fn simulate_qd(
    src: &QdSourceConfig,
    channels: &ChannelConfig,
    n_pulses: u64,
    seed: u64,
) -> Result<TimeTagStream> {
    check_pulses(n_pulses)?;
    src.validate()?;
    channels.validate()?;
    let header = channels.header(src.rep_rate_hz, n_pulses)?;
    let chain = Chain::new(channels)?;
    let prep = src.preparation_probability()?;
    let exp_xx =
        Exp::new(1.0 / src.tau_xx_ps).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let exp_x = Exp::new(1.0 / src.tau_x_ps).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let rho = src.state.density_matrix()?;
    let sampler = match (channels.analyzer_x, channels.analyzer_xx) {
        (None, None) => None,
        (ax, axx) => {
            let unit = |a: Option<[f64; 3]>| a.map(MeasurementSetting::new).transpose();
            let (sx, sxx) = (unit(ax)?, unit(axx)?);
            // a missing analyzer behaves as a plain splitter; use σ_z for sampling
            let z = MeasurementSetting::sigma_z();
            Some((
                PolarizationSampler::new(
                    &rho,
                    sx.as_ref().unwrap_or(&z),
                    sxx.as_ref().unwrap_or(&z),
                ),
                sx.is_some(),
                sxx.is_some(),
            ))
        }
    };
    let blinking = Blinking::new(seed, src.blink_on_prob, src.blink_switch_prob);
    let phase_rate = src.fss_uev / HBAR_UEV_PS;
    let port = |outcome: i8| if outcome > 0 { 0 } else { 1 };
    let unpolarized = |analyzed: bool, rng: &mut ChaCha8Rng| {
        analyzed.then(|| if rng.random::<bool>() { 0 } else { 1 })
    };

    let per_pulse = |t: u64, on: bool, rng: &mut ChaCha8Rng, out: &mut Vec<TimeTag>| {
        if on && rng.random::<f64>() < prep {
            let t_xx = exp_xx.sample(rng);
            let exciton = exp_x.sample(rng);
            let (mut dx, mut dxx) = (None, None);
            if let Some((s, ax, axx)) = &sampler {
                let (a, b) = s.sample(phase_rate * exciton, rng);
                if *ax {
                    dx = Some(port(a));
                }
                if *axx {
                    dxx = Some(port(b));
                }
            }
            chain.detect(
                Photon {
                    arm: 1,
                    delay_ps: t_xx,
                    detector: dxx,
                },
                t,
                rng,
                out,
            );
            chain.detect(
                Photon {
                    arm: 0,
                    delay_ps: t_xx + exciton,
                    detector: dx,
                },
                t,
                rng,
                out,
            );
        }
        if src.eps_x > 0.0 && rng.random::<f64>() < src.eps_x {
            let d = unpolarized(channels.analyzer_x.is_some(), rng);
            let delay = exp_x.sample(rng);
            chain.detect(
                Photon {
                    arm: 0,
                    delay_ps: delay,
                    detector: d,
                },
                t,
                rng,
                out,
            );
        }
        if src.eps_xx > 0.0 && rng.random::<f64>() < src.eps_xx {
            let d = unpolarized(channels.analyzer_xx.is_some(), rng);
            let delay = exp_xx.sample(rng);
            chain.detect(
                Photon {
                    arm: 1,
                    delay_ps: delay,
                    detector: d,
                },
                t,
                rng,
                out,
            );
        }
    };
    let blinking = (!blinking.always_on()).then_some(&blinking);
    run_chunks(header, &chain, channels, seed, blinking, per_pulse)
}

pub fn simulate_spdc(
    src: &SpdcSourceConfig,
    channels: &ChannelConfig,
    n_pulses: u64,
    seed: u64,
) -> Result<TimeTagStream> {
    check_pulses(n_pulses)?;
    src.validate()?;
    channels.validate()?;
    let header = channels.header(src.rep_rate_hz, n_pulses)?;
    let chain = Chain::new(channels)?;
    let emission =
        Exp::new(1.0 / src.tau_ps).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let gamma = match src.modes {
        Some(k) if src.mu > 0.0 => {
            Some(Gamma::new(k, src.mu / k).map_err(|e| Error::InvalidParameter(e.to_string()))?)
        }
        _ => None,
    };
    let poisson = (src.mu > 0.0)
        .then(|| Poisson::new(src.mu))
        .transpose()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    run_chunks(header, &chain, channels, seed, None, |t, _on, rng, out| {
        let n = match (&gamma, &poisson) {
            (Some(g), _) => {
                let lambda = g.sample(rng);
                if lambda > 0.0 {
                    Poisson::new(lambda)
                        .map(|p| p.sample(rng) as u64)
                        .unwrap_or(0)
                } else {
                    0
                }
            }
            (None, Some(p)) => p.sample(rng) as u64,
            (None, None) => 0,
        };
        for _ in 0..n {
            let delay = emission.sample(rng);
            chain.detect(
                Photon {
                    arm: 0,
                    delay_ps: delay,
                    detector: None,
                },
                t,
                rng,
                out,
            );
            chain.detect(
                Photon {
                    arm: 1,
                    delay_ps: delay,
                    detector: None,
                },
                t,
                rng,
                out,
            );
        }
    })
}

/// Keeps each tag on `channels` with probability `t`; sync tags always stay.
pub fn attenuate_stream(
    stream: &TimeTagStream,
    t: f64,
    channels: &[u8],
    seed: u64,
) -> Result<TimeTagStream> {
    check_probability("transmissivity", t)?;
    let mut selected = [false; 256];
    for ch in channels {
        selected[*ch as usize] = true;
    }
    if let Some(sync) = stream.header.channel_of(Role::Sync) {
        selected[sync as usize] = false;
    }
    let key = splitmix64(seed ^ 0xa77e_u64);
    let tags = stream
        .tags
        .iter()
        .enumerate()
        .filter(|(i, tag)| !selected[tag.channel as usize] || counter_uniform(key, *i as u64) < t)
        .map(|(_, tag)| *tag)
        .collect();
    TimeTagStream::new(stream.header.clone(), tags)
}

/// Photon channel ids of a stream header, in X1, X2, XX1, XX2 order.
pub fn photon_channels(header: &StreamHeader) -> Result<Vec<u8>> {
    Role::PHOTONS
        .iter()
        .map(|r| header.require_channel(*r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetag::fold_pulses;

    fn ideal() -> ChannelConfig {
        ChannelConfig::uniform(1.0, 0.0)
    }

    #[test]
    fn rabi_values() {
        assert!(
            (rabi_preparation_probability(std::f64::consts::PI, 0.0).unwrap() - 1.0).abs() < 1e-15
        );
        assert_eq!(rabi_preparation_probability(0.0, 0.3).unwrap(), 0.0);
        assert!(
            (rabi_preparation_probability(std::f64::consts::FRAC_PI_2, 0.0).unwrap() - 0.5).abs()
                < 1e-15
        );
        assert!(rabi_preparation_probability(-1.0, 0.0).is_err());
        assert!(rabi_preparation_probability(1.0, -0.1).is_err());
        assert!((power_ratio_to_area(1.0).unwrap() - std::f64::consts::PI).abs() < 1e-15);
        assert!((power_ratio_to_area(0.25).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn dark_chain_gives_only_sync() {
        let s = simulate_qd(
            &QdSourceConfig::default(),
            &ChannelConfig::uniform(0.0, 0.0),
            1000,
            1,
        )
        .unwrap();
        assert_eq!(s.tags.len(), 1000);
        assert!(s.tags.iter().all(|t| t.channel == 0));
    }

    #[test]
    fn ideal_cascade_ordering() {
        let src = QdSourceConfig {
            prep_prob: Some(1.0),
            ..QdSourceConfig::default()
        };
        let s = simulate_qd(&src, &ideal(), 5000, 2).unwrap();
        let h = &s.header;
        let mut x = vec![None; 5000];
        let mut xx = vec![None; 5000];
        for tag in &s.tags {
            let k = ((tag.time_ps + 1 - h.t0_ps) as f64 / h.period_ps()).floor() as usize;
            match h.role_of(tag.channel).unwrap() {
                Role::X1 | Role::X2 => {
                    assert!(x[k].replace(tag.time_ps).is_none());
                }
                Role::XX1 | Role::XX2 => {
                    assert!(xx[k].replace(tag.time_ps).is_none());
                }
                Role::Sync => {}
            }
        }
        for k in 0..5000 {
            // rounding to whole ps can merge the two times
            assert!(x[k].unwrap() >= xx[k].unwrap());
        }
    }

    #[test]
    fn spdc_vacuum_gives_only_sync() {
        let src = SpdcSourceConfig {
            mu: 0.0,
            ..SpdcSourceConfig::default()
        };
        let s = simulate_spdc(&src, &ideal(), 1000, 3).unwrap();
        assert!(s.tags.iter().all(|t| t.channel == 0));
    }

    #[test]
    fn deterministic_across_threads() {
        let src = QdSourceConfig {
            prep_prob: Some(0.8),
            eps_x: 0.01,
            blink_on_prob: 0.7,
            blink_switch_prob: 1e-3,
            ..QdSourceConfig::default()
        };
        let mut ch = ChannelConfig::uniform(0.3, 1e5);
        ch.x1.jitter_sigma_ps = 30.0;
        ch.xx2.dead_time_ps = 20_000;
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_qd(&src, &ch, 300_000, 9).unwrap())
        };
        assert_eq!(run(1), run(4));
        assert_ne!(
            run(1).tags,
            simulate_qd(&src, &ch, 300_000, 10).unwrap().tags
        );
    }

    #[test]
    fn dead_time_respected() {
        let src = QdSourceConfig {
            prep_prob: Some(1.0),
            ..QdSourceConfig::default()
        };
        let mut ch = ChannelConfig::uniform(1.0, 2e6);
        for d in ch.detectors_mut() {
            d.dead_time_ps = 40_000;
        }
        let s = simulate_qd(&src, &ch, 20_000, 4).unwrap();
        let mut last = [None::<u64>; 5];
        for tag in &s.tags {
            if tag.channel == 0 {
                continue;
            }
            if let Some(p) = last[tag.channel as usize] {
                assert!(tag.time_ps - p >= 40_000);
            }
            last[tag.channel as usize] = Some(tag.time_ps);
        }
    }

    #[test]
    fn blinking_stationary_fraction() {
        let n = 2_000_000;
        let b = Blinking::new(5, 0.6, 0.01);
        let on = b.on_count(n) as f64 / n as f64;
        // correlated samples: effective count is n * switch / (2 - switch)
        let n_eff = n as f64 * 0.01 / 1.99;
        let sigma = (0.6 * 0.4 / n_eff).sqrt();
        assert!((on - 0.6).abs() < 3.0 * sigma, "{on} vs 0.6 ± {sigma}");
    }

    #[test]
    fn attenuation_endpoints() {
        let src = QdSourceConfig {
            prep_prob: Some(0.9),
            ..QdSourceConfig::default()
        };
        let s = simulate_qd(&src, &ChannelConfig::uniform(0.5, 0.0), 10_000, 5).unwrap();
        let photons = photon_channels(&s.header).unwrap();
        assert_eq!(attenuate_stream(&s, 1.0, &photons, 1).unwrap(), s);
        let none = attenuate_stream(&s, 0.0, &photons, 1).unwrap();
        assert_eq!(none.tags.len(), 10_000);
        assert!(attenuate_stream(&s, 1.5, &photons, 1).is_err());
    }

    #[test]
    fn click_frequency_matches_efficiency() {
        let src = QdSourceConfig {
            prep_prob: Some(0.8),
            ..QdSourceConfig::default()
        };
        let eta = 0.3;
        let mut ch = ChannelConfig::uniform(eta, 0.0);
        ch.sync = SyncMode::Implicit;
        let n = 400_000;
        let s = simulate_qd(&src, &ch, n, 6).unwrap();
        let table = fold_pulses(&s.header, s.iter_ok(), 4000, [1500, 1500, 400, 400]).unwrap();
        let p = 0.8 * eta * 0.5;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        // a 4 ns window holds all but ~e^-8 of the emission tail
        let f = table.count_role(Role::XX1) as f64 / n as f64;
        assert!((f - p).abs() < 3.0 * sigma, "{f} vs {p}");
    }

    #[test]
    fn thermal_pair_number_ratio() {
        let mu = 0.05;
        let src = SpdcSourceConfig {
            mu,
            modes: Some(1.0),
            tau_ps: 10.0,
            ..SpdcSourceConfig::default()
        };
        // single-photon-resolving stand-in: efficiency 1 into one detector
        let mut ch = ChannelConfig::uniform(1.0, 0.0);
        ch.sync = SyncMode::Implicit;
        ch.bs_ratio_x = 0.5;
        let n = 2_000_000u64;
        let s = simulate_spdc(&src, &ch, n, 7).unwrap();
        let table = fold_pulses(&s.header, s.iter_ok(), 2000, [0; 4]).unwrap();
        // P(≥2 pairs)/P(≥1 pair) for thermal statistics is μ/(1+μ); both X
        // detectors fire with probability 1/2 for two photons
        let one = table.count_where(|m| m & 0b11 != 0) as f64;
        let both = table.count_all(0b11) as f64;
        let expected_one = mu / (1.0 + mu);
        let p2 = (mu / (1.0 + mu)).powi(2);
        let q = 1.0 / (1.0 + mu);
        // P(both | n) = 1 − 2^{1−n}, summed over the geometric law
        let expected_both: f64 = (2..200)
            .map(|k| q * (mu / (1.0 + mu)).powi(k) * (1.0 - 0.5f64.powi(k - 1)))
            .sum();
        let nf = n as f64;
        assert!((one / nf - expected_one).abs() < 3.0 * (expected_one / nf).sqrt());
        assert!((both / nf - expected_both).abs() < 3.0 * (expected_both / nf).sqrt());
        assert!(p2 > expected_both);
    }
}
