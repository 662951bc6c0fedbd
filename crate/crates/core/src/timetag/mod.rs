//! Time-tag streams, their on-disk formats and the coincidence engine.

mod coincidence;
mod format;

pub use coincidence::{
    calibrate_offsets, correlation_histogram, fold_pulses, integrate_peaks, pulse_arrivals,
    window_sweep, CorrelationHistogram, PeakAreas, PulseArrivals, PulseClickTable,
};
pub use format::{
    read_csv, read_stream, read_stream_all, write_csv, write_stream, StreamReader, StreamWriter,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"QTT1";
pub const FORMAT_VERSION: u16 = 1;

/// Detector role of a channel. Photon roles are indexed 0..4 in the order
/// X1, X2, XX1, XX2 wherever per-role arrays appear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sync,
    X1,
    X2,
    XX1,
    XX2,
}

impl Role {
    pub const PHOTONS: [Role; 4] = [Role::X1, Role::X2, Role::XX1, Role::XX2];

    pub fn code(self) -> u8 {
        match self {
            Role::Sync => 0,
            Role::X1 => 1,
            Role::X2 => 2,
            Role::XX1 => 3,
            Role::XX2 => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Role::Sync,
            1 => Role::X1,
            2 => Role::X2,
            3 => Role::XX1,
            4 => Role::XX2,
            other => return Err(Error::UnknownRole(other)),
        })
    }

    /// Index into per-photon-role arrays; `None` for sync.
    pub fn photon_index(self) -> Option<usize> {
        match self {
            Role::Sync => None,
            other => Some(other.code() as usize - 1),
        }
    }

    pub fn bit(self) -> u8 {
        self.photon_index().map_or(0, |i| 1 << i)
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Sync => "sync",
            Role::X1 => "x1",
            Role::X2 => "x2",
            Role::XX1 => "xx1",
            Role::XX2 => "xx2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sync" => Some(Role::Sync),
            "x1" => Some(Role::X1),
            "x2" => Some(Role::X2),
            "xx1" => Some(Role::XX1),
            "xx2" => Some(Role::XX2),
            _ => None,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One of the two analysis arms, each with a pair of detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    X,
    XX,
}

impl Arm {
    pub fn roles(self) -> (Role, Role) {
        match self {
            Arm::X => (Role::X1, Role::X2),
            Arm::XX => (Role::XX1, Role::XX2),
        }
    }

    pub fn mask(self) -> u8 {
        let (a, b) = self.roles();
        a.bit() | b.bit()
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::X => Arm::XX,
            Arm::XX => Arm::X,
        }
    }
}

/// Ordered by time, then channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub channel: u8,
    pub time_ps: u64,
}

impl Ord for TimeTag {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time_ps, self.channel).cmp(&(other.time_ps, other.channel))
    }
}

impl PartialOrd for TimeTag {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl TimeTag {
    pub fn new(channel: u8, time_ps: u64) -> Self {
        Self { channel, time_ps }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub version: u16,
    pub rep_rate_mhz: u64,
    /// Time of pulse 0 for implicit sync.
    pub t0_ps: u64,
    /// Number of pulses covered; 0 means "count the sync tags".
    pub pulse_count: u64,
    /// Pulses per sync tag.
    pub sync_divider: u32,
    pub implicit_sync: bool,
    pub channels: Vec<(Role, u8)>,
    pub tag_count: u64,
}

pub const DEFAULT_CHANNELS: [(Role, u8); 5] = [
    (Role::Sync, 0),
    (Role::X1, 1),
    (Role::X2, 2),
    (Role::XX1, 3),
    (Role::XX2, 4),
];

impl StreamHeader {
    pub fn new(rep_rate_hz: f64) -> Result<Self> {
        if !(rep_rate_hz > 0.0) || !rep_rate_hz.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "repetition rate {rep_rate_hz} Hz must be positive"
            )));
        }
        Ok(Self {
            version: FORMAT_VERSION,
            rep_rate_mhz: (rep_rate_hz * 1e3).round() as u64,
            t0_ps: 0,
            pulse_count: 0,
            sync_divider: 1,
            implicit_sync: false,
            channels: DEFAULT_CHANNELS.to_vec(),
            tag_count: 0,
        })
    }

    pub fn rep_rate_hz(&self) -> f64 {
        self.rep_rate_mhz as f64 * 1e-3
    }

    pub fn period_ps(&self) -> f64 {
        1e15 / self.rep_rate_mhz as f64
    }

    /// Nominal time of pulse `k` measured from pulse 0.
    pub fn pulse_delay_ps(&self, k: u64) -> u64 {
        ((k as u128 * 1_000_000_000_000_000u128) / self.rep_rate_mhz as u128) as u64
    }

    pub fn pulse_time_ps(&self, k: u64) -> u64 {
        self.t0_ps + self.pulse_delay_ps(k)
    }

    pub fn channel_of(&self, role: Role) -> Option<u8> {
        self.channels
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, c)| *c)
    }

    pub fn role_of(&self, channel: u8) -> Option<Role> {
        self.channels
            .iter()
            .find(|(_, c)| *c == channel)
            .map(|(r, _)| *r)
    }

    pub fn require_channel(&self, role: Role) -> Result<u8> {
        self.channel_of(role).ok_or(Error::MissingRole(role))
    }

    /// Lookup table from channel id to role.
    pub fn role_table(&self) -> [Option<Role>; 256] {
        let mut table = [None; 256];
        for (role, ch) in &self.channels {
            table[*ch as usize] = Some(*role);
        }
        table
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        if self.rep_rate_mhz == 0 {
            return Err(Error::InvalidParameter("repetition rate is zero".into()));
        }
        if self.sync_divider == 0 {
            return Err(Error::InvalidParameter("sync divider is zero".into()));
        }
        for (i, (role, ch)) in self.channels.iter().enumerate() {
            for (other_role, other_ch) in &self.channels[..i] {
                if role == other_role {
                    return Err(Error::DuplicateRole(*role));
                }
                if ch == other_ch {
                    return Err(Error::InvalidParameter(format!(
                        "channel {ch} assigned to both {other_role} and {role}"
                    )));
                }
            }
        }
        if !self.implicit_sync && self.channel_of(Role::Sync).is_none() {
            return Err(Error::MissingRole(Role::Sync));
        }
        Ok(())
    }
}

/// In-memory tag stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    pub header: StreamHeader,
    pub tags: Vec<TimeTag>,
}

impl TimeTagStream {
    pub fn new(mut header: StreamHeader, tags: Vec<TimeTag>) -> Result<Self> {
        header.validate()?;
        let roles = header.role_table();
        let mut prev = 0;
        for (i, tag) in tags.iter().enumerate() {
            if roles[tag.channel as usize].is_none() {
                return Err(Error::UnknownChannel(tag.channel));
            }
            if tag.time_ps < prev {
                return Err(Error::NonMonotoneTime {
                    index: i as u64,
                    prev_ps: prev,
                    time_ps: tag.time_ps,
                });
            }
            prev = tag.time_ps;
        }
        header.tag_count = tags.len() as u64;
        Ok(Self { header, tags })
    }

    pub fn iter_ok(&self) -> impl Iterator<Item = Result<TimeTag>> + '_ {
        self.tags.iter().copied().map(Ok)
    }

    pub fn count_channel(&self, channel: u8) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }
}
