//! TOML run configuration. Unknown keys are rejected at every level.
//!
//! ```toml
//! seed = 7
//! pulses = 1000000
//!
//! [source]
//! kind = "qd"            # or "spdc"
//! prep_prob = 0.847
//! eps_x = 2.5e-4
//!
//! [chain]
//! sync = { mode = "implicit" }
//! [chain.x1]
//! efficiency = 0.05
//!
//! [analysis]
//! windows_ns = [0.12, 0.16, 0.28, 0.8]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::criteria::PeAggregation;
use crate::error::{Error, Result};
use crate::simulator::{ChannelConfig, QdSourceConfig, SpdcSourceConfig};
use crate::timetag::Arm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Qd(QdSourceConfig),
    Spdc(SpdcSourceConfig),
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Qd(QdSourceConfig::default())
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceConfig::Qd(q) => q.validate(),
            SourceConfig::Spdc(s) => s.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Coincidence windows for sweeps, ascending.
    pub windows_ns: Vec<f64>,
    /// Window for single-window analyses.
    pub window_ns: f64,
    /// Per-role arrival offsets (X1, X2, XX1, XX2); calibrated when absent.
    pub offsets_ps: Option<[i64; 4]>,
    pub offset_bin_ps: u64,
    pub bin_ps: u64,
    pub range_ns: f64,
    /// Integration width around each correlation peak.
    pub peak_window_ns: f64,
    pub n_side_peaks: usize,
    pub herald: Option<Arm>,
    pub bs_ratio: f64,
    pub pe_aggregation: PeAggregation,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            windows_ns: vec![0.12, 0.16, 0.28, 0.8],
            window_ns: 0.28,
            offsets_ps: None,
            offset_bin_ps: 4,
            bin_ps: 16,
            range_ns: 70.0,
            peak_window_ns: 6.0,
            n_side_peaks: 5,
            herald: None,
            bs_ratio: 0.5,
            pe_aggregation: PeAggregation::Mean,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows_ns.is_empty() || self.windows_ns.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config(
                "analysis.windows_ns must be non-empty and ascending".into(),
            ));
        }
        if self
            .windows_ns
            .iter()
            .chain([&self.window_ns])
            .any(|w| !(*w > 0.0))
        {
            return Err(Error::Config("coincidence windows must be positive".into()));
        }
        if self.bin_ps == 0 || self.offset_bin_ps == 0 {
            return Err(Error::Config("bin widths must be positive".into()));
        }
        if !(self.peak_window_ns > 0.0) {
            return Err(Error::Config(
                "analysis.peak_window_ns must be positive".into(),
            ));
        }
        if !(self.range_ns > 0.0) {
            return Err(Error::Config("analysis.range_ns must be positive".into()));
        }
        if !(self.bs_ratio > 0.0 && self.bs_ratio < 1.0) {
            return Err(Error::Config("analysis.bs_ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn window_ps(&self) -> u64 {
        ns_to_ps(self.window_ns)
    }

    pub fn peak_window_ps(&self) -> u64 {
        ns_to_ps(self.peak_window_ns)
    }

    pub fn windows_ps(&self) -> Vec<u64> {
        self.windows_ns.iter().map(|w| ns_to_ps(*w)).collect()
    }

    /// Histogram range rounded up to a whole number of bins.
    pub fn range_ps(&self) -> u64 {
        ns_to_ps(self.range_ns).div_ceil(self.bin_ps) * self.bin_ps
    }
}

pub fn ns_to_ps(ns: f64) -> u64 {
    (ns * 1000.0).round() as u64
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub stream: Option<PathBuf>,
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub pulses: u64,
    pub source: SourceConfig,
    pub chain: ChannelConfig,
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pulses: 1_000_000,
            source: SourceConfig::default(),
            chain: ChannelConfig::default(),
            analysis: AnalysisConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.pulses == 0 {
            return Err(Error::Config("pulses must be >= 1".into()));
        }
        self.source.validate()?;
        self.chain.validate()?;
        self.analysis.validate()
    }
}
