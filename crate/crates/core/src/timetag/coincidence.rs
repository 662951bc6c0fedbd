use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Role, StreamHeader, TimeTag};
use crate::error::{Error, Result};

const NO_ARRIVAL: u64 = u64::MAX;
const PS_PER_S_MHZ: i128 = 1_000_000_000_000_000;

/// Maps photon arrival times to the nearest pulse, from either the header
/// clock or the sync tags.
struct PulseAssigner {
    rate_mhz: i128,
    period: i128,
    divider: u64,
    implicit: bool,
    t0: i128,
    n_pulses: u64,
    roles: [Option<Role>; 256],
    offsets: [i64; 4],
    max_offset: i128,
    syncs: VecDeque<(u64, i128)>,
    sync_count: u64,
    pending: Vec<(i128, usize)>,
}

impl PulseAssigner {
    fn new(header: &StreamHeader, offsets: [i64; 4]) -> Result<Self> {
        header.validate()?;
        if header.implicit_sync && header.pulse_count == 0 {
            return Err(Error::NoPulses);
        }
        for role in Role::PHOTONS {
            header.require_channel(role)?;
        }
        Ok(Self {
            rate_mhz: header.rep_rate_mhz as i128,
            period: PS_PER_S_MHZ / header.rep_rate_mhz as i128,
            divider: header.sync_divider as u64,
            implicit: header.implicit_sync,
            t0: header.t0_ps as i128,
            n_pulses: header.pulse_count,
            roles: header.role_table(),
            offsets,
            max_offset: offsets.iter().copied().max().unwrap_or(0) as i128,
            syncs: VecDeque::new(),
            sync_count: 0,
            pending: Vec::new(),
        })
    }

    fn delay(&self, m: i128) -> i128 {
        m * PS_PER_S_MHZ / self.rate_mhz
    }

    /// Nearest pulse `m ≥ 0` after a reference time for a non-negative
    /// elapsed time, with ties going to the earlier pulse.
    fn nearest_after(&self, elapsed: i128) -> (i128, i128) {
        let m0 = elapsed * self.rate_mhz / PS_PER_S_MHZ;
        let d0 = elapsed - self.delay(m0);
        let d1 = elapsed - self.delay(m0 + 1);
        if d1.abs() < d0.abs() {
            (m0 + 1, d1)
        } else {
            (m0, d0)
        }
    }

    fn feed<F: FnMut(usize, u64, i64)>(&mut self, tag: TimeTag, emit: &mut F) -> Result<()> {
        let role = self.roles[tag.channel as usize].ok_or(Error::UnknownChannel(tag.channel))?;
        let t = tag.time_ps as i128;
        match role.photon_index() {
            None => {
                if !self.implicit {
                    self.syncs.push_back((self.sync_count * self.divider, t));
                    self.sync_count += 1;
                    let mut i = 0;
                    while i < self.pending.len() {
                        if self.pending[i].0 < t {
                            let (u, r) = self.pending.swap_remove(i);
                            self.resolve(u, r, emit);
                        } else {
                            i += 1;
                        }
                    }
                }
            }
            Some(r) => {
                let u = t - self.offsets[r] as i128;
                if self.implicit {
                    self.resolve_implicit(u, r, emit);
                } else {
                    while self.syncs.len() >= 2 && self.syncs[1].1 <= t - self.max_offset {
                        self.syncs.pop_front();
                    }
                    match self.syncs.back() {
                        Some(&(_, s)) if s > u => self.resolve(u, r, emit),
                        _ => self.pending.push((u, r)),
                    }
                }
            }
        }
        Ok(())
    }

    fn resolve_implicit<F: FnMut(usize, u64, i64)>(&self, u: i128, r: usize, emit: &mut F) {
        let elapsed = u - self.t0;
        let (k, delta) = if elapsed < 0 {
            (0, elapsed)
        } else {
            self.nearest_after(elapsed)
        };
        if 2 * delta.abs() <= self.period && (k as u64) < self.n_pulses {
            emit(r, k as u64, delta as i64);
        }
    }

    fn resolve<F: FnMut(usize, u64, i64)>(&self, u: i128, r: usize, emit: &mut F) {
        let idx = self.syncs.partition_point(|&(_, s)| s <= u);
        let (k, delta) = if idx == 0 {
            match self.syncs.front() {
                Some(&(0, s)) => (0, u - s),
                _ => return,
            }
        } else {
            let (base, s) = self.syncs[idx - 1];
            let (mut m, mut delta) = self.nearest_after(u - s);
            if m >= self.divider as i128 {
                match self.syncs.get(idx) {
                    Some(&(_, next)) => {
                        m = self.divider as i128;
                        delta = u - next;
                    }
                    None if self.n_pulses == 0 => return,
                    None => {}
                }
            }
            (base as i128 + m, delta)
        };
        let limit = if self.n_pulses > 0 {
            self.n_pulses
        } else {
            self.sync_count * self.divider
        };
        if 2 * delta.abs() <= self.period && k >= 0 && (k as u64) < limit {
            emit(r, k as u64, delta as i64);
        }
    }

    fn finish<F: FnMut(usize, u64, i64)>(&mut self, emit: &mut F) -> u64 {
        let pending = std::mem::take(&mut self.pending);
        for (u, r) in pending {
            self.resolve(u, r, emit);
        }
        if self.implicit || self.n_pulses > 0 {
            self.n_pulses
        } else {
            self.sync_count * self.divider
        }
    }
}

/// Per-pulse closest arrival distance for every photon role, kept for
/// pulses with at least one arrival. Folding at any window reuses it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PulseArrivals {
    pub n_pulses: u64,
    pub period_ps: u64,
    /// `(pulse, |Δ| per role)`; `u64::MAX` marks no arrival.
    pub entries: Vec<(u64, [u64; 4])>,
}

pub fn pulse_arrivals<I>(
    header: &StreamHeader,
    tags: I,
    offsets_ps: [i64; 4],
) -> Result<PulseArrivals>
where
    I: IntoIterator<Item = Result<TimeTag>>,
{
    let mut assigner = PulseAssigner::new(header, offsets_ps)?;
    let mut entries: Vec<(u64, [u64; 4])> = Vec::new();
    let mut sorted = true;
    let mut emit = |r: usize, k: u64, delta: i64| {
        let d = delta.unsigned_abs();
        match entries.last_mut() {
            Some((last, arr)) if *last == k => arr[r] = arr[r].min(d),
            Some((last, _)) if *last > k => {
                sorted = false;
                let mut arr = [NO_ARRIVAL; 4];
                arr[r] = d;
                entries.push((k, arr));
            }
            _ => {
                let mut arr = [NO_ARRIVAL; 4];
                arr[r] = d;
                entries.push((k, arr));
            }
        }
    };
    for tag in tags {
        assigner.feed(tag?, &mut emit)?;
    }
    let n_pulses = assigner.finish(&mut emit);
    if !sorted {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u64, [u64; 4])> = Vec::with_capacity(entries.len());
        for (k, arr) in entries {
            match merged.last_mut() {
                Some((last, acc)) if *last == k => {
                    for r in 0..4 {
                        acc[r] = acc[r].min(arr[r]);
                    }
                }
                _ => merged.push((k, arr)),
            }
        }
        entries = merged;
    }
    if n_pulses == 0 {
        return Err(Error::NoPulses);
    }
    Ok(PulseArrivals {
        n_pulses,
        period_ps: header.period_ps().floor() as u64,
        entries,
    })
}

impl PulseArrivals {
    /// Click patterns for a window centered on each pulse's expected arrival.
    pub fn fold(&self, window_ps: u64) -> Result<PulseClickTable> {
        if window_ps > self.period_ps {
            return Err(Error::WindowExceedsPeriod {
                window_ps,
                period_ps: self.period_ps as f64,
            });
        }
        let clicks = self
            .entries
            .iter()
            .filter_map(|(k, arr)| {
                let mask = arr.iter().enumerate().fold(0u8, |m, (r, d)| {
                    if *d != NO_ARRIVAL && d.saturating_mul(2) <= window_ps {
                        m | (1 << r)
                    } else {
                        m
                    }
                });
                (mask != 0).then_some((*k, mask))
            })
            .collect();
        Ok(PulseClickTable {
            n_pulses: self.n_pulses,
            window_ps,
            clicks,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseClickTable {
    pub n_pulses: u64,
    pub window_ps: u64,
    /// Pulses with at least one click; bit `i` of the mask is photon role `i`.
    pub clicks: Vec<(u64, u8)>,
}

impl PulseClickTable {
    /// Pulses in which every role of `mask` clicked.
    pub fn count_all(&self, mask: u8) -> u64 {
        self.clicks.iter().filter(|(_, m)| m & mask == mask).count() as u64
    }

    pub fn count_role(&self, role: Role) -> u64 {
        self.count_all(role.bit())
    }

    /// Pulses where `predicate(mask)` holds.
    pub fn count_where<F: Fn(u8) -> bool>(&self, predicate: F) -> u64 {
        self.clicks.iter().filter(|(_, m)| predicate(*m)).count() as u64
    }
}

pub fn fold_pulses<I>(
    header: &StreamHeader,
    tags: I,
    window_ps: u64,
    offsets_ps: [i64; 4],
) -> Result<PulseClickTable>
where
    I: IntoIterator<Item = Result<TimeTag>>,
{
    if window_ps as f64 > header.period_ps() {
        return Err(Error::WindowExceedsPeriod {
            window_ps,
            period_ps: header.period_ps(),
        });
    }
    pulse_arrivals(header, tags, offsets_ps)?.fold(window_ps)
}

/// Folds the same arrivals at each window; windows must be ascending.
pub fn window_sweep(arrivals: &PulseArrivals, windows_ps: &[u64]) -> Result<Vec<PulseClickTable>> {
    if windows_ps.is_empty() || windows_ps.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter(
            "window list must be non-empty and ascending".into(),
        ));
    }
    windows_ps.iter().map(|w| arrivals.fold(*w)).collect()
}

/// Per-role arrival offset from the mode of the arrival-time histogram
/// relative to the nearest pulse. Ties go to the earliest bin.
pub fn calibrate_offsets<I>(header: &StreamHeader, tags: I, bin_ps: u64) -> Result<[Option<i64>; 4]>
where
    I: IntoIterator<Item = Result<TimeTag>>,
{
    if bin_ps == 0 {
        return Err(Error::InvalidBinning("bin width must be positive".into()));
    }
    let period = header.period_ps();
    let half = (period / 2.0).ceil() as i64;
    let n_bins = ((2 * half) as u64).div_ceil(bin_ps) as usize + 1;
    let mut hist = vec![vec![0u64; n_bins]; 4];
    let mut assigner = PulseAssigner::new(header, [0; 4])?;
    let mut emit = |r: usize, _k: u64, delta: i64| {
        let i = ((delta + half) as u64 / bin_ps) as usize;
        hist[r][i.min(n_bins - 1)] += 1;
    };
    for tag in tags {
        assigner.feed(tag?, &mut emit)?;
    }
    assigner.finish(&mut emit);
    Ok(std::array::from_fn(|r| {
        let (best, count) =
            hist[r]
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (i, c)| if *c > acc.1 { (i, *c) } else { acc });
        (count > 0).then(|| best as i64 * bin_ps as i64 - half + (bin_ps / 2) as i64)
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    pub range_ps: u64,
    /// Bin `i` is centered on `(i - range/bin) · bin` ps.
    pub counts: Vec<u64>,
}

impl CorrelationHistogram {
    pub fn half_bins(&self) -> i64 {
        (self.range_ps / self.bin_width_ps) as i64
    }

    pub fn center_ps(&self, i: usize) -> i64 {
        (i as i64 - self.half_bins()) * self.bin_width_ps as i64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn bin_of(&self, delta: i64) -> usize {
        let b = self.bin_width_ps;
        let idx = ((2 * delta.unsigned_abs() + b) / (2 * b)) as i64;
        (self.half_bins() + delta.signum() * idx) as usize
    }
}

/// Histogram of `t_B − t_A` over all tag pairs with `|Δ| ≤ range`; a tag
/// is never paired with itself.
pub fn correlation_histogram<I>(
    tags: I,
    channels_a: &[u8],
    channels_b: &[u8],
    bin_ps: u64,
    range_ps: u64,
) -> Result<CorrelationHistogram>
where
    I: IntoIterator<Item = Result<TimeTag>>,
{
    if bin_ps == 0 || range_ps == 0 || !range_ps.is_multiple_of(bin_ps) {
        return Err(Error::InvalidBinning(format!(
            "bin {bin_ps} ps must be positive and divide range {range_ps} ps"
        )));
    }
    let mut hist = CorrelationHistogram {
        bin_width_ps: bin_ps,
        range_ps,
        counts: vec![0; (2 * (range_ps / bin_ps) + 1) as usize],
    };
    let mut in_a = [false; 256];
    let mut in_b = [false; 256];
    channels_a.iter().for_each(|c| in_a[*c as usize] = true);
    channels_b.iter().for_each(|c| in_b[*c as usize] = true);
    let mut buf_a: VecDeque<u64> = VecDeque::new();
    let mut buf_b: VecDeque<u64> = VecDeque::new();
    for tag in tags {
        let tag = tag?;
        let (a, b) = (in_a[tag.channel as usize], in_b[tag.channel as usize]);
        if !a && !b {
            continue;
        }
        let t = tag.time_ps;
        let horizon = t.saturating_sub(range_ps);
        while buf_a.front().is_some_and(|x| *x < horizon) {
            buf_a.pop_front();
        }
        while buf_b.front().is_some_and(|x| *x < horizon) {
            buf_b.pop_front();
        }
        if b {
            for ta in &buf_a {
                let i = hist.bin_of((t - ta) as i64);
                hist.counts[i] += 1;
            }
        }
        if a {
            for tb in &buf_b {
                let i = hist.bin_of(-((t - tb) as i64));
                hist.counts[i] += 1;
            }
        }
        if a {
            buf_a.push_back(t);
        }
        if b {
            buf_b.push_back(t);
        }
    }
    Ok(hist)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakAreas {
    pub window_ps: u64,
    pub zero_peak: u64,
    /// `(peak index, counts)` for indices ±1..±n.
    pub side_peaks: Vec<(i64, u64)>,
}

impl PeakAreas {
    pub fn side_sum(&self) -> u64 {
        self.side_peaks.iter().map(|(_, c)| c).sum()
    }

    /// Side peaks restricted to `lo ≤ |k| ≤ hi`.
    pub fn select(&self, lo: i64, hi: i64) -> PeakAreas {
        PeakAreas {
            window_ps: self.window_ps,
            zero_peak: self.zero_peak,
            side_peaks: self
                .side_peaks
                .iter()
                .copied()
                .filter(|(k, _)| (lo..=hi).contains(&k.abs()))
                .collect(),
        }
    }
}

/// Sums bins whose centers lie within ±window/2 of each peak `k · period`.
pub fn integrate_peaks(
    hist: &CorrelationHistogram,
    period_ps: f64,
    window_ps: u64,
    n_side: usize,
) -> Result<PeakAreas> {
    if !(period_ps > 0.0) || window_ps as f64 >= period_ps {
        return Err(Error::PeakLayout(format!(
            "window {window_ps} ps does not fit in period {period_ps:.2} ps"
        )));
    }
    let reach = n_side as f64 * period_ps + window_ps as f64 / 2.0;
    if reach > hist.range_ps as f64 {
        return Err(Error::PeakLayout(format!(
            "peak {n_side} extends to {reach:.0} ps beyond histogram range {} ps",
            hist.range_ps
        )));
    }
    let n = n_side as i64;
    let mut sums = vec![0u64; (2 * n + 1) as usize];
    for (i, c) in hist.counts.iter().enumerate() {
        let center = hist.center_ps(i) as f64;
        let k = (center / period_ps).round() as i64;
        if k.abs() <= n && 2.0 * (center - k as f64 * period_ps).abs() <= window_ps as f64 {
            sums[(k + n) as usize] += c;
        }
    }
    Ok(PeakAreas {
        window_ps,
        zero_peak: sums[n as usize],
        side_peaks: (-n..=n)
            .filter(|k| *k != 0)
            .map(|k| (k, sums[(k + n) as usize]))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetag::TimeTagStream;

    fn implicit_header(n: u64) -> StreamHeader {
        let mut h = StreamHeader::new(1e8).unwrap();
        h.implicit_sync = true;
        h.pulse_count = n;
        h.t0_ps = 1000;
        h
    }

    fn ok(tags: &[TimeTag]) -> impl Iterator<Item = Result<TimeTag>> + '_ {
        tags.iter().copied().map(Ok)
    }

    #[test]
    fn single_tag_at_pulse_five() {
        let h = implicit_header(10);
        let offset = 300;
        let t = h.pulse_time_ps(5) + offset;
        let tags = [TimeTag::new(1, t)];
        let table = fold_pulses(&h, ok(&tags), 200, [offset as i64, 0, 0, 0]).unwrap();
        assert_eq!(table.clicks, vec![(5, 0b0001)]);
        assert_eq!(table.n_pulses, 10);

        let edge = [TimeTag::new(1, t + 100)];
        assert_eq!(
            fold_pulses(&h, ok(&edge), 200, [offset as i64, 0, 0, 0])
                .unwrap()
                .clicks
                .len(),
            1
        );
        let outside = [TimeTag::new(1, t + 101)];
        assert!(fold_pulses(&h, ok(&outside), 200, [offset as i64, 0, 0, 0])
            .unwrap()
            .clicks
            .is_empty());
        let before = [TimeTag::new(1, t - 101)];
        assert!(fold_pulses(&h, ok(&before), 200, [offset as i64, 0, 0, 0])
            .unwrap()
            .clicks
            .is_empty());
    }

    #[test]
    fn window_beyond_period_rejected() {
        let h = implicit_header(10);
        assert!(matches!(
            fold_pulses(&h, ok(&[]), 10_001, [0; 4]),
            Err(Error::WindowExceedsPeriod { .. })
        ));
    }

    #[test]
    fn explicit_sync_matches_implicit() {
        let mut explicit = StreamHeader::new(1e8).unwrap();
        explicit.sync_divider = 4;
        let mut tags = Vec::new();
        for k in 0..40u64 {
            let t = explicit.pulse_time_ps(k);
            if k % 4 == 0 {
                tags.push(TimeTag::new(0, t));
            }
            if k % 3 == 0 {
                tags.push(TimeTag::new(1, t + 250));
            }
            if k % 5 == 0 {
                tags.push(TimeTag::new(3, t + 40));
            }
        }
        tags.sort();
        let stream = TimeTagStream::new(explicit.clone(), tags.clone()).unwrap();
        let table = fold_pulses(&stream.header, stream.iter_ok(), 100, [250, 0, 40, 0]).unwrap();
        assert_eq!(table.n_pulses, 40);

        let mut implicit = explicit.clone();
        implicit.implicit_sync = true;
        implicit.pulse_count = 40;
        let photons: Vec<_> = tags.iter().copied().filter(|t| t.channel != 0).collect();
        let reference = fold_pulses(&implicit, ok(&photons), 100, [250, 0, 40, 0]).unwrap();
        assert_eq!(table, reference);
        assert_eq!(table.count_role(Role::X1), 14);
        assert_eq!(table.count_role(Role::XX1), 8);
        assert_eq!(table.count_all(Role::X1.bit() | Role::XX1.bit()), 3);
    }

    #[test]
    fn negative_offsets_with_sync_buffering() {
        let h = StreamHeader::new(1e8).unwrap();
        let mut tags = Vec::new();
        for k in 0..20u64 {
            let t = h.pulse_time_ps(k) + 5_000;
            tags.push(TimeTag::new(0, t));
            if k >= 1 {
                // photon arrives 2 ns before its own pulse's sync tag
                tags.push(TimeTag::new(2, t - 2_000));
            }
        }
        tags.sort();
        let table = fold_pulses(&h, ok(&tags), 500, [0, -2_000, 0, 0]).unwrap();
        assert_eq!(table.count_role(Role::X2), 19);
        assert_eq!(table.clicks.first().unwrap().0, 1);
    }

    #[test]
    fn multiple_tags_count_once_and_window_monotone() {
        let h = implicit_header(100);
        let mut tags = Vec::new();
        for k in 0..100u64 {
            let base = h.pulse_time_ps(k);
            tags.push(TimeTag::new(1, base + (k * 37) % 1000));
            tags.push(TimeTag::new(1, base + (k * 37) % 1000 + 1));
        }
        tags.sort();
        let arrivals = pulse_arrivals(&h, ok(&tags), [500, 0, 0, 0]).unwrap();
        let tables = window_sweep(&arrivals, &[0, 100, 400, 1000, 2000]).unwrap();
        let counts: Vec<u64> = tables.iter().map(|t| t.count_role(Role::X1)).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
        assert!(counts[4] == 100);
        assert!(window_sweep(&arrivals, &[100, 50]).is_err());
    }

    #[test]
    fn auto_offset_picks_mode() {
        let h = implicit_header(50);
        let mut tags = Vec::new();
        for k in 0..50u64 {
            let base = h.pulse_time_ps(k);
            tags.push(TimeTag::new(3, base + 800 + (k % 3)));
            if k % 10 == 0 {
                tags.push(TimeTag::new(3, base + 3000));
            }
        }
        tags.sort();
        let off = calibrate_offsets(&h, ok(&tags), 4).unwrap();
        assert_eq!(off[0], None);
        assert!((off[2].unwrap() - 802).abs() <= 2, "{off:?}");
    }

    #[test]
    fn histogram_single_pair() {
        let tags = [TimeTag::new(1, 1000), TimeTag::new(2, 1100)];
        let h = correlation_histogram(ok(&tags), &[1], &[2], 10, 500).unwrap();
        assert_eq!(h.total(), 1);
        let idx = h.counts.iter().position(|c| *c == 1).unwrap();
        assert_eq!(h.center_ps(idx), 100);
        let rev = correlation_histogram(ok(&tags), &[2], &[1], 10, 500).unwrap();
        assert_eq!(
            rev.center_ps(rev.counts.iter().position(|c| *c == 1).unwrap()),
            -100
        );
        assert!(correlation_histogram(ok(&tags), &[1], &[2], 30, 500).is_err());
    }

    #[test]
    fn histogram_matches_all_pairs() {
        let mut tags = Vec::new();
        let mut t = 0u64;
        for i in 0..2000u64 {
            t += (i * 7919) % 613;
            tags.push(TimeTag::new((i % 3) as u8 + 1, t));
        }
        let hist = correlation_histogram(ok(&tags), &[1, 2], &[2, 3], 8, 2000).unwrap();
        let mut brute = 0u64;
        for (i, a) in tags.iter().enumerate() {
            for (j, b) in tags.iter().enumerate() {
                if i != j
                    && [1, 2].contains(&a.channel)
                    && [2, 3].contains(&b.channel)
                    && (b.time_ps as i64 - a.time_ps as i64).abs() <= 2000
                {
                    brute += 1;
                }
            }
        }
        assert_eq!(hist.total(), brute);
    }

    #[test]
    fn auto_correlation_symmetric() {
        let mut tags = Vec::new();
        let mut t = 0u64;
        for i in 0..3000u64 {
            t += (i * 104_729) % 977;
            tags.push(TimeTag::new(1 + (i % 2) as u8, t));
        }
        let h = correlation_histogram(ok(&tags), &[1, 2], &[1, 2], 5, 1000).unwrap();
        let n = h.counts.len();
        for i in 0..n {
            assert_eq!(h.counts[i], h.counts[n - 1 - i]);
        }
        let perfect: Vec<_> = (0..100u64)
            .map(|k| TimeTag::new(1 + (k % 2) as u8, k * 10_000))
            .collect();
        let p = correlation_histogram(ok(&perfect), &[1], &[2], 100, 5000).unwrap();
        assert_eq!(p.total(), 0);
    }

    #[test]
    fn peak_sums() {
        let mut hist = CorrelationHistogram {
            bin_width_ps: 10,
            range_ps: 5000,
            counts: vec![0; 1001],
        };
        let put = |h: &mut CorrelationHistogram, delta: i64, c: u64| {
            let i = h.bin_of(delta);
            h.counts[i] += c;
        };
        put(&mut hist, 0, 7);
        put(&mut hist, 20, 3);
        put(&mut hist, 1000, 11);
        put(&mut hist, -1000, 13);
        put(&mut hist, 2050, 5);
        put(&mut hist, 500, 100);
        let p = integrate_peaks(&hist, 1000.0, 100, 2).unwrap();
        assert_eq!(p.zero_peak, 10);
        assert_eq!(p.side_peaks, vec![(-2, 0), (-1, 13), (1, 11), (2, 5)]);
        assert!(integrate_peaks(&hist, 1000.0, 1000, 2).is_err());
        assert!(integrate_peaks(&hist, 1000.0, 100, 5).is_err());
    }

    #[test]
    fn flat_histogram_gives_equal_peaks() {
        let hist = CorrelationHistogram {
            bin_width_ps: 1,
            range_ps: 70_000,
            counts: vec![1000; 140_001],
        };
        let p = integrate_peaks(&hist, 13185.65, 160, 5).unwrap();
        for (_, c) in &p.side_peaks {
            let diff = *c as f64 - p.zero_peak as f64;
            assert!(diff.abs() <= 3.0 * ((2 * p.zero_peak) as f64).sqrt());
        }
    }
}
