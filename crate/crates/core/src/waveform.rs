//! BPSK code patterns, TDMA frame assembly and rate conversion.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::codes::BipolarSequence;
use crate::error::{Error, Result};

pub const DEFAULT_FS_TX: f64 = 500_000.0;
pub const DEFAULT_FS_RX: f64 = 100_000.0;
/// fs_tx / 12, nominally 41.67 kHz.
pub const DEFAULT_CARRIER_HZ: f64 = DEFAULT_FS_TX / 12.0;
pub const DEFAULT_CYCLES_PER_SYMBOL: usize = 2;
pub const DEFAULT_SLOT_SECONDS: f64 = 0.020;
pub const DEFAULT_AA_CUTOFF_HZ: f64 = 49_000.0;
pub const DEFAULT_AA_TAPS: usize = 801;

/// Tolerance when checking that two rates divide evenly.
const RATE_EPS: f64 = 1e-6;

/// Returns `numerator / denominator` as an integer if it is one.
pub(crate) fn integer_ratio(numerator: f64, denominator: f64) -> Option<usize> {
    let r = numerator / denominator;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() < RATE_EPS * n.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModulationConfig {
    pub carrier_hz: f64,
    pub fs_tx: f64,
    pub cycles_per_symbol: usize,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            carrier_hz: DEFAULT_CARRIER_HZ,
            fs_tx: DEFAULT_FS_TX,
            cycles_per_symbol: DEFAULT_CYCLES_PER_SYMBOL,
        }
    }
}

impl ModulationConfig {
    pub fn samples_per_cycle(&self) -> Result<usize> {
        if !(self.carrier_hz > 0.0 && self.fs_tx > 0.0) {
            return Err(Error::Modulation("rates must be positive".into()));
        }
        if self.carrier_hz >= self.fs_tx / 2.0 {
            return Err(Error::Modulation(format!(
                "carrier {} Hz at or above Nyquist for {} Hz",
                self.carrier_hz, self.fs_tx
            )));
        }
        if self.cycles_per_symbol == 0 {
            return Err(Error::Modulation("cycles_per_symbol must be >= 1".into()));
        }
        integer_ratio(self.fs_tx, self.carrier_hz).ok_or_else(|| {
            Error::Modulation(format!(
                "fs_tx / carrier = {} is not an integer",
                self.fs_tx / self.carrier_hz
            ))
        })
    }

    pub fn samples_per_symbol(&self) -> Result<usize> {
        Ok(self.samples_per_cycle()? * self.cycles_per_symbol)
    }
}

/// A sampled code waveform for one beacon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodePattern {
    pub samples: Vec<f64>,
    pub rate_hz: f64,
    /// 1-based beacon/channel index.
    pub code_index: usize,
}

impl CodePattern {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }
}

/// Each chip becomes `cycles_per_symbol` carrier periods, sign-inverted for
/// −1 chips. Sampled at `fs_tx` with integer phase stepping, so the pattern
/// peaks at exactly 1.
pub fn bpsk_modulate(seq: &BipolarSequence, cfg: &ModulationConfig, code_index: usize) -> Result<CodePattern> {
    let spc = cfg.samples_per_cycle()?;
    let sps = spc * cfg.cycles_per_symbol;
    let symbol: Vec<f64> = (0..sps)
        .map(|k| (2.0 * PI * (k % spc) as f64 / spc as f64).sin())
        .collect();
    let mut samples = Vec::with_capacity(seq.len() * sps);
    for &chip in seq.chips() {
        let s = f64::from(chip);
        samples.extend(symbol.iter().map(|v| s * v));
    }
    Ok(CodePattern {
        samples,
        rate_hz: cfg.fs_tx,
        code_index,
    })
}

/// Samples the same BPSK waveform directly at `rate_hz`, which need not be
/// an integer multiple of the carrier.
pub fn synthesize_pattern(
    seq: &BipolarSequence,
    cfg: &ModulationConfig,
    rate_hz: f64,
    code_index: usize,
) -> Result<CodePattern> {
    cfg.samples_per_cycle()?;
    if rate_hz <= 2.0 * cfg.carrier_hz {
        return Err(Error::Rate(format!("{rate_hz} Hz cannot represent the carrier")));
    }
    let symbol_seconds = cfg.cycles_per_symbol as f64 / cfg.carrier_hz;
    let n = (seq.len() as f64 * symbol_seconds * rate_hz).round() as usize;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / rate_hz;
            let chip = ((t / symbol_seconds) as usize).min(seq.len() - 1);
            f64::from(seq.chips()[chip]) * (2.0 * PI * cfg.carrier_hz * t).sin()
        })
        .collect();
    Ok(CodePattern {
        samples,
        rate_hz,
        code_index,
    })
}

/// Linear-phase windowed-sinc (Blackman) low-pass FIR with unit DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPassFir {
    taps: Vec<f64>,
}

impl LowPassFir {
    pub fn design(cutoff_hz: f64, rate_hz: f64, num_taps: usize) -> Result<Self> {
        if num_taps == 0 || num_taps.is_multiple_of(2) {
            return Err(Error::InvalidArgument("FIR length must be odd".into()));
        }
        if !(cutoff_hz > 0.0 && cutoff_hz < rate_hz / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
                rate_hz / 2.0
            )));
        }
        let fc = cutoff_hz / rate_hz;
        let m = (num_taps - 1) as f64;
        let mut taps: Vec<f64> = (0..num_taps)
            .map(|n| {
                let x = n as f64 - m / 2.0;
                let sinc = if x == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * PI * fc * x).sin() / (PI * x)
                };
                let w = 0.42 - 0.5 * (2.0 * PI * n as f64 / m).cos() + 0.08 * (4.0 * PI * n as f64 / m).cos();
                sinc * w
            })
            .collect();
        let dc: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= dc);
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Filters `x` (zero-phase, zero-extended) and keeps every `factor`-th
    /// sample starting at 0. Output has `ceil(len / factor)` samples.
    pub fn filter_decimate(&self, x: &[f64], factor: usize) -> Vec<f64> {
        let half = (self.taps.len() / 2) as isize;
        let n = x.len() as isize;
        (0..x.len().div_ceil(factor))
            .map(|j| {
                let centre = (j * factor) as isize;
                let lo = (centre - half).max(0);
                let hi = (centre + half).min(n - 1);
                (lo..=hi)
                    .map(|i| x[i as usize] * self.taps[(i - centre + half) as usize])
                    .sum()
            })
            .collect()
    }
}

/// Anti-alias filter used by [`decimate`] for a given input rate and factor.
pub fn default_decimation_filter(rate_hz: f64, factor: usize) -> Result<LowPassFir> {
    let out_nyquist = rate_hz / factor as f64 / 2.0;
    let cutoff = DEFAULT_AA_CUTOFF_HZ.min(0.98 * out_nyquist);
    LowPassFir::design(cutoff, rate_hz, DEFAULT_AA_TAPS)
}

/// Low-pass filters and subsamples by `factor` using the default filter.
pub fn decimate(p: &CodePattern, factor: usize) -> Result<CodePattern> {
    if factor == 0 {
        return Err(Error::ZeroFactor);
    }
    if factor == 1 {
        return Ok(p.clone());
    }
    let fir = default_decimation_filter(p.rate_hz, factor)?;
    decimate_with(p, factor, &fir)
}

pub fn decimate_with(p: &CodePattern, factor: usize, fir: &LowPassFir) -> Result<CodePattern> {
    if factor == 0 {
        return Err(Error::ZeroFactor);
    }
    if factor == 1 {
        return Ok(p.clone());
    }
    Ok(CodePattern {
        samples: fir.filter_decimate(&p.samples, factor),
        rate_hz: p.rate_hz / factor as f64,
        code_index: p.code_index,
    })
}

/// Transmit-rate BPSK patterns decimated to `fs_rx`, one per code.
pub fn receiver_patterns(codes: &[BipolarSequence], cfg: &ModulationConfig, fs_rx: f64) -> Result<Vec<CodePattern>> {
    let factor = integer_ratio(cfg.fs_tx, fs_rx)
        .ok_or_else(|| Error::Rate(format!("{} Hz is not a multiple of {fs_rx} Hz", cfg.fs_tx)))?;
    codes
        .iter()
        .enumerate()
        .map(|(i, c)| decimate(&bpsk_modulate(c, cfg, i + 1)?, factor))
        .collect()
}

/// Slot length, emission order and timing-window half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdmaSchedule {
    pub slot_seconds: f64,
    /// 1-based channel indices in emission order.
    pub order: Vec<usize>,
    pub delta_seconds: f64,
}

impl TdmaSchedule {
    /// Channels 1..=L in natural order.
    pub fn sequential(channels: usize, slot_seconds: f64, delta_seconds: f64) -> Self {
        Self {
            slot_seconds,
            order: (1..=channels).collect(),
            delta_seconds,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.order.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.order.len();
        if l == 0 {
            return Err(Error::Schedule("no channels".into()));
        }
        let mut seen = vec![false; l];
        for &c in &self.order {
            if c == 0 || c > l || seen[c - 1] {
                return Err(Error::Schedule(format!(
                    "order {:?} is not a permutation of 1..={l}",
                    self.order
                )));
            }
            seen[c - 1] = true;
        }
        if !(self.slot_seconds > 0.0) {
            return Err(Error::Schedule("slot length must be positive".into()));
        }
        if !(self.delta_seconds >= 0.0 && self.delta_seconds < self.slot_seconds / 2.0) {
            return Err(Error::Schedule(format!(
                "delta {} s must lie in [0, slot/2)",
                self.delta_seconds
            )));
        }
        Ok(())
    }

    /// Zero-based slot position of a 1-based channel.
    pub fn slot_of(&self, channel: usize) -> Option<usize> {
        self.order.iter().position(|&c| c == channel)
    }

    pub fn slot_samples(&self, rate_hz: f64) -> usize {
        (self.slot_seconds * rate_hz).round() as usize
    }

    pub fn delta_samples(&self, rate_hz: f64) -> usize {
        (self.delta_seconds * rate_hz).round() as usize
    }

    pub fn frame_samples(&self, rate_hz: f64) -> usize {
        self.slot_samples(rate_hz) * self.order.len()
    }
}

/// Per-channel emission streams, each silent outside its own slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitFrame {
    pub rate_hz: f64,
    pub slot_samples: usize,
    /// Indexed by channel − 1.
    pub streams: Vec<Vec<f64>>,
}

impl TransmitFrame {
    pub fn len(&self) -> usize {
        self.streams.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.streams.len()
    }

    /// The frame as the receiver's ADC would see it at `rate_hz`.
    pub fn at_rate(&self, rate_hz: f64) -> Result<TransmitFrame> {
        if (rate_hz - self.rate_hz).abs() < RATE_EPS * rate_hz {
            return Ok(self.clone());
        }
        let factor = integer_ratio(self.rate_hz, rate_hz)
            .ok_or_else(|| Error::Rate(format!("frame rate {} Hz not divisible by {rate_hz} Hz", self.rate_hz)))?;
        let fir = default_decimation_filter(self.rate_hz, factor)?;
        Ok(TransmitFrame {
            rate_hz: self.rate_hz / factor as f64,
            slot_samples: self.slot_samples / factor,
            streams: self.streams.iter().map(|s| fir.filter_decimate(s, factor)).collect(),
        })
    }
}

/// Places each channel's pattern at the start of its slot.
pub fn build_frame(patterns: &[CodePattern], schedule: &TdmaSchedule) -> Result<TransmitFrame> {
    schedule.validate()?;
    let l = schedule.num_channels();
    if patterns.len() != l {
        return Err(Error::ChannelCountMismatch {
            patterns: patterns.len(),
            channels: l,
        });
    }
    let rate = patterns[0].rate_hz;
    if patterns.iter().any(|p| (p.rate_hz - rate).abs() > RATE_EPS * rate) {
        return Err(Error::Rate("patterns at different rates".into()));
    }
    let slot = schedule.slot_samples(rate);
    let mut streams = vec![vec![0.0; slot * l]; l];
    for p in patterns {
        if p.len() > slot {
            return Err(Error::PatternExceedsSlot { pattern: p.len(), slot });
        }
        let pos = schedule
            .slot_of(p.code_index)
            .ok_or_else(|| Error::Schedule(format!("no slot for channel {}", p.code_index)))?;
        let start = pos * slot;
        streams[p.code_index - 1][start..start + p.len()].copy_from_slice(&p.samples);
    }
    Ok(TransmitFrame {
        rate_hz: rate,
        slot_samples: slot,
        streams,
    })
}
