//! Multipath compensation: TDMA-constrained matching pursuit over all
//! beacon channels, followed by thresholded earliest-tap LoS selection.
//!
//! Each iteration projects the current residue onto every shift of every
//! channel's pattern, takes the strongest shift per channel and checks that
//! the candidates of consecutive slots are `slot ± δ` apart. When they are,
//! the overall strongest candidate is stored as a component of its channel;
//! otherwise the offending channel's candidate is treated as spurious and
//! only removed from the residue. Either way the chosen component is
//! subtracted before the next iteration.
//!
//! Channels leave the candidate pool once they hold M components, or when a
//! candidate is discarded after they already hold one. Out of the pool, a
//! channel's first stored component stays in the window check as an anchor.

mod classical;
mod los;

pub use classical::{classical_toa, classical_toa_with, CLASSICAL_CONFIDENCE_RATIO};
pub use los::select_los;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::channel::ReceivedBuffer;
use crate::dsp;
use crate::error::{Error, Result};
use crate::waveform::{CodePattern, TdmaSchedule};

pub const DEFAULT_M: usize = 3;
pub const DEFAULT_GAMMA: f64 = 0.10;
pub const DEFAULT_J: usize = 32;
/// 1.5 ms at 100 kHz, used when no geometry is available.
pub const FALLBACK_DELTA_SAMPLES: usize = 150;
pub const DEFAULT_EPSILON_STOP: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McaConfig {
    /// Minimum stored components per channel (M).
    pub min_components: usize,
    /// LoS threshold as a fraction of the channel's strongest component.
    pub gamma: f64,
    /// Iteration cap (J).
    pub max_iterations: usize,
    /// Timing-window half-width in receiver samples.
    pub delta_samples: usize,
    /// Stop once the selected amplitude drops below this fraction of the
    /// first iteration's; 0 disables.
    pub epsilon_stop: f64,
    /// Disabling the slot check reduces the loop to plain matching pursuit.
    pub window_check: bool,
}

impl Default for McaConfig {
    fn default() -> Self {
        Self {
            min_components: DEFAULT_M,
            gamma: DEFAULT_GAMMA,
            max_iterations: DEFAULT_J,
            delta_samples: FALLBACK_DELTA_SAMPLES,
            epsilon_stop: DEFAULT_EPSILON_STOP,
            window_check: true,
        }
    }
}

impl McaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.min_components == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidArgument("M and J must be at least 1".into()));
        }
        if self.min_components > self.max_iterations {
            return Err(Error::InvalidArgument(format!(
                "M = {} exceeds J = {}",
                self.min_components, self.max_iterations
            )));
        }
        if !(self.epsilon_stop >= 0.0) {
            return Err(Error::InvalidArgument("epsilon_stop must be non-negative".into()));
        }
        Ok(())
    }
}

/// A stored impulse-response component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub location: usize,
    pub amplitude: f64,
}

/// Best shift of one channel's pattern against the residue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// 1-based.
    pub channel: usize,
    pub location: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum WindowVerdict {
    Pass,
    Violated {
        /// Consecutive-slot channel pairs outside `slot ± δ`.
        pairs: Vec<(usize, usize)>,
        /// Channels taking part in at least one violated pair, ascending.
        channels: Vec<usize>,
    },
}

impl WindowVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, WindowVerdict::Pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stored,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// One per channel still short of M components, ascending channel.
    pub candidates: Vec<Candidate>,
    pub verdict: WindowVerdict,
    pub selected_channel: usize,
    pub action: Action,
    /// The discarded channel already held a component and leaves the pool.
    #[serde(default)]
    pub retired: bool,
    pub residue_energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Every channel holds at least M components.
    MinComponents,
    MaxIterations,
    BelowEpsilon,
    /// Every channel short of M was retired after a discard.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    /// Stored components per channel (index = channel − 1), in storage order.
    pub components: Vec<Vec<Component>>,
    pub log: Vec<IterationRecord>,
    pub termination: Termination,
    pub initial_energy: f64,
    pub residue: Vec<f64>,
}

impl ChannelEstimate {
    pub fn residue_energy(&self) -> f64 {
        self.residue.iter().map(|x| x * x).sum()
    }

    /// Number of iterations whose window check failed.
    pub fn discards(&self) -> usize {
        self.log.iter().filter(|r| r.action == Action::Discarded).count()
    }

    /// Iteration log as newline-delimited JSON.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// `out[l] = ⟨pattern shifted to l, residue⟩ / ‖pattern‖²` for every lag at
/// which the pattern fits entirely inside the buffer. Direct evaluation of
/// the Toeplitz column inner products.
pub fn correlate_channel(residue: &ReceivedBuffer, pattern: &CodePattern) -> Result<Vec<f64>> {
    let (r, p) = (&residue.samples, &pattern.samples);
    if p.len() > r.len() {
        return Err(Error::PatternLongerThanBuffer {
            pattern: p.len(),
            buffer: r.len(),
        });
    }
    let energy = pattern.energy();
    if energy == 0.0 {
        return Err(Error::InvalidArgument("pattern has zero energy".into()));
    }
    Ok(r.windows(p.len())
        .map(|w| w.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / energy)
        .collect())
}

/// Strongest `|projection|` in `window`, signed amplitude, smallest lag on ties.
pub fn best_candidate(projections: &[f64], window: Range<usize>) -> Result<(usize, f64)> {
    best_excluding(projections, window, &[]).ok_or(Error::EmptyWindow)
}

fn best_excluding(projections: &[f64], window: Range<usize>, excluded: &[usize]) -> Option<(usize, f64)> {
    let window = window.start..window.end.min(projections.len());
    let mut best: Option<(usize, f64)> = None;
    for l in window {
        if excluded.contains(&l) {
            continue;
        }
        let v = projections[l];
        if best.is_none_or(|(_, b)| v.abs() > b.abs()) {
            best = Some((l, v));
        }
    }
    best
}

/// Checks `l[next] − l[prev] ∈ [slot − δ, slot + δ]` for every pair of
/// consecutive slots. `candidates[i]` is the location for channel `i + 1`.
pub fn check_timing_windows(
    candidates: &[usize],
    schedule: &TdmaSchedule,
    fs_rx: f64,
    delta_samples: usize,
) -> WindowVerdict {
    let active: Vec<Option<usize>> = candidates.iter().copied().map(Some).collect();
    check_active_windows(&active, schedule, fs_rx, delta_samples)
}

/// Slot-ordered pairs of consecutive channels that have a location, keeping
/// only pairs with a live candidate on at least one side.
fn active_pairs(
    candidates: &[Option<usize>],
    anchors: &[Option<usize>],
    schedule: &TdmaSchedule,
) -> Vec<(usize, usize)> {
    let live = |c: usize| candidates.get(c - 1).is_some_and(Option::is_some);
    let anchored = |c: usize| anchors.get(c - 1).is_some_and(Option::is_some);
    let present: Vec<usize> = schedule
        .order
        .iter()
        .copied()
        .filter(|&c| live(c) || anchored(c))
        .collect();
    present
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|&(a, b)| live(a) || live(b))
        .collect()
}

fn location_of(c: usize, candidates: &[Option<usize>], anchors: &[Option<usize>]) -> usize {
    candidates[c - 1]
        .or_else(|| anchors.get(c - 1).copied().flatten())
        .unwrap_or(0)
}

/// As [`check_timing_windows`], skipping channels without a candidate.
/// Pairs separated by `k` slots must be `k·slot ± δ` apart.
pub fn check_active_windows(
    candidates: &[Option<usize>],
    schedule: &TdmaSchedule,
    fs_rx: f64,
    delta_samples: usize,
) -> WindowVerdict {
    check_anchored_windows(candidates, &[], schedule, fs_rx, delta_samples)
}

/// As [`check_active_windows`], with fixed `anchors` standing in for channels
/// that have no candidate. Pairs of two anchors are not checked.
pub fn check_anchored_windows(
    candidates: &[Option<usize>],
    anchors: &[Option<usize>],
    schedule: &TdmaSchedule,
    fs_rx: f64,
    delta_samples: usize,
) -> WindowVerdict {
    let slot = schedule.slot_samples(fs_rx) as i64;
    let delta = delta_samples as i64;
    let pos = |c: usize| schedule.slot_of(c).unwrap_or(0) as i64;
    let pairs: Vec<(usize, usize)> = active_pairs(candidates, anchors, schedule)
        .into_iter()
        .filter(|&(a, b)| {
            let diff = location_of(b, candidates, anchors) as i64 - location_of(a, candidates, anchors) as i64;
            (diff - (pos(b) - pos(a)) * slot).abs() > delta
        })
        .collect();
    if pairs.is_empty() {
        return WindowVerdict::Pass;
    }
    let mut channels: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    channels.sort_unstable();
    channels.dedup();
    WindowVerdict::Violated { pairs, channels }
}

/// The channel treated as spurious for a violated verdict: most violated-pair
/// memberships, then fewest satisfied pairs, then most stored components,
/// then larger `|h|`, then lower index. Only channels with a candidate can be
/// named. `anchors` and `stored` are indexed by channel − 1 and may be empty.
pub fn spurious_channel(
    verdict: &WindowVerdict,
    candidates: &[Candidate],
    anchors: &[Option<usize>],
    schedule: &TdmaSchedule,
    stored: &[usize],
) -> Option<usize> {
    let WindowVerdict::Violated { pairs, channels } = verdict else {
        return None;
    };
    let mut present = vec![None; schedule.num_channels()];
    for c in candidates {
        if let Some(slot) = present.get_mut(c.channel - 1) {
            *slot = Some(c.location);
        }
    }
    let all_pairs = active_pairs(&present, anchors, schedule);
    let violated = |c: usize| pairs.iter().filter(|&&(a, b)| a == c || b == c).count();
    let satisfied = |c: usize| all_pairs.iter().filter(|&&(a, b)| a == c || b == c).count() - violated(c);
    let amp = |c: usize| {
        candidates
            .iter()
            .find(|k| k.channel == c)
            .map_or(0.0, |k| k.amplitude.abs())
    };
    let held = |c: usize| stored.get(c - 1).copied().unwrap_or(0);
    channels
        .iter()
        .copied()
        .filter(|&c| present.get(c - 1).is_some_and(Option::is_some))
        .min_by(|&x, &y| {
            violated(y)
                .cmp(&violated(x))
                .then(satisfied(x).cmp(&satisfied(y)))
                .then(held(y).cmp(&held(x)))
                .then(amp(y).total_cmp(&amp(x)))
                .then(x.cmp(&y))
        })
}

/// Patterns and their pairwise cross-correlations, reusable across buffers.
#[derive(Debug, Clone)]
pub struct PatternBank {
    /// Indexed by channel − 1.
    patterns: Vec<Vec<f64>>,
    energies: Vec<f64>,
    rate_hz: f64,
    /// `cross[i][a][d + len_i − 1] = Σ_k p_i[k]·p_a[k+d]`.
    cross: Vec<Vec<Vec<f64>>>,
}

impl PatternBank {
    /// `patterns` must carry code indices `1..=L` (any order) at one rate.
    pub fn new(patterns: &[CodePattern]) -> Result<Self> {
        let l = patterns.len();
        if l == 0 {
            return Err(Error::InvalidArgument("no patterns".into()));
        }
        let rate_hz = patterns[0].rate_hz;
        let mut ordered: Vec<Option<&CodePattern>> = vec![None; l];
        for p in patterns {
            if p.code_index == 0 || p.code_index > l || ordered[p.code_index - 1].is_some() {
                return Err(Error::InvalidArgument(format!(
                    "pattern code indices must be a permutation of 1..={l}"
                )));
            }
            if (p.rate_hz - rate_hz).abs() > 1e-6 * rate_hz {
                return Err(Error::Rate("patterns at different rates".into()));
            }
            if p.energy() == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "pattern {} has zero energy",
                    p.code_index
                )));
            }
            ordered[p.code_index - 1] = Some(p);
        }
        let patterns: Vec<Vec<f64>> = ordered
            .into_iter()
            .map(|p| p.expect("filled").samples.clone())
            .collect();
        let energies = patterns.iter().map(|p| p.iter().map(|x| x * x).sum()).collect();
        let cross = patterns
            .iter()
            .map(|pi| patterns.iter().map(|pa| dsp::full_xcorr(pa, pi)).collect())
            .collect();
        Ok(Self {
            patterns,
            energies,
            rate_hz,
            cross,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.patterns.len()
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn pattern(&self, channel: usize) -> &[f64] {
        &self.patterns[channel - 1]
    }

    pub(crate) fn check_buffer(&self, buffer: &ReceivedBuffer, schedule: &TdmaSchedule) -> Result<()> {
        if schedule.num_channels() != self.num_channels() {
            return Err(Error::ChannelCountMismatch {
                patterns: self.num_channels(),
                channels: schedule.num_channels(),
            });
        }
        if (buffer.rate_hz - self.rate_hz).abs() > 1e-6 * self.rate_hz {
            return Err(Error::Rate(format!(
                "patterns at {} Hz, buffer at {} Hz",
                self.rate_hz, buffer.rate_hz
            )));
        }
        if let Some(p) = self.patterns.iter().find(|p| p.len() > buffer.len()) {
            return Err(Error::PatternLongerThanBuffer {
                pattern: p.len(),
                buffer: buffer.len(),
            });
        }
        Ok(())
    }

    /// Normalized projections of `x` onto every full-overlap shift of each
    /// channel's pattern.
    pub fn projections(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.patterns
            .iter()
            .zip(&self.energies)
            .map(|(p, e)| {
                let mut c = dsp::valid_xcorr(x, p);
                c.iter_mut().for_each(|v| *v /= e);
                c
            })
            .collect()
    }

    pub fn run(&self, buffer: &ReceivedBuffer, schedule: &TdmaSchedule, cfg: &McaConfig) -> Result<ChannelEstimate> {
        cfg.validate()?;
        schedule.validate()?;
        self.check_buffer(buffer, schedule)?;
        let initial_energy = buffer.energy();
        if initial_energy == 0.0 {
            return Err(Error::ZeroEnergy);
        }
        let l = self.num_channels();
        let mut residue = buffer.samples.clone();
        let mut residue_energy = initial_energy;
        let mut corr = self.projections(&residue);
        let mut components: Vec<Vec<Component>> = vec![Vec::new(); l];
        let mut stored_at: Vec<Vec<usize>> = vec![Vec::new(); l];
        let mut retired = vec![false; l];
        let mut log = Vec::new();
        let mut first_amplitude: Option<f64> = None;
        let mut termination = Termination::MaxIterations;

        for iteration in 0..cfg.max_iterations {
            // Channels holding M components, or retired, leave the pool.
            let candidates: Vec<Candidate> = (0..l)
                .filter(|&i| components[i].len() < cfg.min_components && !retired[i])
                .filter_map(|i| {
                    best_excluding(&corr[i], 0..corr[i].len(), &stored_at[i]).map(|(location, amplitude)| Candidate {
                        channel: i + 1,
                        location,
                        amplitude,
                    })
                })
                .collect();
            if candidates.is_empty() {
                termination = if components.iter().all(|c| c.len() >= cfg.min_components) {
                    Termination::MinComponents
                } else {
                    Termination::Exhausted
                };
                break;
            }
            let mut locations = vec![None; l];
            for c in &candidates {
                locations[c.channel - 1] = Some(c.location);
            }
            // Channels out of the pool keep their first stored component as an anchor.
            let anchors: Vec<Option<usize>> = (0..l)
                .map(|i| {
                    if locations[i].is_none() {
                        components[i].first().map(|c| c.location)
                    } else {
                        None
                    }
                })
                .collect();
            let verdict = if cfg.window_check {
                check_anchored_windows(&locations, &anchors, schedule, self.rate_hz, cfg.delta_samples)
            } else {
                WindowVerdict::Pass
            };
            let (selected, action) = match &verdict {
                WindowVerdict::Pass => {
                    let best = candidates
                        .iter()
                        .reduce(|a, b| if b.amplitude.abs() > a.amplitude.abs() { b } else { a })
                        .expect("nonempty");
                    (*best, Action::Stored)
                }
                WindowVerdict::Violated { .. } => {
                    let held: Vec<usize> = components.iter().map(Vec::len).collect();
                    let s = spurious_channel(&verdict, &candidates, &anchors, schedule, &held)
                        .expect("violation names a channel");
                    let c = *candidates
                        .iter()
                        .find(|c| c.channel == s)
                        .expect("spurious channel has a candidate");
                    (c, Action::Discarded)
                }
            };

            let h = selected.amplitude;
            match first_amplitude {
                None => first_amplitude = Some(h.abs()),
                Some(first) if h.abs() < cfg.epsilon_stop * first || h == 0.0 => {
                    termination = Termination::BelowEpsilon;
                    break;
                }
                Some(_) => {}
            }

            let a = selected.channel - 1;
            let la = selected.location;
            // An out-of-window candidate after the channel already has a
            // component means nothing usable is left for it.
            let retire = action == Action::Discarded && !components[a].is_empty();
            match action {
                Action::Stored => {
                    components[a].push(Component {
                        location: la,
                        amplitude: h,
                    });
                    stored_at[a].push(la);
                }
                Action::Discarded => retired[a] |= retire,
            }

            let pa = &self.patterns[a];
            let window = &mut residue[la..la + pa.len()];
            let before: f64 = window.iter().map(|x| x * x).sum();
            for (r, p) in window.iter_mut().zip(pa) {
                *r -= h * p;
            }
            let after: f64 = window.iter().map(|x| x * x).sum();
            residue_energy += after - before;

            for (i, ci) in corr.iter_mut().enumerate() {
                let pi_len = self.patterns[i].len();
                let xc = &self.cross[i][a];
                let lo = la.saturating_sub(pi_len - 1);
                let hi = (la + pa.len()).min(ci.len());
                let scale = h / self.energies[i];
                for (lag, c) in ci.iter_mut().enumerate().take(hi).skip(lo) {
                    // d = lag − la, stored at d + len_i − 1.
                    *c -= scale * xc[lag + pi_len - 1 - la];
                }
            }

            log.push(IterationRecord {
                iteration,
                candidates,
                verdict,
                selected_channel: selected.channel,
                action,
                retired: retire,
                residue_energy,
            });

            if components.iter().all(|c| c.len() >= cfg.min_components) {
                termination = Termination::MinComponents;
                break;
            }
            if (0..l).all(|i| components[i].len() >= cfg.min_components || retired[i]) {
                termination = Termination::Exhausted;
                break;
            }
        }

        Ok(ChannelEstimate {
            components,
            log,
            termination,
            initial_energy,
            residue,
        })
    }
}

/// Estimates every channel's impulse response from `buffer`.
pub fn run_mca(
    buffer: &ReceivedBuffer,
    patterns: &[CodePattern],
    schedule: &TdmaSchedule,
    cfg: &McaConfig,
) -> Result<ChannelEstimate> {
    if patterns.len() != schedule.num_channels() {
        return Err(Error::ChannelCountMismatch {
            patterns: patterns.len(),
            channels: schedule.num_channels(),
        });
    }
    PatternBank::new(patterns)?.run(buffer, schedule, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mca,
    Classical,
}

/// Per-channel LoS arrival estimates, index = channel − 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToaResult {
    pub toas: Vec<Option<usize>>,
    /// Candidate set `b^i` for MCA; the single peak for the classical method.
    pub candidates: Vec<Vec<usize>>,
    /// Classical peaks weaker than the confidence ratio; always false for MCA.
    pub low_confidence: Vec<bool>,
    pub method: Method,
}
