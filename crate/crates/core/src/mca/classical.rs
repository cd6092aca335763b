//! Single-correlation baseline: the matched-filter peak inside each slot.

use super::{best_candidate, Method, PatternBank, ToaResult};
use crate::channel::ReceivedBuffer;
use crate::error::Result;
use crate::waveform::{CodePattern, TdmaSchedule};

/// Peaks below this multiple of the slot's median `|output|` are flagged.
pub const CLASSICAL_CONFIDENCE_RATIO: f64 = 3.0;

/// Channel at slot `k` is searched over lags `[k·T − δ, (k+1)·T + δ)`,
/// measured from the start of the buffer.
pub fn classical_toa(buffer: &ReceivedBuffer, patterns: &[CodePattern], schedule: &TdmaSchedule) -> Result<ToaResult> {
    classical_toa_with(&PatternBank::new(patterns)?, buffer, schedule)
}

pub fn classical_toa_with(bank: &PatternBank, buffer: &ReceivedBuffer, schedule: &TdmaSchedule) -> Result<ToaResult> {
    schedule.validate()?;
    bank.check_buffer(buffer, schedule)?;
    let slot = schedule.slot_samples(buffer.rate_hz);
    let delta = schedule.delta_samples(buffer.rate_hz);
    let corr = bank.projections(&buffer.samples);
    let l = bank.num_channels();
    let mut toas = vec![None; l];
    let mut candidates = vec![Vec::new(); l];
    let mut low_confidence = vec![false; l];
    for (k, &ch) in schedule.order.iter().enumerate() {
        let c = &corr[ch - 1];
        let lo = (k * slot).saturating_sub(delta);
        let hi = ((k + 1) * slot + delta).min(c.len());
        if lo >= hi {
            continue;
        }
        let (lag, peak) = best_candidate(c, lo..hi)?;
        let mut mags: Vec<f64> = c[lo..hi].iter().map(|v| v.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let median = mags[mags.len() / 2];
        low_confidence[ch - 1] = peak.abs() < CLASSICAL_CONFIDENCE_RATIO * median;
        toas[ch - 1] = Some(lag);
        candidates[ch - 1] = vec![lag];
    }
    Ok(ToaResult {
        toas,
        candidates,
        low_confidence,
        method: Method::Classical,
    })
}
