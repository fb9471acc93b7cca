//! Nearest-neighbor resampling onto an exact integer-nanosecond grid.

use crate::ingest::RawRecording;

use super::{grid_offset_ns, SignalError, UniformSignal};

/// Resamples a raw recording to `target_rate` Hz. Output sample `k` sits at
/// `start_t + k/target_rate` (integer-ns grid) and takes the value of the
/// input sample with the nearest timestamp; ties go to the earlier sample.
/// The grid covers the input span `[first, last]`.
pub fn resample(rec: &RawRecording, target_rate: f64) -> Result<UniformSignal, SignalError> {
    if rec.samples.is_empty() {
        return Err(SignalError::EmptyRecording);
    }
    if !(target_rate > 1.0 && target_rate < 10_000.0) {
        return Err(SignalError::BadTargetRate(target_rate));
    }
    let start_t = rec.samples[0].0;
    let end_t = rec.samples[rec.samples.len() - 1].0;
    let span = (end_t - start_t) as u128;
    let rate_mhz = (target_rate * 1000.0).round() as u128;
    // Last grid index with offset <= span.
    let n = (span * rate_mhz / 1_000_000_000_000u128) as usize + 1;

    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut j = 0usize; // input index of the last sample at or before the grid point
    for k in 0..n {
        let t = start_t + grid_offset_ns(k, target_rate);
        while j + 1 < rec.samples.len() && rec.samples[j + 1].0 <= t {
            j += 1;
        }
        // Candidates: samples[j] (<= t) and samples[j+1] (> t); tie -> earlier.
        let pick = if j + 1 < rec.samples.len() {
            let d_left = t - rec.samples[j].0;
            let d_right = rec.samples[j + 1].0 - t;
            if d_right < d_left {
                j + 1
            } else {
                j
            }
        } else {
            j
        };
        let (_, sx, sy, sz) = rec.samples[pick];
        x.push(sx);
        y.push(sy);
        z.push(sz);
    }
    let wear_mask = vec![true; n];
    Ok(UniformSignal { start_t, rate: target_rate, x, y, z, wear_mask })
}
