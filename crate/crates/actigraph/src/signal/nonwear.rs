//! Non-wear detection on the calibrated, unfiltered signal.
//!
//! A sample is stationary when all three per-axis standard deviations within
//! a centered 10-s rolling window fall below 15 mg. Runs of stationary
//! samples longer than 60 minutes are non-wear.

use super::{SignalError, UniformSignal};

#[derive(Debug, Clone)]
pub struct NonwearConfig {
    pub window_s: f64,
    pub std_threshold_g: f64,
    pub min_nonwear_min: f64,
}

impl Default for NonwearConfig {
    fn default() -> Self {
        Self { window_s: 10.0, std_threshold_g: 0.015, min_nonwear_min: 60.0 }
    }
}

/// Contiguous, non-overlapping segments covering the whole signal.
#[derive(Debug, Clone, PartialEq)]
pub struct WearSegments {
    /// `(start_idx, end_idx, is_wear)` with end exclusive.
    pub segments: Vec<(usize, usize, bool)>,
}

impl WearSegments {
    pub fn nonwear_samples(&self) -> usize {
        self.segments.iter().filter(|s| !s.2).map(|s| s.1 - s.0).sum()
    }
}

/// Population std of each centered rolling window, one value per sample.
/// Windows are clipped at the signal edges. Sliding sums are recomputed
/// periodically to keep float drift negligible.
fn rolling_std(data: &[f64], w: usize) -> Vec<f64> {
    let n = data.len();
    let half = w / 2;
    let mut out = vec![0.0; n];
    let mut lo = 0usize;
    let mut hi = 0usize;
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    const RESYNC: usize = 1 << 16;
    for i in 0..n {
        let want_lo = i.saturating_sub(half);
        let want_hi = (i + w - half).min(n);
        if i % RESYNC == 0 {
            lo = want_lo;
            hi = want_lo;
            sum = 0.0;
            sumsq = 0.0;
        }
        while hi < want_hi {
            sum += data[hi];
            sumsq += data[hi] * data[hi];
            hi += 1;
        }
        while lo < want_lo {
            sum -= data[lo];
            sumsq -= data[lo] * data[lo];
            lo += 1;
        }
        let cnt = (hi - lo) as f64;
        let mean = sum / cnt;
        let var = (sumsq / cnt - mean * mean).max(0.0);
        out[i] = var.sqrt();
    }
    out
}

/// Flags stationary samples, groups runs longer than the non-wear minimum
/// and returns covering segments. The input signal is not modified; apply
/// the result with [`apply_wear_segments`].
pub fn detect_nonwear(sig: &UniformSignal, cfg: &NonwearConfig) -> Result<WearSegments, SignalError> {
    if sig.duration_s() < 10.0 {
        return Err(SignalError::TooShort(10.0));
    }
    let w = (cfg.window_s * sig.rate).round() as usize;
    let sx = rolling_std(&sig.x, w);
    let sy = rolling_std(&sig.y, w);
    let sz = rolling_std(&sig.z, w);
    let t = cfg.std_threshold_g;
    let stationary: Vec<bool> = (0..sig.len())
        .map(|i| sx[i] < t && sy[i] < t && sz[i] < t)
        .collect();

    let min_len = (cfg.min_nonwear_min * 60.0 * sig.rate).round() as usize;
    let mut segments = Vec::new();
    let n = sig.len();
    let mut i = 0;
    while i < n {
        let flag = stationary[i];
        let mut j = i + 1;
        while j < n && stationary[j] == flag {
            j += 1;
        }
        let is_wear = !(flag && (j - i) > min_len);
        // Merge with a preceding segment of the same class.
        match segments.last_mut() {
            Some(&mut (_, ref mut end, w_prev)) if w_prev == is_wear => *end = j,
            _ => segments.push((i, j, is_wear)),
        }
        i = j;
    }
    Ok(WearSegments { segments })
}

/// Writes the segment classification into the signal's wear mask.
pub fn apply_wear_segments(sig: &mut UniformSignal, segs: &WearSegments) {
    for &(start, end, is_wear) in &segs.segments {
        for m in &mut sig.wear_mask[start..end] {
            *m = is_wear;
        }
    }
}
