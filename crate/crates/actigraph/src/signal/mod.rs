//! Signal standardization: resampling, auto-calibration, bandpass filtering
//! and non-wear detection.

mod calibrate;
mod filter;
mod nonwear;
mod resample;

pub use calibrate::{autocalibrate, AutocalConfig, CalibrationParams};
pub use filter::{bandpass, design_bandpass_sos, sos_magnitude_response, Sos};
pub use nonwear::{apply_wear_segments, detect_nonwear, NonwearConfig, WearSegments};
pub use resample::resample;

use thiserror::Error;

/// Fixed-rate tri-axial signal with a per-sample wear mask. The substrate of
/// everything downstream of ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSignal {
    /// Timestamp of sample 0 in nanoseconds since epoch.
    pub start_t: i64,
    /// Sample rate in Hz.
    pub rate: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// true = worn.
    pub wear_mask: Vec<bool>,
}

impl UniformSignal {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.rate
    }

    /// Timestamp of sample `k` on the exact integer-nanosecond grid.
    pub fn sample_time_ns(&self, k: usize) -> i64 {
        self.start_t + grid_offset_ns(k, self.rate)
    }

    /// Index of the grid sample nearest to `t_ns`, clamped to the signal.
    pub fn index_at(&self, t_ns: i64) -> usize {
        if self.is_empty() || t_ns <= self.start_t {
            return 0;
        }
        let approx = ((t_ns - self.start_t) as f64 * self.rate / 1e9).round() as i64;
        let mut k = approx.clamp(0, self.len() as i64 - 1) as usize;
        // The float estimate can be off by one near the edges of a grid cell.
        while k + 1 < self.len() && (self.sample_time_ns(k + 1) - t_ns).abs() < (self.sample_time_ns(k) - t_ns).abs() {
            k += 1;
        }
        while k > 0 && (self.sample_time_ns(k - 1) - t_ns).abs() < (self.sample_time_ns(k) - t_ns).abs() {
            k -= 1;
        }
        k
    }

    pub fn magnitude(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| (self.x[i] * self.x[i] + self.y[i] * self.y[i] + self.z[i] * self.z[i]).sqrt())
            .collect()
    }
}

/// Exact grid offset of sample `k` at `rate` Hz, in integer nanoseconds.
/// Rates are resolved to milli-Hz so no float error accumulates over days.
pub(crate) fn grid_offset_ns(k: usize, rate: f64) -> i64 {
    let rate_mhz = (rate * 1000.0).round() as u128;
    let num = k as u128 * 1_000_000_000_000u128;
    // round-to-nearest division
    ((num + rate_mhz / 2) / rate_mhz) as i64
}

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("empty recording")]
    EmptyRecording,
    #[error("target rate {0} Hz outside (1, 10000)")]
    BadTargetRate(f64),
    #[error("not enough still data: {0}")]
    NotEnoughStillData(String),
    #[error("calibration fit is ill-conditioned")]
    IllConditioned,
    #[error("cutoff {hi} Hz not below Nyquist ({nyquist} Hz)")]
    CutoffAboveNyquist { hi: f64, nyquist: f64 },
    #[error("signal shorter than {0} s")]
    TooShort(f64),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_no_accumulated_error_over_seven_days() {
        // 7 days at 100 Hz: sample k sits at exactly k * 10^7 ns.
        let rate = 100.0;
        let n: usize = 7 * 24 * 3600 * 100;
        assert_eq!(grid_offset_ns(n, rate), n as i64 * 10_000_000);
        // An awkward rate: 30.7 Hz over 7 days stays within 1 ns of the
        // rational grid k/rate by construction (integer division).
        let rate = 30.7;
        let k: usize = 7 * 24 * 3600 * 31;
        let exact = (k as f64 * 1e9 / rate).round() as i64;
        assert!((grid_offset_ns(k, rate) - exact).abs() <= 1);
    }
}
