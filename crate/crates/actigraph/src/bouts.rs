//! Nocturnal activity-bout detection inside a selected sleep window.
//!
//! Samples whose acceleration magnitude exceeds an adaptive threshold
//! (window mean + std of the magnitude, floored at 0.1 g) are grouped into
//! bouts; nearby groups merge, then implausibly short or long groups drop.

use thiserror::Error;

use crate::signal::UniformSignal;
use crate::sleep::SleepWindow;

#[derive(Debug, Clone)]
pub struct BoutConfig {
    /// Threshold floor in g.
    pub floor_g: f64,
    /// Merge groups separated by less than this many seconds.
    pub merge_gap_s: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl Default for BoutConfig {
    fn default() -> Self {
        Self { floor_g: 0.1, merge_gap_s: 1.0, min_duration_s: 0.5, max_duration_s: 50.0 }
    }
}

/// One activity bout: sample index range into the signal, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivityBout {
    pub start_idx: usize,
    pub end_idx: usize,
}

impl ActivityBout {
    pub fn duration_s(&self, rate: f64) -> f64 {
        (self.end_idx - self.start_idx) as f64 / rate
    }

    pub fn midpoint_s(&self, rate: f64) -> f64 {
        (self.start_idx + self.end_idx) as f64 / 2.0 / rate
    }
}

#[derive(Debug, Error)]
pub enum BoutError {
    #[error("sleep window is empty or outside the signal")]
    EmptyWindow,
}

/// Detects activity bouts in the bandpassed signal within a sleep window.
/// The threshold statistics use wear samples of the window only
/// (population std). Merging happens before the duration filters.
pub fn detect_bouts(
    sig: &UniformSignal,
    win: &SleepWindow,
    cfg: &BoutConfig,
) -> Result<Vec<ActivityBout>, BoutError> {
    let start = sig.index_at(win.onset_t);
    let end = sig.index_at(win.wake_t);
    if end <= start || end > sig.len() {
        return Err(BoutError::EmptyWindow);
    }
    let mag: Vec<f64> = (start..end)
        .map(|i| (sig.x[i] * sig.x[i] + sig.y[i] * sig.y[i] + sig.z[i] * sig.z[i]).sqrt())
        .collect();
    let wear: Vec<f64> = mag
        .iter()
        .zip(&sig.wear_mask[start..end])
        .filter(|(_, &w)| w)
        .map(|(&m, _)| m)
        .collect();
    if wear.is_empty() {
        return Err(BoutError::EmptyWindow);
    }
    let mean = wear.iter().sum::<f64>() / wear.len() as f64;
    let var = wear.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / wear.len() as f64;
    let theta = (mean + var.sqrt()).max(cfg.floor_g);

    // Consecutive active samples form groups.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < mag.len() {
        if mag[i] > theta {
            let mut j = i + 1;
            while j < mag.len() && mag[j] > theta {
                j += 1;
            }
            groups.push((i, j));
            i = j;
        } else {
            i += 1;
        }
    }

    // Merge (strict "< merge_gap_s"), then apply duration bounds.
    let gap_samples = cfg.merge_gap_s * sig.rate;
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for g in groups {
        match merged.last_mut() {
            Some(last) if ((g.0 - last.1) as f64) < gap_samples => last.1 = g.1,
            _ => merged.push(g),
        }
    }
    let bouts = merged
        .into_iter()
        .filter(|&(s, e)| {
            let d = (e - s) as f64 / sig.rate;
            d >= cfg.min_duration_s && d <= cfg.max_duration_s
        })
        .map(|(s, e)| ActivityBout { start_idx: start + s, end_idx: start + e })
        .collect();
    Ok(bouts)
}
