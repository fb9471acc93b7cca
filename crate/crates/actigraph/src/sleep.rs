//! Sleep-period detection from the wrist z-angle and nightly window selection.
//!
//! The detector thresholds sustained low variability of the 5-s z-angle
//! (a heuristic with a per-day adaptive threshold), merges nearby quiet
//! blocks, and keeps at most one window per night subject to duration and
//! typical-sleep-period overlap rules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::UniformSignal;
use crate::stats::{average_ranks, mean, pearson, quantile_of};

pub const EPOCH_S: f64 = 5.0;
const NS_PER_S: i64 = 1_000_000_000;
const DAY_NS: i64 = 24 * 3600 * NS_PER_S;

#[derive(Debug, Clone)]
pub struct SleepConfig {
    /// Multiplier on the daily 10th percentile of z-angle changes.
    pub threshold_factor: f64,
    /// Threshold clamp bounds in degrees.
    pub threshold_min_deg: f64,
    pub threshold_max_deg: f64,
    /// Minimum sustained quiet run, minutes.
    pub sustain_min: f64,
    /// Merge quiet blocks separated by less than this, minutes.
    pub merge_gap_min: f64,
    /// Analysis-window rules.
    pub min_window_h: f64,
    pub max_window_h: f64,
    pub min_overlap_h: f64,
    /// Typical sleep period, local hours-of-day [start, end).
    pub typical_start_h: f64,
    pub typical_end_h: f64,
    /// Local-time offset from UTC in seconds.
    pub tz_offset_s: i64,
}

impl Default for SleepConfig {
    fn default() -> Self {
        Self {
            threshold_factor: 15.0,
            threshold_min_deg: 0.13,
            threshold_max_deg: 0.50,
            sustain_min: 30.0,
            merge_gap_min: 60.0,
            min_window_h: 4.0,
            max_window_h: 16.0,
            min_overlap_h: 2.0,
            typical_start_h: 22.0,
            typical_end_h: 9.0,
            tz_offset_s: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleepWindow {
    pub onset_t: i64,
    pub wake_t: i64,
    pub night_index: usize,
    pub overlap_with_typical_h: f64,
}

impl SleepWindow {
    pub fn duration_h(&self) -> f64 {
        (self.wake_t - self.onset_t) as f64 / NS_PER_S as f64 / 3600.0
    }
}

/// Z-angle time series at 5-s epoch resolution, degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct ZAngleSeries {
    pub start_t: i64,
    pub values: Vec<f64>,
}

impl ZAngleSeries {
    pub fn epoch_time(&self, k: usize) -> i64 {
        self.start_t + k as i64 * (EPOCH_S as i64) * NS_PER_S
    }
}

#[derive(Debug, Error)]
pub enum SleepError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("predicted and reference windows do not overlap")]
    NoOverlap,
}

/// Centered rolling median over a fixed window, clipped at the edges.
/// Maintains a sorted window with binary-search insert/remove.
fn rolling_median(data: &[f64], w: usize) -> Vec<f64> {
    let n = data.len();
    let half = w / 2;
    let mut out = vec![0.0; n];
    let mut window: Vec<f64> = Vec::with_capacity(w + 1);
    let mut lo = 0usize;
    let mut hi = 0usize;
    for i in 0..n {
        let want_lo = i.saturating_sub(half);
        let want_hi = (i + w - half).min(n);
        while hi < want_hi {
            let v = data[hi];
            let pos = window.partition_point(|&x| x < v);
            window.insert(pos, v);
            hi += 1;
        }
        while lo < want_lo {
            let v = data[lo];
            let pos = window.partition_point(|&x| x < v);
            window.remove(pos);
            lo += 1;
        }
        let m = window.len();
        out[i] = if m % 2 == 1 {
            window[m / 2]
        } else {
            (window[m / 2 - 1] + window[m / 2]) / 2.0
        };
    }
    out
}

/// Z-angle at 5-s resolution: per-sample 5-s rolling medians of the three
/// axes, converted to the angle of the z axis against the horizontal plane,
/// then averaged within each epoch. Uses the calibrated, unfiltered signal.
pub fn z_angle(sig: &UniformSignal) -> ZAngleSeries {
    let w = (EPOCH_S * sig.rate).round().max(1.0) as usize;
    let mx = rolling_median(&sig.x, w);
    let my = rolling_median(&sig.y, w);
    let mz = rolling_median(&sig.z, w);
    let n_epochs = sig.len() / w;
    let mut values = Vec::with_capacity(n_epochs.max(1));
    let mut k = 0;
    while (k + 1) * w <= sig.len() {
        let mut acc = 0.0;
        for i in k * w..(k + 1) * w {
            let horiz = (mx[i] * mx[i] + my[i] * my[i]).sqrt();
            acc += (mz[i] / horiz).atan().to_degrees();
        }
        values.push(acc / w as f64);
        k += 1;
    }
    ZAngleSeries { start_t: sig.start_t, values }
}

/// Detects candidate sleep-period windows, one noon-to-noon day at a time.
///
/// Per day: absolute successive z-angle differences are thresholded at
/// `factor * P10(day diffs)` clamped to the configured bounds; quiet runs
/// sustained past the minimum form blocks; blocks separated by less than the
/// merge gap are joined.
pub fn detect_spt_windows(z: &ZAngleSeries, cfg: &SleepConfig) -> Result<Vec<SleepWindow>, SleepError> {
    if z.values.len() < 2 {
        return Err(SleepError::InsufficientData("fewer than 2 epochs".into()));
    }
    let n_diffs = z.values.len() - 1;
    let diffs: Vec<f64> = (0..n_diffs).map(|k| (z.values[k + 1] - z.values[k]).abs()).collect();

    // Local-time day index of each diff epoch, anchored at noon.
    let local = |k: usize| z.epoch_time(k) + cfg.tz_offset_s * NS_PER_S;
    let day_of = |k: usize| (local(k) - DAY_NS / 2).div_euclid(DAY_NS);

    let first_day = day_of(0);
    let last_day = day_of(n_diffs - 1);
    let epoch_ns = (EPOCH_S as i64) * NS_PER_S;
    let min_day_epochs = (12 * 3600) / (EPOCH_S as i64); // at least half a day of data

    let mut quiet = vec![false; n_diffs];
    let mut any_day = false;
    for day in first_day..=last_day {
        let idx: Vec<usize> = (0..n_diffs).filter(|&k| day_of(k) == day).collect();
        if (idx.len() as i64) < min_day_epochs {
            continue;
        }
        any_day = true;
        let day_diffs: Vec<f64> = idx.iter().map(|&k| diffs[k]).collect();
        let p10 = quantile_of(&day_diffs, 0.10);
        let t = (cfg.threshold_factor * p10).clamp(cfg.threshold_min_deg, cfg.threshold_max_deg);
        for &k in &idx {
            quiet[k] = diffs[k] < t;
        }
    }
    if !any_day {
        return Err(SleepError::InsufficientData("no day with >= 12 h of data".into()));
    }

    // Quiet runs sustained >= sustain_min form blocks.
    let sustain_epochs = (cfg.sustain_min * 60.0 / EPOCH_S).round() as usize;
    let mut blocks: Vec<(usize, usize)> = Vec::new(); // diff index ranges, end exclusive
    let mut i = 0;
    while i < n_diffs {
        if quiet[i] {
            let mut j = i + 1;
            while j < n_diffs && quiet[j] {
                j += 1;
            }
            if j - i >= sustain_epochs {
                blocks.push((i, j));
            }
            i = j;
        } else {
            i += 1;
        }
    }

    // Merge blocks separated by less than the merge gap.
    let merge_epochs = (cfg.merge_gap_min * 60.0 / EPOCH_S).round() as usize;
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for b in blocks {
        match merged.last_mut() {
            Some(last) if b.0 - last.1 < merge_epochs => last.1 = b.1,
            _ => merged.push(b),
        }
    }

    let windows = merged
        .into_iter()
        .map(|(s, e)| {
            let onset_t = z.epoch_time(s);
            // Diff e-1 covers the transition into epoch e; the window spans
            // through the end of epoch e.
            let wake_t = z.epoch_time(e) + epoch_ns;
            let overlap = typical_overlap_h(onset_t, wake_t, cfg);
            SleepWindow { onset_t, wake_t, night_index: 0, overlap_with_typical_h: overlap }
        })
        .collect();
    Ok(windows)
}

/// Overlap of [onset, wake) with the daily typical sleep period, in hours.
fn typical_overlap_h(onset_t: i64, wake_t: i64, cfg: &SleepConfig) -> f64 {
    let start_ns = (cfg.typical_start_h * 3600.0) as i64 * NS_PER_S;
    let end_ns = (cfg.typical_end_h * 3600.0) as i64 * NS_PER_S;
    let lo = onset_t + cfg.tz_offset_s * NS_PER_S;
    let hi = wake_t + cfg.tz_offset_s * NS_PER_S;
    let mut total = 0i64;
    // Typical periods repeat daily; scan the days the window touches.
    let first = lo.div_euclid(DAY_NS) - 1;
    let last = hi.div_euclid(DAY_NS) + 1;
    for day in first..=last {
        let (p_lo, p_hi) = if end_ns > start_ns {
            (day * DAY_NS + start_ns, day * DAY_NS + end_ns)
        } else {
            // Crosses midnight (e.g. 22:00 -> 09:00 next day).
            (day * DAY_NS + start_ns, (day + 1) * DAY_NS + end_ns)
        };
        let o = p_hi.min(hi) - p_lo.max(lo);
        if o > 0 {
            total += o;
        }
    }
    total as f64 / NS_PER_S as f64 / 3600.0
}

/// Keeps windows satisfying the duration and typical-overlap rules, at most
/// one per night (longest wins, ties by earlier onset), and assigns night
/// indices in time order.
pub fn select_analysis_windows(candidates: &[SleepWindow], cfg: &SleepConfig) -> Vec<SleepWindow> {
    let mut qualifying: Vec<SleepWindow> = candidates
        .iter()
        .filter(|w| {
            w.duration_h() > cfg.min_window_h
                && w.duration_h() <= cfg.max_window_h
                && w.overlap_with_typical_h >= cfg.min_overlap_h
        })
        .copied()
        .collect();
    qualifying.sort_by_key(|w| w.onset_t);

    // Night key: noon-to-noon local day of the onset.
    let night_of = |w: &SleepWindow| {
        (w.onset_t + cfg.tz_offset_s * NS_PER_S - DAY_NS / 2).div_euclid(DAY_NS)
    };
    let mut best: Vec<SleepWindow> = Vec::new();
    let mut keys: Vec<i64> = Vec::new();
    for w in qualifying {
        let key = night_of(&w);
        match keys.iter().position(|&k| k == key) {
            Some(i) => {
                let cur = &best[i];
                let longer = (w.wake_t - w.onset_t) > (cur.wake_t - cur.onset_t);
                let tie_earlier = (w.wake_t - w.onset_t) == (cur.wake_t - cur.onset_t)
                    && w.onset_t < cur.onset_t;
                if longer || tie_earlier {
                    best[i] = w;
                }
            }
            None => {
                keys.push(key);
                best.push(w);
            }
        }
    }
    best.sort_by_key(|w| w.onset_t);
    for (i, w) in best.iter_mut().enumerate() {
        w.night_index = i;
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct SleepAgreement {
    pub c_statistic: f64,
    pub onset_mae_min: f64,
    pub wake_mae_min: f64,
    pub pearson_r: f64,
}

/// Compares predicted against reference sleep windows: 30-s-epoch c-statistic
/// (rank concordance of the binarized traces), onset/wake MAE over matched
/// window pairs, and Pearson r over the pooled matched timestamps.
pub fn sleep_agreement(pred: &[SleepWindow], reference: &[SleepWindow]) -> Result<SleepAgreement, SleepError> {
    if pred.is_empty() || reference.is_empty() {
        return Err(SleepError::NoOverlap);
    }
    let lo = pred.iter().chain(reference).map(|w| w.onset_t).min().unwrap();
    let hi = pred.iter().chain(reference).map(|w| w.wake_t).max().unwrap();
    let epoch = 30 * NS_PER_S;
    let n = ((hi - lo) / epoch) as usize + 1;
    let in_any = |windows: &[SleepWindow], t: i64| -> f64 {
        windows.iter().any(|w| t >= w.onset_t && t < w.wake_t) as u8 as f64
    };
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let t = lo + k as i64 * epoch;
        scores.push(in_any(pred, t));
        labels.push(in_any(reference, t));
    }
    if !labels.contains(&1.0) || !labels.contains(&0.0) {
        return Err(SleepError::NoOverlap);
    }

    // Rank-based concordance (ties count one half).
    let ranks = average_ranks(&scores);
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l == 1.0)
        .map(|(r, _)| r)
        .sum();
    let c = (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);

    // Match each reference window to the predicted window with the largest
    // overlap (falling back to nearest midpoint).
    let mut onset_err = Vec::new();
    let mut wake_err = Vec::new();
    let mut pooled_pred = Vec::new();
    let mut pooled_ref = Vec::new();
    for r in reference {
        let best = pred
            .iter()
            .max_by_key(|p| {
                let ov = p.wake_t.min(r.wake_t) - p.onset_t.max(r.onset_t);
                let mid_dist = ((p.onset_t + p.wake_t) / 2 - (r.onset_t + r.wake_t) / 2).abs();
                (ov, -mid_dist)
            })
            .unwrap();
        let overlap = best.wake_t.min(r.wake_t) - best.onset_t.max(r.onset_t);
        if overlap <= 0 {
            continue;
        }
        let to_min = |ns: i64| ns as f64 / NS_PER_S as f64 / 60.0;
        onset_err.push(to_min((best.onset_t - r.onset_t).abs()));
        wake_err.push(to_min((best.wake_t - r.wake_t).abs()));
        pooled_pred.push(to_min(best.onset_t - lo));
        pooled_pred.push(to_min(best.wake_t - lo));
        pooled_ref.push(to_min(r.onset_t - lo));
        pooled_ref.push(to_min(r.wake_t - lo));
    }
    if onset_err.is_empty() {
        return Err(SleepError::NoOverlap);
    }
    Ok(SleepAgreement {
        c_statistic: c,
        onset_mae_min: mean(&onset_err),
        wake_mae_min: mean(&wake_err),
        pearson_r: pearson(&pooled_pred, &pooled_ref),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: i64 = 3600 * NS_PER_S;

    fn flat_signal(axes: [f64; 3], rate: f64, secs: f64) -> UniformSignal {
        let n = (rate * secs) as usize;
        UniformSignal {
            start_t: 0,
            rate,
            x: vec![axes[0]; n],
            y: vec![axes[1]; n],
            z: vec![axes[2]; n],
            wear_mask: vec![true; n],
        }
    }

    #[test]
    fn z_angle_of_flat_device_is_ninety_degrees() {
        let z = z_angle(&flat_signal([0.0, 0.0, 1.0], 10.0, 30.0));
        for v in &z.values {
            assert!((v - 90.0).abs() < 1e-9);
        }
    }

    #[test]
    fn z_angle_of_sideways_device_is_zero() {
        let z = z_angle(&flat_signal([1.0, 0.0, 0.0], 10.0, 30.0));
        for v in &z.values {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn z_angle_diagonal_is_forty_five() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let z = z_angle(&flat_signal([0.0, c, c], 10.0, 30.0));
        for v in &z.values {
            assert!((v - 45.0).abs() < 1e-9);
        }
    }

    /// One synthetic day of z-angle epochs starting at local noon:
    /// noisy active angles except a still block over `still` (hours from
    /// recording start).
    fn synthetic_day(still: (f64, f64)) -> ZAngleSeries {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = (24.0 * 3600.0 / EPOCH_S) as usize;
        let mut values = Vec::with_capacity(n);
        let mut angle = 20.0f64;
        for k in 0..n {
            let h = k as f64 * EPOCH_S / 3600.0;
            if h >= still.0 && h < still.1 {
                values.push(angle + rng.gen_range(-0.01..0.01));
            } else {
                angle = rng.gen_range(-60.0..60.0);
                values.push(angle);
            }
        }
        // Start at local noon so the noon-to-noon day is fully covered.
        ZAngleSeries { start_t: 12 * H, values }
    }

    #[test]
    fn detects_a_still_night_block() {
        // Still 23:00-07:00, i.e. 11..19 h after the noon start.
        let z = synthetic_day((11.0, 19.0));
        let cfg = SleepConfig::default();
        let wins = detect_spt_windows(&z, &cfg).unwrap();
        assert_eq!(wins.len(), 1);
        let w = wins[0];
        let err_onset = (w.onset_t - 23 * H).abs() as f64 / H as f64 * 60.0;
        let err_wake = (w.wake_t - 31 * H).abs() as f64 / H as f64 * 60.0;
        assert!(err_onset < 10.0, "onset error {err_onset} min");
        assert!(err_wake < 10.0, "wake error {err_wake} min");
    }

    #[test]
    fn fully_active_day_yields_no_candidates() {
        let z = synthetic_day((-1.0, -1.0));
        let wins = detect_spt_windows(&z, &SleepConfig::default()).unwrap();
        assert!(wins.is_empty());
    }

    #[test]
    fn quiet_blocks_forty_minutes_apart_are_merged() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let n = (24.0 * 3600.0 / EPOCH_S) as usize;
        let mut values = Vec::with_capacity(n);
        for k in 0..n {
            let h = k as f64 * EPOCH_S / 3600.0;
            let still = (11.0..13.0).contains(&h) || ((13.0 + 40.0 / 60.0)..19.0).contains(&h);
            if still {
                values.push(30.0 + rng.gen_range(-0.01..0.01));
            } else {
                values.push(rng.gen_range(-60.0..60.0));
            }
        }
        let z = ZAngleSeries { start_t: 12 * H, values };
        let wins = detect_spt_windows(&z, &SleepConfig::default()).unwrap();
        assert_eq!(wins.len(), 1, "blocks should merge: {wins:?}");
        assert!(wins[0].duration_h() > 7.5);
    }

    fn window(onset_h: f64, wake_h: f64) -> SleepWindow {
        SleepWindow {
            onset_t: (onset_h * H as f64) as i64,
            wake_t: (wake_h * H as f64) as i64,
            night_index: 0,
            overlap_with_typical_h: 0.0,
        }
    }

    fn with_overlap(mut w: SleepWindow, cfg: &SleepConfig) -> SleepWindow {
        w.overlap_with_typical_h = typical_overlap_h(w.onset_t, w.wake_t, cfg);
        w
    }

    #[test]
    fn selection_rules() {
        let cfg = SleepConfig::default();
        // 22:30-06:30: kept (8 h duration, full overlap with 22:00-09:00).
        let keep = with_overlap(window(22.5, 30.5), &cfg);
        assert!((keep.overlap_with_typical_h - 8.0).abs() < 1e-9);
        // 13:00-18:00 nap: 5 h but zero overlap.
        let nap = with_overlap(window(13.0, 18.0), &cfg);
        assert_eq!(nap.overlap_with_typical_h, 0.0);
        // 20:00-23:30: fails the 4 h duration rule.
        let short = with_overlap(window(20.0, 23.5), &cfg);
        let out = select_analysis_windows(&[keep, nap, short], &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].onset_t, keep.onset_t);
        assert_eq!(out[0].night_index, 0);
    }

    #[test]
    fn one_window_per_night_longest_wins() {
        let cfg = SleepConfig::default();
        let a = with_overlap(window(22.0, 27.0), &cfg); // 5 h
        let b = with_overlap(window(28.0, 33.0 + 1.0), &cfg); // 6 h, same night
        let out = select_analysis_windows(&[a, b], &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].onset_t, b.onset_t);
    }

    #[test]
    fn agreement_identity_is_perfect() {
        let w = [window(23.0, 31.0), window(47.0, 55.0)];
        let a = sleep_agreement(&w, &w).unwrap();
        assert_eq!(a.c_statistic, 1.0);
        assert_eq!(a.onset_mae_min, 0.0);
        assert_eq!(a.wake_mae_min, 0.0);
        assert!((a.pearson_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_prediction_has_thirty_minute_onset_mae() {
        let reference = [window(23.0, 31.0), window(47.0, 55.0)];
        let pred = [window(23.5, 31.5), window(47.0, 55.0)];
        let a = sleep_agreement(&pred, &reference).unwrap();
        assert!((a.onset_mae_min - 15.0).abs() < 1e-9); // 30 min on one of two nights
        assert!((a.wake_mae_min - 15.0).abs() < 1e-9);
    }

    #[test]
    fn c_statistic_matches_brute_force_concordance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let reference: Vec<SleepWindow> = (0..7)
            .map(|d| window(23.0 + 24.0 * d as f64, 31.0 + 24.0 * d as f64))
            .collect();
        let pred: Vec<SleepWindow> = (0..7)
            .map(|d| {
                let o = 23.0 + 24.0 * d as f64 + rng.gen_range(-3.0..3.0);
                window(o, o + rng.gen_range(2.0..10.0))
            })
            .collect();
        let a = sleep_agreement(&pred, &reference).unwrap();

        // Brute-force pairwise concordance over the same epoch grid.
        let lo = pred.iter().chain(&reference).map(|w| w.onset_t).min().unwrap();
        let hi = pred.iter().chain(&reference).map(|w| w.wake_t).max().unwrap();
        let epoch = 30 * NS_PER_S;
        let n = ((hi - lo) / epoch) as usize + 1;
        let in_any = |ws: &[SleepWindow], t: i64| ws.iter().any(|w| t >= w.onset_t && t < w.wake_t);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            for j in 0..n {
                let ti = lo + i as i64 * epoch;
                let tj = lo + j as i64 * epoch;
                let (li, lj) = (in_any(&reference, ti), in_any(&reference, tj));
                if li && !lj {
                    let (si, sj) = (in_any(&pred, ti) as u8, in_any(&pred, tj) as u8);
                    den += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        assert!((a.c_statistic - num / den).abs() < 1e-12);
    }
}
