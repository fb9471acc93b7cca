//! Per-bout ("local") motion features: distributional, energy, spectral,
//! autocorrelation, peaks, non-linear dynamics, Poincaré and duration.
//!
//! Degenerate inputs (constant series, too-short bouts) follow a uniform
//! convention: the value is 0 and the feature is flagged as missing, so
//! downstream imputation can handle it explicitly.

use std::collections::{BTreeMap, BTreeSet};

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::stats;

/// Named feature values for one activity bout, with explicit missing flags.
#[derive(Debug, Clone, Default)]
pub struct BoutFeatures {
    pub values: BTreeMap<String, f64>,
    pub missing: BTreeSet<String>,
}

impl BoutFeatures {
    fn set(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    fn set_missing(&mut self, key: &str) {
        self.values.insert(key.to_string(), 0.0);
        self.missing.insert(key.to_string());
    }
}

pub(super) const CHANNEL_SUFFIX: [&str; 4] = ["_x", "_y", "_z", ""];

/// Exact-constant check; the degenerate conventions key off this rather than
/// a variance estimate, which carries round-off for constant input.
fn is_constant(s: &[f64]) -> bool {
    s.iter().all(|&v| v == s[0])
}

/// All local feature base names, in registry order. The empty suffix denotes
/// the acceleration magnitude channel.
pub(super) fn local_feature_names() -> Vec<String> {
    let mut names = Vec::new();
    for sfx in CHANNEL_SUFFIX {
        for stat in ["mean", "std", "skew", "kurt", "q0", "q25", "q50", "q75", "q100"] {
            names.push(format!("{stat}{sfx}"));
        }
    }
    names.push("sma".into());
    for base in ["power", "rms"] {
        for sfx in CHANNEL_SUFFIX {
            names.push(format!("{base}{sfx}"));
        }
    }
    for key in [
        "f1", "f2", "f3", "asd_1hz", "asd_2hz", "asd_4hz", "asd_8hz", "asd_16hz", "asd_f1",
        "asd_f2", "asd_f3", "asd_total", "spectral_entropy",
    ] {
        names.push(key.into());
    }
    for sfx in CHANNEL_SUFFIX {
        for base in ["ac_max", "ac_max_lag", "ac_min", "ac_min_lag", "ac_first_min_lag", "ac_zero_crossings"] {
            names.push(format!("{base}{sfx}"));
        }
    }
    for key in ["peaks_per_sec", "prom_mean", "prom_min", "prom_max"] {
        names.push(key.into());
    }
    for sfx in CHANNEL_SUFFIX {
        for base in ["sampen", "hurst_rs"] {
            names.push(format!("{base}{sfx}"));
        }
    }
    for key in ["sd1", "sd2", "ellipse_area", "duration"] {
        names.push(key.into());
    }
    names
}

/// Computes every local feature for one bout. `x`, `y`, `z` are the bandpassed
/// axis slices of the bout; `mag` their Euclidean magnitude; `rate` in Hz.
pub fn local_features(x: &[f64], y: &[f64], z: &[f64], mag: &[f64], rate: f64) -> BoutFeatures {
    assert!(!mag.is_empty() && x.len() == mag.len() && y.len() == mag.len() && z.len() == mag.len());
    let mut out = BoutFeatures::default();
    let channels: [(&str, &[f64]); 4] = [("_x", x), ("_y", y), ("_z", z), ("", mag)];

    for (sfx, s) in channels {
        out.set(&format!("mean{sfx}"), stats::mean(s));
        if is_constant(s) {
            out.set(&format!("std{sfx}"), 0.0);
            out.set(&format!("skew{sfx}"), 0.0);
            out.set(&format!("kurt{sfx}"), 0.0);
        } else {
            out.set(&format!("std{sfx}"), stats::pop_std(s));
            out.set(&format!("skew{sfx}"), stats::skewness(s));
            out.set(&format!("kurt{sfx}"), stats::excess_kurtosis(s));
        }
        let mut sorted = s.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (name, q) in [("q0", 0.0), ("q25", 0.25), ("q50", 0.5), ("q75", 0.75), ("q100", 1.0)] {
            out.set(&format!("{name}{sfx}"), stats::quantile(&sorted, q));
        }
        let power = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        out.set(&format!("power{sfx}"), power);
        out.set(&format!("rms{sfx}"), power.sqrt());
    }
    let sma = (0..mag.len()).map(|i| x[i].abs() + y[i].abs() + z[i].abs()).sum::<f64>() / mag.len() as f64;
    out.set("sma", sma);

    spectral_features(&mut out, mag, rate);
    for (sfx, s) in channels {
        autocorr_features(&mut out, sfx, s, rate);
    }
    peak_features(&mut out, mag, rate);
    for (sfx, s) in channels {
        sample_entropy_into(&mut out, sfx, s);
        hurst_into(&mut out, sfx, s);
    }
    poincare_into(&mut out, mag);
    out.set("duration", mag.len() as f64 / rate);
    out
}

/// Single-segment Hann periodogram, zero-padded to the next power of two that
/// is at least 256; features are taken from the amplitude spectral density.
fn spectral_features(out: &mut BoutFeatures, mag: &[f64], rate: f64) {
    const KEYS: [&str; 13] = [
        "f1", "f2", "f3", "asd_1hz", "asd_2hz", "asd_4hz", "asd_8hz", "asd_16hz", "asd_f1",
        "asd_f2", "asd_f3", "asd_total", "spectral_entropy",
    ];
    let n = mag.len();
    if n < 2 || is_constant(mag) {
        for k in KEYS {
            out.set_missing(k);
        }
        return;
    }
    let nfft = 256usize.max(n.next_power_of_two());
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1).max(1) as f64).cos()))
        .collect();
    let wsum2: f64 = window.iter().map(|w| w * w).sum();
    let mut buf: Vec<Complex64> = (0..nfft)
        .map(|i| Complex64::new(if i < n { mag[i] * window[i] } else { 0.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let nbins = nfft / 2 + 1;
    // One-sided power spectral density, then amplitude spectral density.
    let psd: Vec<f64> = (0..nbins)
        .map(|k| {
            let scale = if k == 0 || k == nbins - 1 { 1.0 } else { 2.0 };
            scale * buf[k].norm_sqr() / (rate * wsum2)
        })
        .collect();
    let asd: Vec<f64> = psd.iter().map(|p| p.sqrt()).collect();
    let bin_hz = rate / nfft as f64;

    // Interior local maxima of the ASD, largest first; ties favor the lower
    // frequency because the scan runs upward and the comparison is strict.
    let mut peaks: Vec<(usize, f64)> = (1..nbins - 1)
        .filter(|&k| asd[k] > asd[k - 1] && asd[k] >= asd[k + 1])
        .map(|k| (k, asd[k]))
        .collect();
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (slot, key_f, key_a) in [(0, "f1", "asd_f1"), (1, "f2", "asd_f2"), (2, "f3", "asd_f3")] {
        match peaks.get(slot) {
            Some(&(k, a)) => {
                out.set(key_f, k as f64 * bin_hz);
                out.set(key_a, a);
            }
            None => {
                out.set_missing(key_f);
                out.set_missing(key_a);
            }
        }
    }
    for (key, f) in [("asd_1hz", 1.0), ("asd_2hz", 2.0), ("asd_4hz", 4.0), ("asd_8hz", 8.0), ("asd_16hz", 16.0)] {
        let k = ((f / bin_hz).round() as usize).min(nbins - 1);
        out.set(key, asd[k]);
    }
    out.set("asd_total", asd.iter().sum());

    let total_power: f64 = psd.iter().sum();
    if total_power <= 0.0 {
        out.set_missing("spectral_entropy");
    } else {
        let h: f64 = psd
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| {
                let q = p / total_power;
                -q * q.ln()
            })
            .sum();
        out.set("spectral_entropy", h / (nbins as f64).ln());
    }
}

/// Biased normalized autocorrelation over lags 1..=min(N-1, 10 s). Lags are
/// reported in seconds.
fn autocorr_features(out: &mut BoutFeatures, sfx: &str, s: &[f64], rate: f64) {
    let keys = ["ac_max", "ac_max_lag", "ac_min", "ac_min_lag", "ac_first_min_lag", "ac_zero_crossings"];
    let n = s.len();
    let max_lag = (n.saturating_sub(1)).min((10.0 * rate) as usize);
    let m = stats::mean(s);
    let denom: f64 = s.iter().map(|v| (v - m) * (v - m)).sum();
    if n < 4 || denom <= 0.0 || max_lag == 0 || is_constant(s) {
        for k in keys {
            out.set_missing(&format!("{k}{sfx}"));
        }
        return;
    }
    let ac: Vec<f64> = (1..=max_lag)
        .map(|tau| (0..n - tau).map(|i| (s[i] - m) * (s[i + tau] - m)).sum::<f64>() / denom)
        .collect();

    let (mut max_v, mut max_i, mut min_v, mut min_i) = (ac[0], 0usize, ac[0], 0usize);
    for (i, &v) in ac.iter().enumerate() {
        if v > max_v {
            max_v = v;
            max_i = i;
        }
        if v < min_v {
            min_v = v;
            min_i = i;
        }
    }
    out.set(&format!("ac_max{sfx}"), max_v);
    out.set(&format!("ac_max_lag{sfx}"), (max_i + 1) as f64 / rate);
    out.set(&format!("ac_min{sfx}"), min_v);
    out.set(&format!("ac_min_lag{sfx}"), (min_i + 1) as f64 / rate);

    // First local minimum of the extended sequence AC(0)=1, AC(1), ...
    let mut first_min = None;
    for i in 0..ac.len() {
        let prev = if i == 0 { 1.0 } else { ac[i - 1] };
        let next = ac.get(i + 1).copied();
        if ac[i] < prev && next.map_or(true, |nx| ac[i] < nx) {
            first_min = Some(i + 1);
            break;
        }
    }
    match first_min {
        Some(lag) => out.set(&format!("ac_first_min_lag{sfx}"), lag as f64 / rate),
        None => out.set_missing(&format!("ac_first_min_lag{sfx}")),
    }

    let mut crossings = 0usize;
    let mut prev = 1.0f64; // AC(0)
    for &v in &ac {
        if prev * v < 0.0 {
            crossings += 1;
        }
        if v != 0.0 {
            prev = v;
        }
    }
    out.set(&format!("ac_zero_crossings{sfx}"), crossings as f64);
}

/// Local maxima of the magnitude with topographic prominence >= `PROM_FLOOR_G`.
const PROM_FLOOR_G: f64 = 0.05;

pub(super) fn find_peaks(s: &[f64], floor: f64) -> Vec<(usize, f64)> {
    let mut peaks = Vec::new();
    for i in 1..s.len().saturating_sub(1) {
        if !(s[i] > s[i - 1] && s[i] >= s[i + 1]) {
            continue;
        }
        let mut left_min = s[i];
        let mut j = i;
        while j > 0 && s[j - 1] <= s[i] {
            j -= 1;
            left_min = left_min.min(s[j]);
        }
        let mut right_min = s[i];
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] <= s[i] {
            j += 1;
            right_min = right_min.min(s[j]);
        }
        let prom = s[i] - left_min.max(right_min);
        if prom >= floor {
            peaks.push((i, prom));
        }
    }
    peaks
}

fn peak_features(out: &mut BoutFeatures, mag: &[f64], rate: f64) {
    let peaks = find_peaks(mag, PROM_FLOOR_G);
    out.set("peaks_per_sec", peaks.len() as f64 / (mag.len() as f64 / rate));
    if peaks.is_empty() {
        out.set_missing("prom_mean");
        out.set_missing("prom_min");
        out.set_missing("prom_max");
        return;
    }
    let proms: Vec<f64> = peaks.iter().map(|p| p.1).collect();
    out.set("prom_mean", stats::mean(&proms));
    out.set("prom_min", proms.iter().cloned().fold(f64::INFINITY, f64::min));
    out.set("prom_max", proms.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
}

/// Sample entropy with m = 2, r = 0.2 * population std, Chebyshev distance,
/// self-matches excluded. If either match count is zero, the value is capped
/// at ln(N-m) + ln(N-m-1) and flagged missing.
pub fn sample_entropy(s: &[f64]) -> Option<f64> {
    const M: usize = 2;
    let n = s.len();
    if n < 10 {
        return None;
    }
    let r = 0.2 * stats::pop_std(s);
    let nt = n - M; // templates of length m and m+1 both indexed 0..nt
    let mut a = 0u64;
    let mut b = 0u64;
    for i in 0..nt {
        for j in i + 1..nt {
            let mut d = 0.0f64;
            for k in 0..M {
                d = d.max((s[i + k] - s[j + k]).abs());
            }
            if d <= r {
                b += 1;
                if (s[i + M] - s[j + M]).abs().max(d) <= r {
                    a += 1;
                }
            }
        }
    }
    if a == 0 || b == 0 {
        return Some(f64::NAN); // caller substitutes the cap and flags
    }
    Some(-((a as f64 / b as f64).ln()))
}

fn sample_entropy_into(out: &mut BoutFeatures, sfx: &str, s: &[f64]) {
    let key = format!("sampen{sfx}");
    match sample_entropy(s) {
        Some(v) if v.is_finite() => out.set(&key, v),
        Some(_) => {
            let n = s.len() as f64;
            out.values.insert(key.clone(), (n - 2.0).ln() + (n - 3.0).ln());
            out.missing.insert(key);
        }
        None => out.set_missing(&key),
    }
}

/// Rescaled-range Hurst exponent over power-of-two window sizes 16..=N/2.
pub fn hurst_rs(s: &[f64]) -> Option<f64> {
    let n = s.len();
    if n < 64 || is_constant(s) {
        return None;
    }
    let mut pts = Vec::new();
    let mut w = 16usize;
    while w <= n / 2 {
        let mut ratios = Vec::new();
        for chunk in s.chunks_exact(w) {
            let m = stats::mean(chunk);
            let std = stats::pop_std(chunk);
            if std <= 0.0 {
                continue;
            }
            let mut cum = 0.0;
            let mut zmin = f64::INFINITY;
            let mut zmax = f64::NEG_INFINITY;
            for &v in chunk {
                cum += v - m;
                zmin = zmin.min(cum);
                zmax = zmax.max(cum);
            }
            ratios.push((zmax - zmin) / std);
        }
        if !ratios.is_empty() {
            pts.push(((w as f64).ln(), stats::mean(&ratios).ln()));
        }
        w *= 2;
    }
    if pts.len() < 2 {
        return None; // effectively constant series
    }
    let mx = stats::mean(&pts.iter().map(|p| p.0).collect::<Vec<_>>());
    let my = stats::mean(&pts.iter().map(|p| p.1).collect::<Vec<_>>());
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(num / den)
}

fn hurst_into(out: &mut BoutFeatures, sfx: &str, s: &[f64]) {
    let key = format!("hurst_rs{sfx}");
    match hurst_rs(s) {
        Some(h) => out.set(&key, h),
        None => {
            // Convention: undefined R/S reports the random-walk-free value.
            out.values.insert(key.clone(), 0.5);
            out.missing.insert(key);
        }
    }
}

/// Poincaré descriptors over successive sample pairs (population std).
pub fn poincare(s: &[f64]) -> (f64, f64, f64) {
    let diffs: Vec<f64> = s.windows(2).map(|w| (w[1] - w[0]) / std::f64::consts::SQRT_2).collect();
    let sums: Vec<f64> = s.windows(2).map(|w| (w[1] + w[0]) / std::f64::consts::SQRT_2).collect();
    let sd1 = stats::pop_std(&diffs);
    let sd2 = stats::pop_std(&sums);
    (sd1, sd2, std::f64::consts::PI * sd1 * sd2)
}

fn poincare_into(out: &mut BoutFeatures, mag: &[f64]) {
    if mag.len() < 3 {
        out.set_missing("sd1");
        out.set_missing("sd2");
        out.set_missing("ellipse_area");
        return;
    }
    let (sd1, sd2, area) = poincare(mag);
    out.set("sd1", sd1);
    out.set("sd2", sd2);
    out.set("ellipse_area", area);
}
