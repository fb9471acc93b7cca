//! Night-level ("global") features computed across all bouts of a sleep
//! window: temporal clustering (Hopkins statistic, KDE peaks), movement count
//! and inter-event-interval statistics.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::stats;

use super::{agg_stat, AGG_STATS};

pub(super) fn global_feature_names() -> Vec<String> {
    let mut names = vec![
        "hopkins".to_string(),
        "kde_n_peaks".to_string(),
        "kde_peak_prom_mean".to_string(),
        "kde_peak_prom_max".to_string(),
        "n_moves_per_hour".to_string(),
    ];
    for stat in AGG_STATS {
        names.push(format!("iei__{stat}"));
    }
    names
}

/// Computes all global features from bout midpoints (seconds from window
/// onset) and the window duration. `seed` drives the Hopkins resampling.
pub fn global_features(
    midpoints_s: &[f64],
    window_s: f64,
    seed: u64,
) -> (BTreeMap<String, f64>, BTreeSet<String>) {
    let mut values = BTreeMap::new();
    let mut missing = BTreeSet::new();
    let mut set_missing = |values: &mut BTreeMap<String, f64>, missing: &mut BTreeSet<String>, k: &str| {
        values.insert(k.to_string(), 0.0);
        missing.insert(k.to_string());
    };

    let n = midpoints_s.len();
    values.insert("n_moves_per_hour".into(), n as f64 / (window_s / 3600.0));

    match hopkins(midpoints_s, window_s, seed) {
        Some(h) => {
            values.insert("hopkins".into(), h);
        }
        None => set_missing(&mut values, &mut missing, "hopkins"),
    }

    if n >= 3 {
        let (n_peaks, proms) = kde_peaks(midpoints_s, window_s);
        values.insert("kde_n_peaks".into(), n_peaks as f64);
        if proms.is_empty() {
            set_missing(&mut values, &mut missing, "kde_peak_prom_mean");
            set_missing(&mut values, &mut missing, "kde_peak_prom_max");
        } else {
            values.insert("kde_peak_prom_mean".into(), stats::mean(&proms));
            values.insert(
                "kde_peak_prom_max".into(),
                proms.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
        }
    } else {
        set_missing(&mut values, &mut missing, "kde_n_peaks");
        set_missing(&mut values, &mut missing, "kde_peak_prom_mean");
        set_missing(&mut values, &mut missing, "kde_peak_prom_max");
    }

    if n >= 2 {
        let gaps: Vec<f64> = midpoints_s.windows(2).map(|w| w[1] - w[0]).collect();
        for stat in AGG_STATS {
            values.insert(format!("iei__{stat}"), agg_stat(&gaps, stat));
        }
    } else {
        for stat in AGG_STATS {
            set_missing(&mut values, &mut missing, &format!("iei__{stat}"));
        }
    }
    (values, missing)
}

/// 1-D Hopkins statistic over bout midpoint times, averaged across 50 seeded
/// resamples. Needs at least three bouts.
pub fn hopkins(points: &[f64], window_s: f64, seed: u64) -> Option<f64> {
    let n = points.len();
    if n < 3 || window_s <= 0.0 {
        return None;
    }
    let m = (n / 10).clamp(1, 20);
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nn = |x: f64, exclude: Option<usize>| -> f64 {
        let mut best = f64::INFINITY;
        for (i, &p) in sorted.iter().enumerate() {
            if Some(i) == exclude {
                continue;
            }
            best = best.min((p - x).abs());
        }
        best
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hs = Vec::with_capacity(50);
    for _ in 0..50 {
        let mut u_sum = 0.0;
        for _ in 0..m {
            u_sum += nn(rng.gen_range(0.0..window_s), None);
        }
        let mut w_sum = 0.0;
        // m distinct data points by index shuffle.
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
            w_sum += nn(sorted[idx[i]], Some(idx[i]));
        }
        let denom = u_sum + w_sum;
        if denom > 0.0 {
            hs.push(u_sum / denom);
        }
    }
    if hs.is_empty() {
        None
    } else {
        Some(stats::mean(&hs))
    }
}

/// Gaussian KDE over midpoint times with Silverman bandwidth, evaluated on a
/// 512-point grid; returns the count of density peaks with prominence at
/// least 5% of the maximum density, and those prominences.
pub fn kde_peaks(points: &[f64], window_s: f64) -> (usize, Vec<f64>) {
    let n = points.len() as f64;
    let std = stats::pop_std(points);
    let iqr = stats::quantile_of(points, 0.75) - stats::quantile_of(points, 0.25);
    let mut spread = std.min(iqr / 1.34);
    if spread <= 0.0 {
        spread = std.max(window_s / 100.0).max(1e-6);
    }
    let bw = 0.9 * spread * n.powf(-0.2);
    const GRID: usize = 512;
    let density: Vec<f64> = (0..GRID)
        .map(|g| {
            let x = window_s * g as f64 / (GRID - 1) as f64;
            points
                .iter()
                .map(|&p| {
                    let u = (x - p) / bw;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                / (n * bw * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    let peak_floor = 0.05 * density.iter().cloned().fold(0.0f64, f64::max);
    let peaks = super::local::find_peaks(&density, peak_floor.max(1e-300));
    let proms: Vec<f64> = peaks.iter().map(|p| p.1).collect();
    (proms.len(), proms)
}
