//! Engineered nocturnal motion features.
//!
//! Per-bout local features (see [`local`]) are aggregated across all bouts of
//! a night with eight distribution statistics, then combined with night-level
//! global features (see [`global`]) into one [`NightFeatureVector`] per
//! detected sleep window. The feature registry is closed: every night emits
//! exactly the keys of [`registry`], in that order, and repeated extraction
//! is bit-identical for a fixed seed.

pub mod global;
pub mod local;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bouts::ActivityBout;
use crate::signal::UniformSignal;
use crate::sleep::SleepWindow;
use crate::stats;

pub use global::{global_features, hopkins, kde_peaks};
pub use local::{local_features, BoutFeatures};

/// Aggregation statistics applied to each local feature's per-bout
/// distribution.
pub const AGG_STATS: [&str; 8] = ["mean", "std", "skew", "kurt", "mad", "iqr", "p10", "p90"];

/// Extra quantile aggregations emitted for the bout-duration feature.
const DURATION_EXTRA_STATS: [&str; 3] = ["median", "q25", "q75"];

pub(crate) fn agg_stat(values: &[f64], stat: &str) -> f64 {
    match stat {
        "mean" => stats::mean(values),
        "std" => stats::pop_std(values),
        "skew" => stats::skewness(values),
        "kurt" => stats::excess_kurtosis(values),
        "mad" => stats::mad(values),
        "iqr" => stats::quantile_of(values, 0.75) - stats::quantile_of(values, 0.25),
        "p10" => stats::quantile_of(values, 0.10),
        "p90" => stats::quantile_of(values, 0.90),
        "median" => stats::median(values),
        "q25" => stats::quantile_of(values, 0.25),
        "q75" => stats::quantile_of(values, 0.75),
        other => unreachable!("unknown aggregation statistic {other}"),
    }
}

/// The closed, ordered feature registry: aggregated local features followed by
/// global features.
pub fn registry() -> Vec<String> {
    let mut keys = Vec::new();
    for name in local::local_feature_names() {
        for stat in AGG_STATS {
            keys.push(format!("{name}__{stat}"));
        }
        if name == "duration" {
            for stat in DURATION_EXTRA_STATS {
                keys.push(format!("{name}__{stat}"));
            }
        }
    }
    keys.extend(global::global_feature_names());
    keys
}

/// Named feature values for one detected sleep window ("night").
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NightFeatureVector {
    pub night_id: String,
    pub patient_id: String,
    /// 1 = RBD, 0 = HC, `None` = unknown.
    pub label: Option<u8>,
    pub values: BTreeMap<String, f64>,
    pub missing: BTreeSet<String>,
    /// True when the night had no detected bouts; such nights carry an
    /// all-missing vector and are excluded from training.
    pub excluded: bool,
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("night {0} references samples outside the signal")]
    WindowOutOfRange(String),
    #[error("feature matrix malformed: {0}")]
    MalformedMatrix(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Aggregates per-bout feature lists into the local part of a night vector.
/// For each local feature the statistics run over the bouts where the feature
/// is present; features missing in every bout yield all-missing statistics.
pub fn aggregate_night(bout_features: &[BoutFeatures]) -> (BTreeMap<String, f64>, BTreeSet<String>) {
    let mut values = BTreeMap::new();
    let mut missing = BTreeSet::new();
    for name in local::local_feature_names() {
        let present: Vec<f64> = bout_features
            .iter()
            .filter(|bf| !bf.missing.contains(&name))
            .map(|bf| bf.values[&name])
            .collect();
        let mut stats_for = |stat: &str| {
            let key = format!("{name}__{stat}");
            if present.is_empty() {
                values.insert(key.clone(), 0.0);
                missing.insert(key);
            } else {
                values.insert(key, agg_stat(&present, stat));
            }
        };
        for stat in AGG_STATS {
            stats_for(stat);
        }
        if name == "duration" {
            for stat in DURATION_EXTRA_STATS {
                stats_for(stat);
            }
        }
    }
    (values, missing)
}

/// Computes the complete feature vector for one night: local features per
/// bout, aggregated, plus global clustering features. A night without bouts
/// produces an all-missing vector marked `excluded`.
pub fn extract_night(
    sig: &UniformSignal,
    win: &SleepWindow,
    bouts: &[ActivityBout],
    night_id: &str,
    patient_id: &str,
    label: Option<u8>,
    seed: u64,
) -> Result<NightFeatureVector, FeatureError> {
    if bouts.is_empty() {
        let mut values = BTreeMap::new();
        let mut missing = BTreeSet::new();
        for key in registry() {
            values.insert(key.clone(), 0.0);
            missing.insert(key);
        }
        return Ok(NightFeatureVector {
            night_id: night_id.to_string(),
            patient_id: patient_id.to_string(),
            label,
            values,
            missing,
            excluded: true,
        });
    }

    let mut per_bout = Vec::with_capacity(bouts.len());
    for b in bouts {
        if b.end_idx > sig.len() || b.end_idx <= b.start_idx {
            return Err(FeatureError::WindowOutOfRange(night_id.to_string()));
        }
        let r = b.start_idx..b.end_idx;
        let mag: Vec<f64> = r
            .clone()
            .map(|i| (sig.x[i] * sig.x[i] + sig.y[i] * sig.y[i] + sig.z[i] * sig.z[i]).sqrt())
            .collect();
        per_bout.push(local::local_features(
            &sig.x[r.clone()],
            &sig.y[r.clone()],
            &sig.z[r],
            &mag,
            sig.rate,
        ));
    }
    let (mut values, mut missing) = aggregate_night(&per_bout);

    let onset_idx = sig.index_at(win.onset_t);
    let midpoints: Vec<f64> = bouts
        .iter()
        .map(|b| b.midpoint_s(sig.rate) - onset_idx as f64 / sig.rate)
        .collect();
    let window_s = (win.wake_t - win.onset_t) as f64 / 1e9;
    let (gvals, gmiss) = global::global_features(&midpoints, window_s, seed);
    values.extend(gvals);
    missing.extend(gmiss);

    Ok(NightFeatureVector {
        night_id: night_id.to_string(),
        patient_id: patient_id.to_string(),
        label,
        values,
        missing,
        excluded: false,
    })
}

/// Serializes a night feature matrix as CSV: metadata columns followed by the
/// registry in order. Missing values are empty cells.
pub fn write_feature_csv<W: std::io::Write>(
    mut w: W,
    nights: &[NightFeatureVector],
) -> Result<(), FeatureError> {
    let keys = registry();
    write!(w, "night_id,patient_id,label,excluded")?;
    for k in &keys {
        write!(w, ",{k}")?;
    }
    writeln!(w)?;
    for n in nights {
        let label = n.label.map(|l| l.to_string()).unwrap_or_default();
        write!(w, "{},{},{},{}", n.night_id, n.patient_id, label, n.excluded as u8)?;
        for k in &keys {
            if n.missing.contains(k) {
                write!(w, ",")?;
            } else {
                write!(w, ",{}", n.values[k])?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses a feature matrix produced by [`write_feature_csv`]. The header must
/// match the current registry exactly.
pub fn read_feature_csv<R: std::io::BufRead>(r: R) -> Result<Vec<NightFeatureVector>, FeatureError> {
    let keys = registry();
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| FeatureError::MalformedMatrix("empty file".into()))??;
    let expect: Vec<String> = ["night_id", "patient_id", "label", "excluded"]
        .into_iter()
        .map(String::from)
        .chain(keys.iter().cloned())
        .collect();
    if header.split(',').map(str::to_string).collect::<Vec<_>>() != expect {
        return Err(FeatureError::MalformedMatrix("header does not match feature registry".into()));
    }
    let mut nights = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != expect.len() {
            return Err(FeatureError::MalformedMatrix(format!(
                "row {}: expected {} cells, found {}",
                lineno + 2,
                expect.len(),
                cells.len()
            )));
        }
        let label = if cells[2].is_empty() {
            None
        } else {
            Some(cells[2].parse::<u8>().map_err(|e| {
                FeatureError::MalformedMatrix(format!("row {}: bad label: {e}", lineno + 2))
            })?)
        };
        let mut values = BTreeMap::new();
        let mut missing = BTreeSet::new();
        for (k, cell) in keys.iter().zip(&cells[4..]) {
            if cell.is_empty() {
                values.insert(k.clone(), 0.0);
                missing.insert(k.clone());
            } else {
                let v: f64 = cell.parse().map_err(|e| {
                    FeatureError::MalformedMatrix(format!("row {}: bad value for {k}: {e}", lineno + 2))
                })?;
                values.insert(k.clone(), v);
            }
        }
        nights.push(NightFeatureVector {
            night_id: cells[0].to_string(),
            patient_id: cells[1].to_string(),
            label,
            values,
            missing,
            excluded: cells[3] == "1",
        });
    }
    Ok(nights)
}
