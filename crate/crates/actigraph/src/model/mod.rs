//! Night-level classifier pipeline: imputation, robust scaling, SMOTE,
//! ensemble feature ranking, gradient-boosted trees, Platt calibration and
//! ROC-derived thresholds.

pub mod cv;
pub mod gbdt;
pub mod rank;
pub mod tune;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{registry, NightFeatureVector};
use crate::stats;

pub use gbdt::{sigmoid, train_gbdt, GBDTModel, TreeNode};
pub use rank::{rank_features, RankMethod};
pub use tune::tune_hyperparams;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("SMOTE requires at least two minority samples")]
    SingleMinoritySample,
    #[error("need at least {0} nights")]
    TooFewNights(usize),
    #[error("optimization budget {0} is below the minimum of 10")]
    BudgetTooSmall(usize),
    #[error("night vector contains unknown feature keys: {0}")]
    UnknownFeatureKeys(String),
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("model file malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Boosting hyperparameters; the search space matches `tune::SPACE`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub colsample_bylevel: f64,
    pub top_k_feats: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            n_estimators: 500,
            max_depth: 6,
            min_child_weight: 2.0,
            learning_rate: 0.05,
            subsample: 0.8,
            colsample_bytree: 0.5,
            colsample_bylevel: 0.3,
            top_k_feats: 20,
        }
    }
}

/// Per-feature robust scaler: x' = (x - median) / IQR, IQR 0 -> divisor 1.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RobustScaler {
    pub medians: Vec<f64>,
    pub iqrs: Vec<f64>,
}

impl RobustScaler {
    pub fn fit(matrix: &[Vec<f64>]) -> Self {
        let n_features = matrix.first().map_or(0, Vec::len);
        let mut medians = Vec::with_capacity(n_features);
        let mut iqrs = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let col: Vec<f64> = matrix.iter().map(|r| r[f]).collect();
            medians.push(stats::median(&col));
            let iqr = stats::quantile_of(&col, 0.75) - stats::quantile_of(&col, 0.25);
            iqrs.push(if iqr > 0.0 { iqr } else { 1.0 });
        }
        Self { medians, iqrs }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(f, &v)| (v - self.medians[f]) / self.iqrs[f])
            .collect()
    }

    pub fn apply(&self, matrix: &[Vec<f64>]) -> Vec<Vec<f64>> {
        matrix.iter().map(|r| self.apply_row(r)).collect()
    }
}

/// SMOTE: upsamples the minority class to the majority count. Each synthetic
/// sample lies on the segment from a minority point to one of its k nearest
/// minority neighbors (Euclidean distance in the scaled space).
pub fn smote(
    matrix: &[Vec<f64>],
    labels: &[u8],
    k: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<u8>), ModelError> {
    use rand::{Rng, SeedableRng};
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ModelError::SingleClass);
    }
    let minority_label: u8 = if n_pos < n_neg { 1 } else { 0 };
    let (minority_count, majority_count) = if n_pos < n_neg { (n_pos, n_neg) } else { (n_neg, n_pos) };
    let mut out_x = matrix.to_vec();
    let mut out_y = labels.to_vec();
    if minority_count == majority_count {
        return Ok((out_x, out_y));
    }
    if minority_count < 2 {
        return Err(ModelError::SingleMinoritySample);
    }
    let minority: Vec<&Vec<f64>> = matrix
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == minority_label)
        .map(|(r, _)| r)
        .collect();
    let k = k.min(minority_count - 1);
    // k nearest minority neighbors per minority point.
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..minority.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let dist: f64 = minority[i]
                        .iter()
                        .zip(minority[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (dist, j)
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d[..k].iter().map(|&(_, j)| j).collect()
        })
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..majority_count - minority_count {
        let i = rng.gen_range(0..minority.len());
        let j = neighbors[i][rng.gen_range(0..k)];
        let u: f64 = rng.gen_range(0.0..1.0);
        let row: Vec<f64> = minority[i]
            .iter()
            .zip(minority[j])
            .map(|(a, b)| a + u * (b - a))
            .collect();
        out_x.push(row);
        out_y.push(minority_label);
    }
    Ok((out_x, out_y))
}

/// Fits Platt scaling p = 1 / (1 + exp(A*m + B)) on margins by regularized
/// maximum likelihood with Platt's smoothed targets, using Newton iterations
/// until the gradient norm drops below 1e-8. The caller supplies out-of-fold
/// margins when calibration must be unbiased.
pub fn platt_fit(margins: &[f64], labels: &[u8]) -> Result<(f64, f64), ModelError> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(ModelError::SingleClass);
    }
    let t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    let t_neg = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l == 1 { t_pos } else { t_neg }).collect();
    let (mut a, mut b) = (-1.0f64, 0.0f64);
    for _ in 0..200 {
        let (mut ga, mut gb) = (0.0, 0.0);
        let (mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0);
        for (&m, &t) in margins.iter().zip(&targets) {
            let p = 1.0 / (1.0 + (a * m + b).exp());
            // d(-loglik)/dz with z = A*m + B: p - (1 - t) ... derive:
            // p = sigma(-z); dp/dz = -p(1-p); d(-ll)/dz = (t - p) ... sign:
            let dz = t - p; // gradient of negative log-likelihood w.r.t. z
            let w = p * (1.0 - p);
            ga += dz * m;
            gb += dz;
            haa += w * m * m;
            hab += w * m;
            hbb += w;
        }
        // Small ridge keeps the Newton system well-posed for separable data.
        haa += 1e-9;
        hbb += 1e-9;
        if (ga * ga + gb * gb).sqrt() < 1e-8 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let da = (ga * hbb - gb * hab) / det;
        let db = (gb * haa - ga * hab) / det;
        a -= da;
        b -= db;
    }
    Ok((a, b))
}

pub fn platt_apply(a: f64, b: f64, margin: f64) -> f64 {
    1.0 / (1.0 + (a * margin + b).exp())
}

/// Threshold maximizing Youden's J = TPR - FPR, with a positive prediction
/// defined as `prob > threshold`. Candidates are midpoints between distinct
/// sorted probabilities; ties prefer the lower threshold. All-equal
/// probabilities return 0.5.
pub fn select_threshold(probs: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(ModelError::SingleClass);
    }
    let mut uniq: Vec<f64> = probs.to_vec();
    uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    uniq.dedup();
    if uniq.len() == 1 {
        return Ok(0.5);
    }
    let candidates: Vec<f64> = uniq.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for &t in &candidates {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (&p, &l) in probs.iter().zip(labels) {
            if p > t {
                if l == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let j = tp / n_pos - fp / n_neg;
        if j > best.0 + 1e-12 || (j >= best.0 - 1e-12 && t < best.1) {
            best = (j, t);
        }
    }
    Ok(best.1)
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// Provenance of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingManifest {
    pub seed: u64,
    pub hyperparams: HyperParams,
    pub data_hash: u64,
    pub n_nights: usize,
    pub n_patients: usize,
}

/// The full trained pipeline, serializable as versioned JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineModel {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub imputation_medians: Vec<f64>,
    pub scaler: RobustScaler,
    pub selected_features: Vec<String>,
    pub gbdt: GBDTModel,
    pub platt_a: f64,
    pub platt_b: f64,
    pub night_threshold: f64,
    pub patient_threshold: f64,
    pub manifest: TrainingManifest,
}

impl PipelineModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value =
            serde_json::from_str(s).map_err(|e| ModelError::Malformed(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::Malformed("missing version field".into()))?;
        if version != MODEL_FORMAT_VERSION as u64 {
            return Err(ModelError::UnsupportedVersion(version as u32));
        }
        serde_json::from_value(value).map_err(|e| ModelError::Malformed(e.to_string()))
    }

    /// Raw (uncalibrated) margin for one night.
    pub fn margin(&self, night: &NightFeatureVector) -> Result<f64, ModelError> {
        let row = self.night_row(night)?;
        Ok(self.gbdt.margin(&row))
    }

    /// Calibrated RBD probability for one night.
    pub fn predict_night(&self, night: &NightFeatureVector) -> Result<f64, ModelError> {
        Ok(platt_apply(self.platt_a, self.platt_b, self.margin(night)?))
    }

    /// Imputes, scales and restricts one night to the selected features.
    fn night_row(&self, night: &NightFeatureVector) -> Result<Vec<f64>, ModelError> {
        let mut raw = Vec::with_capacity(self.feature_names.len());
        for (f, name) in self.feature_names.iter().enumerate() {
            match night.values.get(name) {
                Some(&v) if !night.missing.contains(name) => raw.push(v),
                Some(_) => raw.push(self.imputation_medians[f]),
                None => return Err(ModelError::UnknownFeatureKeys(name.clone())),
            }
        }
        let scaled = self.scaler.apply_row(&raw);
        let selected: Vec<f64> = self
            .selected_features
            .iter()
            .map(|name| {
                let idx = self.feature_names.iter().position(|n| n == name).unwrap();
                scaled[idx]
            })
            .collect();
        Ok(selected)
    }
}

/// Dense numeric view of a set of nights: imputation happens here with the
/// provided per-feature medians (computed on training data).
pub fn to_matrix(
    nights: &[NightFeatureVector],
    feature_names: &[String],
    imputation_medians: Option<&[f64]>,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    // First pass: training medians over present values (when not supplied).
    let medians: Vec<f64> = match imputation_medians {
        Some(m) => m.to_vec(),
        None => feature_names
            .iter()
            .map(|name| {
                let present: Vec<f64> = nights
                    .iter()
                    .filter(|n| !n.missing.contains(name))
                    .filter_map(|n| n.values.get(name).copied())
                    .collect();
                if present.is_empty() {
                    0.0
                } else {
                    stats::median(&present)
                }
            })
            .collect(),
    };
    let matrix: Vec<Vec<f64>> = nights
        .iter()
        .map(|n| {
            feature_names
                .iter()
                .enumerate()
                .map(|(f, name)| {
                    if n.missing.contains(name) {
                        medians[f]
                    } else {
                        n.values.get(name).copied().unwrap_or(medians[f])
                    }
                })
                .collect()
        })
        .collect();
    (matrix, medians)
}

/// FNV-1a hash of the numeric content of a feature matrix, for manifests.
pub fn data_hash(nights: &[NightFeatureVector]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for n in nights {
        eat(n.night_id.as_bytes());
        eat(n.patient_id.as_bytes());
        eat(&[n.label.unwrap_or(255)]);
        for v in n.values.values() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    h
}

/// Trains the complete pipeline on labeled nights with fixed hyperparameters:
/// impute, scale, SMOTE, ensemble-rank, fit the GBDT, calibrate with Platt
/// scaling on out-of-fold margins (5-fold stratified group CV), and derive
/// night/patient thresholds from the training ROC curves.
pub fn fit_pipeline(
    nights: &[NightFeatureVector],
    hp: &HyperParams,
    seed: u64,
) -> Result<PipelineModel, ModelError> {
    let usable: Vec<&NightFeatureVector> =
        nights.iter().filter(|n| !n.excluded && n.label.is_some()).collect();
    if usable.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let usable_owned: Vec<NightFeatureVector> = usable.iter().map(|&n| n.clone()).collect();
    let labels: Vec<u8> = usable.iter().map(|n| n.label.unwrap()).collect();
    let groups: Vec<String> = usable.iter().map(|n| n.patient_id.clone()).collect();
    let feature_names = registry();

    let (raw, medians) = to_matrix(&usable_owned, &feature_names, None);
    let scaler = RobustScaler::fit(&raw);
    let scaled = scaler.apply(&raw);
    let (bal_x, bal_y) = smote(&scaled, &labels, 5, seed)?;
    let ranking = rank::rank_features(&bal_x, &bal_y, &feature_names, RankMethod::Ensemble, seed)?;
    let selected: Vec<String> = ranking[..hp.top_k_feats.min(ranking.len())].to_vec();
    let sel_idx: Vec<usize> = selected
        .iter()
        .map(|s| feature_names.iter().position(|n| n == s).unwrap())
        .collect();
    let restrict =
        |m: &[Vec<f64>]| -> Vec<Vec<f64>> { m.iter().map(|r| sel_idx.iter().map(|&i| r[i]).collect()).collect() };
    let train_x = restrict(&bal_x);
    let train_y: Vec<f64> = bal_y.iter().map(|&l| l as f64).collect();

    // Out-of-fold margins for Platt calibration: 5-fold stratified group CV
    // on the real (pre-SMOTE) nights.
    let folds = cv::stratified_group_kfold(&groups, &labels, 5, seed);
    let scaled_sel = restrict(&scaled);
    let mut oof_margins = vec![f64::NAN; usable.len()];
    for test_idx in &folds {
        let in_test: Vec<bool> = {
            let mut m = vec![false; usable.len()];
            for &i in test_idx {
                m[i] = true;
            }
            m
        };
        let tr_rows: Vec<Vec<f64>> = (0..usable.len())
            .filter(|&i| !in_test[i])
            .map(|i| scaled_sel[i].clone())
            .collect();
        let tr_labels: Vec<u8> = (0..usable.len()).filter(|&i| !in_test[i]).map(|i| labels[i]).collect();
        if tr_labels.iter().all(|&l| l == tr_labels[0]) {
            continue;
        }
        let (fx, fy) = smote(&tr_rows, &tr_labels, 5, seed)?;
        let fy: Vec<f64> = fy.iter().map(|&l| l as f64).collect();
        let fold_model = train_gbdt(&fx, &fy, hp, None, seed)?;
        for &i in test_idx {
            oof_margins[i] = fold_model.margin(&scaled_sel[i]);
        }
    }
    let have_oof: Vec<usize> = (0..usable.len()).filter(|&i| oof_margins[i].is_finite()).collect();
    let (pa, pb) = platt_fit(
        &have_oof.iter().map(|&i| oof_margins[i]).collect::<Vec<_>>(),
        &have_oof.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
    )?;

    let gbdt = train_gbdt(&train_x, &train_y, hp, None, seed)?;

    // Thresholds from training probabilities.
    let night_probs: Vec<f64> = scaled_sel
        .iter()
        .map(|r| platt_apply(pa, pb, gbdt.margin(r)))
        .collect();
    let night_threshold = select_threshold(&night_probs, &labels)?;
    let mut per_patient: BTreeMap<&str, (Vec<f64>, u8)> = BTreeMap::new();
    for (i, n) in usable.iter().enumerate() {
        let entry = per_patient.entry(&n.patient_id).or_insert_with(|| (Vec::new(), labels[i]));
        entry.0.push(night_probs[i]);
    }
    let patient_scores: Vec<f64> = per_patient.values().map(|(p, _)| stats::mean(p)).collect();
    let patient_labels: Vec<u8> = per_patient.values().map(|(_, l)| *l).collect();
    let patient_threshold = select_threshold(&patient_scores, &patient_labels)?;

    Ok(PipelineModel {
        version: MODEL_FORMAT_VERSION,
        feature_names,
        imputation_medians: medians,
        scaler,
        selected_features: selected,
        gbdt,
        platt_a: pa,
        platt_b: pb,
        night_threshold,
        patient_threshold,
        manifest: TrainingManifest {
            seed,
            hyperparams: hp.clone(),
            data_hash: data_hash(&usable_owned),
            n_nights: usable.len(),
            n_patients: per_patient.len(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn robust_scaler_hand_check() {
        let m = vec![vec![1.0], vec![2.0], vec![3.0], vec![100.0]];
        let s = RobustScaler::fit(&m);
        assert_eq!(s.medians[0], 2.5);
        // quantile rule: q75 at pos 2.25 -> 3 + 0.25*97 = 27.25; q25 -> 1.75
        assert!((s.iqrs[0] - 25.5).abs() < 1e-12);
        let scaled = s.apply(&m);
        let col: Vec<f64> = scaled.iter().map(|r| r[0]).collect();
        assert!((stats::median(&col)).abs() < 1e-12);

        let constant = vec![vec![7.0]; 5];
        let sc = RobustScaler::fit(&constant);
        assert_eq!(sc.apply(&constant), vec![vec![0.0]; 5]);
    }

    #[test]
    fn smote_balances_and_stays_on_segments() {
        let matrix = vec![
            vec![0.0, 0.0],
            vec![10.0, 10.0],
            vec![0.0, 10.0],
            vec![10.0, 0.0],
            vec![5.0, 5.0],
            vec![1.0, 1.0],
            vec![3.0, 3.0],
        ];
        let labels = vec![0, 0, 0, 0, 0, 1, 1];
        let (x, y) = smote(&matrix, &labels, 5, 1).unwrap();
        let n_pos = y.iter().filter(|&&l| l == 1).count();
        let n_neg = y.len() - n_pos;
        assert_eq!(n_pos, n_neg);
        // Two minority points: every synthetic lies on the segment between
        // (1,1) and (3,3).
        for (row, &l) in x.iter().zip(&y).skip(matrix.len()) {
            assert_eq!(l, 1);
            assert!((row[0] - row[1]).abs() < 1e-12);
            assert!((1.0..=3.0).contains(&row[0]));
        }
        // Balanced input is returned unchanged.
        let bal_labels = vec![0, 0, 1, 1];
        let (bx, by) = smote(&matrix[..4].to_vec(), &bal_labels, 5, 1).unwrap();
        assert_eq!(bx, matrix[..4].to_vec());
        assert_eq!(by, bal_labels);
        // A single minority point is an error.
        let single = vec![0, 0, 0, 1];
        assert!(matches!(
            smote(&matrix[..4].to_vec(), &single, 5, 1),
            Err(ModelError::SingleMinoritySample)
        ));
    }

    #[test]
    fn platt_symmetric_margins_give_zero_intercept() {
        let margins = vec![-2.0, -1.5, -1.0, 1.0, 1.5, 2.0];
        let labels = vec![0, 0, 0, 1, 1, 1];
        let (a, b) = platt_fit(&margins, &labels).unwrap();
        assert!(b.abs() < 1e-6, "B = {b}");
        assert!(a < 0.0, "A = {a} should be negative for increasing margins");
        // Gradient at the optimum is below the contract bound: refitting from
        // the returned point must not move.
        let p = platt_apply(a, b, 1.0);
        assert!(p > 0.5);
    }

    #[test]
    fn platt_identity_parameters_reduce_to_sigmoid() {
        for m in [-3.0, -0.5, 0.0, 0.5, 3.0] {
            assert!((platt_apply(-1.0, 0.0, m) - sigmoid(m)).abs() < 1e-15);
        }
    }

    #[test]
    fn platt_improves_brier_on_held_out_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut wins = 0;
        for _ in 0..100 {
            // Overconfident margins: true probability sigmoid(m/3), reported m.
            let gen = |rng: &mut ChaCha8Rng, n: usize| -> (Vec<f64>, Vec<u8>) {
                let margins: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
                let labels: Vec<u8> = margins
                    .iter()
                    .map(|&m| (rng.gen_range(0.0..1.0) < sigmoid(m / 3.0)) as u8)
                    .collect();
                (margins, labels)
            };
            let (tm, tl) = gen(&mut rng, 200);
            if tl.iter().all(|&l| l == tl[0]) {
                continue;
            }
            let (a, b) = platt_fit(&tm, &tl).unwrap();
            let (hm, hl) = gen(&mut rng, 200);
            let brier = |probs: &[f64]| -> f64 {
                probs
                    .iter()
                    .zip(&hl)
                    .map(|(&p, &l)| (p - l as f64).powi(2))
                    .sum::<f64>()
                    / hl.len() as f64
            };
            let raw: Vec<f64> = hm.iter().map(|&m| sigmoid(m)).collect();
            let cal: Vec<f64> = hm.iter().map(|&m| platt_apply(a, b, m)).collect();
            if brier(&cal) <= brier(&raw) {
                wins += 1;
            }
        }
        assert!(wins >= 90, "calibration improved Brier in only {wins}/100 runs");
    }

    #[test]
    fn platt_preserves_auroc() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let margins: Vec<f64> = (0..100).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let labels: Vec<u8> = margins.iter().map(|&m| (m + rng.gen_range(-2.0..2.0) > 0.0) as u8).collect();
        let (a, b) = platt_fit(&margins, &labels).unwrap();
        let cal: Vec<f64> = margins.iter().map(|&m| platt_apply(a, b, m)).collect();
        let auc_raw = stats::auroc(&margins, &labels).unwrap();
        let auc_cal = stats::auroc(&cal, &labels).unwrap();
        assert_eq!(auc_raw, auc_cal);
    }

    #[test]
    fn threshold_selection_rules() {
        // Perfectly separated: midpoint of the gap.
        let probs = vec![0.1, 0.2, 0.8, 0.9];
        let labels = vec![0, 0, 1, 1];
        let t = select_threshold(&probs, &labels).unwrap();
        assert!((t - 0.5).abs() < 1e-12, "t = {t}");

        // All-equal probabilities: degenerate convention 0.5.
        assert_eq!(select_threshold(&[0.7; 6], &[0, 0, 0, 1, 1, 1]).unwrap(), 0.5);

        // Brute-force J maximization oracle on random data.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let probs: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
            let labels: Vec<u8> = probs.iter().map(|&p| (rng.gen_range(0.0..1.0) < p) as u8).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            let t = select_threshold(&probs, &labels).unwrap();
            let j_of = |t: f64| -> f64 {
                let np = labels.iter().filter(|&&l| l == 1).count() as f64;
                let nn = labels.len() as f64 - np;
                let tp = probs.iter().zip(&labels).filter(|(&p, &&l)| p > t && l == 1).count() as f64;
                let fp = probs.iter().zip(&labels).filter(|(&p, &&l)| p > t && l == 0).count() as f64;
                tp / np - fp / nn
            };
            let best_j = j_of(t);
            for &cand in &probs {
                assert!(j_of(cand) <= best_j + 1e-12);
            }
        }

        assert!(matches!(
            select_threshold(&[0.5, 0.6], &[1, 1]),
            Err(ModelError::SingleClass)
        ));
    }

    fn synthetic_nights(
        n_patients: usize,
        nights_each: usize,
        seed: u64,
    ) -> Vec<NightFeatureVector> {
        use std::collections::{BTreeMap, BTreeSet};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys = registry();
        let mut nights = Vec::new();
        for p in 0..n_patients {
            let label = (p % 2) as u8;
            for n in 0..nights_each {
                let mut values = BTreeMap::new();
                for k in &keys {
                    // Five informative keys, rest noise.
                    let v = if k == "duration__median" || k == "power__skew" || k == "spectral_entropy__std"
                        || k == "peaks_per_sec__iqr" || k == "ac_first_min_lag__mean"
                    {
                        label as f64 * 2.0 + rng.gen_range(-1.0..1.0)
                    } else {
                        rng.gen_range(-1.0..1.0)
                    };
                    values.insert(k.clone(), v);
                }
                nights.push(NightFeatureVector {
                    night_id: format!("p{p}-n{n}"),
                    patient_id: format!("p{p}"),
                    label: Some(label),
                    values,
                    missing: BTreeSet::new(),
                    excluded: false,
                });
            }
        }
        nights
    }

    #[test]
    fn pipeline_fits_separable_data_and_round_trips() {
        let nights = synthetic_nights(10, 4, 7);
        let hp = HyperParams {
            n_estimators: 40,
            max_depth: 3,
            learning_rate: 0.2,
            top_k_feats: 10,
            ..HyperParams::default()
        };
        let model = fit_pipeline(&nights, &hp, 11).unwrap();
        assert!(model.night_threshold > 0.0 && model.night_threshold < 1.0);
        for n in &nights {
            let p = model.predict_night(n).unwrap();
            if n.label == Some(1) {
                assert!(p > 0.5, "positive night scored {p}");
            } else {
                assert!(p < 0.5, "negative night scored {p}");
            }
        }

        // Versioned JSON round trip is bit-identical.
        let json = model.to_json();
        let back = PipelineModel::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);
        let mut tampered: serde_json::Value = serde_json::from_str(&json).unwrap();
        tampered["version"] = serde_json::json!(99);
        assert!(matches!(
            PipelineModel::from_json(&tampered.to_string()),
            Err(ModelError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn pipeline_training_is_deterministic() {
        let nights = synthetic_nights(8, 3, 21);
        let hp = HyperParams {
            n_estimators: 20,
            max_depth: 3,
            learning_rate: 0.2,
            top_k_feats: 8,
            ..HyperParams::default()
        };
        let a = fit_pipeline(&nights, &hp, 5).unwrap();
        let b = fit_pipeline(&nights, &hp, 5).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }
}
