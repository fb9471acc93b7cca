//! Feature ranking: mRMR, a shadow-feature importance scheme, absolute
//! Spearman correlation, and their rank-average ensemble.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gbdt, HyperParams, ModelError};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMethod {
    Mrmr,
    Shadow,
    Correlation,
    Ensemble,
}

/// Orders all features from most to least informative for the binary label.
pub fn rank_features(
    matrix: &[Vec<f64>],
    labels: &[u8],
    feature_names: &[String],
    method: RankMethod,
    seed: u64,
) -> Result<Vec<String>, ModelError> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(ModelError::SingleClass);
    }
    let order = match method {
        RankMethod::Mrmr => mrmr_order(matrix, labels),
        RankMethod::Shadow => shadow_order(matrix, labels, feature_names, seed),
        RankMethod::Correlation => correlation_order(matrix, labels, feature_names),
        RankMethod::Ensemble => {
            let rankings = [
                mrmr_order(matrix, labels),
                shadow_order(matrix, labels, feature_names, seed),
                correlation_order(matrix, labels, feature_names),
            ];
            // Average rank position per feature, ties broken by name.
            let n = feature_names.len();
            let mut avg = vec![0.0f64; n];
            for ranking in &rankings {
                for (pos, &f) in ranking.iter().enumerate() {
                    avg[f] += pos as f64 / rankings.len() as f64;
                }
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                avg[a]
                    .partial_cmp(&avg[b])
                    .unwrap()
                    .then_with(|| feature_names[a].cmp(&feature_names[b]))
            });
            idx
        }
    };
    Ok(order.into_iter().map(|f| feature_names[f].clone()).collect())
}

fn column(matrix: &[Vec<f64>], f: usize) -> Vec<f64> {
    matrix.iter().map(|r| r[f]).collect()
}

/// Quantile-discretizes a column into at most 10 bins.
fn discretize(col: &[f64]) -> Vec<usize> {
    let mut sorted = col.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut edges: Vec<f64> = (1..10)
        .map(|q| stats::quantile(&sorted, q as f64 / 10.0))
        .collect();
    edges.dedup();
    col.iter()
        .map(|&v| edges.partition_point(|&e| e < v))
        .collect()
}

/// Mutual information between two discrete variables, in nats.
fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![0.0f64; ka * kb];
    let mut pa = vec![0.0f64; ka];
    let mut pb = vec![0.0f64; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1.0;
        pa[x] += 1.0;
        pb[y] += 1.0;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let pxy = joint[x * kb + y] / n;
            if pxy > 0.0 {
                mi += pxy * (pxy * n * n / (pa[x] * pb[y])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Greedy mRMR: relevance MI(feature; label) minus mean MI to the already
/// selected features.
fn mrmr_order(matrix: &[Vec<f64>], labels: &[u8]) -> Vec<usize> {
    let n_features = matrix[0].len();
    let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let disc: Vec<Vec<usize>> = (0..n_features).map(|f| discretize(&column(matrix, f))).collect();
    let relevance: Vec<f64> = disc.iter().map(|d| mutual_information(d, &y)).collect();

    let mut selected: Vec<usize> = Vec::with_capacity(n_features);
    let mut remaining: Vec<usize> = (0..n_features).collect();
    let mut redundancy = vec![0.0f64; n_features]; // running sum of MI to selected
    while !remaining.is_empty() {
        let m = selected.len() as f64;
        let (pos, &best) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| {
                let sa = relevance[a] - if m > 0.0 { redundancy[a] / m } else { 0.0 };
                let sb = relevance[b] - if m > 0.0 { redundancy[b] / m } else { 0.0 };
                sa.partial_cmp(&sb).unwrap().then(b.cmp(&a)) // tie: lower index
            })
            .unwrap();
        remaining.swap_remove(pos);
        for &r in &remaining {
            redundancy[r] += mutual_information(&disc[r], &disc[best]);
        }
        selected.push(best);
    }
    selected
}

/// Shadow scheme: append a permuted copy of every feature, train a small
/// GBDT, and score each real feature by its gain importance minus the
/// maximum importance attained by any shadow.
fn shadow_order(matrix: &[Vec<f64>], labels: &[u8], feature_names: &[String], seed: u64) -> Vec<usize> {
    let n = matrix.len();
    let n_features = matrix[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut augmented: Vec<Vec<f64>> = matrix.iter().map(|r| {
        let mut row = r.clone();
        row.extend(std::iter::repeat(0.0).take(n_features));
        row
    }).collect();
    for f in 0..n_features {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (i, &src) in perm.iter().enumerate() {
            augmented[i][n_features + f] = matrix[src][f];
        }
    }
    let hp = HyperParams {
        n_estimators: 60,
        max_depth: 3,
        min_child_weight: 1.0,
        learning_rate: 0.2,
        subsample: 1.0,
        colsample_bytree: 0.5,
        colsample_bylevel: 1.0,
        top_k_feats: n_features,
    };
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let model = gbdt::train_gbdt(&augmented, &y, &hp, None, seed).expect("non-empty matrix");
    let importance = model.gain_importance(2 * n_features);
    let shadow_max = importance[n_features..]
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let score: Vec<f64> = importance[..n_features].iter().map(|&g| g - shadow_max).collect();
    let mut idx: Vec<usize> = (0..n_features).collect();
    idx.sort_by(|&a, &b| {
        score[b]
            .partial_cmp(&score[a])
            .unwrap()
            .then_with(|| feature_names[a].cmp(&feature_names[b]))
    });
    idx
}

fn correlation_order(matrix: &[Vec<f64>], labels: &[u8], feature_names: &[String]) -> Vec<usize> {
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let n_features = matrix[0].len();
    let score: Vec<f64> = (0..n_features)
        .map(|f| stats::spearman(&column(matrix, f), &y).abs())
        .collect();
    let mut idx: Vec<usize> = (0..n_features).collect();
    idx.sort_by(|&a, &b| {
        score[b]
            .partial_cmp(&score[a])
            .unwrap()
            .then_with(|| feature_names[a].cmp(&feature_names[b]))
    });
    idx
}
