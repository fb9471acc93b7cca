//! From-scratch gradient-boosted decision trees with logistic loss.
//!
//! Second-order boosting in the XGBoost style: per round, gradients
//! g = p - y and hessians h = p(1 - p) drive exact greedy axis-aligned
//! splits maximizing
//!   gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)],
//! with leaf weight -G/(H+lambda). Split search is order-independent (ties
//! resolved by lowest feature index, then lowest threshold), so permuting
//! training rows leaves the fitted trees unchanged when subsampling is off.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HyperParams, ModelError};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum TreeNode {
    Leaf { weight: f64 },
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { weight } => *weight,
            TreeNode::Split { feature, threshold, left, right } => {
                if row[*feature] < *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    /// Accumulates split gain per feature (for importance rankings).
    pub fn accumulate_gain(&self, gains: &mut [f64], node_gains: &NodeGains) {
        self.walk_gain(gains, node_gains, &mut 0);
    }

    fn walk_gain(&self, gains: &mut [f64], node_gains: &NodeGains, cursor: &mut usize) {
        if let TreeNode::Split { feature, left, right, .. } = self {
            gains[*feature] += node_gains.0[*cursor];
            *cursor += 1;
            left.walk_gain(gains, node_gains, cursor);
            right.walk_gain(gains, node_gains, cursor);
        }
    }
}

/// Gains of the split nodes of one tree, in pre-order.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct NodeGains(pub Vec<f64>);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GBDTModel {
    pub trees: Vec<TreeNode>,
    /// Pre-order split gains per tree, kept for importance computations.
    pub tree_gains: Vec<NodeGains>,
    pub learning_rate: f64,
    pub base_score: f64,
}

impl GBDTModel {
    /// Raw margin (log-odds) for one feature row.
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score
            + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }

    /// Total split gain attributed to each of `n_features` features.
    pub fn gain_importance(&self, n_features: usize) -> Vec<f64> {
        let mut gains = vec![0.0; n_features];
        for (tree, ng) in self.trees.iter().zip(&self.tree_gains) {
            tree.accumulate_gain(&mut gains, ng);
        }
        gains
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logloss(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

const LAMBDA: f64 = 1.0;
const EARLY_STOP_PATIENCE: usize = 30;

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Trains a GBDT on `x` (row-major) with binary labels `y`. When `valid` is
/// given, boosting stops after `EARLY_STOP_PATIENCE` rounds without
/// validation-logloss improvement and the model is truncated to the best
/// round.
pub fn train_gbdt(
    x: &[Vec<f64>],
    y: &[f64],
    hp: &HyperParams,
    valid: Option<(&[Vec<f64>], &[f64])>,
    seed: u64,
) -> Result<GBDTModel, ModelError> {
    if x.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let n = x.len();
    let n_features = x[0].len();
    let prior = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (prior / (1.0 - prior)).ln();

    // Global sorted order per feature; node split search filters this by
    // membership, which keeps every scan O(n) and order-independent.
    let sorted_idx: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[a][f].partial_cmp(&x[b][f]).unwrap().then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut margins: Vec<f64> = vec![base_score; n];
    let mut valid_margins: Vec<f64> = valid.map(|(vx, _)| vec![base_score; vx.len()]).unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::new();
    let mut tree_gains = Vec::new();
    let mut best_valid = f64::INFINITY;
    let mut best_round = 0usize;
    let mut prev_train_loss = f64::INFINITY;

    for _round in 0..hp.n_estimators {
        let g: Vec<f64> = margins.iter().zip(y).map(|(&m, &yi)| sigmoid(m) - yi).collect();
        let h: Vec<f64> = margins.iter().map(|&m| {
            let p = sigmoid(m);
            p * (1.0 - p)
        }).collect();

        // Row subsample (without replacement, index-sorted for determinism).
        let in_tree: Vec<bool> = if hp.subsample < 1.0 {
            let k = ((n as f64) * hp.subsample).round().max(1.0) as usize;
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut mask = vec![false; n];
            for &i in &idx[..k] {
                mask[i] = true;
            }
            mask
        } else {
            vec![true; n]
        };

        // Per-tree column subsample.
        let tree_feats: Vec<usize> = sample_features(n_features, hp.colsample_bytree, &mut rng);

        let mut gains = NodeGains::default();
        let tree = build_node(
            x,
            &g,
            &h,
            &sorted_idx,
            &in_tree,
            &tree_feats,
            hp,
            0,
            &mut rng,
            &mut gains,
        );
        for (i, row) in x.iter().enumerate() {
            margins[i] += hp.learning_rate * tree.predict(row);
        }
        let train_loss: f64 = margins
            .iter()
            .zip(y)
            .map(|(&m, &yi)| logloss(sigmoid(m), yi))
            .sum::<f64>()
            / n as f64;
        // With row subsampling a round fits only part of the data, so the
        // full-set loss need not decrease monotonically.
        debug_assert!(
            hp.subsample < 1.0 || train_loss <= prev_train_loss + 1e-9,
            "training loss increased: {prev_train_loss} -> {train_loss}"
        );
        prev_train_loss = train_loss;
        trees.push(tree);
        tree_gains.push(gains);

        if let Some((vx, vy)) = valid {
            for (i, row) in vx.iter().enumerate() {
                valid_margins[i] += hp.learning_rate * trees.last().unwrap().predict(row);
            }
            let vloss: f64 = valid_margins
                .iter()
                .zip(vy)
                .map(|(&m, &yi)| logloss(sigmoid(m), yi))
                .sum::<f64>()
                / vx.len().max(1) as f64;
            if vloss < best_valid - 1e-12 {
                best_valid = vloss;
                best_round = trees.len();
            } else if trees.len() - best_round >= EARLY_STOP_PATIENCE {
                break;
            }
        }
    }
    if valid.is_some() && best_round > 0 {
        trees.truncate(best_round);
        tree_gains.truncate(best_round);
    }
    Ok(GBDTModel { trees, tree_gains, learning_rate: hp.learning_rate, base_score })
}

fn sample_features(n_features: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n_features).collect();
    }
    let k = ((n_features as f64) * fraction).round().max(1.0) as usize;
    let mut idx: Vec<usize> = (0..n_features).collect();
    idx.shuffle(rng);
    let mut chosen = idx[..k.min(n_features)].to_vec();
    chosen.sort_unstable();
    chosen
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    x: &[Vec<f64>],
    g: &[f64],
    h: &[f64],
    sorted_idx: &[Vec<usize>],
    members: &[bool],
    tree_feats: &[usize],
    hp: &HyperParams,
    depth: usize,
    rng: &mut ChaCha8Rng,
    gains: &mut NodeGains,
) -> TreeNode {
    let (mut g_sum, mut h_sum, mut count) = (0.0, 0.0, 0usize);
    for i in 0..members.len() {
        if members[i] {
            g_sum += g[i];
            h_sum += h[i];
            count += 1;
        }
    }
    let leaf = TreeNode::Leaf { weight: -g_sum / (h_sum + LAMBDA) };
    if depth >= hp.max_depth || count < 2 {
        return leaf;
    }

    // Per-level column subsample from the tree's feature set.
    let level_feats: Vec<usize> = {
        let picked = sample_features(tree_feats.len(), hp.colsample_bylevel, rng);
        picked.into_iter().map(|i| tree_feats[i]).collect()
    };

    let parent_score = g_sum * g_sum / (h_sum + LAMBDA);
    let mut best: Option<SplitChoice> = None;
    for &f in &level_feats {
        let (mut gl, mut hl) = (0.0, 0.0);
        let order = &sorted_idx[f];
        let mut prev_val: Option<f64> = None;
        for &i in order.iter() {
            if !members[i] {
                continue;
            }
            let v = x[i][f];
            if let Some(pv) = prev_val {
                if v > pv && hl >= hp.min_child_weight && (h_sum - hl) >= hp.min_child_weight {
                    let gr = g_sum - gl;
                    let hr = h_sum - hl;
                    let gain = 0.5
                        * (gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - parent_score);
                    let threshold = (pv + v) / 2.0;
                    let better = match &best {
                        None => gain > 1e-12,
                        Some(b) => {
                            gain > b.gain + 1e-12
                                || ((gain - b.gain).abs() <= 1e-12
                                    && (f, threshold) < (b.feature, b.threshold))
                        }
                    };
                    if better {
                        best = Some(SplitChoice { feature: f, threshold, gain });
                    }
                }
            }
            gl += g[i];
            hl += h[i];
            prev_val = Some(v);
        }
    }

    let Some(split) = best else { return leaf };
    gains.0.push(split.gain);
    let slot = gains.0.len() - 1;
    let mut left_members = vec![false; members.len()];
    let mut right_members = vec![false; members.len()];
    for i in 0..members.len() {
        if members[i] {
            if x[i][split.feature] < split.threshold {
                left_members[i] = true;
            } else {
                right_members[i] = true;
            }
        }
    }
    let left = build_node(x, g, h, sorted_idx, &left_members, tree_feats, hp, depth + 1, rng, gains);
    let right = build_node(x, g, h, sorted_idx, &right_members, tree_feats, hp, depth + 1, rng, gains);
    // Keep pre-order positions consistent: the slot was reserved before
    // recursing, so `walk_gain` visits them in the same order.
    let _ = slot;
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}
