//! Stratified group k-fold assignment: every group (patient) lands wholly in
//! one fold, and folds approximately balance the class distribution.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Returns `k` disjoint test-index sets covering all rows. A group's class is
/// the majority label of its rows. Deterministic under `seed`.
pub fn stratified_group_kfold(
    groups: &[String],
    labels: &[u8],
    k: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    assert_eq!(groups.len(), labels.len());
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let mut entries: Vec<(&str, u8, Vec<usize>)> = by_group
        .into_iter()
        .map(|(g, rows)| {
            let pos = rows.iter().filter(|&&i| labels[i] == 1).count();
            let label = (pos * 2 > rows.len()) as u8;
            (g, label, rows)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    // Large groups first within each class keeps fold sizes even; the shuffle
    // above breaks ties between equal-sized groups.
    entries.sort_by(|a, b| b.2.len().cmp(&a.2.len()));

    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut class_counts = vec![[0usize; 2]; k];
    for (_, label, rows) in entries {
        let target = (0..k)
            .min_by_key(|&f| (class_counts[f][label as usize], folds[f].len(), f))
            .unwrap();
        class_counts[target][label as usize] += rows.len();
        folds[target].extend(rows);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_rows_and_keep_groups_together() {
        let groups: Vec<String> = (0..30).flat_map(|p| vec![format!("p{p}"); 4]).collect();
        let labels: Vec<u8> = (0..30).flat_map(|p| vec![(p % 3 == 0) as u8; 4]).collect();
        let folds = stratified_group_kfold(&groups, &labels, 5, 42);
        let mut seen = vec![false; groups.len()];
        for fold in &folds {
            for &i in fold {
                assert!(!seen[i], "row {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // No group straddles folds.
        for fold in &folds {
            let in_fold: std::collections::BTreeSet<&String> = fold.iter().map(|&i| &groups[i]).collect();
            for other in &folds {
                if std::ptr::eq(fold, other) {
                    continue;
                }
                for &i in other {
                    assert!(!in_fold.contains(&groups[i]), "group {} split", groups[i]);
                }
            }
        }
        // Every fold holds both classes (10 positive patients over 5 folds).
        for fold in &folds {
            let pos = fold.iter().filter(|&&i| labels[i] == 1).count();
            assert!(pos > 0 && pos < fold.len());
        }
    }

    #[test]
    fn assignment_is_deterministic_per_seed() {
        let groups: Vec<String> = (0..20).map(|p| format!("p{}", p / 2)).collect();
        let labels: Vec<u8> = (0..20).map(|p| (p % 4 == 0) as u8).collect();
        assert_eq!(
            stratified_group_kfold(&groups, &labels, 4, 1),
            stratified_group_kfold(&groups, &labels, 4, 1)
        );
    }
}
