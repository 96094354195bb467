//! Seeded negative samplers.
//!
//! All sampling is a pure function of the data and the generator state; the
//! negative pick walks the sorted adjacency list instead of rejection
//! sampling, so it is exactly uniform and never loops.

use log::warn;
use rand::Rng;

use super::{BehaviorMatrix, BprTriple, InteractionSet};

/// One labeled pair from the merged-behavior training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergedSample {
    pub user: usize,
    pub item: usize,
    pub label: bool,
}

/// The `k`-th smallest value in `[0, total)` that is absent from the sorted
/// slice `present`.
fn kth_absent(present: &[u32], k: u32) -> u32 {
    let mut candidate = k;
    for &p in present {
        if p <= candidate {
            candidate += 1;
        } else {
            break;
        }
    }
    candidate
}

/// Draws `count` BPR triples from one behavior. Positives are uniform over
/// the behavior's pairs (with replacement); each negative is uniform over the
/// user's non-interacted items in this behavior. Positives whose user has
/// interacted with every item are skipped with a warning, so the result may
/// hold fewer than `count` triples.
pub fn sample_bpr_triples<G: Rng>(
    matrix: &BehaviorMatrix,
    count: usize,
    rng: &mut G,
) -> Vec<BprTriple> {
    sample_from_set(&matrix.interactions, count, rng)
}

/// Sampler core shared by the per-behavior and target-behavior paths.
pub fn sample_from_set<G: Rng>(
    set: &InteractionSet,
    count: usize,
    rng: &mut G,
) -> Vec<BprTriple> {
    let mut triples = Vec::with_capacity(count);
    if set.is_empty() {
        return triples;
    }
    let num_items = set.num_items();
    let mut skipped = 0usize;
    for _ in 0..count {
        let flat = rng.gen_range(0..set.len());
        let (user, pos_item) = set.pair_at(flat);
        let interacted = set.user_count(user);
        if interacted == num_items {
            skipped += 1;
            continue;
        }
        let k = rng.gen_range(0..(num_items - interacted) as u32);
        let neg_item = kth_absent(set.items_of(user), k) as usize;
        triples.push(BprTriple {
            user,
            pos_item,
            neg_item,
        });
    }
    if skipped > 0 {
        warn!("skipped {skipped} positives of users with no negative candidates");
    }
    triples
}

/// Labeled training pairs for the merged-behavior objective: every pair of
/// the union (label 1) plus one uniformly sampled unseen pair per positive
/// (label 0). A pair counts as unseen only if no behavior observed it.
pub fn merged_interaction_set<G: Rng>(
    dataset: &super::Dataset,
    rng: &mut G,
) -> Vec<MergedSample> {
    let merged = dataset.merged_interactions();
    sample_merged(&merged, rng)
}

/// Same as [`merged_interaction_set`] but over a prebuilt union, so training
/// loops can reuse the union across epochs.
pub fn sample_merged<G: Rng>(merged: &InteractionSet, rng: &mut G) -> Vec<MergedSample> {
    let num_items = merged.num_items();
    let mut samples = Vec::with_capacity(merged.len() * 2);
    let mut skipped = 0usize;
    for (user, item) in merged.pairs() {
        let interacted = merged.user_count(user);
        if interacted == num_items {
            skipped += 1;
            continue;
        }
        let k = rng.gen_range(0..(num_items - interacted) as u32);
        let negative = kth_absent(merged.items_of(user), k) as usize;
        samples.push(MergedSample {
            user,
            item,
            label: true,
        });
        samples.push(MergedSample {
            user,
            item: negative,
            label: false,
        });
    }
    if skipped > 0 {
        warn!("skipped {skipped} merged positives of users with no negative candidates");
    }
    samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, InteractionRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(pairs: &[(u32, u32)], num_users: usize, num_items: usize) -> BehaviorMatrix {
        BehaviorMatrix::new(0, InteractionSet::from_pairs(num_users, num_items, pairs))
    }

    #[test]
    fn kth_absent_walks_sorted_lists() {
        assert_eq!(kth_absent(&[0, 1], 0), 2);
        assert_eq!(kth_absent(&[1], 0), 0);
        assert_eq!(kth_absent(&[1], 1), 2);
        assert_eq!(kth_absent(&[], 3), 3);
        assert_eq!(kth_absent(&[0, 2, 4], 0), 1);
        assert_eq!(kth_absent(&[0, 2, 4], 1), 3);
        assert_eq!(kth_absent(&[0, 2, 4], 2), 5);
    }

    #[test]
    fn only_valid_negative_is_chosen() {
        // 3 items, user interacted with {0, 1}: the negative must be 2.
        let m = matrix(&[(0, 0), (0, 1)], 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let triples = sample_bpr_triples(&m, 20, &mut rng);
        assert_eq!(triples.len(), 20);
        for t in &triples {
            assert_eq!(t.neg_item, 2);
            assert!(m.interactions.contains(t.user, t.pos_item));
            assert!(!m.interactions.contains(t.user, t.neg_item));
        }
    }

    #[test]
    fn saturated_user_is_skipped() {
        let m = matrix(&[(0, 0), (0, 1), (0, 2)], 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let triples = sample_bpr_triples(&m, 10, &mut rng);
        assert!(triples.is_empty());
    }

    #[test]
    fn same_seed_same_triples() {
        let m = matrix(&[(0, 0), (1, 2), (2, 1), (2, 3)], 3, 5);
        let a = sample_bpr_triples(&m, 50, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_bpr_triples(&m, 50, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    fn two_behavior_dataset() -> Dataset {
        Dataset::from_records(
            1,
            3,
            vec!["click".into(), "buy".into()],
            1,
            &[
                InteractionRecord { user: 0, item: 1, behavior: 0 },
                InteractionRecord { user: 0, item: 2, behavior: 1 },
            ],
        )
    }

    #[test]
    fn merged_negative_comes_from_the_union_complement() {
        // Positives {1, 2} leave item 0 as the only complement element.
        let ds = two_behavior_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = merged_interaction_set(&ds, &mut rng);
        assert_eq!(samples.len(), 4);
        for s in samples.iter().filter(|s| !s.label) {
            assert_eq!(s.item, 0);
        }
        let positives: Vec<usize> = samples
            .iter()
            .filter(|s| s.label)
            .map(|s| s.item)
            .collect();
        assert_eq!(positives, vec![1, 2]);
    }

    #[test]
    fn merged_union_dedups_positives() {
        let ds = Dataset::from_records(
            1,
            3,
            vec!["click".into(), "buy".into()],
            1,
            &[
                InteractionRecord { user: 0, item: 1, behavior: 0 },
                InteractionRecord { user: 0, item: 1, behavior: 1 },
            ],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = merged_interaction_set(&ds, &mut rng);
        assert_eq!(samples.iter().filter(|s| s.label).count(), 1);
    }
}
