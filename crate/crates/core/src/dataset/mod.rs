//! Multi-behavior interaction data: ingestion, splits, and samplers.

mod load;
mod sampling;
mod split;

pub use load::load_interactions;
pub use sampling::{merged_interaction_set, sample_bpr_triples, sample_from_set, sample_merged, MergedSample};
pub use split::{apply_held_out, leave_one_out_split, read_split, write_split};

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `user<TAB>item<TAB>behavior`, got `{content}`")]
    Malformed { line: usize, content: String },
    #[error("line {line}: unknown behavior `{name}` (declared: {declared})")]
    UnknownBehavior {
        line: usize,
        name: String,
        declared: String,
    },
    #[error("no interactions found in `{0}`")]
    Empty(String),
    #[error("target behavior `{target}` is not in the declared roster {declared}")]
    TargetNotDeclared { target: String, declared: String },
    #[error("behavior roster is empty")]
    NoBehaviors,
    #[error("split file line {line}: {content}")]
    MalformedSplit { line: usize, content: String },
    #[error("held-out pair ({user}, {item}) is not a target interaction of this dataset")]
    SplitMismatch { user: usize, item: usize },
}

/// One `(user, item, behavior)` triple with dense 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: usize,
    pub item: usize,
    pub behavior: usize,
}

/// One BPR training triple: `(user, pos_item)` is observed, `(user, neg_item)`
/// is not, within the sampled scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub pos_item: usize,
    pub neg_item: usize,
}

/// Deduplicated user-item pairs stored as CSR in both directions.
#[derive(Debug, Clone)]
pub struct InteractionSet {
    num_users: usize,
    num_items: usize,
    user_offsets: Vec<usize>,
    user_items: Vec<u32>,
    item_offsets: Vec<usize>,
    item_users: Vec<u32>,
}

impl InteractionSet {
    /// Builds from pairs; duplicates are removed.
    pub fn from_pairs(num_users: usize, num_items: usize, pairs: &[(u32, u32)]) -> Self {
        let mut sorted: Vec<(u32, u32)> = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();

        let mut user_offsets = vec![0usize; num_users + 1];
        for &(u, _) in &sorted {
            user_offsets[u as usize + 1] += 1;
        }
        for i in 0..num_users {
            user_offsets[i + 1] += user_offsets[i];
        }
        let user_items: Vec<u32> = sorted.iter().map(|&(_, i)| i).collect();

        let mut by_item: Vec<(u32, u32)> = sorted.iter().map(|&(u, i)| (i, u)).collect();
        by_item.sort_unstable();
        let mut item_offsets = vec![0usize; num_items + 1];
        for &(i, _) in &by_item {
            item_offsets[i as usize + 1] += 1;
        }
        for i in 0..num_items {
            item_offsets[i + 1] += item_offsets[i];
        }
        let item_users: Vec<u32> = by_item.iter().map(|&(_, u)| u).collect();

        InteractionSet {
            num_users,
            num_items,
            user_offsets,
            user_items,
            item_offsets,
            item_users,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Number of deduplicated pairs.
    pub fn len(&self) -> usize {
        self.user_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_items.is_empty()
    }

    /// Sorted items of one user.
    pub fn items_of(&self, user: usize) -> &[u32] {
        &self.user_items[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    /// Sorted users of one item.
    pub fn users_of(&self, item: usize) -> &[u32] {
        &self.item_users[self.item_offsets[item]..self.item_offsets[item + 1]]
    }

    pub fn user_count(&self, user: usize) -> usize {
        self.user_offsets[user + 1] - self.user_offsets[user]
    }

    pub fn item_count(&self, item: usize) -> usize {
        self.item_offsets[item + 1] - self.item_offsets[item]
    }

    /// Exact membership test.
    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.items_of(user).binary_search(&(item as u32)).is_ok()
    }

    /// Pair at a flat index in `(user, item)` sort order.
    pub fn pair_at(&self, index: usize) -> (usize, usize) {
        debug_assert!(index < self.len());
        // partition_point returns the first user whose range starts past index.
        let user = self.user_offsets.partition_point(|&o| o <= index) - 1;
        (user, self.user_items[index] as usize)
    }

    /// Iterates all pairs in `(user, item)` order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users).flat_map(move |u| {
            self.items_of(u).iter().map(move |&i| (u, i as usize))
        })
    }
}

/// Interactions of one behavior.
#[derive(Debug, Clone)]
pub struct BehaviorMatrix {
    pub behavior_id: usize,
    pub interactions: InteractionSet,
}

impl BehaviorMatrix {
    pub fn new(behavior_id: usize, interactions: InteractionSet) -> Self {
        BehaviorMatrix {
            behavior_id,
            interactions,
        }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// A complete multi-behavior dataset over a shared user/item index space.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    pub behaviors: Vec<BehaviorMatrix>,
    pub target_behavior: usize,
    pub behavior_names: Vec<String>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub user_index: HashMap<String, usize>,
    pub item_index: HashMap<String, usize>,
}

impl Dataset {
    pub fn num_behaviors(&self) -> usize {
        self.behaviors.len()
    }

    pub fn target(&self) -> &BehaviorMatrix {
        &self.behaviors[self.target_behavior]
    }

    /// Union of the interactions of every behavior.
    pub fn merged_interactions(&self) -> InteractionSet {
        let mut pairs = Vec::new();
        for behavior in &self.behaviors {
            for (u, i) in behavior.interactions.pairs() {
                pairs.push((u as u32, i as u32));
            }
        }
        InteractionSet::from_pairs(self.num_users, self.num_items, &pairs)
    }

    /// Total interactions of a user, summed across behaviors.
    pub fn total_user_interactions(&self, user: usize) -> usize {
        self.behaviors
            .iter()
            .map(|b| b.interactions.user_count(user))
            .sum()
    }

    /// Builds a dataset directly from index triples (testing and synthetic
    /// data paths); indices must already be dense and in range.
    pub fn from_records(
        num_users: usize,
        num_items: usize,
        behavior_names: Vec<String>,
        target_behavior: usize,
        records: &[InteractionRecord],
    ) -> Self {
        let mut per_behavior: Vec<Vec<(u32, u32)>> = vec![Vec::new(); behavior_names.len()];
        for r in records {
            assert!(r.user < num_users && r.item < num_items && r.behavior < behavior_names.len());
            per_behavior[r.behavior].push((r.user as u32, r.item as u32));
        }
        let behaviors = per_behavior
            .into_iter()
            .enumerate()
            .map(|(id, pairs)| {
                BehaviorMatrix::new(id, InteractionSet::from_pairs(num_users, num_items, &pairs))
            })
            .collect();
        let user_ids: Vec<String> = (0..num_users).map(|u| u.to_string()).collect();
        let item_ids: Vec<String> = (0..num_items).map(|i| i.to_string()).collect();
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(idx, id)| (id.clone(), idx))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(idx, id)| (id.clone(), idx))
            .collect();
        Dataset {
            num_users,
            num_items,
            behaviors,
            target_behavior,
            behavior_names,
            user_ids,
            item_ids,
            user_index,
            item_index,
        }
    }
}
