//! Leave-one-out evaluation split.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BehaviorMatrix, DataError, Dataset, InteractionSet};

/// Removes one uniformly chosen target-behavior interaction per user into a
/// test list, leaving every auxiliary behavior untouched. Users without any
/// target interaction are absent from the test list. Deterministic in the
/// seed: the same `(dataset, seed)` always produces the same split.
pub fn leave_one_out_split(dataset: &Dataset, seed: u64) -> (Dataset, Vec<(usize, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = &dataset.target().interactions;

    let mut test: Vec<(usize, usize)> = Vec::new();
    let mut kept: Vec<(u32, u32)> = Vec::new();
    for user in 0..dataset.num_users {
        let items = target.items_of(user);
        if items.is_empty() {
            continue;
        }
        let held = items[rng.gen_range(0..items.len())];
        test.push((user, held as usize));
        for &item in items {
            if item != held {
                kept.push((user as u32, item));
            }
        }
    }

    let mut train = dataset.clone();
    train.behaviors[dataset.target_behavior] = BehaviorMatrix::new(
        dataset.target_behavior,
        InteractionSet::from_pairs(dataset.num_users, dataset.num_items, &kept),
    );
    (train, test)
}

/// Rebuilds the train-side dataset from a persisted split: every held-out
/// pair is removed from the target behavior. Errors when a held pair is not
/// present in the dataset (the split file does not match the data).
pub fn apply_held_out(dataset: &Dataset, test: &[(usize, usize)]) -> Result<Dataset, DataError> {
    let target = &dataset.target().interactions;
    for &(user, item) in test {
        if user >= dataset.num_users || item >= dataset.num_items || !target.contains(user, item) {
            return Err(DataError::SplitMismatch { user, item });
        }
    }
    let held: std::collections::HashSet<(usize, usize)> = test.iter().copied().collect();
    let kept: Vec<(u32, u32)> = target
        .pairs()
        .filter(|pair| !held.contains(pair))
        .map(|(u, i)| (u as u32, i as u32))
        .collect();
    let mut train = dataset.clone();
    train.behaviors[dataset.target_behavior] = BehaviorMatrix::new(
        dataset.target_behavior,
        InteractionSet::from_pairs(dataset.num_users, dataset.num_items, &kept),
    );
    Ok(train)
}

/// Persists the held-out pairs as `user<TAB>item` lines so evaluation reruns
/// without resampling.
pub fn write_split(path: &Path, test: &[(usize, usize)]) -> Result<(), DataError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for &(user, item) in test {
        writeln!(writer, "{user}\t{item}")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<Vec<(usize, usize)>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut test = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let parsed = match (fields.next(), fields.next()) {
            (Some(u), Some(i)) => u
                .parse::<usize>()
                .ok()
                .zip(i.parse::<usize>().ok()),
            _ => None,
        };
        match parsed {
            Some((user, item)) => test.push((user, item)),
            None => {
                return Err(DataError::MalformedSplit {
                    line: line_no + 1,
                    content: trimmed.to_string(),
                })
            }
        }
    }
    Ok(test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InteractionRecord;

    fn dataset() -> Dataset {
        let mut records = Vec::new();
        // User 0: target items {1, 2, 3}; user 1: target item {7 -> use 4};
        // user 2: auxiliary only.
        for item in [1usize, 2, 3] {
            records.push(InteractionRecord { user: 0, item, behavior: 1 });
        }
        records.push(InteractionRecord { user: 1, item: 4, behavior: 1 });
        records.push(InteractionRecord { user: 2, item: 0, behavior: 0 });
        records.push(InteractionRecord { user: 0, item: 4, behavior: 0 });
        Dataset::from_records(3, 5, vec!["click".into(), "buy".into()], 1, &records)
    }

    #[test]
    fn one_interaction_held_per_active_user() {
        let ds = dataset();
        let (train, test) = leave_one_out_split(&ds, 42);
        assert_eq!(test.len(), 2);
        assert_eq!(train.target().interactions.user_count(0), 2);
        // The only target interaction of user 1 is still held out.
        assert_eq!(train.target().interactions.user_count(1), 0);
        assert_eq!(test.iter().find(|(u, _)| *u == 1).unwrap().1, 4);
        // Auxiliary-only user 2 is absent from test with auxiliaries intact.
        assert!(!test.iter().any(|(u, _)| *u == 2));
        assert_eq!(train.behaviors[0].interactions.user_count(2), 1);
    }

    #[test]
    fn split_is_an_exact_partition() {
        let ds = dataset();
        let (train, test) = leave_one_out_split(&ds, 9);
        let mut recovered: Vec<(usize, usize)> =
            train.target().interactions.pairs().collect();
        recovered.extend(test.iter().copied());
        recovered.sort_unstable();
        let original: Vec<(usize, usize)> = ds.target().interactions.pairs().collect();
        assert_eq!(recovered, original);
    }

    #[test]
    fn same_seed_same_split() {
        let ds = dataset();
        let (_, a) = leave_one_out_split(&ds, 123);
        let (_, b) = leave_one_out_split(&ds, 123);
        assert_eq!(a, b);
    }

    #[test]
    fn apply_held_out_reconstructs_the_train_side() {
        let ds = dataset();
        let (train, test) = leave_one_out_split(&ds, 21);
        let rebuilt = apply_held_out(&ds, &test).unwrap();
        let a: Vec<(usize, usize)> = train.target().interactions.pairs().collect();
        let b: Vec<(usize, usize)> = rebuilt.target().interactions.pairs().collect();
        assert_eq!(a, b);
        // A pair that was never a target interaction is rejected.
        assert!(apply_held_out(&ds, &[(2, 1)]).is_err());
    }

    #[test]
    fn split_file_round_trips() {
        let ds = dataset();
        let (_, test) = leave_one_out_split(&ds, 5);
        let file = tempfile::NamedTempFile::new().unwrap();
        write_split(file.path(), &test).unwrap();
        assert_eq!(read_split(file.path()).unwrap(), test);
    }
}
