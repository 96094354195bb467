//! Interaction log ingestion.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{BehaviorMatrix, DataError, Dataset, InteractionSet};

/// Loads a tab-separated interaction log (`user<TAB>item<TAB>behavior` per
/// line), removes duplicate interactions, and reindexes users and items
/// densely from 0 in order of first appearance.
pub fn load_interactions(
    path: &Path,
    behavior_names: &[String],
    target: &str,
) -> Result<Dataset, DataError> {
    if behavior_names.is_empty() {
        return Err(DataError::NoBehaviors);
    }
    let declared = behavior_names.join(",");
    let target_behavior = behavior_names
        .iter()
        .position(|n| n == target)
        .ok_or_else(|| DataError::TargetNotDeclared {
            target: target.to_string(),
            declared: declared.clone(),
        })?;
    let behavior_index: HashMap<&str, usize> = behavior_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut per_behavior: Vec<Vec<(u32, u32)>> = vec![Vec::new(); behavior_names.len()];

    let reader = BufReader::new(File::open(path)?);
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let (user, item, behavior) = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), Some(b)) if fields.next().is_none() => (u, i, b),
            _ => {
                return Err(DataError::Malformed {
                    line: line_no + 1,
                    content: trimmed.to_string(),
                })
            }
        };
        let behavior = *behavior_index
            .get(behavior)
            .ok_or_else(|| DataError::UnknownBehavior {
                line: line_no + 1,
                name: behavior.to_string(),
                declared: declared.clone(),
            })?;
        let u = intern(user, &mut user_index, &mut user_ids);
        let i = intern(item, &mut item_index, &mut item_ids);
        per_behavior[behavior].push((u as u32, i as u32));
    }

    if user_ids.is_empty() {
        return Err(DataError::Empty(path.display().to_string()));
    }

    let num_users = user_ids.len();
    let num_items = item_ids.len();
    let behaviors = per_behavior
        .into_iter()
        .enumerate()
        .map(|(id, pairs)| {
            BehaviorMatrix::new(id, InteractionSet::from_pairs(num_users, num_items, &pairs))
        })
        .collect();

    Ok(Dataset {
        num_users,
        num_items,
        behaviors,
        target_behavior,
        behavior_names: behavior_names.to_vec(),
        user_ids,
        item_ids,
        user_index,
        item_index,
    })
}

fn intern(id: &str, index: &mut HashMap<String, usize>, ids: &mut Vec<String>) -> usize {
    if let Some(&idx) = index.get(id) {
        return idx;
    }
    let idx = ids.len();
    ids.push(id.to_string());
    index.insert(id.to_string(), idx);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn roster() -> Vec<String> {
        vec!["click".to_string(), "buy".to_string()]
    }

    #[test]
    fn duplicates_are_removed() {
        let f = write_temp("a\tx\tclick\na\tx\tclick\na\tx\tbuy\n");
        let ds = load_interactions(f.path(), &roster(), "buy").unwrap();
        assert_eq!(ds.num_users, 1);
        assert_eq!(ds.num_items, 1);
        assert_eq!(ds.behaviors[0].len(), 1);
        assert_eq!(ds.behaviors[1].len(), 1);
    }

    #[test]
    fn single_line_parses() {
        let f = write_temp("a\tx\tbuy\n");
        let ds = load_interactions(f.path(), &roster(), "buy").unwrap();
        assert_eq!(ds.num_users, 1);
        assert_eq!(ds.num_items, 1);
        assert_eq!(ds.target_behavior, 1);
    }

    #[test]
    fn unknown_behavior_names_the_line() {
        let f = write_temp("a\tx\tclick\nb\ty\tview\n");
        let err = load_interactions(f.path(), &roster(), "buy").unwrap_err();
        match err {
            DataError::UnknownBehavior { line, name, .. } => {
                assert_eq!(line, 2);
                assert_eq!(name, "view");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("");
        assert!(matches!(
            load_interactions(f.path(), &roster(), "buy"),
            Err(DataError::Empty(_))
        ));
    }

    #[test]
    fn undeclared_target_is_an_error() {
        let f = write_temp("a\tx\tclick\n");
        assert!(matches!(
            load_interactions(f.path(), &roster(), "purchase"),
            Err(DataError::TargetNotDeclared { .. })
        ));
    }

    #[test]
    fn malformed_line_is_an_error() {
        let f = write_temp("a\tx\n");
        assert!(matches!(
            load_interactions(f.path(), &roster(), "buy"),
            Err(DataError::Malformed { line: 1, .. })
        ));
    }
}
