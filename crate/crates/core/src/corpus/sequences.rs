use std::collections::{BTreeMap, HashMap};

use super::load::Interaction;
use crate::error::{Error, Result};

/// Bijection between string ids and dense ids `0..len`.
///
/// Dense ids are assigned in lexicographic order of the string ids, so the
/// mapping depends only on the retained id set. `len()` itself is reserved
/// as the padding id and is never a valid entry.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Catalog {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn from_names(mut names: Vec<String>) -> Self {
        names.sort();
        names.dedup();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Catalog { names, index }
    }

    /// Catalog whose string ids are the decimal dense ids themselves.
    pub fn synthetic(len: usize) -> Self {
        let names: Vec<String> = (0..len).map(|i| i.to_string()).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Catalog { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn padding_id(&self) -> usize {
        self.names.len()
    }

    pub fn encode(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One user's time-ordered item history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user: usize,
    pub items: Vec<usize>,
}

/// Filtered, id-mapped interaction data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub items: Catalog,
    pub users: Catalog,
    pub sequences: Vec<UserSequence>,
}

impl Corpus {
    /// Build a corpus directly from dense sequences (synthetic data).
    pub fn from_dense(item_count: usize, seqs: Vec<Vec<usize>>) -> Result<Self> {
        if let Some(bad) = seqs.iter().flatten().find(|&&i| i >= item_count) {
            return Err(Error::Config(format!("item id {bad} outside catalog of {item_count}")));
        }
        let users = Catalog::from_names((0..seqs.len()).map(|u| format!("{u:08}")).collect());
        let sequences = seqs
            .into_iter()
            .enumerate()
            .map(|(user, items)| UserSequence { user, items })
            .collect();
        Ok(Corpus { items: Catalog::synthetic(item_count), users, sequences })
    }

    /// Re-expand into interactions (timestamps are positions).
    pub fn to_interactions(&self) -> Vec<Interaction> {
        let mut out = Vec::new();
        for s in &self.sequences {
            let user = self.users.decode(s.user).unwrap();
            for (t, &i) in s.items.iter().enumerate() {
                out.push(Interaction {
                    user: user.to_string(),
                    item: self.items.decode(i).unwrap().to_string(),
                    timestamp: Some(t as i64),
                });
            }
        }
        out
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(|s| s.items.len()).sum()
    }
}

/// Group interactions per user, order each history by timestamp (ties and
/// missing timestamps keep file order), then alternately drop rare items
/// and short users until nothing changes.
pub fn build_sequences(interactions: &[Interaction], min_seq_len: usize, min_item_freq: usize) -> Result<Corpus> {
    if min_seq_len < 2 {
        return Err(Error::Config(format!("min_seq_len must be >= 2, got {min_seq_len}")));
    }
    let empty = || Error::EmptyDataset { min_seq_len, min_item_freq };
    if interactions.is_empty() {
        return Err(empty());
    }

    let mut by_user: BTreeMap<&str, Vec<(Option<i64>, &str)>> = BTreeMap::new();
    for it in interactions {
        by_user.entry(&it.user).or_default().push((it.timestamp, &it.item));
    }
    let mut histories: Vec<(&str, Vec<&str>)> = by_user
        .into_iter()
        .map(|(u, mut evs)| {
            if evs.iter().all(|(t, _)| t.is_some()) {
                evs.sort_by_key(|(t, _)| *t);
            }
            (u, evs.into_iter().map(|(_, i)| i).collect())
        })
        .collect();

    loop {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for (_, items) in &histories {
            for &i in items {
                *freq.entry(i).or_default() += 1;
            }
        }
        let mut changed = false;
        for (_, items) in histories.iter_mut() {
            let before = items.len();
            items.retain(|i| freq[i] >= min_item_freq);
            changed |= items.len() != before;
        }
        let before = histories.len();
        histories.retain(|(_, items)| items.len() >= min_seq_len);
        changed |= histories.len() != before;
        if !changed {
            break;
        }
    }
    if histories.is_empty() {
        return Err(empty());
    }

    let items = Catalog::from_names(histories.iter().flat_map(|(_, s)| s.iter().map(|i| i.to_string())).collect());
    let users = Catalog::from_names(histories.iter().map(|(u, _)| u.to_string()).collect());
    let sequences = histories
        .iter()
        .map(|(u, s)| UserSequence {
            user: users.encode(u).unwrap(),
            items: s.iter().map(|i| items.encode(i).unwrap()).collect(),
        })
        .collect();
    Ok(Corpus { items, users, sequences })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inter(rows: &[(&str, &str, Option<i64>)]) -> Vec<Interaction> {
        rows.iter()
            .map(|&(u, i, t)| Interaction { user: u.into(), item: i.into(), timestamp: t })
            .collect()
    }

    fn fixture() -> Vec<Interaction> {
        inter(&[
            ("u1", "a", Some(1)),
            ("u1", "b", Some(2)),
            ("u1", "a", Some(3)),
            ("u1", "b", Some(4)),
            ("u1", "a", Some(5)),
            ("u2", "a", Some(1)),
        ])
    }

    #[test]
    fn short_user_dropped() {
        let c = build_sequences(&fixture(), 2, 1).unwrap();
        assert_eq!(c.items.names(), &["a", "b"]);
        assert_eq!(c.users.names(), &["u1"]);
        assert_eq!(c.sequences[0].items, vec![0, 1, 0, 1, 0]);
    }

    #[test]
    fn fixpoint_drops_rare_item_then_rechecks_users() {
        // b (freq 2) goes; u1 shrinks to [a,a,a]; u2 goes; a keeps freq 3.
        let c = build_sequences(&fixture(), 2, 3).unwrap();
        assert_eq!(c.items.names(), &["a"]);
        assert_eq!(c.sequences[0].items, vec![0, 0, 0]);
        assert!(build_sequences(&fixture(), 4, 3).is_err());
        // a has total frequency 4, so a threshold of 5 removes everything
        let err = build_sequences(&fixture(), 2, 5).unwrap_err();
        assert!(err.to_string().contains("min_item_freq=5"), "{err}");
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(build_sequences(&[], 2, 1), Err(Error::EmptyDataset { .. })));
    }

    #[test]
    fn timestamp_ties_keep_file_order() {
        let c = build_sequences(
            &inter(&[("u", "c", Some(5)), ("u", "a", Some(1)), ("u", "b", Some(5)), ("u", "d", Some(2))]),
            2,
            1,
        )
        .unwrap();
        let names: Vec<_> = c.sequences[0].items.iter().map(|&i| c.items.decode(i).unwrap()).collect();
        assert_eq!(names, vec!["a", "d", "c", "b"]);
    }

    #[test]
    fn missing_timestamps_keep_file_order() {
        let c = build_sequences(&inter(&[("u", "z", None), ("u", "y", None)]), 2, 1).unwrap();
        assert_eq!(c.sequences[0].items, vec![1, 0]);
    }

    #[test]
    fn padding_id_is_not_valid() {
        let cat = Catalog::from_names(vec!["x".into(), "y".into()]);
        assert_eq!(cat.padding_id(), 2);
        assert!(cat.decode(cat.padding_id()).is_none());
    }
}
