//! The external triplet database.
//!
//! A multiset of `(entity, relation) -> value` facts keyed by the normalized
//! `(entity, relation)` pair. Every `(key, value)` pair tracks how often it was
//! ingested, from which source documents, and the ordinal of its first
//! insertion. Unlearning is plain deletion.

mod snapshot;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markup::{normalize, Special, Triplet};

pub use snapshot::SNAPSHOT_HEADER;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoreKey {
    pub entity: String,
    pub relation: String,
}

impl StoreKey {
    pub fn new(entity: &str, relation: &str) -> Self {
        StoreKey {
            entity: normalize(entity),
            relation: normalize(relation),
        }
    }

    pub fn of(triplet: &Triplet) -> Self {
        StoreKey::new(&triplet.entity, &triplet.relation)
    }
}

/// One distinct value stored under a key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueRecord {
    pub value: String,
    /// Occurrences of this `(key, value)` pair.
    pub count: u64,
    /// Ordinal of the first insertion, unique across the store.
    pub ordinal: u64,
    /// Occurrences per source document id.
    pub sources: BTreeMap<String, u64>,
    /// Occurrences with no known source (loaded from a snapshot).
    pub unattributed: u64,
}

impl ValueRecord {
    fn take_one(&mut self) {
        self.count -= 1;
        if self.unattributed > 0 {
            self.unattributed -= 1;
            return;
        }
        let first = self.sources.keys().next().cloned().expect("count and sources agree");
        let n = self.sources.get_mut(&first).unwrap();
        *n -= 1;
        if *n == 0 {
            self.sources.remove(&first);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoreStats {
    /// Triplet occurrences (with multiplicity).
    pub triplet_count: u64,
    pub unique_entity_count: u64,
    pub unique_relation_count: u64,
    pub unique_value_count: u64,
    /// Distinct `(entity, relation)` keys.
    pub unique_key_count: u64,
    /// Distinct `(entity, relation, value)` triplets.
    pub unique_triplet_count: u64,
}

/// What to delete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Every value stored under one key.
    ByKey(StoreKey),
    /// Every key whose entity matches.
    ByEntity(String),
    /// Every occurrence contributed by one source document.
    BySource(String),
    /// One occurrence per listed triplet.
    ByTriplets(Vec<Triplet>),
}

#[derive(Debug, Clone, Default)]
pub struct TripletStore {
    entries: HashMap<StoreKey, Vec<ValueRecord>>,
    next_ordinal: u64,
    triplet_count: u64,
    unique_triplets: u64,
    entity_refs: HashMap<String, u64>,
    relation_refs: HashMap<String, u64>,
    value_refs: HashMap<String, u64>,
}

fn has_delimiter(t: &Triplet) -> bool {
    [&t.entity, &t.relation, &t.value]
        .iter()
        .any(|f| Special::ALL.iter().any(|s| f.contains(s.literal())))
}

fn bump(map: &mut HashMap<String, u64>, key: &str, by: u64) {
    *map.entry(key.to_owned()).or_insert(0) += by;
}

fn drop_refs(map: &mut HashMap<String, u64>, key: &str, by: u64) {
    if let Some(n) = map.get_mut(key) {
        *n -= by;
        if *n == 0 {
            map.remove(key);
        }
    }
}

impl TripletStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add every triplet as one occurrence attributed to `source_id`.
    ///
    /// Triplets whose entity or relation is empty after normalization, or
    /// that contain a lookup delimiter, are skipped. Returns the number
    /// ingested.
    pub fn ingest(&mut self, triplets: &[Triplet], source_id: &str) -> u64 {
        let mut n = 0;
        for t in triplets {
            let t = Triplet::new(&t.entity, &t.relation, &t.value);
            if t.entity.is_empty() || t.relation.is_empty() || has_delimiter(&t) {
                continue;
            }
            let record = self.slot(StoreKey::of(&t), &t.value);
            record.count += 1;
            *record.sources.entry(source_id.to_owned()).or_insert(0) += 1;
            self.count_added(&t.entity, &t.relation, &t.value, 1);
            n += 1;
        }
        n
    }

    fn slot(&mut self, key: StoreKey, value: &str) -> &mut ValueRecord {
        let values = self.entries.entry(key).or_default();
        match values.iter().position(|r| r.value == value) {
            Some(i) => &mut values[i],
            None => {
                values.push(ValueRecord {
                    value: value.to_owned(),
                    count: 0,
                    ordinal: self.next_ordinal,
                    sources: BTreeMap::new(),
                    unattributed: 0,
                });
                self.next_ordinal += 1;
                self.unique_triplets += 1;
                values.last_mut().unwrap()
            }
        }
    }

    fn count_added(&mut self, entity: &str, relation: &str, value: &str, by: u64) {
        self.triplet_count += by;
        bump(&mut self.entity_refs, entity, by);
        bump(&mut self.relation_refs, relation, by);
        bump(&mut self.value_refs, value, by);
    }

    fn count_removed(&mut self, entity: &str, relation: &str, value: &str, by: u64) {
        self.triplet_count -= by;
        drop_refs(&mut self.entity_refs, entity, by);
        drop_refs(&mut self.relation_refs, relation, by);
        drop_refs(&mut self.value_refs, value, by);
    }

    /// The majority value for `key`; ties go to the earliest insertion.
    pub fn lookup_exact(&self, key: &StoreKey) -> Option<&str> {
        self.entries
            .get(key)?
            .iter()
            .min_by_key(|r| (std::cmp::Reverse(r.count), r.ordinal))
            .map(|r| r.value.as_str())
    }

    pub fn contains_key(&self, key: &StoreKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn values(&self, key: &StoreKey) -> Option<&[ValueRecord]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    /// Earliest surviving insertion ordinal under `key`.
    pub fn key_ordinal(&self, key: &StoreKey) -> Option<u64> {
        self.entries.get(key)?.iter().map(|r| r.ordinal).min()
    }

    /// Distinct keys ordered by first insertion.
    pub fn keys(&self) -> Vec<&StoreKey> {
        let mut keys: Vec<(u64, &StoreKey)> = self
            .entries
            .iter()
            .map(|(k, v)| (v.iter().map(|r| r.ordinal).min().unwrap_or(u64::MAX), k))
            .collect();
        keys.sort_unstable();
        keys.into_iter().map(|(_, k)| k).collect()
    }

    pub fn len_keys(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            triplet_count: self.triplet_count,
            unique_entity_count: self.entity_refs.len() as u64,
            unique_relation_count: self.relation_refs.len() as u64,
            unique_value_count: self.value_refs.len() as u64,
            unique_key_count: self.entries.len() as u64,
            unique_triplet_count: self.unique_triplets,
        }
    }

    /// Remove matching occurrences. Returns how many were removed.
    pub fn delete_matching(&mut self, selector: &Selector) -> u64 {
        match selector {
            Selector::ByKey(key) => {
                let key = StoreKey::new(&key.entity, &key.relation);
                self.remove_key(&key)
            }
            Selector::ByEntity(entity) => {
                let entity = normalize(entity);
                let keys: Vec<StoreKey> = self.entries.keys().filter(|k| k.entity == entity).cloned().collect();
                keys.iter().map(|k| self.remove_key(k)).sum()
            }
            Selector::BySource(source) => {
                let keys: Vec<StoreKey> = self
                    .entries
                    .iter()
                    .filter(|(_, v)| v.iter().any(|r| r.sources.contains_key(source)))
                    .map(|(k, _)| k.clone())
                    .collect();
                let mut removed = 0;
                for key in keys {
                    let mut dropped = Vec::new();
                    let values = self.entries.get_mut(&key).unwrap();
                    for r in values.iter_mut() {
                        if let Some(n) = r.sources.remove(source) {
                            r.count -= n;
                            dropped.push((r.value.clone(), n));
                        }
                    }
                    let before = values.len();
                    values.retain(|r| r.count > 0);
                    self.unique_triplets -= (before - values.len()) as u64;
                    let emptied = values.is_empty();
                    for (value, n) in dropped {
                        self.count_removed(&key.entity, &key.relation, &value, n);
                        removed += n;
                    }
                    if emptied {
                        self.entries.remove(&key);
                    }
                }
                removed
            }
            Selector::ByTriplets(list) => {
                let mut removed = 0;
                for t in list {
                    let t = Triplet::new(&t.entity, &t.relation, &t.value);
                    let key = StoreKey::of(&t);
                    let Some(values) = self.entries.get_mut(&key) else {
                        continue;
                    };
                    let Some(i) = values.iter().position(|r| r.value == t.value) else {
                        continue;
                    };
                    values[i].take_one();
                    if values[i].count == 0 {
                        values.remove(i);
                        self.unique_triplets -= 1;
                        if values.is_empty() {
                            self.entries.remove(&key);
                        }
                    }
                    self.count_removed(&t.entity, &t.relation, &t.value, 1);
                    removed += 1;
                }
                removed
            }
        }
    }

    fn remove_key(&mut self, key: &StoreKey) -> u64 {
        let Some(values) = self.entries.remove(key) else {
            return 0;
        };
        let mut removed = 0;
        for r in values {
            self.count_removed(&key.entity, &key.relation, &r.value, r.count);
            self.unique_triplets -= 1;
            removed += r.count;
        }
        removed
    }

    /// Every `(key, value record)` pair, sorted by entity, relation, value.
    pub fn sorted_records(&self) -> Vec<(&StoreKey, &ValueRecord)> {
        let mut rows: Vec<_> = self
            .entries
            .iter()
            .flat_map(|(k, vs)| vs.iter().map(move |r| (k, r)))
            .collect();
        rows.sort_unstable_by(|a, b| (a.0, &a.1.value).cmp(&(b.0, &b.1.value)));
        rows
    }
}
