//! Snapshot file: sorted TSV with a header and a trailing SHA-256 line.
//!
//! ```text
//! #factweave-snapshot v1
//! entity<TAB>relation<TAB>value<TAB>count<TAB>ordinal
//! ...
//! #source<TAB>source id<TAB>ordinal<TAB>count
//! ...
//! #sha256 <hex digest of every preceding byte>
//! ```
//!
//! `#source` lines attribute `count` occurrences of the row with `ordinal`
//! to a source document. Occurrences without one load as unattributed.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{StoreError, StoreKey, StoreStats, TripletStore, ValueRecord};

pub const SNAPSHOT_HEADER: &str = "#factweave-snapshot v1";
const CHECKSUM_PREFIX: &str = "#sha256 ";
const SOURCE_TAG: &str = "#source";

fn escape(field: &str, out: &mut String) {
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
}

fn unescape(field: &str) -> Result<String, StoreError> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => {
                return Err(corrupt(format!(
                    "bad escape sequence \\{}",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> StoreError {
    StoreError::CorruptSnapshot(msg.into())
}

impl TripletStore {
    /// Encode the store as snapshot bytes.
    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut body = String::from(SNAPSHOT_HEADER);
        body.push('\n');
        for (key, r) in self.sorted_records() {
            escape(&key.entity, &mut body);
            body.push('\t');
            escape(&key.relation, &mut body);
            body.push('\t');
            escape(&r.value, &mut body);
            body.push_str(&format!("\t{}\t{}\n", r.count, r.ordinal));
        }
        let mut attributed: Vec<(u64, &str, u64)> = self
            .sorted_records()
            .into_iter()
            .flat_map(|(_, r)| r.sources.iter().map(move |(s, &n)| (r.ordinal, s.as_str(), n)))
            .collect();
        attributed.sort_unstable();
        for (ordinal, source, n) in attributed {
            body.push_str(SOURCE_TAG);
            body.push('\t');
            escape(source, &mut body);
            body.push_str(&format!("\t{ordinal}\t{n}\n"));
        }
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        body.push_str(CHECKSUM_PREFIX);
        body.push_str(&digest);
        body.push('\n');
        body.into_bytes()
    }

    /// Decode snapshot bytes, verifying the checksum and row structure.
    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let text = std::str::from_utf8(bytes).map_err(|e| corrupt(format!("not UTF-8: {e}")))?;
        let trimmed = text.strip_suffix('\n').unwrap_or(text);
        let split = trimmed
            .rfind('\n')
            .map(|i| i + 1)
            .ok_or_else(|| corrupt("missing checksum line"))?;
        let (body, last) = trimmed.split_at(split);
        let claimed = last
            .strip_prefix(CHECKSUM_PREFIX)
            .ok_or_else(|| corrupt("missing checksum line"))?;
        let actual = hex::encode(Sha256::digest(body.as_bytes()));
        if claimed != actual {
            return Err(corrupt("checksum mismatch"));
        }

        let mut lines = body.lines();
        if lines.next() != Some(SNAPSHOT_HEADER) {
            return Err(corrupt("missing or unsupported header"));
        }
        let mut store = TripletStore::new();
        let mut ordinals = HashMap::new();
        let mut attributions = Vec::new();
        for (n, line) in lines.enumerate() {
            let row = n + 2;
            let fields: Vec<&str> = line.split('\t').collect();
            if let [SOURCE_TAG, source, ordinal, count] = fields[..] {
                attributions.push((row, source, ordinal, count));
                continue;
            }
            let [entity, relation, value, count, ordinal] = fields[..] else {
                return Err(corrupt(format!(
                    "line {row}: expected 5 fields, found {}",
                    fields.len()
                )));
            };
            let key = StoreKey {
                entity: unescape(entity)?,
                relation: unescape(relation)?,
            };
            if key.entity.is_empty() || key.relation.is_empty() || key != StoreKey::new(&key.entity, &key.relation) {
                return Err(corrupt(format!("line {row}: key is not normalized")));
            }
            let value = unescape(value)?;
            let count: u64 = count
                .parse()
                .ok()
                .filter(|&c| c > 0)
                .ok_or_else(|| corrupt(format!("line {row}: bad count")))?;
            let ordinal: u64 = ordinal
                .parse()
                .map_err(|_| corrupt(format!("line {row}: bad ordinal")))?;
            let values = store.entries.entry(key.clone()).or_default();
            if values.iter().any(|r| r.value == value) {
                return Err(corrupt(format!("line {row}: duplicate row")));
            }
            if ordinals.insert(ordinal, (key.clone(), values.len())).is_some() {
                return Err(corrupt(format!("line {row}: duplicate ordinal {ordinal}")));
            }
            values.push(ValueRecord {
                value: value.clone(),
                count,
                ordinal,
                sources: BTreeMap::new(),
                unattributed: count,
            });
            store.unique_triplets += 1;
            store.next_ordinal = store
                .next_ordinal
                .max(ordinal.checked_add(1).ok_or_else(|| corrupt("ordinal overflow"))?);
            store.count_added(&key.entity, &key.relation, &value, count);
        }
        for (row, source, ordinal, count) in attributions {
            let source = unescape(source)?;
            let (key, i) = ordinal
                .parse::<u64>()
                .ok()
                .and_then(|o| ordinals.get(&o))
                .ok_or_else(|| corrupt(format!("line {row}: unknown ordinal")))?;
            let n: u64 = count
                .parse()
                .ok()
                .filter(|&c| c > 0)
                .ok_or_else(|| corrupt(format!("line {row}: bad count")))?;
            let record = &mut store.entries.get_mut(key).expect("ordinal maps to a stored key")[*i];
            if record.unattributed < n || record.sources.insert(source, n).is_some() {
                return Err(corrupt(format!("line {row}: inconsistent source attribution")));
            }
            record.unattributed -= n;
        }
        Ok(store)
    }

    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_snapshot_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::from_snapshot_bytes(&fs::read(path)?)
    }

    /// Replace this store's contents with a snapshot; returns the new stats.
    pub fn reload_from(&mut self, path: impl AsRef<Path>) -> Result<StoreStats, StoreError> {
        *self = Self::load_snapshot(path)?;
        Ok(self.stats())
    }
}
