use std::collections::{BTreeMap, BTreeSet};

use factweave::store::StoreError;
use factweave::{Selector, StoreKey, StoreStats, Triplet, TripletStore};
use factweave_testkit::SynthDoc;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const DELIMS: [&str; 4] = ["<|db_start|>", "<|sep|>", "<|db_retrieve|>", "<|db_end|>"];

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Default)]
struct Rec {
    count: u64,
    ordinal: u64,
    sources: BTreeMap<String, u64>,
    unattributed: u64,
}

/// Naive multiset of occurrences.
#[derive(Default)]
struct Model {
    recs: BTreeMap<(String, String, String), Rec>,
    next: u64,
}

impl Model {
    fn ingest(&mut self, ts: &[(String, String, String)], src: &str) -> u64 {
        let mut n = 0;
        for (e, r, v) in ts {
            let (e, r, v) = (norm(e), norm(r), v.trim().to_owned());
            if e.is_empty() || r.is_empty() || [&e, &r, &v].iter().any(|f| DELIMS.iter().any(|d| f.contains(d))) {
                continue;
            }
            let next = &mut self.next;
            let rec = self.recs.entry((e, r, v)).or_insert_with(|| {
                *next += 1;
                Rec {
                    ordinal: *next,
                    ..Rec::default()
                }
            });
            rec.count += 1;
            *rec.sources.entry(src.to_owned()).or_default() += 1;
            n += 1;
        }
        n
    }

    fn lookup(&self, e: &str, r: &str) -> Option<String> {
        self.recs
            .iter()
            .filter(|((ke, kr, _), _)| ke == e && kr == r)
            .min_by_key(|(_, rec)| (std::cmp::Reverse(rec.count), rec.ordinal))
            .map(|((_, _, v), _)| v.clone())
    }

    fn stats(&self) -> StoreStats {
        let distinct = |f: &dyn Fn(&(String, String, String)) -> String| {
            self.recs.keys().map(f).collect::<BTreeSet<_>>().len() as u64
        };
        StoreStats {
            triplet_count: self.recs.values().map(|r| r.count).sum(),
            unique_entity_count: distinct(&|k| k.0.clone()),
            unique_relation_count: distinct(&|k| k.1.clone()),
            unique_value_count: distinct(&|k| k.2.clone()),
            unique_key_count: distinct(&|k| format!("{}\u{0}{}", k.0, k.1)),
            unique_triplet_count: self.recs.len() as u64,
        }
    }

    fn keys_in_order(&self) -> Vec<StoreKey> {
        let mut first: BTreeMap<(String, String), u64> = BTreeMap::new();
        for ((e, r, _), rec) in &self.recs {
            let o = first.entry((e.clone(), r.clone())).or_insert(u64::MAX);
            *o = (*o).min(rec.ordinal);
        }
        let mut v: Vec<_> = first.into_iter().map(|(k, o)| (o, k)).collect();
        v.sort();
        v.into_iter()
            .map(|(_, (e, r))| StoreKey { entity: e, relation: r })
            .collect()
    }

    fn delete(&mut self, sel: &Selector) -> u64 {
        let mut removed = 0;
        match sel {
            Selector::ByKey(k) => {
                let (e, r) = (norm(&k.entity), norm(&k.relation));
                self.recs.retain(|(ke, kr, _), rec| {
                    let hit = *ke == e && *kr == r;
                    if hit {
                        removed += rec.count;
                    }
                    !hit
                });
            }
            Selector::ByEntity(e) => {
                let e = norm(e);
                self.recs.retain(|(ke, _, _), rec| {
                    if *ke == e {
                        removed += rec.count;
                    }
                    *ke != e
                });
            }
            Selector::BySource(s) => {
                for rec in self.recs.values_mut() {
                    if let Some(n) = rec.sources.remove(s) {
                        rec.count -= n;
                        removed += n;
                    }
                }
                self.recs.retain(|_, r| r.count > 0);
            }
            Selector::ByTriplets(list) => {
                for t in list {
                    let k = (norm(&t.entity), norm(&t.relation), t.value.trim().to_owned());
                    let Some(rec) = self.recs.get_mut(&k) else { continue };
                    rec.count -= 1;
                    if rec.unattributed > 0 {
                        rec.unattributed -= 1;
                    } else {
                        let first = rec.sources.keys().next().unwrap().clone();
                        let n = rec.sources.get_mut(&first).unwrap();
                        *n -= 1;
                        if *n == 0 {
                            rec.sources.remove(&first);
                        }
                    }
                    if rec.count == 0 {
                        self.recs.remove(&k);
                    }
                    removed += 1;
                }
            }
        }
        removed
    }
}

fn triplet(t: &(String, String, String)) -> Triplet {
    Triplet {
        entity: t.0.clone(),
        relation: t.1.clone(),
        value: t.2.clone(),
    }
}

fn random_triplet(rng: &mut StdRng) -> (String, String, String) {
    const E: &[&str] = &["Napoleon", " Napoleon ", "Ada  Lovelace", "Ko Itakura", "", "x<|sep|>y"];
    const R: &[&str] = &["Birth_Date", "Moved To", "born", "  "];
    const V: &[&str] = &["August 15, 1769", "1815", "Groningen", "", " 1815 ", "a<|db_end|>"];
    let pick = |rng: &mut StdRng, xs: &[&str]| xs[rng.gen_range(0..xs.len())].to_owned();
    (pick(rng, E), pick(rng, R), pick(rng, V))
}

fn assert_same(store: &TripletStore, model: &Model) {
    assert_eq!(store.stats(), model.stats());
    let order: Vec<StoreKey> = store.keys().into_iter().cloned().collect();
    assert_eq!(order, model.keys_in_order());
    for k in &order {
        assert_eq!(
            store.lookup_exact(k).map(str::to_owned),
            model.lookup(&k.entity, &k.relation)
        );
    }
}

fn random_selector(rng: &mut StdRng) -> Selector {
    let (e, r, _) = random_triplet(rng);
    match rng.gen_range(0..4) {
        0 => Selector::ByKey(StoreKey { entity: e, relation: r }),
        1 => Selector::ByEntity(e),
        2 => Selector::BySource(format!("s{}", rng.gen_range(0..4))),
        _ => Selector::ByTriplets(
            (0..rng.gen_range(1..4))
                .map(|_| triplet(&random_triplet(rng)))
                .collect(),
        ),
    }
}

proptest! {
    #[test]
    fn store_matches_naive_model(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut store = TripletStore::new();
        let mut model = Model::default();
        for _ in 0..60 {
            if rng.gen_bool(0.65) {
                let batch: Vec<_> = (0..rng.gen_range(1..5)).map(|_| random_triplet(&mut rng)).collect();
                let src = format!("s{}", rng.gen_range(0..4));
                let ts: Vec<Triplet> = batch.iter().map(triplet).collect();
                prop_assert_eq!(store.ingest(&ts, &src), model.ingest(&batch, &src));
            } else {
                let sel = random_selector(&mut rng);
                prop_assert_eq!(store.delete_matching(&sel), model.delete(&sel));
            }
            assert_same(&store, &model);
        }
    }

    #[test]
    fn snapshot_preserves_lookups_and_stats(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut store = TripletStore::new();
        for _ in 0..40 {
            let ts: Vec<Triplet> = (0..3).map(|_| triplet(&random_triplet(&mut rng))).collect();
            store.ingest(&ts, &format!("s{}", rng.gen_range(0..4)));
            if rng.gen_bool(0.2) {
                store.delete_matching(&random_selector(&mut rng));
            }
        }
        let bytes = store.to_snapshot_bytes();
        let loaded = TripletStore::from_snapshot_bytes(&bytes).unwrap();
        prop_assert_eq!(loaded.stats(), store.stats());
        prop_assert_eq!(loaded.keys(), store.keys());
        for k in store.keys() {
            prop_assert_eq!(loaded.lookup_exact(k), store.lookup_exact(k));
        }
        prop_assert_eq!(loaded.to_snapshot_bytes(), bytes.clone());
        let (mut a, mut b) = (store.clone(), loaded);
        for _ in 0..10 {
            let sel = random_selector(&mut rng);
            prop_assert_eq!(a.delete_matching(&sel), b.delete_matching(&sel));
            prop_assert_eq!(a.to_snapshot_bytes(), b.to_snapshot_bytes());
        }

        if bytes.len() > 40 {
            let mut corrupt = bytes.clone();
            let i = rng.gen_range(0..corrupt.len() - 70);
            corrupt[i] ^= 0x01;
            prop_assert!(TripletStore::from_snapshot_bytes(&corrupt).is_err());
        }
    }
}

#[test]
fn thousand_document_fixture_stats() {
    let mut rng = StdRng::seed_from_u64(7);
    let docs: Vec<SynthDoc> = (0..1000).map(|_| SynthDoc::random(&mut rng, 5)).collect();
    let mut store = TripletStore::new();
    let mut model = Model::default();
    for (i, d) in docs.iter().enumerate() {
        let src = format!("doc{i}");
        let ts: Vec<Triplet> = d.triplets().iter().map(triplet).collect();
        assert_eq!(store.ingest(&ts, &src), model.ingest(&d.triplets(), &src));
    }
    let total: usize = docs.iter().map(|d| d.calls().count()).sum();
    assert_eq!(store.stats().triplet_count, total as u64);
    assert_same(&store, &model);

    for i in (0..1000).step_by(3) {
        let sel = Selector::BySource(format!("doc{i}"));
        assert_eq!(store.delete_matching(&sel), model.delete(&sel));
    }
    assert_same(&store, &model);
}

#[test]
fn snapshot_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.snap");
    let mut store = TripletStore::new();
    store.ingest(&[Triplet::new("Napoleon", "Birth_Date", "August 15, 1769")], "d");
    store.save_snapshot(&path).unwrap();
    let loaded = TripletStore::load_snapshot(&path).unwrap();
    assert_eq!(
        loaded.lookup_exact(&StoreKey::new("Napoleon", "Birth_Date")),
        Some("August 15, 1769")
    );
    assert!(matches!(
        TripletStore::load_snapshot(dir.path().join("missing")),
        Err(StoreError::Io(_))
    ));
    std::fs::write(&path, b"#factweave-snapshot v1\n").unwrap();
    assert!(matches!(
        TripletStore::load_snapshot(&path),
        Err(StoreError::CorruptSnapshot(_))
    ));
}
