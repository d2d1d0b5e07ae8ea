use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

use ino_core::object_store::{
    deserialize_object, serialize_object, Datastream, DatastreamContent, Durability, FaultPoint, Mutation, ObjectDraft,
    ObjectState, StoreError, StoreOptions,
};
use ino_core::{vocab, DigitalObject, ObjectId, ObjectStore, Term, Timestamp, Triple, VirtualClock};

fn open(dir: &Path) -> ObjectStore {
    ObjectStore::open(
        dir,
        StoreOptions {
            durability: Durability::NoSync,
            ..Default::default()
        },
        Arc::new(VirtualClock::default()),
    )
    .unwrap()
}

fn literal() -> impl Strategy<Value = String> {
    "[ -~\n\t\r\u{e9}\u{4e2d}\u{1f600}]{0,40}"
}

fn datastream() -> impl Strategy<Value = Datastream> {
    (
        "[a-z][a-z0-9_]{0,20}",
        prop_oneof!["text/plain", "text/xml", "application/octet-stream", "text/html; charset=utf-8"],
        prop_oneof![
            vec(any::<u8>(), 0..64).prop_map(DatastreamContent::Inline),
            "[a-z]{1,10}(/[a-z0-9]{1,8}){0,3}".prop_map(|p| DatastreamContent::Surrogate(format!("http://example.org/{p}"))),
        ],
    )
        .prop_map(|(ds_id, media_type, content)| Datastream {
            ds_id,
            media_type: media_type.to_string(),
            content,
        })
}

fn draft_parts() -> impl Strategy<Value = (Vec<String>, Vec<Datastream>, Vec<(String, Term)>)> {
    (
        proptest::sample::subsequence(vec!["Resource", "Metadata", "Agent", "Aggregation", "Custom_1"], 1..=3),
        vec(datastream(), 0..4),
        vec(
            (
                prop_oneof!["memberOf", "metadataFor", "annotates", "x-rel"],
                prop_oneof![
                    "[a-z0-9]{1,12}".prop_map(|l| Term::iri(format!("info:ino/{l}"))),
                    literal().prop_map(Term::literal),
                ],
            ),
            0..5,
        ),
    )
        .prop_map(|(types, mut ds, rels)| {
            ds.sort_by(|a, b| a.ds_id.cmp(&b.ds_id));
            ds.dedup_by(|a, b| a.ds_id == b.ds_id);
            let mut rels: Vec<(String, Term)> = rels.into_iter().map(|(p, o)| (vocab::expand_predicate(&p), o)).collect();
            rels.sort();
            rels.dedup();
            (types.into_iter().map(String::from).collect(), ds, rels)
        })
}

fn build(local: &str, (types, ds, rels): (Vec<String>, Vec<Datastream>, Vec<(String, Term)>)) -> ObjectDraft {
    let id = ObjectId::from_local(local).unwrap();
    ObjectDraft {
        relationships: rels.into_iter().map(|(p, o)| Triple::new(id.as_str(), p, o)).collect(),
        id: Some(id),
        types,
        datastreams: ds,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialization_roundtrips(parts in draft_parts(), created in 0i64..4_000_000_000, dt in 0i64..1_000_000, deleted: bool) {
        let d = build("obj-1", parts);
        let obj = DigitalObject {
            id: d.id.clone().unwrap(),
            types: d.types,
            state: if deleted { ObjectState::Deleted } else { ObjectState::Active },
            created: Timestamp(created),
            modified: Timestamp(created + dt),
            datastreams: d.datastreams,
            relationships: d.relationships,
            seq: 0,
        };
        let bytes = serialize_object(&obj);
        let back = deserialize_object(&bytes).unwrap();
        prop_assert_eq!(&back, &obj);
        prop_assert_eq!(serialize_object(&back), bytes);
    }
}

#[test]
fn thousand_random_objects_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = draft_parts();
    let mut expected = BTreeMap::new();
    {
        let store = open(dir.path());
        for i in 0..1000 {
            let parts = strategy.new_tree(&mut runner).unwrap().current();
            let d = build(&format!("o{i}"), parts);
            let obj = store.create_object(d.clone()).unwrap();
            assert_eq!((obj.types.clone(), obj.datastreams.clone(), obj.relationships.clone()), (d.types, d.datastreams, d.relationships));
            assert_eq!(store.get_object(&obj.id).unwrap(), obj);
            expected.insert(obj.id.clone(), obj);
        }
    }
    let store = open(dir.path());
    assert_eq!(store.live_count(), 1000);
    assert_eq!(store.last_seq(), 1000);
    for (id, obj) in &expected {
        assert_eq!(&store.get_object(id).unwrap(), obj);
        assert_eq!(store.object_file_bytes(id).unwrap(), serialize_object(obj));
    }
}

#[test]
fn rejects_duplicate_triples_and_system_predicates() {
    let dir = tempfile::tempdir().unwrap();
    let store = open(dir.path());
    let id = ObjectId::from_local("a").unwrap();
    let rel = Triple::new(id.as_str(), vocab::MEMBER_OF, Term::iri("info:ino/g"));
    let mut d = ObjectDraft::new(id.clone(), &["Resource"]);
    d.relationships = vec![rel.clone(), rel.clone()];
    assert!(matches!(store.create_object(d), Err(StoreError::InvalidObject { .. })));
    for p in vocab::SYSTEM_PREDICATES {
        let mut d = ObjectDraft::new(id.clone(), &["Resource"]);
        d.relationships = vec![Triple::new(id.as_str(), p, Term::literal("x"))];
        assert!(matches!(store.create_object(d), Err(StoreError::InvalidObject { .. })), "{p}");
    }
    assert_eq!(store.last_seq(), 0);
}

/// Every object file plus the event count.
fn snapshot(dir: &Path) -> (BTreeMap<ObjectId, Vec<u8>>, u64) {
    let store = open(dir);
    let mut ids = store.live_ids();
    ids.extend(store.tombstone_ids());
    let files = ids.into_iter().map(|id| (id.clone(), store.object_file_bytes(&id).unwrap())).collect();
    (files, store.last_seq())
}

fn batch(store: &ObjectStore) -> Result<(), StoreError> {
    store.transaction(|tx| {
        for l in ["n1", "n2", "n3"] {
            tx.create(ObjectDraft::new(ObjectId::from_local(l).unwrap(), &["Resource"]))?;
        }
        let base = ObjectId::from_local("base").unwrap();
        tx.modify(&base, Mutation::relationships(vec![Triple::new(base.as_str(), vocab::MEMBER_OF, Term::iri("info:ino/n1"))]))?;
        tx.purge(&ObjectId::from_local("old").unwrap())?;
        Ok(())
    })
}

#[test]
fn interrupted_commits_are_all_or_nothing() {
    let points = [
        FaultPoint::TornIntent,
        FaultPoint::AfterIntent,
        FaultPoint::AfterObjectWrites(1),
        FaultPoint::AfterObjectWrites(3),
        FaultPoint::AfterEvents,
        FaultPoint::BeforeCommitMarker,
    ];
    // Reference states without faults.
    let reference = tempfile::tempdir().unwrap();
    let seed = |dir: &Path| {
        let s = open(dir);
        s.create_object(ObjectDraft::new(ObjectId::from_local("base").unwrap(), &["Resource"])).unwrap();
        s.create_object(ObjectDraft::new(ObjectId::from_local("old").unwrap(), &["Resource"])).unwrap();
    };
    seed(reference.path());
    let before = snapshot(reference.path());
    batch(&open(reference.path())).unwrap();
    let after = snapshot(reference.path());
    assert_eq!(after.1, before.1 + 5);

    for point in points {
        let dir = tempfile::tempdir().unwrap();
        seed(dir.path());
        {
            let store = open(dir.path());
            store.inject_fault(point);
            assert!(matches!(batch(&store), Err(StoreError::InjectedFault(p)) if p == point));
            assert!(matches!(batch(&store), Err(StoreError::Poisoned)));
        }
        let recovered = snapshot(dir.path());
        let want = if point == FaultPoint::TornIntent { &before } else { &after };
        assert_eq!(&recovered, want, "{point:?}");
        // Recovery is idempotent.
        assert_eq!(&snapshot(dir.path()), want, "{point:?} second open");
    }
}
