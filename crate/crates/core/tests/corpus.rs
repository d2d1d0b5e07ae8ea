use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ino_core::corpus::{generate, CorpusError, CorpusProfile};
use ino_core::dissemination::CrosswalkRegistry;
use ino_core::object_store::{DatastreamContent, Durability, StoreOptions};
use ino_core::ontology::Ontology;
use ino_core::{Repository, VirtualClock};

fn open(dir: &Path) -> Repository {
    Repository::open(
        dir,
        StoreOptions {
            durability: Durability::NoSync,
            ..Default::default()
        },
        Ontology::default(),
        CrosswalkRegistry::with_builtin(),
        Arc::new(VirtualClock::default()),
    )
    .unwrap()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn same_profile_gives_identical_object_trees() {
    let profile = CorpusProfile::new(100, 1);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let repo = open(d.path());
        let (stats, _) = generate(&repo, &profile).unwrap();
        assert_eq!(stats.objects_created(), profile.total_objects());
    }
    let ta = tree(&a.path().join("store/objects"));
    assert_eq!(ta.len(), profile.total_objects());
    assert_eq!(ta, tree(&b.path().join("store/objects")));
    assert_eq!(
        std::fs::read(a.path().join("store/events.log")).unwrap(),
        std::fs::read(b.path().join("store/events.log")).unwrap()
    );

    let other = tempfile::tempdir().unwrap();
    generate(&open(other.path()), &CorpusProfile::new(100, 2)).unwrap();
    assert_ne!(ta, tree(&other.path().join("store/objects")));
}

#[test]
fn shape_and_triple_count() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open(dir.path());
    let profile = CorpusProfile::new(1000, 9);
    let (stats, ids) = generate(&repo, &profile).unwrap();
    assert_eq!((stats.resources, stats.metadata, stats.aggregations, stats.agents), (1000, 750, 1, 10));
    assert_eq!(ids.resources.len(), 1000);
    assert!(matches!(generate(&repo, &profile), Err(CorpusError::NotEmpty)));

    let mut expected = 0;
    for id in repo.store().live_ids() {
        let o = repo.get_object(&id).unwrap();
        let surrogates = o.datastreams.iter().filter(|d| matches!(d.content, DatastreamContent::Surrogate(_))).count();
        expected += o.types.len() + 3 + 2 * o.datastreams.len() + surrogates + o.relationships.len();
    }
    assert_eq!(repo.index().len(), expected);
    assert!(repo.audit().unwrap().is_clean());
}
