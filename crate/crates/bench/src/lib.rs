//! Fixtures shared by the criterion benches.

use std::path::Path;
use std::sync::Arc;

use ino_core::corpus::{generate, CorpusIds, CorpusProfile};
use ino_core::object_store::{Durability, StoreOptions};
use ino_core::{Repository, VirtualClock};

/// A repository in `dir` holding the seeded corpus of `resources` resources.
pub fn loaded(dir: &Path, resources: usize, seed: u64) -> (Arc<Repository>, CorpusIds) {
    let repo = Repository::open_default(
        dir,
        StoreOptions {
            durability: Durability::NoSync,
            ..Default::default()
        },
        Arc::new(VirtualClock::default()),
    )
    .expect("open repository");
    let (_, ids) = generate(&repo, &CorpusProfile::new(resources, seed)).expect("generate corpus");
    (Arc::new(repo), ids)
}
