//! Information network overlay repository.
//!
//! A directed, typed graph of compound digital objects: durable object
//! storage with a change feed, a triple index with conjunctive queries, an
//! ontology of typed relationships, a constraint-enforcing high-level API,
//! metadata disseminations through crosswalks, and an OAI-PMH 2.0 provider
//! backed by an incrementally maintained record cache.

pub mod clock;
pub mod corpus;
pub mod dissemination;
pub mod ndr_api;
pub mod oai_provider;
pub mod object_store;
pub mod ontology;
pub mod term;
pub mod triple_index;
pub mod vocab;

pub use clock::{Clock, SystemClock, Timestamp, VirtualClock};
pub use object_store::{ChangeEvent, ChangeKind, Datastream, DigitalObject, ObjectId, ObjectStore};
pub use term::{Term, Triple};
pub use triple_index::{ConjunctiveQuery, Solutions, TripleIndex, TriplePattern};
pub use ontology::Ontology;
pub use ndr_api::{ApiError, Repository};
