//! High-level repository operations. Every call is one atomic store
//! transaction that is checked against the ontology before it commits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::dissemination::{CrosswalkRegistry, Dissemination, DisseminationError, Disseminator, FORMAT_PREFIX};
use crate::object_store::{
    Datastream, DatastreamContent, DigitalObject, Mutation, ObjectDraft, ObjectId, ObjectStore, StoreError,
    StoreOptions, Transaction,
};
use crate::ontology::{ObjectKind, Ontology, OntologyError, Range};
use crate::term::{Term, Triple};
use crate::triple_index::{extract_triples, ConjunctiveQuery, PatternTerm, QueryError, Solutions, TripleIndex, TriplePattern};
use crate::vocab;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Dissemination(#[from] DisseminationError),
    #[error("{0} is not a live Aggregation")]
    UnknownAggregation(ObjectId),
    #[error("{0} is not a live Resource")]
    UnknownResource(ObjectId),
    #[error("{0} is not a live Agent")]
    UnknownAgent(ObjectId),
    #[error("{0} is not a live Resource or Metadata object")]
    UnknownMember(ObjectId),
    #[error("{id} is not a live {expected} object")]
    WrongType { id: ObjectId, expected: &'static str },
    #[error("{0} has no such relationship")]
    NoSuchRelationship(Triple),
    #[error("{id} is still referenced by {dependents:?}")]
    HasDependents { id: ObjectId, dependents: Vec<ObjectId> },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ApiError {
    /// Whether the call was rejected by a precondition or constraint rather
    /// than failing in storage.
    pub fn is_rejection(&self) -> bool {
        !matches!(
            self,
            ApiError::Store(StoreError::Io(_))
                | ApiError::Store(StoreError::Corrupt(_))
                | ApiError::Store(StoreError::Poisoned)
                | ApiError::Store(StoreError::InjectedFault(_))
                | ApiError::Store(StoreError::Parse(_))
        )
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ApiError {
    ApiError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Person,
    Organization,
    Service,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Person => "Person",
            AgentKind::Organization => "Organization",
            AgentKind::Service => "Service",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResourceContent {
    Url(String),
    Inline { bytes: Vec<u8>, media_type: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceSpec {
    pub content: ResourceContent,
    pub aggregations: Vec<ObjectId>,
}

impl ResourceSpec {
    pub fn url(url: &str) -> Self {
        ResourceSpec {
            content: ResourceContent::Url(url.to_string()),
            aggregations: Vec::new(),
        }
    }

    pub fn in_aggregations(mut self, aggs: &[ObjectId]) -> Self {
        self.aggregations = aggs.to_vec();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataSpec {
    pub target: ObjectId,
    pub format_id: String,
    pub payload: Vec<u8>,
    pub provider: Option<ObjectId>,
    pub aggregations: Vec<ObjectId>,
    /// Identifier of the record at its origin, for re-harvest matching.
    pub source_record_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipDelta {
    pub added: Vec<ObjectId>,
    pub removed: Vec<ObjectId>,
}

impl MembershipDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub object: ObjectId,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.object, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub objects: usize,
    pub triples: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lowercases scheme and host, drops a default port and the fragment.
pub fn normalize_url(s: &str) -> Result<String, ApiError> {
    let mut u = url::Url::parse(s.trim()).map_err(|e| invalid("url", format!("`{s}`: {e}")))?;
    if !matches!(u.scheme(), "http" | "https") || !u.has_host() {
        return Err(invalid("url", format!("`{s}` is not an absolute http(s) URL")));
    }
    u.set_fragment(None);
    Ok(u.into())
}

pub fn valid_format_id(f: &str) -> bool {
    (1..=32).contains(&f.len()) && f.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Layout of a repository data directory.
pub struct RepoPaths {
    pub root: PathBuf,
}

impl RepoPaths {
    pub fn store(&self) -> PathBuf {
        self.root.join("store")
    }

    pub fn index_snapshot(&self) -> PathBuf {
        self.root.join("index.snapshot")
    }

    pub fn oai_cache(&self) -> PathBuf {
        self.root.join("oai-cache.json")
    }
}

pub struct Repository {
    paths: RepoPaths,
    store: Arc<ObjectStore>,
    index: Arc<TripleIndex>,
    ontology: Arc<Ontology>,
    disseminator: Arc<Disseminator>,
}

impl fmt::Debug for Repository {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Repository").field("root", &self.paths.root).finish_non_exhaustive()
    }
}

impl Repository {
    pub fn open(
        dir: impl AsRef<Path>,
        options: StoreOptions,
        ontology: Ontology,
        crosswalks: CrosswalkRegistry,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ApiError> {
        let paths = RepoPaths {
            root: dir.as_ref().to_path_buf(),
        };
        std::fs::create_dir_all(&paths.root).map_err(StoreError::from)?;
        let store = Arc::new(ObjectStore::open(paths.store(), options, clock)?);
        let index = TripleIndex::attach(&store, Some(&paths.index_snapshot()))?;
        Ok(Repository {
            paths,
            store,
            index,
            ontology: Arc::new(ontology),
            disseminator: Arc::new(Disseminator::new(crosswalks)),
        })
    }

    /// Default ontology and crosswalks.
    pub fn open_default(dir: impl AsRef<Path>, options: StoreOptions, clock: Arc<dyn Clock>) -> Result<Self, ApiError> {
        Repository::open(dir, options, Ontology::default(), CrosswalkRegistry::with_builtin(), clock)
    }

    pub fn paths(&self) -> &RepoPaths {
        &self.paths
    }

    pub fn store(&self) -> &Arc<ObjectStore> {
        &self.store
    }

    pub fn index(&self) -> &Arc<TripleIndex> {
        &self.index
    }

    pub fn ontology(&self) -> &Arc<Ontology> {
        &self.ontology
    }

    pub fn disseminator(&self) -> &Arc<Disseminator> {
        &self.disseminator
    }

    /// Makes committed state durable and snapshots the index.
    pub fn persist(&self) -> Result<(), ApiError> {
        self.store.transaction(|_| {
            self.index.save_snapshot(&self.paths.index_snapshot()).map_err(StoreError::from)?;
            Ok::<_, ApiError>(())
        })?;
        self.store.checkpoint()?;
        Ok(())
    }

    pub fn get_object(&self, id: &ObjectId) -> Result<DigitalObject, ApiError> {
        Ok(self.store.get_object(id)?)
    }

    pub fn get_datastream(&self, id: &ObjectId, ds_id: &str) -> Result<Datastream, ApiError> {
        let obj = self.store.get_object(id)?;
        obj.datastream(ds_id)
            .cloned()
            .ok_or_else(|| invalid("datastream", format!("{id} has no datastream `{ds_id}`")))
    }

    pub fn get_dissemination(&self, id: &ObjectId, format: &str) -> Result<Dissemination, ApiError> {
        let obj = self.store.get_object(id)?;
        Ok(self.disseminator.disseminate(&obj, format)?)
    }

    pub fn list_formats(&self, id: &ObjectId) -> Result<BTreeSet<String>, ApiError> {
        let obj = self.store.get_object(id)?;
        Ok(self.disseminator.list_formats(&obj))
    }

    pub fn query(&self, q: &ConjunctiveQuery) -> Result<Solutions, ApiError> {
        Ok(self.index.evaluate(q)?)
    }

    pub fn query_text(&self, text: &str) -> Result<Solutions, ApiError> {
        self.query(&ConjunctiveQuery::parse(text)?)
    }

    pub fn add_agent(&self, name: &str, kind: AgentKind) -> Result<ObjectId, ApiError> {
        self.add_agent_with_homepage(name, kind, None)
    }

    /// Agent with an optional `homepage` surrogate, used to find agents that
    /// stand for a remote service.
    pub fn add_agent_with_homepage(
        &self,
        name: &str,
        kind: AgentKind,
        homepage: Option<&str>,
    ) -> Result<ObjectId, ApiError> {
        if name.trim().is_empty() {
            return Err(invalid("name", "agent name is empty"));
        }
        if name.contains(['\n', '\r']) {
            return Err(invalid("name", "agent name spans lines"));
        }
        let homepage = homepage.map(normalize_url).transpose()?;
        self.store.transaction(|tx| {
            let id = tx.mint_id("agent-");
            let mut draft = ObjectDraft::new(id.clone(), &["Agent"]).with_datastream(Datastream::inline(
                "properties",
                "text/plain",
                format!("name={name}\nkind={}\n", kind.as_str()).into_bytes(),
            ));
            if let Some(url) = homepage {
                draft = draft.with_datastream(Datastream::surrogate("homepage", "text/html", url));
            }
            tx.create(draft)?;
            self.finish(tx)?;
            Ok(id)
        })
    }

    pub fn add_resource(&self, spec: &ResourceSpec) -> Result<ObjectId, ApiError> {
        self.store.transaction(|tx| {
            let id = self.add_resource_in(tx, spec)?;
            self.finish(tx)?;
            Ok(id)
        })
    }

    fn add_resource_in(&self, tx: &mut Transaction<'_>, spec: &ResourceSpec) -> Result<ObjectId, ApiError> {
        let aggs = dedup(&spec.aggregations);
        for a in &aggs {
            self.require(tx, a, "Aggregation").map_err(|_| ApiError::UnknownAggregation(a.clone()))?;
        }
        let content = match &spec.content {
            ResourceContent::Url(u) => {
                let url = normalize_url(u)?;
                if let Some(existing) = self.find_resource_by_url(&url)? {
                    // Known resource: only membership can grow.
                    let obj = tx.get(&existing)?;
                    let mut rels = obj.relationships.clone();
                    for a in &aggs {
                        let t = Triple::new(existing.as_str(), vocab::MEMBER_OF, a.to_term());
                        if !rels.contains(&t) {
                            rels.push(t);
                        }
                    }
                    if rels != obj.relationships {
                        tx.modify(&existing, Mutation::relationships(rels))?;
                    }
                    return Ok(existing);
                }
                Datastream::surrogate("content", "text/html", url)
            }
            ResourceContent::Inline { bytes, media_type } => Datastream::inline("content", media_type.clone(), bytes.clone()),
        };
        let id = tx.mint_id("res-");
        let mut draft = ObjectDraft::new(id.clone(), &["Resource"]).with_datastream(content);
        for a in &aggs {
            draft = draft.with_relationship(vocab::MEMBER_OF, a.to_term());
        }
        tx.create(draft)?;
        Ok(id)
    }

    /// Live Resource whose `content` surrogate has this (normalized) URL.
    pub fn find_resource_by_url(&self, normalized: &str) -> Result<Option<ObjectId>, ApiError> {
        let q = ConjunctiveQuery::new(
            vec![
                TriplePattern::new(PatternTerm::var("d"), PatternTerm::iri(vocab::LOCATION), PatternTerm::literal(normalized)),
                TriplePattern::new(PatternTerm::var("r"), PatternTerm::iri(vocab::HAS_DATASTREAM), PatternTerm::var("d")),
                TriplePattern::new(
                    PatternTerm::var("r"),
                    PatternTerm::iri(vocab::OBJECT_TYPE),
                    PatternTerm::iri(&vocab::type_iri("Resource")),
                ),
            ],
            &["r"],
        )?;
        first_id(&self.index.evaluate(&q)?)
    }

    /// Live Agent with this homepage URL, lowest id first.
    pub fn find_agent_by_homepage(&self, url: &str) -> Result<Option<ObjectId>, ApiError> {
        let url = normalize_url(url)?;
        let q = ConjunctiveQuery::new(
            vec![
                TriplePattern::new(PatternTerm::var("d"), PatternTerm::iri(vocab::LOCATION), PatternTerm::literal(&url)),
                TriplePattern::new(PatternTerm::var("a"), PatternTerm::iri(vocab::HAS_DATASTREAM), PatternTerm::var("d")),
                TriplePattern::new(
                    PatternTerm::var("a"),
                    PatternTerm::iri(vocab::OBJECT_TYPE),
                    PatternTerm::iri(&vocab::type_iri("Agent")),
                ),
            ],
            &["a"],
        )?;
        first_id(&self.index.evaluate(&q)?)
    }

    /// Aggregation of `agent` whose proxy resource has this URL.
    pub fn find_aggregation(&self, agent: &ObjectId, proxy_url: &str) -> Result<Option<ObjectId>, ApiError> {
        let url = normalize_url(proxy_url)?;
        let q = ConjunctiveQuery::new(
            vec![
                TriplePattern::new(PatternTerm::Const(agent.to_term()), PatternTerm::iri(vocab::AGGREGATOR_FOR), PatternTerm::var("g")),
                TriplePattern::new(PatternTerm::var("g"), PatternTerm::iri(vocab::REPRESENTED_BY), PatternTerm::var("p")),
                TriplePattern::new(PatternTerm::var("p"), PatternTerm::iri(vocab::HAS_DATASTREAM), PatternTerm::var("d")),
                TriplePattern::new(PatternTerm::var("d"), PatternTerm::iri(vocab::LOCATION), PatternTerm::literal(&url)),
            ],
            &["g"],
        )?;
        first_id(&self.index.evaluate(&q)?)
    }

    /// Metadata from `provider` carrying this source record id.
    pub fn find_metadata_by_source(&self, provider: &ObjectId, source_id: &str) -> Result<Option<ObjectId>, ApiError> {
        let q = ConjunctiveQuery::new(
            vec![
                TriplePattern::new(PatternTerm::var("m"), PatternTerm::iri(vocab::SOURCE_RECORD_ID), PatternTerm::literal(source_id)),
                TriplePattern::new(PatternTerm::var("m"), PatternTerm::iri(vocab::PROVIDED_BY), PatternTerm::Const(provider.to_term())),
            ],
            &["m"],
        )?;
        first_id(&self.index.evaluate(&q)?)
    }

    pub fn add_metadata(&self, spec: &MetadataSpec) -> Result<ObjectId, ApiError> {
        if !valid_format_id(&spec.format_id) {
            return Err(invalid("formatId", format!("`{}` does not match [a-z0-9_]{{1,32}}", spec.format_id)));
        }
        if spec.payload.is_empty() {
            return Err(invalid("payload", "payload is empty"));
        }
        self.store.transaction(|tx| {
            self.require(tx, &spec.target, "Resource")
                .map_err(|_| ApiError::UnknownResource(spec.target.clone()))?;
            if let Some(p) = &spec.provider {
                self.require(tx, p, "Agent").map_err(|_| ApiError::UnknownAgent(p.clone()))?;
            }
            let aggs = dedup(&spec.aggregations);
            for a in &aggs {
                self.require(tx, a, "Aggregation").map_err(|_| ApiError::UnknownAggregation(a.clone()))?;
            }
            let id = tx.mint_id("md-");
            let mut draft = ObjectDraft::new(id.clone(), &["Metadata"])
                .with_datastream(Datastream::inline(
                    format!("{FORMAT_PREFIX}{}", spec.format_id),
                    "text/xml",
                    spec.payload.clone(),
                ))
                .with_relationship(vocab::METADATA_FOR, spec.target.to_term());
            if let Some(p) = &spec.provider {
                draft = draft.with_relationship(vocab::PROVIDED_BY, p.to_term());
            }
            if let Some(src) = &spec.source_record_id {
                draft = draft.with_relationship(vocab::SOURCE_RECORD_ID, Term::literal(src.clone()));
            }
            for a in &aggs {
                draft = draft.with_relationship(vocab::MEMBER_OF, a.to_term());
            }
            tx.create(draft)?;
            self.finish(tx)?;
            Ok(id)
        })
    }

    /// Replaces the payload of one stored format and adds any missing
    /// memberships. Returns whether anything changed.
    pub fn update_metadata(
        &self,
        id: &ObjectId,
        format_id: &str,
        payload: &[u8],
        aggregations: &[ObjectId],
    ) -> Result<bool, ApiError> {
        if !valid_format_id(format_id) {
            return Err(invalid("formatId", format!("`{format_id}` does not match [a-z0-9_]{{1,32}}")));
        }
        if payload.is_empty() {
            return Err(invalid("payload", "payload is empty"));
        }
        self.store.transaction(|tx| {
            let obj = self.require(tx, id, "Metadata")?;
            let ds_id = format!("{FORMAT_PREFIX}{format_id}");
            let mut datastreams = obj.datastreams.clone();
            let fresh = Datastream::inline(ds_id.clone(), "text/xml", payload.to_vec());
            match datastreams.iter_mut().find(|d| d.ds_id == ds_id) {
                Some(d) => *d = fresh,
                None => datastreams.push(fresh),
            }
            let mut rels = obj.relationships.clone();
            for a in dedup(aggregations) {
                self.require(tx, &a, "Aggregation").map_err(|_| ApiError::UnknownAggregation(a.clone()))?;
                let t = Triple::new(id.as_str(), vocab::MEMBER_OF, a.to_term());
                if !rels.contains(&t) {
                    rels.push(t);
                }
            }
            if datastreams == obj.datastreams && rels == obj.relationships {
                return Ok(false);
            }
            tx.modify(
                id,
                Mutation {
                    datastreams: Some(datastreams),
                    relationships: Some(rels),
                    types: None,
                },
            )?;
            self.finish(tx)?;
            Ok(true)
        })
    }

    pub fn create_aggregation(&self, agent: &ObjectId, proxy: &ResourceSpec) -> Result<ObjectId, ApiError> {
        self.store.transaction(|tx| {
            let agent_obj = self.require(tx, agent, "Agent").map_err(|_| ApiError::UnknownAgent(agent.clone()))?;
            let proxy_id = self.add_resource_in(tx, proxy)?;
            let id = tx.mint_id("agg-");
            tx.create(
                ObjectDraft::new(id.clone(), &["Aggregation"]).with_relationship(vocab::REPRESENTED_BY, proxy_id.to_term()),
            )?;
            let mut rels = agent_obj.relationships;
            rels.push(Triple::new(agent.as_str(), vocab::AGGREGATOR_FOR, id.to_term()));
            tx.modify(agent, Mutation::relationships(rels))?;
            self.finish(tx)?;
            Ok(id)
        })
    }

    /// Live subjects with a `memberOf` arc to `agg`.
    pub fn members(&self, agg: &ObjectId) -> Result<Vec<ObjectId>, ApiError> {
        let p = TriplePattern::new(PatternTerm::var("x"), PatternTerm::iri(vocab::MEMBER_OF), PatternTerm::Const(agg.to_term()));
        Ok(self
            .index
            .match_pattern(&p)
            .into_iter()
            .filter_map(|t| ObjectId::parse(&t.subject).ok())
            .collect())
    }

    pub fn set_aggregation_membership(&self, agg: &ObjectId, members: &[ObjectId]) -> Result<MembershipDelta, ApiError> {
        self.store.transaction(|tx| {
            self.require(tx, agg, "Aggregation").map_err(|_| ApiError::UnknownAggregation(agg.clone()))?;
            let wanted: BTreeSet<ObjectId> = members.iter().cloned().collect();
            for m in &wanted {
                let ok = tx.get(m).map(|o| o.has_type("Resource") || o.has_type("Metadata")).unwrap_or(false);
                if !ok {
                    return Err(ApiError::UnknownMember(m.clone()));
                }
            }
            let current: BTreeSet<ObjectId> = self.members(agg)?.into_iter().collect();
            let delta = MembershipDelta {
                added: wanted.difference(&current).cloned().collect(),
                removed: current.difference(&wanted).cloned().collect(),
            };
            let arc = |x: &ObjectId| Triple::new(x.as_str(), vocab::MEMBER_OF, agg.to_term());
            for x in &delta.added {
                let mut rels = tx.get(x)?.relationships;
                rels.push(arc(x));
                tx.modify(x, Mutation::relationships(rels))?;
            }
            for x in &delta.removed {
                let mut rels = tx.get(x)?.relationships;
                rels.retain(|t| *t != arc(x));
                tx.modify(x, Mutation::relationships(rels))?;
            }
            self.finish(tx)?;
            Ok(delta)
        })
    }

    pub fn add_relationship(&self, subject: &ObjectId, predicate: &str, object: Term) -> Result<(), ApiError> {
        self.store.transaction(|tx| {
            let obj = tx.get(subject)?;
            self.validate_arc(tx, &obj.types, predicate, &object)?;
            let current = obj.count_predicate(predicate) as u32;
            self.ontology.check_cardinality(subject.as_str(), predicate, current, 1)?;
            let mut rels = obj.relationships;
            rels.push(Triple::new(subject.as_str(), predicate, object.clone()));
            tx.modify(subject, Mutation::relationships(rels))?;
            self.finish(tx)
        })
    }

    pub fn remove_relationship(&self, subject: &ObjectId, predicate: &str, object: Term) -> Result<(), ApiError> {
        self.store.transaction(|tx| {
            let obj = tx.get(subject)?;
            let t = Triple::new(subject.as_str(), predicate, object.clone());
            if !obj.relationships.contains(&t) {
                return Err(ApiError::NoSuchRelationship(t));
            }
            let current = obj.count_predicate(predicate) as u32;
            self.ontology.check_cardinality(subject.as_str(), predicate, current, -1)?;
            let mut rels = obj.relationships;
            rels.retain(|x| *x != t);
            tx.modify(subject, Mutation::relationships(rels))?;
            self.finish(tx)
        })
    }

    pub fn purge_metadata(&self, id: &ObjectId) -> Result<(), ApiError> {
        self.purge_typed(id, "Metadata")
    }

    pub fn purge_resource(&self, id: &ObjectId) -> Result<(), ApiError> {
        self.purge_typed(id, "Resource")
    }

    pub fn purge_aggregation(&self, id: &ObjectId) -> Result<(), ApiError> {
        self.purge_typed(id, "Aggregation")
    }

    pub fn purge_agent(&self, id: &ObjectId) -> Result<(), ApiError> {
        self.purge_typed(id, "Agent")
    }

    fn purge_typed(&self, id: &ObjectId, expected: &'static str) -> Result<(), ApiError> {
        self.store.transaction(|tx| {
            let obj = tx.get(id)?;
            if !obj.has_type(expected) {
                return Err(ApiError::WrongType { id: id.clone(), expected });
            }
            let dependents = self.dependents(id);
            if !dependents.is_empty() {
                return Err(ApiError::HasDependents {
                    id: id.clone(),
                    dependents,
                });
            }
            tx.purge(id)?;
            self.finish(tx)
        })
    }

    /// Live objects holding a relationship that targets `id`.
    pub fn dependents(&self, id: &ObjectId) -> Vec<ObjectId> {
        let p = TriplePattern::new(PatternTerm::var("s"), PatternTerm::var("p"), PatternTerm::Const(id.to_term()));
        let subjects: BTreeSet<ObjectId> = self
            .index
            .match_pattern(&p)
            .into_iter()
            .filter_map(|t| ObjectId::parse(&t.subject).ok())
            .filter(|s| s != id)
            .collect();
        subjects.into_iter().collect()
    }

    fn require(&self, tx: &Transaction<'_>, id: &ObjectId, ty: &'static str) -> Result<DigitalObject, ApiError> {
        match tx.get(id) {
            Ok(o) if o.has_type(ty) => Ok(o),
            _ => Err(ApiError::WrongType {
                id: id.clone(),
                expected: ty,
            }),
        }
    }

    fn validate_arc(&self, tx: &Transaction<'_>, subject_types: &[String], predicate: &str, object: &Term) -> Result<(), ApiError> {
        let rule = self
            .ontology
            .rule(predicate)
            .ok_or_else(|| OntologyError::UnknownPredicate(predicate.to_string()))?;
        match object {
            Term::Literal(_) => self.ontology.validate_relationship(subject_types, predicate, ObjectKind::Literal)?,
            Term::Iri(iri) => {
                if rule.range == Range::Literal {
                    self.ontology.validate_relationship(subject_types, predicate, ObjectKind::Typed(&[]))?;
                }
                let target = ObjectId::parse(iri).map_err(|_| OntologyError::RangeViolation {
                    predicate: predicate.to_string(),
                    object: iri.clone(),
                })?;
                let target = tx.get(&target)?;
                self.ontology
                    .validate_relationship(subject_types, predicate, ObjectKind::Typed(&target.types))?;
            }
        }
        Ok(())
    }

    /// Commit-boundary check of every object touched by the transaction.
    fn finish(&self, tx: &Transaction<'_>) -> Result<(), ApiError> {
        for id in tx.touched().to_vec() {
            if !tx.is_live(&id) {
                continue;
            }
            let obj = tx.get(&id)?;
            self.check_object(&obj, |t| tx.get(t).ok())?;
        }
        Ok(())
    }

    fn check_object(
        &self,
        obj: &DigitalObject,
        lookup: impl Fn(&ObjectId) -> Option<DigitalObject>,
    ) -> Result<(), ApiError> {
        for t in &obj.relationships {
            let kind_types;
            let kind = match &t.object {
                Term::Literal(_) => ObjectKind::Literal,
                Term::Iri(iri) => {
                    let target = ObjectId::parse(iri)
                        .ok()
                        .and_then(|id| lookup(&id))
                        .ok_or_else(|| OntologyError::RangeViolation {
                            predicate: t.predicate.clone(),
                            object: format!("{iri} (not a live object)"),
                        })?;
                    kind_types = target.types;
                    ObjectKind::Typed(&kind_types)
                }
            };
            self.ontology.validate_relationship(&obj.types, &t.predicate, kind)?;
        }
        for rule in self.ontology.rules() {
            if rule.applies_to(&obj.types) {
                let n = obj.count_predicate(&rule.predicate) as u32;
                self.ontology.check_cardinality(obj.id.as_str(), &rule.predicate, n, 0)?;
            }
        }
        Ok(())
    }

    /// Full scan: ontology rules on every live object, dangling targets, and
    /// index content against the objects it was extracted from.
    pub fn audit(&self) -> Result<AuditReport, ApiError> {
        self.store.transaction(|_| {
            let ids = self.store.live_ids();
            let mut objects: BTreeMap<ObjectId, DigitalObject> = BTreeMap::new();
            for id in &ids {
                objects.insert(id.clone(), self.store.get_object(id)?);
            }
            let mut report = AuditReport {
                objects: objects.len(),
                triples: self.index.len(),
                violations: Vec::new(),
            };
            let mut expected: Vec<Triple> = Vec::new();
            for obj in objects.values() {
                if let Err(e) = self.check_object(obj, |t| objects.get(t).cloned()) {
                    report.violations.push(Violation {
                        object: obj.id.clone(),
                        message: e.to_string(),
                    });
                }
                expected.extend(extract_triples(obj));
            }
            expected.sort_unstable();
            if expected != self.index.triples() {
                report.violations.push(Violation {
                    object: ObjectId::from_local("index").expect("valid"),
                    message: format!(
                        "index holds {} triples, objects yield {}",
                        self.index.len(),
                        expected.len()
                    ),
                });
            }
            Ok::<_, ApiError>(report)
        })
    }
}

fn dedup(ids: &[ObjectId]) -> Vec<ObjectId> {
    let mut seen = BTreeSet::new();
    ids.iter().filter(|i| seen.insert((*i).clone())).cloned().collect()
}

fn first_id(sol: &Solutions) -> Result<Option<ObjectId>, ApiError> {
    Ok(sol
        .rows
        .first()
        .and_then(|r| r[0].as_iri())
        .and_then(|s| ObjectId::parse(s).ok()))
}

/// Stored inline bytes of a datastream, if any.
pub fn inline_bytes(ds: &Datastream) -> Option<&[u8]> {
    match &ds.content {
        DatastreamContent::Inline(b) => Some(b),
        DatastreamContent::Surrogate(_) => None,
    }
}
