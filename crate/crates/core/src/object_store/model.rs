use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::term::{Term, Triple};
use crate::vocab;

use super::StoreError;

/// Identifier of a digital object: `info:ino/<local-id>` with
/// `<local-id>` in `[a-z0-9._-]{1,64}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectId(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid object id `{0}`")]
pub struct InvalidObjectId(pub String);

fn valid_local_id(local: &str) -> bool {
    (1..=64).contains(&local.len())
        && local
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'.' | b'_' | b'-'))
}

impl ObjectId {
    pub fn parse(iri: &str) -> Result<Self, InvalidObjectId> {
        match iri.strip_prefix(vocab::OBJECT_PREFIX) {
            Some(local) if valid_local_id(local) => Ok(ObjectId(iri.to_string())),
            _ => Err(InvalidObjectId(iri.to_string())),
        }
    }

    pub fn from_local(local: &str) -> Result<Self, InvalidObjectId> {
        if valid_local_id(local) {
            Ok(ObjectId(format!("{}{local}", vocab::OBJECT_PREFIX)))
        } else {
            Err(InvalidObjectId(local.to_string()))
        }
    }

    /// Accepts either a full IRI or a bare local id.
    pub fn parse_lenient(s: &str) -> Result<Self, InvalidObjectId> {
        if s.starts_with(vocab::OBJECT_PREFIX) {
            ObjectId::parse(s)
        } else {
            ObjectId::from_local(s)
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn local(&self) -> &str {
        &self.0[vocab::OBJECT_PREFIX.len()..]
    }

    pub fn to_term(&self) -> Term {
        Term::Iri(self.0.clone())
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ObjectId {
    type Err = InvalidObjectId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectId::parse(s)
    }
}

impl TryFrom<String> for ObjectId {
    type Error = InvalidObjectId;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        ObjectId::parse(&s)
    }
}

impl From<ObjectId> for String {
    fn from(id: ObjectId) -> String {
        id.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectState {
    Active,
    Deleted,
}

impl ObjectState {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectState::Active => "Active",
            ObjectState::Deleted => "Deleted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatastreamContent {
    Inline(Vec<u8>),
    /// Absolute http/https URL of remote content.
    Surrogate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Datastream {
    pub ds_id: String,
    pub media_type: String,
    pub content: DatastreamContent,
}

impl Datastream {
    pub fn inline(ds_id: impl Into<String>, media_type: impl Into<String>, bytes: Vec<u8>) -> Self {
        Datastream {
            ds_id: ds_id.into(),
            media_type: media_type.into(),
            content: DatastreamContent::Inline(bytes),
        }
    }

    pub fn surrogate(ds_id: impl Into<String>, media_type: impl Into<String>, url: impl Into<String>) -> Self {
        Datastream {
            ds_id: ds_id.into(),
            media_type: media_type.into(),
            content: DatastreamContent::Surrogate(url.into()),
        }
    }

    pub fn is_surrogate(&self) -> bool {
        matches!(self.content, DatastreamContent::Surrogate(_))
    }
}

/// A node of the overlay graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitalObject {
    pub id: ObjectId,
    pub types: Vec<String>,
    pub state: ObjectState,
    pub created: Timestamp,
    pub modified: Timestamp,
    pub datastreams: Vec<Datastream>,
    pub relationships: Vec<Triple>,
    /// Sequence number of the last committed change to this object. Kept by
    /// the store's event log rather than in the object file.
    pub seq: u64,
}

impl DigitalObject {
    pub fn is_active(&self) -> bool {
        self.state == ObjectState::Active
    }

    pub fn has_type(&self, name: &str) -> bool {
        self.types.iter().any(|t| t == name)
    }

    pub fn datastream(&self, ds_id: &str) -> Option<&Datastream> {
        self.datastreams.iter().find(|d| d.ds_id == ds_id)
    }

    /// Objects of relationships with the given predicate.
    pub fn objects_of<'a>(&'a self, predicate: &'a str) -> impl Iterator<Item = &'a Term> + 'a {
        self.relationships
            .iter()
            .filter(move |t| t.predicate == predicate)
            .map(|t| &t.object)
    }

    pub fn count_predicate(&self, predicate: &str) -> usize {
        self.relationships.iter().filter(|t| t.predicate == predicate).count()
    }

    /// Checks every structural invariant. Tombstones may have an empty type set.
    pub fn validate(&self) -> Result<(), StoreError> {
        validate_parts(
            &self.id,
            &self.types,
            &self.datastreams,
            &self.relationships,
            self.state == ObjectState::Deleted,
        )?;
        if self.modified < self.created {
            return Err(invalid("modified", "earlier than created"));
        }
        Ok(())
    }

    /// The purged form of this object: content bytes and surrogate targets are
    /// discarded, the descriptive skeleton (types, datastream headers,
    /// relationships) is kept for deleted-record reporting.
    pub fn tombstone(&self, at: Timestamp) -> DigitalObject {
        DigitalObject {
            id: self.id.clone(),
            types: self.types.clone(),
            state: ObjectState::Deleted,
            created: self.created,
            modified: at.max(self.created),
            datastreams: self
                .datastreams
                .iter()
                .map(|d| Datastream::inline(d.ds_id.clone(), d.media_type.clone(), Vec::new()))
                .collect(),
            relationships: self.relationships.clone(),
            seq: self.seq,
        }
    }
}

/// Input to `create`: a digital object without timestamps or sequence number.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectDraft {
    pub id: Option<ObjectId>,
    pub types: Vec<String>,
    pub datastreams: Vec<Datastream>,
    pub relationships: Vec<Triple>,
}

impl ObjectDraft {
    pub fn new(id: ObjectId, types: &[&str]) -> Self {
        ObjectDraft {
            id: Some(id),
            types: types.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn with_datastream(mut self, ds: Datastream) -> Self {
        self.datastreams.push(ds);
        self
    }

    pub fn with_relationship(mut self, predicate: &str, object: Term) -> Self {
        let subject = self.id.as_ref().map(|i| i.as_str().to_string()).unwrap_or_default();
        self.relationships.push(Triple::new(subject, predicate, object));
        self
    }
}

/// Replacement lists for `modify`; `None` leaves that part unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Mutation {
    pub types: Option<Vec<String>>,
    pub datastreams: Option<Vec<Datastream>>,
    pub relationships: Option<Vec<Triple>>,
}

impl Mutation {
    pub fn is_empty(&self) -> bool {
        self.types.is_none() && self.datastreams.is_none() && self.relationships.is_none()
    }

    pub fn relationships(rels: Vec<Triple>) -> Self {
        Mutation {
            relationships: Some(rels),
            ..Default::default()
        }
    }

    pub fn datastreams(ds: Vec<Datastream>) -> Self {
        Mutation {
            datastreams: Some(ds),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChangeKind {
    Created,
    Modified,
    Purged,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::Created => "Created",
            ChangeKind::Modified => "Modified",
            ChangeKind::Purged => "Purged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Created" => Some(ChangeKind::Created),
            "Modified" => Some(ChangeKind::Modified),
            "Purged" => Some(ChangeKind::Purged),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub seq: u64,
    pub kind: ChangeKind,
    pub object_id: ObjectId,
    pub timestamp: Timestamp,
}

pub(crate) fn invalid(field: &str, reason: impl fmt::Display) -> StoreError {
    StoreError::InvalidObject {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

pub fn valid_type_name(name: &str) -> bool {
    let mut chars = name.chars();
    (1..=64).contains(&name.len())
        && matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn valid_ds_id(ds_id: &str) -> bool {
    (1..=32).contains(&ds_id.len()) && ds_id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

fn valid_media_type(mt: &str) -> bool {
    let main = mt.split(';').next().unwrap_or("").trim();
    let token = |s: &str| {
        !s.is_empty()
            && s.bytes()
                .all(|b| b.is_ascii_alphanumeric() || b"!#$&^_.+-".contains(&b))
    };
    match main.split_once('/') {
        Some((ty, sub)) => token(ty) && token(sub) && !mt.chars().any(|c| c.is_control()),
        None => false,
    }
}

pub fn valid_surrogate_url(s: &str) -> bool {
    match url::Url::parse(s) {
        Ok(u) => matches!(u.scheme(), "http" | "https") && u.has_host(),
        Err(_) => false,
    }
}

pub(crate) fn validate_parts(
    id: &ObjectId,
    types: &[String],
    datastreams: &[Datastream],
    relationships: &[Triple],
    tombstone: bool,
) -> Result<(), StoreError> {
    if types.is_empty() && !tombstone {
        return Err(invalid("types", "type set is empty"));
    }
    let mut seen = HashSet::new();
    for t in types {
        if !valid_type_name(t) {
            return Err(invalid("types", format!("invalid type name `{t}`")));
        }
        if !seen.insert(t.as_str()) {
            return Err(invalid("types", format!("duplicate type `{t}`")));
        }
    }
    let mut seen = HashSet::new();
    for ds in datastreams {
        if !valid_ds_id(&ds.ds_id) {
            return Err(invalid("datastreams", format!("invalid datastream id `{}`", ds.ds_id)));
        }
        if !seen.insert(ds.ds_id.as_str()) {
            return Err(invalid("datastreams", format!("duplicate datastream id `{}`", ds.ds_id)));
        }
        if !valid_media_type(&ds.media_type) {
            return Err(invalid("datastreams", format!("invalid media type `{}`", ds.media_type)));
        }
        if let DatastreamContent::Surrogate(u) = &ds.content {
            if !valid_surrogate_url(u) {
                return Err(invalid("datastreams", format!("invalid surrogate URL `{u}`")));
            }
        }
    }
    let mut seen = HashSet::new();
    for t in relationships {
        if !seen.insert(t) {
            return Err(invalid("relationships", format!("duplicate relationship {t}")));
        }
        if vocab::SYSTEM_PREDICATES.contains(&t.predicate.as_str()) {
            return Err(invalid("relationships", format!("`{}` is a reserved system predicate", t.predicate)));
        }
        if t.subject != id.as_str() {
            return Err(invalid(
                "relationships",
                format!("subject `{}` differs from object id `{id}`", t.subject),
            ));
        }
        if !crate::term::is_absolute_iri(&t.predicate) {
            return Err(invalid("relationships", format!("predicate `{}` is not an absolute IRI", t.predicate)));
        }
        if let Term::Iri(o) = &t.object {
            if !crate::term::is_absolute_iri(o) {
                return Err(invalid("relationships", format!("object `{o}` is not an absolute IRI")));
            }
        }
    }
    Ok(())
}
