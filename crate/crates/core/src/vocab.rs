//! IRIs of the repository vocabulary.

/// Namespace for object-model predicates and type IRIs.
pub const NS: &str = "info:ino/def#";
/// Prefix of every object identifier.
pub const OBJECT_PREFIX: &str = "info:ino/";

pub const OBJECT_TYPE: &str = "info:ino/def#objectType";
pub const CREATED_DATE: &str = "info:ino/def#createdDate";
pub const MODIFIED_DATE: &str = "info:ino/def#modifiedDate";
pub const STATE: &str = "info:ino/def#state";
pub const HAS_DATASTREAM: &str = "info:ino/def#hasDatastream";
pub const MEDIA_TYPE: &str = "info:ino/def#mediaType";
pub const LOCATION: &str = "info:ino/def#location";

/// Predicates generated from object structure; never valid as relationships.
pub const SYSTEM_PREDICATES: [&str; 7] = [
    OBJECT_TYPE,
    CREATED_DATE,
    MODIFIED_DATE,
    STATE,
    HAS_DATASTREAM,
    MEDIA_TYPE,
    LOCATION,
];

pub const MEMBER_OF: &str = "info:ino/def#memberOf";
pub const METADATA_FOR: &str = "info:ino/def#metadataFor";
pub const REPRESENTED_BY: &str = "info:ino/def#representedBy";
pub const AGGREGATOR_FOR: &str = "info:ino/def#aggregatorFor";
pub const PROVIDED_BY: &str = "info:ino/def#providedBy";
pub const SOURCE_RECORD_ID: &str = "info:ino/def#sourceRecordId";

/// IRI naming an object type, e.g. `info:ino/def#Metadata`.
pub fn type_iri(name: &str) -> String {
    format!("{NS}{name}")
}

/// Expands a bare predicate name into the model namespace; absolute IRIs pass
/// through unchanged.
pub fn expand_predicate(name: &str) -> String {
    if name.contains(':') {
        name.to_string()
    } else {
        format!("{NS}{name}")
    }
}
