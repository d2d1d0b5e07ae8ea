//! OAI-PMH 2.0 data provider over a materialized record cache.
//!
//! The cache holds one [`OaiRecord`] per (metadata object, format). It is
//! built in batch from triple-index queries and kept current by applying the
//! store's change events in sequence order. Payloads are disseminated when a
//! response is written.

mod response;
mod token;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Timestamp, DEFAULT_EPOCH};
use crate::dissemination::{stored_formats, DisseminationError, FORMAT_PREFIX, OAI_DC_NS, OAI_DC_SCHEMA};
use crate::ndr_api::{ApiError, Repository};
use crate::object_store::{escape_attr, escape_text, ChangeEvent, DigitalObject, ObjectId, StoreError};
use crate::term::Term;
use crate::triple_index::{ConjunctiveQuery, PatternTerm, TriplePattern};
use crate::vocab;

pub use response::{parse_response, HarvestedRecord, MetadataFormat, OaiResponse, RecordHeader, ResponseError, TokenInfo};
pub use token::{query_key, BadResumptionToken, ResumptionToken, TOKEN_TTL_SECS};

pub const REPOSITORY_NAME: &str = "ino-repo";
pub const IDENTIFIER_PREFIX: &str = "oai:ndr.local:";
pub const DEFAULT_PAGE_SIZE: usize = 100;
pub const OAI_NS: &str = "http://www.openarchives.org/OAI/2.0/";
pub const OAI_SCHEMA: &str = "http://www.openarchives.org/OAI/2.0/OAI-PMH.xsd";
pub const ADMIN_EMAIL: &str = "admin@ndr.local";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OaiRecord {
    pub identifier: String,
    pub format: String,
    pub datestamp: Timestamp,
    /// Aggregation local ids, sorted.
    pub sets: Vec<String>,
    pub deleted: bool,
    pub source: ObjectId,
}

#[derive(Debug, thiserror::Error)]
pub enum OaiError {
    #[error("event {got} out of order; expected {expected}")]
    EventOutOfOrder { expected: u64, got: u64 },
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cache snapshot: {0}")]
    Snapshot(#[from] io::Error),
}

pub fn oai_identifier(id: &ObjectId) -> String {
    format!("{IDENTIFIER_PREFIX}{}", id.local())
}

pub fn object_id_of(identifier: &str) -> Option<ObjectId> {
    ObjectId::from_local(identifier.strip_prefix(IDENTIFIER_PREFIX)?).ok()
}

/// Namespace and schema advertised for a format.
pub fn format_schema(format: &str) -> (String, String) {
    match format {
        "oai_dc" => (OAI_DC_NS.into(), OAI_DC_SCHEMA.into()),
        "nsdl_dc" => (
            "http://ns.nsdl.org/nsdl_dc_v1.02/".into(),
            "http://ns.nsdl.org/schemas/nsdl_dc/nsdl_dc_v1.02.xsd".into(),
        ),
        f => (format!("urn:ino:format:{f}"), format!("urn:ino:format:{f}.xsd")),
    }
}

/// Records keyed by (identifier, format) with a secondary
/// (format, datestamp, identifier) order for selective scans.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordCache {
    records: BTreeMap<(String, String), OaiRecord>,
    /// Values are the record's sets, so set filters need no record lookup.
    by_date: BTreeMap<(String, Timestamp, String), Vec<String>>,
}

impl RecordCache {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, r: OaiRecord) {
        let key = (r.identifier.clone(), r.format.clone());
        if let Some(old) = self.records.remove(&key) {
            self.by_date.remove(&(old.format, old.datestamp, old.identifier));
        }
        self.by_date.insert((r.format.clone(), r.datestamp, r.identifier.clone()), r.sets.clone());
        self.records.insert(key, r);
    }

    /// Drops every format of one identifier.
    pub fn remove_identifier(&mut self, identifier: &str) {
        let keys: Vec<(String, String)> = self
            .records
            .range((identifier.to_string(), String::new())..)
            .take_while(|((i, _), _)| i == identifier)
            .map(|(k, _)| k.clone())
            .collect();
        for k in keys {
            if let Some(old) = self.records.remove(&k) {
                self.by_date.remove(&(old.format, old.datestamp, old.identifier));
            }
        }
    }

    pub fn get(&self, identifier: &str, format: &str) -> Option<&OaiRecord> {
        self.records.get(&(identifier.to_string(), format.to_string()))
    }

    pub fn formats_of(&self, identifier: &str) -> Vec<&OaiRecord> {
        self.records
            .range((identifier.to_string(), String::new())..)
            .take_while(|((i, _), _)| i == identifier)
            .map(|(_, r)| r)
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &OaiRecord> {
        self.records.values()
    }

    pub fn formats(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut next: Option<String> = self.by_date.keys().next().map(|(f, _, _)| f.clone());
        while let Some(f) = next {
            let upper = (f.clone(), Timestamp(i64::MAX), String::from(char::MAX));
            next = self
                .by_date
                .range((std::ops::Bound::Excluded(upper), std::ops::Bound::Unbounded))
                .next()
                .map(|(k, _)| k)
                .map(|(f, _, _)| f.clone());
            out.insert(f);
        }
        out
    }

    /// Records of one format in (datestamp, identifier) order, filtered by
    /// set membership and inclusive datestamp bounds.
    pub fn select<'a>(
        &'a self,
        format: &str,
        set: Option<&'a str>,
        from: Option<Timestamp>,
        until: Option<Timestamp>,
    ) -> impl Iterator<Item = &'a OaiRecord> + 'a {
        self.select_keys(format, set, from, until)
            .map(move |(f, _, id)| &self.records[&(id.clone(), f.clone())])
    }

    /// As [`RecordCache::select`], yielding (format, datestamp, identifier)
    /// keys without touching the records.
    pub fn select_keys<'a>(
        &'a self,
        format: &str,
        set: Option<&'a str>,
        from: Option<Timestamp>,
        until: Option<Timestamp>,
    ) -> impl Iterator<Item = &'a (String, Timestamp, String)> + 'a {
        let lo = (format.to_string(), from.unwrap_or(Timestamp(i64::MIN)), String::new());
        let hi = (format.to_string(), until.unwrap_or(Timestamp(i64::MAX)), String::from(char::MAX));
        let range = if lo <= hi { Some(self.by_date.range(lo..=hi)) } else { None };
        range
            .into_iter()
            .flatten()
            .filter(move |(_, sets)| set.is_none_or(|s| sets.iter().any(|x| x == s)))
            .map(|(k, _)| k)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheStats {
    pub records: usize,
    pub elapsed_secs: f64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    last_seq: u64,
    epoch: u64,
    records: Vec<OaiRecord>,
}

struct State {
    cache: RecordCache,
    epoch: u64,
    last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ListQuery {
    verb: Verb,
    format: String,
    set: Option<String>,
    from: Option<Timestamp>,
    until: Option<Timestamp>,
    from_raw: Option<String>,
    until_raw: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verb {
    Identify,
    ListMetadataFormats,
    ListSets,
    ListIdentifiers,
    ListRecords,
    GetRecord,
}

impl Verb {
    fn parse(s: &str) -> Option<Verb> {
        Some(match s {
            "Identify" => Verb::Identify,
            "ListMetadataFormats" => Verb::ListMetadataFormats,
            "ListSets" => Verb::ListSets,
            "ListIdentifiers" => Verb::ListIdentifiers,
            "ListRecords" => Verb::ListRecords,
            "GetRecord" => Verb::GetRecord,
            _ => return None,
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            Verb::Identify => "Identify",
            Verb::ListMetadataFormats => "ListMetadataFormats",
            Verb::ListSets => "ListSets",
            Verb::ListIdentifiers => "ListIdentifiers",
            Verb::ListRecords => "ListRecords",
            Verb::GetRecord => "GetRecord",
        }
    }

    fn allowed(self) -> (&'static [&'static str], &'static [&'static str]) {
        // (required, optional) besides `verb`; resumptionToken is handled apart.
        match self {
            Verb::Identify => (&[], &[]),
            Verb::ListMetadataFormats => (&[], &["identifier"]),
            Verb::ListSets => (&[], &[]),
            Verb::ListIdentifiers | Verb::ListRecords => (&["metadataPrefix"], &["from", "until", "set"]),
            Verb::GetRecord => (&["identifier", "metadataPrefix"], &[]),
        }
    }
}

/// In-band OAI-PMH error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OaiProtocolError {
    pub code: &'static str,
    pub message: String,
}

fn perr(code: &'static str, message: impl Into<String>) -> OaiProtocolError {
    OaiProtocolError {
        code,
        message: message.into(),
    }
}

pub struct OaiProvider {
    repo: Arc<Repository>,
    clock: Arc<dyn Clock>,
    state: RwLock<State>,
    consumer: Mutex<()>,
    queries: Mutex<HashMap<String, ListQuery>>,
    page_size: AtomicUsize,
}

impl std::fmt::Debug for OaiProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OaiProvider").field("records", &self.state.read().cache.len()).finish_non_exhaustive()
    }
}

impl OaiProvider {
    /// Opens the provider from its cache snapshot when one is usable, then
    /// catches up on events; otherwise rebuilds.
    pub fn open(repo: Arc<Repository>, clock: Arc<dyn Clock>) -> Result<Self, OaiError> {
        let provider = OaiProvider {
            repo,
            clock,
            state: RwLock::new(State {
                cache: RecordCache::default(),
                epoch: 0,
                last_seq: 0,
            }),
            consumer: Mutex::new(()),
            queries: Mutex::new(HashMap::new()),
            page_size: AtomicUsize::new(DEFAULT_PAGE_SIZE),
        };
        let path = provider.repo.paths().oai_cache();
        let loaded = path.exists() && provider.load_snapshot(&path).is_ok();
        if loaded && provider.last_applied_seq() <= provider.repo.store().last_seq() {
            provider.sync()?;
        } else {
            provider.rebuild()?;
        }
        Ok(provider)
    }

    pub fn repo(&self) -> &Arc<Repository> {
        &self.repo
    }

    pub fn set_page_size(&self, n: usize) {
        self.page_size.store(n.max(1), Ordering::Relaxed);
    }

    pub fn page_size(&self) -> usize {
        self.page_size.load(Ordering::Relaxed)
    }

    pub fn epoch(&self) -> u64 {
        self.state.read().epoch
    }

    pub fn last_applied_seq(&self) -> u64 {
        self.state.read().last_seq
    }

    /// A copy of the cache table.
    pub fn cache(&self) -> RecordCache {
        self.state.read().cache.clone()
    }

    /// Records derived from one object's current state. Metadata objects only;
    /// tombstones yield deleted records stamped with the purge time.
    pub fn records_for(&self, obj: &DigitalObject) -> Vec<OaiRecord> {
        if !obj.has_type("Metadata") {
            return Vec::new();
        }
        let formats = self.repo.disseminator().reachable_formats(&stored_formats(obj));
        let mut sets: Vec<String> = obj
            .objects_of(vocab::MEMBER_OF)
            .filter_map(|t| t.as_iri().and_then(|i| ObjectId::parse(i).ok()))
            .map(|id| id.local().to_string())
            .collect();
        sets.sort();
        sets.dedup();
        formats
            .into_iter()
            .map(|format| OaiRecord {
                identifier: oai_identifier(&obj.id),
                format,
                datestamp: obj.modified,
                sets: sets.clone(),
                deleted: !obj.is_active(),
                source: obj.id.clone(),
            })
            .collect()
    }

    /// Batch population: live records from triple-index queries, deleted
    /// records from the tombstones. Bumps the epoch.
    pub fn rebuild(&self) -> Result<CacheStats, OaiError> {
        let started = Instant::now();
        let _consumer = self.consumer.lock();
        let store = self.repo.store().clone();
        let (cache, seq) = store.transaction(|_| {
            let cache = self.batch_records()?;
            Ok::<_, OaiError>((cache, store.last_seq()))
        })?;
        let mut st = self.state.write();
        st.cache = cache;
        st.last_seq = seq;
        st.epoch += 1;
        self.queries.lock().clear();
        Ok(CacheStats {
            records: st.cache.len(),
            elapsed_secs: started.elapsed().as_secs_f64(),
        })
    }

    /// The cache a rebuild would produce now, without installing it.
    pub fn batch_cache(&self) -> Result<RecordCache, OaiError> {
        let store = self.repo.store().clone();
        store.transaction(|_| self.batch_records())
    }

    fn batch_records(&self) -> Result<RecordCache, OaiError> {
        let metadata_type = PatternTerm::iri(&vocab::type_iri("Metadata"));
        let is_metadata = TriplePattern::new(PatternTerm::var("m"), PatternTerm::iri(vocab::OBJECT_TYPE), metadata_type);
        let q_records = ConjunctiveQuery::new(
            vec![
                is_metadata.clone(),
                TriplePattern::new(PatternTerm::var("m"), PatternTerm::iri(vocab::METADATA_FOR), PatternTerm::var("r")),
                TriplePattern::new(PatternTerm::var("m"), PatternTerm::iri(vocab::HAS_DATASTREAM), PatternTerm::var("d")),
                TriplePattern::new(PatternTerm::var("m"), PatternTerm::iri(vocab::MODIFIED_DATE), PatternTerm::var("t")),
            ],
            &["m", "d", "t"],
        )
        .map_err(ApiError::from)?;
        let q_sets = ConjunctiveQuery::new(
            vec![
                is_metadata,
                TriplePattern::new(PatternTerm::var("m"), PatternTerm::iri(vocab::MEMBER_OF), PatternTerm::var("g")),
            ],
            &["m", "g"],
        )
        .map_err(ApiError::from)?;

        let iri = |t: &Term| t.as_iri().map(String::from);
        let mut stored: BTreeMap<String, (BTreeSet<String>, Timestamp)> = BTreeMap::new();
        for row in self.repo.query(&q_records)?.rows {
            let (Some(m), Some(d)) = (iri(&row[0]), iri(&row[1])) else { continue };
            let Some(format) = d.strip_prefix(&format!("{m}/{FORMAT_PREFIX}")).map(String::from) else {
                continue;
            };
            let stamp = Timestamp::parse_iso(row[2].as_str())
                .map_err(|e| StoreError::Corrupt(format!("bad modifiedDate on {m}: {e}")))?;
            let entry = stored.entry(m).or_insert_with(|| (BTreeSet::new(), stamp));
            entry.0.insert(format);
        }
        let mut sets: HashMap<String, Vec<String>> = HashMap::new();
        for row in self.repo.query(&q_sets)?.rows {
            if let (Some(m), Some(g)) = (iri(&row[0]), row[1].as_iri().and_then(|g| ObjectId::parse(g).ok())) {
                sets.entry(m).or_default().push(g.local().to_string());
            }
        }

        let mut cache = RecordCache::default();
        for (m, (formats, datestamp)) in stored {
            let id = ObjectId::parse(&m).map_err(|e| StoreError::Corrupt(e.to_string()))?;
            let mut s = sets.remove(&m).unwrap_or_default();
            s.sort();
            s.dedup();
            for format in self.repo.disseminator().reachable_formats(&formats) {
                cache.insert(OaiRecord {
                    identifier: oai_identifier(&id),
                    format,
                    datestamp,
                    sets: s.clone(),
                    deleted: false,
                    source: id.clone(),
                });
            }
        }
        let store = self.repo.store();
        for id in store.tombstone_ids() {
            let tomb = store.get_any(&id)?;
            for r in self.records_for(&tomb) {
                cache.insert(r);
            }
        }
        Ok(cache)
    }

    /// Applies one change event. Events must arrive in sequence order.
    pub fn apply_event(&self, e: &ChangeEvent) -> Result<(), OaiError> {
        let mut st = self.state.write();
        self.apply_locked(&mut st, e)
    }

    fn apply_locked(&self, st: &mut State, e: &ChangeEvent) -> Result<(), OaiError> {
        if e.seq != st.last_seq + 1 {
            return Err(OaiError::EventOutOfOrder {
                expected: st.last_seq + 1,
                got: e.seq,
            });
        }
        let obj = self.repo.store().get_any(&e.object_id)?;
        st.cache.remove_identifier(&oai_identifier(&e.object_id));
        for r in self.records_for(&obj) {
            st.cache.insert(r);
        }
        st.last_seq = e.seq;
        Ok(())
    }

    /// Applies every event committed since the last one applied.
    pub fn sync(&self) -> Result<usize, OaiError> {
        let _consumer = self.consumer.lock();
        let from = self.state.read().last_seq;
        if from == self.repo.store().last_seq() {
            return Ok(0);
        }
        let events = self.repo.store().changes_since(from)?;
        let mut st = self.state.write();
        for e in &events {
            self.apply_locked(&mut st, e)?;
        }
        Ok(events.len())
    }

    pub fn save_snapshot(&self, path: &std::path::Path) -> Result<(), OaiError> {
        let snap = {
            let st = self.state.read();
            Snapshot {
                last_seq: st.last_seq,
                epoch: st.epoch,
                records: st.cache.records().cloned().collect(),
            }
        };
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, &snap).map_err(io::Error::from)?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Persists the cache next to the repository data.
    pub fn persist(&self) -> Result<(), OaiError> {
        let _consumer = self.consumer.lock();
        self.save_snapshot(&self.repo.paths().oai_cache())
    }

    fn load_snapshot(&self, path: &std::path::Path) -> Result<(), OaiError> {
        let snap: Snapshot = serde_json::from_reader(BufReader::new(File::open(path)?)).map_err(io::Error::from)?;
        let mut cache = RecordCache::default();
        for r in snap.records {
            cache.insert(r);
        }
        let mut st = self.state.write();
        st.cache = cache;
        st.epoch = snap.epoch;
        st.last_seq = snap.last_seq;
        Ok(())
    }

    /// Sets as (setSpec, setName): one per live Aggregation, named by its
    /// proxy resource URL.
    pub fn list_sets(&self) -> Result<Vec<(String, String)>, OaiError> {
        let q = ConjunctiveQuery::new(
            vec![
                TriplePattern::new(
                    PatternTerm::var("g"),
                    PatternTerm::iri(vocab::OBJECT_TYPE),
                    PatternTerm::iri(&vocab::type_iri("Aggregation")),
                ),
                TriplePattern::new(PatternTerm::var("g"), PatternTerm::iri(vocab::REPRESENTED_BY), PatternTerm::var("p")),
                TriplePattern::new(PatternTerm::var("p"), PatternTerm::iri(vocab::HAS_DATASTREAM), PatternTerm::var("d")),
                TriplePattern::new(PatternTerm::var("d"), PatternTerm::iri(vocab::LOCATION), PatternTerm::var("u")),
            ],
            &["g", "u"],
        )
        .map_err(ApiError::from)?;
        let mut out: BTreeMap<String, String> = BTreeMap::new();
        for row in self.repo.query(&q)?.rows {
            if let Some(g) = row[0].as_iri().and_then(|g| ObjectId::parse(g).ok()) {
                out.entry(g.local().to_string()).or_insert_with(|| row[1].as_str().to_string());
            }
        }
        let mut sets: Vec<(String, String)> = out.into_iter().collect();
        // Aggregations without a located proxy still form sets.
        let q = ConjunctiveQuery::new(
            vec![TriplePattern::new(
                PatternTerm::var("g"),
                PatternTerm::iri(vocab::OBJECT_TYPE),
                PatternTerm::iri(&vocab::type_iri("Aggregation")),
            )],
            &["g"],
        )
        .map_err(ApiError::from)?;
        for row in self.repo.query(&q)?.rows {
            if let Some(g) = row[0].as_iri().and_then(|g| ObjectId::parse(g).ok()) {
                if !sets.iter().any(|(s, _)| s == g.local()) {
                    sets.push((g.local().to_string(), g.local().to_string()));
                }
            }
        }
        sets.sort();
        Ok(sets)
    }

    /// Answers one OAI-PMH request given its query parameters in order.
    pub fn handle_request(&self, params: &[(String, String)], base_url: &str) -> String {
        let now = self.clock.now();
        let mut out = String::with_capacity(8 * 1024);
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        out.push_str(&format!(
            "<OAI-PMH xmlns=\"{OAI_NS}\" xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" \
             xsi:schemaLocation=\"{OAI_NS} {OAI_SCHEMA}\">\n"
        ));
        out.push_str(&format!("<responseDate>{}</responseDate>\n", now.to_iso()));

        let mut body = String::new();
        let result = self
            .sync()
            .map_err(|e| perr("badArgument", format!("repository unavailable: {e}")))
            .and_then(|_| self.dispatch(params, base_url, now, &mut body));
        match result {
            Ok(verb) => {
                out.push_str("<request verb=\"");
                out.push_str(verb.as_str());
                out.push('"');
                for (k, v) in params.iter().filter(|(k, _)| k != "verb") {
                    out.push(' ');
                    out.push_str(k);
                    out.push_str("=\"");
                    escape_attr(v, &mut out);
                    out.push('"');
                }
                out.push('>');
                escape_text(base_url, &mut out);
                out.push_str("</request>\n");
                out.push_str(&body);
            }
            Err(e) => {
                // Attributes are echoed only when verb and arguments are valid.
                let echo = !matches!(e.code, "badVerb" | "badArgument")
                    && params.iter().any(|(k, v)| k == "verb" && Verb::parse(v).is_some());
                out.push_str("<request");
                if echo {
                    for (k, v) in params {
                        out.push(' ');
                        out.push_str(k);
                        out.push_str("=\"");
                        escape_attr(v, &mut out);
                        out.push('"');
                    }
                }
                out.push('>');
                escape_text(base_url, &mut out);
                out.push_str("</request>\n");
                out.push_str(&format!("<error code=\"{}\">", e.code));
                escape_text(&e.message, &mut out);
                out.push_str("</error>\n");
            }
        }
        out.push_str("</OAI-PMH>\n");
        out
    }

    fn dispatch(&self, params: &[(String, String)], base_url: &str, now: Timestamp, body: &mut String) -> Result<Verb, OaiProtocolError> {
        let verbs: Vec<&str> = params.iter().filter(|(k, _)| k == "verb").map(|(_, v)| v.as_str()).collect();
        let verb = match verbs.as_slice() {
            [v] => Verb::parse(v).ok_or_else(|| perr("badVerb", format!("unknown verb `{v}`")))?,
            [] => return Err(perr("badVerb", "missing verb")),
            _ => return Err(perr("badVerb", "verb given more than once")),
        };
        let mut args: BTreeMap<&str, &str> = BTreeMap::new();
        for (k, v) in params.iter().filter(|(k, _)| k != "verb") {
            if args.insert(k.as_str(), v.as_str()).is_some() {
                return Err(perr("badArgument", format!("argument `{k}` repeated")));
            }
        }
        let (required, optional) = verb.allowed();
        let token_ok = matches!(verb, Verb::ListIdentifiers | Verb::ListRecords | Verb::ListSets);
        if let Some(token) = args.get("resumptionToken") {
            if !token_ok {
                return Err(perr("badArgument", "resumptionToken is not allowed for this verb"));
            }
            if args.len() > 1 {
                return Err(perr("badArgument", "resumptionToken is exclusive"));
            }
            return match verb {
                Verb::ListSets => Err(perr("badResumptionToken", "set lists are never partial")),
                _ => {
                    self.resume(verb, token, now, body)?;
                    Ok(verb)
                }
            };
        }
        for k in args.keys() {
            if !required.contains(k) && !optional.contains(k) {
                return Err(perr("badArgument", format!("illegal argument `{k}`")));
            }
        }
        for k in required {
            if !args.contains_key(k) {
                return Err(perr("badArgument", format!("missing argument `{k}`")));
            }
        }
        match verb {
            Verb::Identify => self.identify(base_url, body),
            Verb::ListMetadataFormats => self.list_metadata_formats(args.get("identifier").copied(), body)?,
            Verb::ListSets => self.write_sets(body)?,
            Verb::GetRecord => self.get_record(args["identifier"], args["metadataPrefix"], body)?,
            Verb::ListIdentifiers | Verb::ListRecords => {
                let q = parse_list_args(verb, &args)?;
                self.list(q, 0, now, body)?;
            }
        }
        Ok(verb)
    }

    fn identify(&self, base_url: &str, body: &mut String) {
        let earliest = {
            let st = self.state.read();
            st.cache.by_date.keys().map(|(_, t, _)| *t).min().unwrap_or(DEFAULT_EPOCH)
        };
        body.push_str("<Identify>\n");
        body.push_str(&format!("<repositoryName>{REPOSITORY_NAME}</repositoryName>\n"));
        body.push_str("<baseURL>");
        escape_text(base_url, body);
        body.push_str("</baseURL>\n<protocolVersion>2.0</protocolVersion>\n");
        body.push_str(&format!("<adminEmail>{ADMIN_EMAIL}</adminEmail>\n"));
        body.push_str(&format!("<earliestDatestamp>{}</earliestDatestamp>\n", earliest.to_iso()));
        body.push_str("<deletedRecord>persistent</deletedRecord>\n");
        body.push_str("<granularity>YYYY-MM-DDThh:mm:ssZ</granularity>\n");
        body.push_str("</Identify>\n");
    }

    fn list_metadata_formats(&self, identifier: Option<&str>, body: &mut String) -> Result<(), OaiProtocolError> {
        let formats: BTreeSet<String> = {
            let st = self.state.read();
            match identifier {
                Some(i) => {
                    let recs = st.cache.formats_of(i);
                    if recs.is_empty() {
                        return Err(perr("idDoesNotExist", format!("unknown identifier `{i}`")));
                    }
                    recs.into_iter().map(|r| r.format.clone()).collect()
                }
                None => st.cache.formats(),
            }
        };
        if formats.is_empty() {
            return Err(perr("noMetadataFormats", "no metadata formats available"));
        }
        body.push_str("<ListMetadataFormats>\n");
        for f in formats {
            let (ns, schema) = format_schema(&f);
            body.push_str("<metadataFormat><metadataPrefix>");
            escape_text(&f, body);
            body.push_str("</metadataPrefix><schema>");
            escape_text(&schema, body);
            body.push_str("</schema><metadataNamespace>");
            escape_text(&ns, body);
            body.push_str("</metadataNamespace></metadataFormat>\n");
        }
        body.push_str("</ListMetadataFormats>\n");
        Ok(())
    }

    fn write_sets(&self, body: &mut String) -> Result<(), OaiProtocolError> {
        let sets = self.list_sets().map_err(|e| perr("badArgument", e.to_string()))?;
        if sets.is_empty() {
            return Err(perr("noSetHierarchy", "the repository has no aggregations"));
        }
        body.push_str("<ListSets>\n");
        for (spec, name) in sets {
            body.push_str("<set><setSpec>");
            escape_text(&spec, body);
            body.push_str("</setSpec><setName>");
            escape_text(&name, body);
            body.push_str("</setName></set>\n");
        }
        body.push_str("</ListSets>\n");
        Ok(())
    }

    fn get_record(&self, identifier: &str, format: &str, body: &mut String) -> Result<(), OaiProtocolError> {
        let record = {
            let st = self.state.read();
            if st.cache.formats_of(identifier).is_empty() {
                return Err(perr("idDoesNotExist", format!("unknown identifier `{identifier}`")));
            }
            st.cache
                .get(identifier, format)
                .cloned()
                .ok_or_else(|| perr("cannotDisseminateFormat", format!("`{format}` is not available for `{identifier}`")))?
        };
        body.push_str("<GetRecord>\n");
        self.write_record(&record, true, body)?;
        body.push_str("</GetRecord>\n");
        Ok(())
    }

    fn resume(&self, verb: Verb, token: &str, now: Timestamp, body: &mut String) -> Result<(), OaiProtocolError> {
        let bad = |m: String| perr("badResumptionToken", m);
        let t = ResumptionToken::decode(token, self.epoch(), now).map_err(|e| bad(e.0))?;
        let q = self
            .queries
            .lock()
            .get(&t.query_key)
            .cloned()
            .ok_or_else(|| bad("unknown query".into()))?;
        if q.verb != verb {
            return Err(bad("token belongs to another verb".into()));
        }
        self.list(q, t.offset, now, body)
    }

    fn list(&self, q: ListQuery, offset: usize, now: Timestamp, body: &mut String) -> Result<(), OaiProtocolError> {
        let page = self.page_size();
        let (records, total, epoch) = {
            let st = self.state.read();
            if !st.cache.formats().contains(&q.format) {
                return Err(perr("cannotDisseminateFormat", format!("no records in format `{}`", q.format)));
            }
            if let Some(s) = &q.set {
                if !self.has_sets() {
                    return Err(perr("noSetHierarchy", format!("no set `{s}`: the repository has no aggregations")));
                }
            }
            let mut total = 0usize;
            let mut records = Vec::with_capacity(page);
            for (f, _, id) in st.cache.select_keys(&q.format, q.set.as_deref(), q.from, q.until) {
                if total >= offset && records.len() < page {
                    records.push(st.cache.records[&(id.clone(), f.clone())].clone());
                }
                total += 1;
            }
            (records, total, st.epoch)
        };
        if offset > total || (offset == total && offset > 0) {
            return Err(perr("badResumptionToken", "offset beyond the list"));
        }
        if total == 0 {
            return Err(perr("noRecordsMatch", "no records match the request"));
        }
        let tag = q.verb.as_str();
        body.push('<');
        body.push_str(tag);
        body.push_str(">\n");
        let with_payload = q.verb == Verb::ListRecords;
        for r in &records {
            self.write_record(r, with_payload, body)?;
        }
        let next = offset + records.len();
        if next < total {
            let key = query_key(
                tag,
                &q.format,
                q.set.as_deref(),
                q.from_raw.as_deref(),
                q.until_raw.as_deref(),
            );
            self.queries.lock().insert(key.clone(), q.clone());
            let token = ResumptionToken {
                query_key: key,
                offset: next,
                epoch,
                expiry: now.plus_secs(TOKEN_TTL_SECS),
            };
            body.push_str(&format!(
                "<resumptionToken expirationDate=\"{}\" completeListSize=\"{total}\" cursor=\"{offset}\">{}</resumptionToken>\n",
                token.expiry.to_iso(),
                token.encode()
            ));
        } else if offset > 0 {
            body.push_str(&format!("<resumptionToken completeListSize=\"{total}\" cursor=\"{offset}\"/>\n"));
        }
        body.push_str("</");
        body.push_str(tag);
        body.push_str(">\n");
        Ok(())
    }

    fn has_sets(&self) -> bool {
        let p = TriplePattern::new(
            PatternTerm::var("g"),
            PatternTerm::iri(vocab::OBJECT_TYPE),
            PatternTerm::iri(&vocab::type_iri("Aggregation")),
        );
        self.repo.index().estimate(&p) > 0
    }

    fn write_record(&self, r: &OaiRecord, with_payload: bool, body: &mut String) -> Result<(), OaiProtocolError> {
        let payload = if with_payload && !r.deleted {
            match self.repo.get_dissemination(&r.source, &r.format) {
                Ok(d) => Some(d.bytes),
                Err(ApiError::Dissemination(DisseminationError::Transform(e))) => {
                    return Err(perr("cannotDisseminateFormat", format!("{}: {e}", r.identifier)))
                }
                Err(e) => return Err(perr("idDoesNotExist", format!("{}: {e}", r.identifier))),
            }
        } else {
            None
        };
        if with_payload {
            body.push_str("<record>");
        }
        write_header(r, body);
        if let Some(bytes) = payload {
            body.push_str("<metadata>");
            body.push_str(strip_xml_decl(&String::from_utf8_lossy(&bytes)));
            body.push_str("</metadata>");
        }
        if with_payload {
            body.push_str("</record>");
        }
        body.push('\n');
        Ok(())
    }
}

fn write_header(r: &OaiRecord, body: &mut String) {
    body.push_str(if r.deleted { "<header status=\"deleted\">" } else { "<header>" });
    body.push_str("<identifier>");
    escape_text(&r.identifier, body);
    body.push_str("</identifier><datestamp>");
    body.push_str(&r.datestamp.to_iso());
    body.push_str("</datestamp>");
    for s in &r.sets {
        body.push_str("<setSpec>");
        escape_text(s, body);
        body.push_str("</setSpec>");
    }
    body.push_str("</header>");
}

/// Payload text without a leading XML declaration, so it can be embedded.
pub fn strip_xml_decl(s: &str) -> &str {
    let t = s.trim_start_matches('\u{feff}');
    if t.starts_with("<?xml") {
        if let Some(end) = t.find("?>") {
            return t[end + 2..].trim_start();
        }
    }
    t
}

fn parse_bound(s: &str, end_of_day: bool) -> Result<(Timestamp, bool), OaiProtocolError> {
    if let Ok(t) = Timestamp::parse_iso(s) {
        return Ok((t, false));
    }
    match Timestamp::parse_day(s) {
        Ok(t) if end_of_day => Ok((t.plus_secs(86_399), true)),
        Ok(t) => Ok((t, true)),
        Err(_) => Err(perr("badArgument", format!("`{s}` is not a valid datestamp"))),
    }
}

fn parse_list_args(verb: Verb, args: &BTreeMap<&str, &str>) -> Result<ListQuery, OaiProtocolError> {
    let from = args.get("from").map(|s| parse_bound(s, false)).transpose()?;
    let until = args.get("until").map(|s| parse_bound(s, true)).transpose()?;
    if let (Some((f, fd)), Some((u, ud))) = (from, until) {
        if fd != ud {
            return Err(perr("badArgument", "from and until differ in granularity"));
        }
        if f > u {
            return Err(perr("badArgument", "from is later than until"));
        }
    }
    Ok(ListQuery {
        verb,
        format: args["metadataPrefix"].to_string(),
        set: args.get("set").map(|s| s.to_string()),
        from: from.map(|(t, _)| t),
        until: until.map(|(t, _)| t),
        from_raw: args.get("from").map(|s| s.to_string()),
        until_raw: args.get("until").map(|s| s.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, format: &str, t: i64, sets: &[&str]) -> OaiRecord {
        OaiRecord {
            identifier: format!("{IDENTIFIER_PREFIX}{id}"),
            format: format.into(),
            datestamp: Timestamp(t),
            sets: sets.iter().map(|s| s.to_string()).collect(),
            deleted: false,
            source: ObjectId::from_local(id).unwrap(),
        }
    }

    #[test]
    fn cache_ordering_and_selection() {
        let mut c = RecordCache::default();
        c.insert(rec("b", "oai_dc", 5, &["g1"]));
        c.insert(rec("a", "oai_dc", 5, &[]));
        c.insert(rec("c", "oai_dc", 1, &["g1"]));
        c.insert(rec("a", "nsdl_dc", 5, &[]));
        let ids: Vec<&str> = c.select("oai_dc", None, None, None).map(|r| r.identifier.as_str()).collect();
        assert_eq!(ids, vec!["oai:ndr.local:c", "oai:ndr.local:a", "oai:ndr.local:b"]);
        assert_eq!(c.select("oai_dc", Some("g1"), Some(Timestamp(2)), None).count(), 1);
        assert_eq!(c.select("oai_dc", None, Some(Timestamp(6)), Some(Timestamp(1))).count(), 0);
        assert_eq!(c.formats(), ["nsdl_dc", "oai_dc"].iter().map(|s| s.to_string()).collect());

        c.insert(rec("c", "oai_dc", 9, &[]));
        assert_eq!(c.select("oai_dc", None, Some(Timestamp(9)), None).count(), 1);
        c.remove_identifier("oai:ndr.local:a");
        assert_eq!(c.len(), 2);
        assert_eq!(c.by_date.len(), 2);
    }

    #[test]
    fn bounds_and_declarations() {
        assert_eq!(parse_bound("2006-01-01", true).unwrap().0, DEFAULT_EPOCH.plus_secs(86_399));
        assert_eq!(parse_bound("2006-01-01T00:00:00Z", true).unwrap(), (DEFAULT_EPOCH, false));
        assert!(parse_bound("2006-1-1", false).is_err());
        assert_eq!(strip_xml_decl("<?xml version=\"1.0\"?>\n<a/>"), "<a/>");
        assert_eq!(strip_xml_decl("<a/>"), "<a/>");
    }
}
