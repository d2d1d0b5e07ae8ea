//! Literal and crosswalked disseminations of `format_<id>` datastreams.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::Serialize;

use crate::object_store::{escape_text, DatastreamContent, DigitalObject, ObjectId};

pub const FORMAT_PREFIX: &str = "format_";
pub const OAI_DC_NS: &str = "http://www.openarchives.org/OAI/2.0/oai_dc/";
pub const DC_NS: &str = "http://purl.org/dc/elements/1.1/";
pub const XSI_NS: &str = "http://www.w3.org/2001/XMLSchema-instance";
pub const OAI_DC_SCHEMA: &str = "http://www.openarchives.org/OAI/2.0/oai_dc.xsd";

pub const DC15: [&str; 15] = [
    "title",
    "creator",
    "subject",
    "description",
    "publisher",
    "contributor",
    "date",
    "type",
    "format",
    "identifier",
    "source",
    "language",
    "relation",
    "coverage",
    "rights",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transform failed: {0}")]
pub struct TransformError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DisseminationError {
    #[error("object {0} not found")]
    NotFound(ObjectId),
    #[error("format `{format}` is not available for {id}")]
    FormatUnavailable { id: ObjectId, format: String },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("crosswalk {0} -> {1} is already registered")]
    DuplicateCrosswalk(String, String),
}

pub type TransformFn = Arc<dyn Fn(&[u8]) -> Result<Vec<u8>, TransformError> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CrosswalkDef {
    pub from_format: String,
    pub to_format: String,
    pub transform_id: String,
}

#[derive(Clone, Default)]
pub struct CrosswalkRegistry {
    entries: BTreeMap<(String, String), (CrosswalkDef, TransformFn)>,
}

impl std::fmt::Debug for CrosswalkRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.values().map(|(d, _)| d)).finish()
    }
}

impl CrosswalkRegistry {
    pub fn empty() -> Self {
        CrosswalkRegistry::default()
    }

    /// Registry holding the nsdl_dc to oai_dc crosswalk.
    pub fn with_builtin() -> Self {
        let mut r = CrosswalkRegistry::empty();
        r.register("nsdl_dc", "oai_dc", "nsdl_dc_to_oai_dc", Arc::new(nsdl_dc_to_oai_dc))
            .expect("fresh registry");
        r
    }

    pub fn register(
        &mut self,
        from: &str,
        to: &str,
        transform_id: &str,
        f: TransformFn,
    ) -> Result<(), DisseminationError> {
        let key = (from.to_string(), to.to_string());
        if self.entries.contains_key(&key) {
            return Err(DisseminationError::DuplicateCrosswalk(key.0, key.1));
        }
        let def = CrosswalkDef {
            from_format: key.0.clone(),
            to_format: key.1.clone(),
            transform_id: transform_id.to_string(),
        };
        self.entries.insert(key, (def, f));
        Ok(())
    }

    pub fn defs(&self) -> impl Iterator<Item = &CrosswalkDef> {
        self.entries.values().map(|(d, _)| d)
    }

    pub fn get(&self, from: &str, to: &str) -> Option<&TransformFn> {
        self.entries.get(&(from.to_string(), to.to_string())).map(|(_, f)| f)
    }

    /// Stored formats reachable from `stored` in one hop, as (from, to).
    fn hops<'a>(&'a self, stored: &'a BTreeSet<String>) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries
            .keys()
            .filter(move |(from, _)| stored.contains(from))
            .map(|(f, t)| (f.as_str(), t.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DisseminationPath {
    Literal,
    Transformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dissemination {
    pub bytes: Vec<u8>,
    pub media_type: String,
    pub path: DisseminationPath,
}

#[derive(Debug, Default)]
pub struct PathMetrics {
    count: AtomicU64,
    nanos: AtomicU64,
}

impl PathMetrics {
    fn record(&self, started: Instant) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.nanos.fetch_add(started.elapsed().as_nanos() as u64, Ordering::Relaxed);
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn mean_ms(&self) -> f64 {
        match self.count() {
            0 => 0.0,
            n => self.nanos.load(Ordering::Relaxed) as f64 / n as f64 / 1e6,
        }
    }
}

#[derive(Debug, Default)]
pub struct Metrics {
    pub literal: PathMetrics,
    pub transformed: PathMetrics,
}

/// Stored formats of an object: the ids of its `format_*` datastreams.
pub fn stored_formats(obj: &DigitalObject) -> BTreeSet<String> {
    obj.datastreams
        .iter()
        .filter_map(|d| d.ds_id.strip_prefix(FORMAT_PREFIX))
        .map(String::from)
        .collect()
}

#[derive(Debug, Default)]
pub struct Disseminator {
    registry: CrosswalkRegistry,
    metrics: Metrics,
}

impl Disseminator {
    pub fn new(registry: CrosswalkRegistry) -> Self {
        Disseminator {
            registry,
            metrics: Metrics::default(),
        }
    }

    pub fn registry(&self) -> &CrosswalkRegistry {
        &self.registry
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// Stored formats plus every format one registered crosswalk away.
    pub fn list_formats(&self, obj: &DigitalObject) -> BTreeSet<String> {
        self.reachable_formats(&stored_formats(obj))
    }

    /// `stored` plus the targets of crosswalks starting in it.
    pub fn reachable_formats(&self, stored: &BTreeSet<String>) -> BTreeSet<String> {
        let mut out = stored.clone();
        out.extend(self.registry.hops(stored).map(|(_, to)| to.to_string()));
        out
    }

    pub fn disseminate(&self, obj: &DigitalObject, format: &str) -> Result<Dissemination, DisseminationError> {
        let started = Instant::now();
        if !obj.is_active() {
            return Err(DisseminationError::NotFound(obj.id.clone()));
        }
        let unavailable = || DisseminationError::FormatUnavailable {
            id: obj.id.clone(),
            format: format.to_string(),
        };
        let inline = |fmt: &str| {
            obj.datastream(&format!("{FORMAT_PREFIX}{fmt}")).and_then(|d| match &d.content {
                DatastreamContent::Inline(b) => Some((b, &d.media_type)),
                DatastreamContent::Surrogate(_) => None,
            })
        };
        if let Some((bytes, media_type)) = inline(format) {
            let out = Dissemination {
                bytes: bytes.clone(),
                media_type: media_type.clone(),
                path: DisseminationPath::Literal,
            };
            self.metrics.literal.record(started);
            return Ok(out);
        }
        let stored = stored_formats(obj);
        let (from, _) = self
            .registry
            .hops(&stored)
            .find(|(_, to)| *to == format)
            .ok_or_else(unavailable)?;
        let (bytes, _) = inline(from).ok_or_else(unavailable)?;
        let transform = self.registry.get(from, format).expect("hop exists");
        let out = Dissemination {
            bytes: transform(bytes)?,
            media_type: "text/xml".to_string(),
            path: DisseminationPath::Transformed,
        };
        self.metrics.transformed.record(started);
        Ok(out)
    }
}

fn local_name(qname: &[u8]) -> &[u8] {
    match qname.iter().position(|&b| b == b':') {
        Some(i) => &qname[i + 1..],
        None => qname,
    }
}

fn prefix(qname: &[u8]) -> Option<&[u8]> {
    qname.iter().position(|&b| b == b':').map(|i| &qname[..i])
}

/// Keeps the unqualified Dublin Core elements of a flat record, in input
/// order, under an `oai_dc:dc` root. Input already rooted in the oai_dc
/// namespace is rejected.
pub fn nsdl_dc_to_oai_dc(input: &[u8]) -> Result<Vec<u8>, TransformError> {
    let err = |m: String| TransformError(m);
    let mut reader = Reader::from_reader(input);
    reader.config_mut().trim_text(false);

    let mut elements: Vec<(String, String)> = Vec::new();
    let mut depth = 0usize;
    let mut seen_root = false;
    let mut current: Option<(String, String)> = None;
    loop {
        let ev = reader
            .read_event()
            .map_err(|e| err(format!("malformed XML at byte {}: {e}", reader.buffer_position())))?;
        match ev {
            Event::Start(e) if depth == 0 => {
                check_root(&mut seen_root, &e)?;
                depth = 1;
            }
            Event::Empty(e) if depth == 0 => check_root(&mut seen_root, &e)?,
            Event::Start(e) if depth == 1 => {
                let local = String::from_utf8_lossy(local_name(e.name().as_ref())).into_owned();
                current = Some((local, String::new()));
                depth = 2;
            }
            Event::Empty(e) if depth == 1 => {
                let local = String::from_utf8_lossy(local_name(e.name().as_ref())).into_owned();
                elements.push((local, String::new()));
            }
            Event::Start(_) | Event::Empty(_) => return Err(err("nested element in a flat record".into())),
            Event::End(_) => match depth {
                2 => {
                    elements.push(current.take().expect("open child"));
                    depth = 1;
                }
                1 => depth = 0,
                _ => return Err(err("unbalanced end tag".into())),
            },
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| err(format!("bad text: {e}")))?;
                match (&mut current, depth) {
                    (Some((_, buf)), 2) => buf.push_str(&text),
                    _ if text.trim().is_empty() => {}
                    _ => return Err(err("text outside a record element".into())),
                }
            }
            Event::CData(c) => match (&mut current, depth) {
                (Some((_, buf)), 2) => buf.push_str(
                    std::str::from_utf8(&c.into_inner()).map_err(|_| err("CDATA is not UTF-8".into()))?,
                ),
                _ => return Err(err("CDATA outside a record element".into())),
            },
            Event::Eof => break,
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
        }
    }
    if !seen_root {
        return Err(err("no root element".into()));
    }
    if depth != 0 {
        return Err(err("unterminated element".into()));
    }

    let mut out = String::with_capacity(input.len());
    out.push_str(&format!(
        "<oai_dc:dc xmlns:oai_dc=\"{OAI_DC_NS}\" xmlns:dc=\"{DC_NS}\" xmlns:xsi=\"{XSI_NS}\" \
         xsi:schemaLocation=\"{OAI_DC_NS} {OAI_DC_SCHEMA}\">\n"
    ));
    for (name, text) in elements.iter().filter(|(n, _)| DC15.contains(&n.as_str())) {
        out.push_str("  <dc:");
        out.push_str(name);
        out.push('>');
        escape_text(text, &mut out);
        out.push_str("</dc:");
        out.push_str(name);
        out.push_str(">\n");
    }
    out.push_str("</oai_dc:dc>");
    Ok(out.into_bytes())
}

fn check_root(seen_root: &mut bool, e: &BytesStart<'_>) -> Result<(), TransformError> {
    if std::mem::replace(seen_root, true) {
        return Err(TransformError("more than one root element".into()));
    }
    let name = e.name();
    let ns_attr: Vec<u8> = match prefix(name.as_ref()) {
        Some(p) => [b"xmlns:".as_slice(), p].concat(),
        None => b"xmlns".to_vec(),
    };
    for a in e.attributes() {
        let a = a.map_err(|e| TransformError(format!("bad attribute: {e}")))?;
        if a.key.as_ref() == ns_attr.as_slice() && a.value.as_ref() == OAI_DC_NS.as_bytes() {
            return Err(TransformError("input is already oai_dc".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object_store::{Datastream, ObjectState};
    use crate::Timestamp;

    const HEAD: &str = "<oai_dc:dc xmlns:oai_dc=\"http://www.openarchives.org/OAI/2.0/oai_dc/\" xmlns:dc=\"http://purl.org/dc/elements/1.1/\" xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" xsi:schemaLocation=\"http://www.openarchives.org/OAI/2.0/oai_dc/ http://www.openarchives.org/OAI/2.0/oai_dc.xsd\">\n";

    fn metadata(formats: &[(&str, &[u8])]) -> DigitalObject {
        DigitalObject {
            id: ObjectId::from_local("m1").unwrap(),
            types: vec!["Metadata".into()],
            state: ObjectState::Active,
            created: Timestamp(0),
            modified: Timestamp(0),
            datastreams: formats
                .iter()
                .map(|(f, b)| Datastream::inline(format!("format_{f}"), "text/xml", b.to_vec()))
                .collect(),
            relationships: Vec::new(),
            seq: 1,
        }
    }

    #[test]
    fn crosswalk_keeps_dc15_only() {
        let input = br#"<nsdl_dc:nsdl_dc xmlns:nsdl_dc="http://ns.nsdl.org/nsdl_dc_v1.02/" xmlns:dc="http://purl.org/dc/elements/1.1/" xmlns:dct="http://purl.org/dc/terms/"><dc:title xml:lang="en">A &amp; B</dc:title><dct:audience>K-12</dct:audience><dc:identifier>http://x.org/</dc:identifier></nsdl_dc:nsdl_dc>"#;
        let out = String::from_utf8(nsdl_dc_to_oai_dc(input).unwrap()).unwrap();
        assert_eq!(
            out,
            format!("{HEAD}  <dc:title>A &amp; B</dc:title>\n  <dc:identifier>http://x.org/</dc:identifier>\n</oai_dc:dc>")
        );
    }

    #[test]
    fn crosswalk_edge_cases() {
        assert_eq!(
            String::from_utf8(nsdl_dc_to_oai_dc(b"<r></r>").unwrap()).unwrap(),
            format!("{HEAD}</oai_dc:dc>")
        );
        assert_eq!(nsdl_dc_to_oai_dc(b"<r/>").unwrap(), nsdl_dc_to_oai_dc(b"<r></r>").unwrap());
        let with_empty = String::from_utf8(nsdl_dc_to_oai_dc(b"<r><title/><date><![CDATA[2006]]></date></r>").unwrap()).unwrap();
        assert!(with_empty.contains("<dc:title></dc:title>\n  <dc:date>2006</dc:date>"));
        assert!(nsdl_dc_to_oai_dc(b"<r><title><b>x</b></title></r>").is_err());
        assert!(nsdl_dc_to_oai_dc(b"<r>loose<title>x</title></r>").is_err());
        assert!(nsdl_dc_to_oai_dc(b"<r><title>x</title>").is_err());
        assert!(nsdl_dc_to_oai_dc(b"<r/><r/>").is_err());
        assert!(nsdl_dc_to_oai_dc(b"").is_err());
        let once = nsdl_dc_to_oai_dc(b"<r><title>x</title></r>").unwrap();
        assert!(nsdl_dc_to_oai_dc(&once).is_err());
    }

    #[test]
    fn formats_and_paths() {
        let d = Disseminator::new(CrosswalkRegistry::with_builtin());
        let payload = b"<r><title>x</title></r>";
        let m = metadata(&[("nsdl_dc", payload)]);
        assert_eq!(d.list_formats(&m), ["nsdl_dc", "oai_dc"].iter().map(|s| s.to_string()).collect());
        assert!(d.list_formats(&metadata(&[])).is_empty());
        assert_eq!(
            d.list_formats(&metadata(&[("marc21", b"x")])),
            ["marc21".to_string()].into_iter().collect()
        );

        let lit = d.disseminate(&m, "nsdl_dc").unwrap();
        assert_eq!((lit.bytes.as_slice(), lit.path), (payload.as_slice(), DisseminationPath::Literal));
        let tr = d.disseminate(&m, "oai_dc").unwrap();
        assert_eq!(tr.path, DisseminationPath::Transformed);
        assert_eq!(tr.bytes, nsdl_dc_to_oai_dc(payload).unwrap());
        assert!(matches!(d.disseminate(&m, "marc21"), Err(DisseminationError::FormatUnavailable { .. })));
        assert_eq!((d.metrics().literal.count(), d.metrics().transformed.count()), (1, 1));

        let bad = metadata(&[("nsdl_dc", b"<r><title>")]);
        assert!(matches!(d.disseminate(&bad, "oai_dc"), Err(DisseminationError::Transform(_))));
    }

    #[test]
    fn duplicate_crosswalk_rejected() {
        let mut r = CrosswalkRegistry::with_builtin();
        assert!(r
            .register("nsdl_dc", "oai_dc", "again", Arc::new(|b: &[u8]| Ok(b.to_vec())))
            .is_err());
    }
}
