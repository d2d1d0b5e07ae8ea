//! Canonical object XML.
//!
//! Output is deterministic: fixed element and attribute order, UTF-8, LF line
//! endings, two-space indentation, empty sections as self-closing elements.

use base64::Engine as _;
use base64::engine::general_purpose::STANDARD as B64;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::clock::Timestamp;
use crate::term::{Term, Triple};

use super::model::{Datastream, DatastreamContent, DigitalObject, ObjectId, ObjectState};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

pub fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
}

pub fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

fn attr(out: &mut String, name: &str, value: &str) {
    out.push(' ');
    out.push_str(name);
    out.push_str("=\"");
    escape_attr(value, out);
    out.push('"');
}

/// Serializes an object. The sequence number is not part of the file.
pub fn serialize_object(obj: &DigitalObject) -> Vec<u8> {
    let mut out = String::with_capacity(512);
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<inoObject");
    attr(&mut out, "id", obj.id.as_str());
    attr(&mut out, "state", obj.state.as_str());
    attr(&mut out, "created", &obj.created.to_iso());
    attr(&mut out, "modified", &obj.modified.to_iso());
    out.push_str(">\n");

    if obj.types.is_empty() {
        out.push_str("  <types/>\n");
    } else {
        out.push_str("  <types>");
        for t in &obj.types {
            out.push_str("<type>");
            escape_text(t, &mut out);
            out.push_str("</type>");
        }
        out.push_str("</types>\n");
    }

    if obj.datastreams.is_empty() {
        out.push_str("  <datastreams/>\n");
    } else {
        out.push_str("  <datastreams>\n");
        for ds in &obj.datastreams {
            out.push_str("    <datastream");
            attr(&mut out, "id", &ds.ds_id);
            attr(&mut out, "mediaType", &ds.media_type);
            out.push('>');
            match &ds.content {
                DatastreamContent::Surrogate(href) => {
                    out.push_str("<surrogate");
                    attr(&mut out, "href", href);
                    out.push_str("/>");
                }
                DatastreamContent::Inline(bytes) => {
                    out.push_str("<inline encoding=\"base64\">");
                    out.push_str(&B64.encode(bytes));
                    out.push_str("</inline>");
                }
            }
            out.push_str("</datastream>\n");
        }
        out.push_str("  </datastreams>\n");
    }

    if obj.relationships.is_empty() {
        out.push_str("  <relationships/>\n");
    } else {
        out.push_str("  <relationships>\n");
        for t in &obj.relationships {
            out.push_str("    <triple");
            attr(&mut out, "predicate", &t.predicate);
            attr(&mut out, "object", t.object.as_str());
            attr(&mut out, "kind", if t.object.is_iri() { "iri" } else { "literal" });
            out.push_str("/>\n");
        }
        out.push_str("  </relationships>\n");
    }
    out.push_str("</inoObject>\n");
    out.into_bytes()
}

struct Cursor<'a> {
    reader: Reader<&'a [u8]>,
    src: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn error_at(&self, pos: usize, message: impl Into<String>) -> ParseError {
        let upto = &self.src[..pos.min(self.src.len())];
        let line = upto.iter().filter(|&&b| b == b'\n').count() + 1;
        let line_start = upto.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        let column = String::from_utf8_lossy(&upto[line_start..]).chars().count() + 1;
        ParseError {
            line,
            column,
            message: message.into(),
        }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        self.error_at(self.reader.buffer_position() as usize, message)
    }

    /// Next significant event; skips the declaration and comments.
    fn next(&mut self) -> Result<Event<'a>, ParseError> {
        loop {
            let pos = self.reader.buffer_position() as usize;
            let ev = self
                .reader
                .read_event()
                .map_err(|e| self.error_at(pos, e.to_string()))?;
            match ev {
                Event::Decl(_) | Event::Comment(_) => continue,
                Event::Text(ref t) if t.iter().all(|b| b.is_ascii_whitespace()) => continue,
                Event::DocType(_) | Event::PI(_) => return Err(self.error_at(pos, "unexpected markup")),
                ev => return Ok(ev),
            }
        }
    }

    fn attrs(&self, e: &BytesStart<'_>, allowed: &[&str]) -> Result<Vec<Option<String>>, ParseError> {
        let mut values = vec![None; allowed.len()];
        for a in e.attributes() {
            let a = a.map_err(|err| self.error(err.to_string()))?;
            let key = std::str::from_utf8(a.key.as_ref()).map_err(|_| self.error("non-UTF-8 attribute name"))?;
            let Some(i) = allowed.iter().position(|k| *k == key) else {
                return Err(self.error(format!("unknown attribute `{key}`")));
            };
            if values[i].is_some() {
                return Err(self.error(format!("duplicate attribute `{key}`")));
            }
            let v = a.unescape_value().map_err(|err| self.error(err.to_string()))?;
            values[i] = Some(v.into_owned());
        }
        Ok(values)
    }

    fn required(&self, v: Option<String>, name: &str, elem: &str) -> Result<String, ParseError> {
        v.ok_or_else(|| self.error(format!("<{elem}> missing attribute `{name}`")))
    }

    fn expect_end(&mut self, name: &str) -> Result<(), ParseError> {
        match self.next()? {
            Event::End(e) if e.name().as_ref() == name.as_bytes() => Ok(()),
            _ => Err(self.error(format!("expected </{name}>"))),
        }
    }

    /// Reads text up to the closing tag of `name`.
    fn text_until_end(&mut self, name: &str) -> Result<String, ParseError> {
        let mut text = String::new();
        loop {
            let pos = self.reader.buffer_position() as usize;
            let ev = self.reader.read_event().map_err(|e| self.error_at(pos, e.to_string()))?;
            match ev {
                Event::Text(t) => text.push_str(&t.unescape().map_err(|e| self.error_at(pos, e.to_string()))?),
                Event::CData(c) => text.push_str(
                    std::str::from_utf8(&c).map_err(|_| self.error_at(pos, "non-UTF-8 text"))?,
                ),
                Event::End(e) if e.name().as_ref() == name.as_bytes() => return Ok(text),
                _ => return Err(self.error_at(pos, format!("unexpected content in <{name}>"))),
            }
        }
    }
}

fn name_of(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.name().as_ref()).into_owned()
}

/// Parses canonical object XML. The returned object has `seq == 0`.
pub fn deserialize_object(bytes: &[u8]) -> Result<DigitalObject, ParseError> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(false);
    let mut cur = Cursor { reader, src: bytes };

    let root = match cur.next()? {
        Event::Start(e) if e.name().as_ref() == b"inoObject" => e,
        _ => return Err(cur.error("expected <inoObject> root element")),
    };
    let [id, state, created, modified]: [Option<String>; 4] = cur
        .attrs(&root, &["id", "state", "created", "modified"])?
        .try_into()
        .expect("four attributes");
    let id = cur.required(id, "id", "inoObject")?;
    let id = ObjectId::parse(&id).map_err(|e| cur.error(e.to_string()))?;
    let state = match cur.required(state, "state", "inoObject")?.as_str() {
        "Active" => ObjectState::Active,
        "Deleted" => ObjectState::Deleted,
        other => return Err(cur.error(format!("unknown state `{other}`"))),
    };
    let ts = |cur: &Cursor<'_>, v: Option<String>, name: &str| -> Result<Timestamp, ParseError> {
        let v = cur.required(v, name, "inoObject")?;
        Timestamp::parse_iso(&v).map_err(|e| cur.error(e.to_string()))
    };
    let created = ts(&cur, created, "created")?;
    let modified = ts(&cur, modified, "modified")?;

    let mut types = Vec::new();
    let mut datastreams = Vec::new();
    let mut relationships = Vec::new();

    // <types>
    match cur.next()? {
        Event::Empty(e) if e.name().as_ref() == b"types" => {}
        Event::Start(e) if e.name().as_ref() == b"types" => loop {
            match cur.next()? {
                Event::Start(t) if t.name().as_ref() == b"type" => types.push(cur.text_until_end("type")?),
                Event::End(e) if e.name().as_ref() == b"types" => break,
                Event::Start(e) | Event::Empty(e) => {
                    return Err(cur.error(format!("unknown element <{}> in <types>", name_of(&e))))
                }
                _ => return Err(cur.error("malformed <types>")),
            }
        },
        _ => return Err(cur.error("expected <types>")),
    }

    // <datastreams>
    match cur.next()? {
        Event::Empty(e) if e.name().as_ref() == b"datastreams" => {}
        Event::Start(e) if e.name().as_ref() == b"datastreams" => loop {
            match cur.next()? {
                Event::Start(d) if d.name().as_ref() == b"datastream" => {
                    let [ds_id, media]: [Option<String>; 2] =
                        cur.attrs(&d, &["id", "mediaType"])?.try_into().expect("two attributes");
                    let ds_id = cur.required(ds_id, "id", "datastream")?;
                    let media_type = cur.required(media, "mediaType", "datastream")?;
                    let content = match cur.next()? {
                        Event::Empty(s) if s.name().as_ref() == b"surrogate" => {
                            let [href]: [Option<String>; 1] =
                                cur.attrs(&s, &["href"])?.try_into().expect("one attribute");
                            DatastreamContent::Surrogate(cur.required(href, "href", "surrogate")?)
                        }
                        Event::Start(s) if s.name().as_ref() == b"surrogate" => {
                            let [href]: [Option<String>; 1] =
                                cur.attrs(&s, &["href"])?.try_into().expect("one attribute");
                            let href = cur.required(href, "href", "surrogate")?;
                            cur.expect_end("surrogate")?;
                            DatastreamContent::Surrogate(href)
                        }
                        Event::Start(s) if s.name().as_ref() == b"inline" => {
                            inline_encoding(&cur, &s)?;
                            let text = cur.text_until_end("inline")?;
                            let bytes = B64
                                .decode(text.trim().as_bytes())
                                .map_err(|e| cur.error(format!("bad base64 content: {e}")))?;
                            DatastreamContent::Inline(bytes)
                        }
                        Event::Empty(s) if s.name().as_ref() == b"inline" => {
                            inline_encoding(&cur, &s)?;
                            DatastreamContent::Inline(Vec::new())
                        }
                        Event::Start(e) | Event::Empty(e) => {
                            return Err(cur.error(format!("unknown element <{}> in <datastream>", name_of(&e))))
                        }
                        _ => return Err(cur.error("expected <surrogate> or <inline>")),
                    };
                    cur.expect_end("datastream")?;
                    datastreams.push(Datastream {
                        ds_id,
                        media_type,
                        content,
                    });
                }
                Event::End(e) if e.name().as_ref() == b"datastreams" => break,
                Event::Start(e) | Event::Empty(e) => {
                    return Err(cur.error(format!("unknown element <{}> in <datastreams>", name_of(&e))))
                }
                _ => return Err(cur.error("malformed <datastreams>")),
            }
        },
        _ => return Err(cur.error("expected <datastreams>")),
    }

    // <relationships>
    match cur.next()? {
        Event::Empty(e) if e.name().as_ref() == b"relationships" => {}
        Event::Start(e) if e.name().as_ref() == b"relationships" => loop {
            match cur.next()? {
                Event::Empty(t) if t.name().as_ref() == b"triple" => {
                    let [p, o, k]: [Option<String>; 3] = cur
                        .attrs(&t, &["predicate", "object", "kind"])?
                        .try_into()
                        .expect("three attributes");
                    let predicate = cur.required(p, "predicate", "triple")?;
                    let object = cur.required(o, "object", "triple")?;
                    let object = match cur.required(k, "kind", "triple")?.as_str() {
                        "iri" => Term::Iri(object),
                        "literal" => Term::Literal(object),
                        other => return Err(cur.error(format!("unknown triple kind `{other}`"))),
                    };
                    relationships.push(Triple::new(id.as_str(), predicate, object));
                }
                Event::End(e) if e.name().as_ref() == b"relationships" => break,
                Event::Start(e) | Event::Empty(e) => {
                    return Err(cur.error(format!("unknown element <{}> in <relationships>", name_of(&e))))
                }
                _ => return Err(cur.error("malformed <relationships>")),
            }
        },
        _ => return Err(cur.error("expected <relationships>")),
    }

    match cur.next()? {
        Event::End(e) if e.name().as_ref() == b"inoObject" => {}
        Event::Start(e) | Event::Empty(e) => {
            return Err(cur.error(format!("unknown element <{}> in <inoObject>", name_of(&e))))
        }
        _ => return Err(cur.error("expected </inoObject>")),
    }
    match cur.next()? {
        Event::Eof => {}
        _ => return Err(cur.error("trailing content after </inoObject>")),
    }

    let obj = DigitalObject {
        id,
        types,
        state,
        created,
        modified,
        datastreams,
        relationships,
        seq: 0,
    };
    obj.validate().map_err(|e| cur.error(e.to_string()))?;
    Ok(obj)
}

fn inline_encoding(cur: &Cursor<'_>, e: &BytesStart<'_>) -> Result<(), ParseError> {
    let [enc]: [Option<String>; 1] = cur.attrs(e, &["encoding"])?.try_into().expect("one attribute");
    match enc.as_deref() {
        Some("base64") => Ok(()),
        Some(other) => Err(cur.error(format!("unsupported inline encoding `{other}`"))),
        None => Err(cur.error("<inline> missing attribute `encoding`")),
    }
}
