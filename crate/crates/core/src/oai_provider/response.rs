//! Reader for OAI-PMH responses, used by harvesters and tests.

use quick_xml::events::Event;
use quick_xml::name::QName;
use quick_xml::Reader;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordHeader {
    pub identifier: String,
    pub datestamp: String,
    pub sets: Vec<String>,
    pub deleted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HarvestedRecord {
    pub header: RecordHeader,
    /// Inner XML of `<metadata>`, trimmed.
    pub metadata: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenInfo {
    pub value: String,
    pub complete_list_size: Option<usize>,
    pub cursor: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataFormat {
    pub prefix: String,
    pub schema: String,
    pub namespace: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OaiResponse {
    pub error: Option<(String, String)>,
    pub records: Vec<HarvestedRecord>,
    pub token: Option<TokenInfo>,
    pub sets: Vec<(String, String)>,
    pub formats: Vec<MetadataFormat>,
    /// Child elements of `<Identify>` as (name, text).
    pub identify: Vec<(String, String)>,
}

#[derive(Debug, thiserror::Error)]
#[error("malformed OAI-PMH response: {0}")]
pub struct ResponseError(pub String);

fn attr(e: &quick_xml::events::BytesStart<'_>, name: &[u8]) -> Option<String> {
    e.attributes()
        .flatten()
        .find(|a| a.key.local_name().as_ref() == name)
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

pub fn parse_response(xml: &str) -> Result<OaiResponse, ResponseError> {
    let mut r = Reader::from_str(xml);
    let mut out = OaiResponse::default();
    let mut path: Vec<String> = Vec::new();
    let mut text = String::new();
    let mut current: Option<HarvestedRecord> = None;
    let mut format = MetadataFormat::default();
    let mut set = (String::new(), String::new());
    let err = |e: quick_xml::Error| ResponseError(e.to_string());
    loop {
        match r.read_event().map_err(err)? {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                text.clear();
                match name.as_str() {
                    "metadata" if path.last().is_some_and(|p| p == "record") => {
                        let inner = r.read_text(QName(e.name().as_ref())).map_err(err)?;
                        if let Some(rec) = current.as_mut() {
                            rec.metadata = Some(inner.trim().to_string());
                        }
                        continue;
                    }
                    "header" => {
                        let rec = current.get_or_insert_with(HarvestedRecord::default);
                        rec.header.deleted = attr(&e, b"status").as_deref() == Some("deleted");
                    }
                    "record" => current = Some(HarvestedRecord::default()),
                    "error" => out.error = Some((attr(&e, b"code").unwrap_or_default(), String::new())),
                    "resumptionToken" => {
                        out.token = Some(TokenInfo {
                            value: String::new(),
                            complete_list_size: attr(&e, b"completeListSize").and_then(|v| v.parse().ok()),
                            cursor: attr(&e, b"cursor").and_then(|v| v.parse().ok()),
                        })
                    }
                    _ => {}
                }
                path.push(name);
            }
            Event::Empty(e) => {
                let name = e.local_name();
                match name.as_ref() {
                    b"resumptionToken" => {
                        out.token = Some(TokenInfo {
                            value: String::new(),
                            complete_list_size: attr(&e, b"completeListSize").and_then(|v| v.parse().ok()),
                            cursor: attr(&e, b"cursor").and_then(|v| v.parse().ok()),
                        })
                    }
                    b"error" => out.error = Some((attr(&e, b"code").unwrap_or_default(), String::new())),
                    _ => {}
                }
            }
            Event::Text(t) => text.push_str(&t.unescape().map_err(err)?),
            Event::CData(t) => text.push_str(&String::from_utf8_lossy(&t)),
            Event::End(_) => {
                let Some(name) = path.pop() else {
                    return Err(ResponseError("unbalanced end tag".into()));
                };
                let parent = path.last().map(String::as_str).unwrap_or("");
                let value = text.trim().to_string();
                match (parent, name.as_str()) {
                    ("header", "identifier") => current.get_or_insert_with(Default::default).header.identifier = value,
                    ("header", "datestamp") => current.get_or_insert_with(Default::default).header.datestamp = value,
                    ("header", "setSpec") => current.get_or_insert_with(Default::default).header.sets.push(value),
                    (p, "header") if p != "record" => {
                        if let Some(rec) = current.take() {
                            out.records.push(rec);
                        }
                    }
                    (_, "record") => {
                        if let Some(rec) = current.take() {
                            out.records.push(rec);
                        }
                    }
                    (_, "error") => {
                        if let Some(e) = out.error.as_mut() {
                            e.1 = value;
                        }
                    }
                    (_, "resumptionToken") => {
                        if let Some(t) = out.token.as_mut() {
                            t.value = value;
                        }
                    }
                    ("metadataFormat", "metadataPrefix") => format.prefix = value,
                    ("metadataFormat", "schema") => format.schema = value,
                    ("metadataFormat", "metadataNamespace") => format.namespace = value,
                    (_, "metadataFormat") => out.formats.push(std::mem::take(&mut format)),
                    ("set", "setSpec") => set.0 = value,
                    ("set", "setName") => set.1 = value,
                    (_, "set") => out.sets.push(std::mem::take(&mut set)),
                    ("Identify", n) => out.identify.push((n.to_string(), value)),
                    _ => {}
                }
                text.clear();
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !path.is_empty() {
        return Err(ResponseError("unterminated document".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_records_tokens_and_errors() {
        let xml = r#"<?xml version="1.0"?><OAI-PMH xmlns="http://www.openarchives.org/OAI/2.0/">
<ListRecords>
<record><header><identifier>oai:x:1</identifier><datestamp>2006-01-01T00:00:00Z</datestamp><setSpec>a</setSpec></header><metadata>
  <oai_dc:dc xmlns:oai_dc="u"><dc:title xmlns:dc="d">A &amp; B</dc:title></oai_dc:dc>
</metadata></record>
<record><header status="deleted"><identifier>oai:x:2</identifier><datestamp>2006-01-02T00:00:00Z</datestamp></header></record>
<resumptionToken completeListSize="9" cursor="0">abc</resumptionToken>
</ListRecords></OAI-PMH>"#;
        let r = parse_response(xml).unwrap();
        assert_eq!(r.records.len(), 2);
        assert_eq!(r.records[0].header.sets, vec!["a"]);
        assert!(r.records[0].metadata.as_deref().unwrap().contains("A &amp; B"));
        assert!(r.records[1].header.deleted);
        assert_eq!(r.records[1].metadata, None);
        assert_eq!(r.token.as_ref().unwrap().value, "abc");
        assert_eq!(r.token.unwrap().complete_list_size, Some(9));

        let e = parse_response(r#"<OAI-PMH><error code="badVerb">no</error></OAI-PMH>"#).unwrap();
        assert_eq!(e.error, Some(("badVerb".into(), "no".into())));
        let ids = parse_response("<OAI-PMH><ListIdentifiers><header><identifier>i</identifier></header></ListIdentifiers></OAI-PMH>")
            .unwrap();
        assert_eq!(ids.records[0].header.identifier, "i");
    }
}
