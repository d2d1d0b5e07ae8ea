//! OAI-PMH harvester: pulls ListRecords from a provider and ingests each
//! record as a Resource plus a Metadata object.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use quick_xml::events::Event;
use quick_xml::name::{Namespace, ResolveResult};
use quick_xml::NsReader;
use serde::Serialize;

use ino_core::corpus::IngestStats;
use ino_core::dissemination::DC_NS;
use ino_core::ndr_api::{normalize_url, AgentKind, MetadataSpec, ResourceSpec};
use ino_core::oai_provider::{parse_response, HarvestedRecord, OaiProvider};
use ino_core::{ApiError, ObjectId, Repository};

#[derive(Debug, thiserror::Error)]
pub enum HarvestError {
    #[error("{verb} failed with OAI error {code}: {message}")]
    RemoteProtocol { verb: String, code: String, message: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("{} of {} records failed", .0.failures.len(), .0.records)]
    PartialIngest(Box<HarvestReport>),
}

/// Something that answers OAI-PMH requests.
pub trait OaiSource {
    /// The provider's base URL; it identifies the provider Agent.
    fn base_url(&self) -> &str;
    fn request(&self, params: &[(String, String)]) -> Result<String, HarvestError>;
}

pub struct HttpSource {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpSource {
    pub fn new(base_url: &str) -> Result<Self, HarvestError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| HarvestError::Transport(e.to_string()))?;
        Ok(HttpSource {
            base_url: base_url.to_string(),
            client,
        })
    }
}

impl OaiSource for HttpSource {
    fn base_url(&self) -> &str {
        &self.base_url
    }

    fn request(&self, params: &[(String, String)]) -> Result<String, HarvestError> {
        let mut url = url::Url::parse(&self.base_url).map_err(|e| HarvestError::Transport(e.to_string()))?;
        url.query_pairs_mut().extend_pairs(params);
        let resp = self.client.get(url).send().map_err(|e| HarvestError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(HarvestError::Transport(format!("HTTP {status}")));
        }
        resp.text().map_err(|e| HarvestError::Transport(e.to_string()))
    }
}

/// An in-process provider addressed under a nominal base URL.
pub struct LocalSource {
    base_url: String,
    provider: Arc<OaiProvider>,
}

impl LocalSource {
    pub fn new(provider: Arc<OaiProvider>, base_url: &str) -> Self {
        LocalSource {
            base_url: base_url.to_string(),
            provider,
        }
    }
}

impl OaiSource for LocalSource {
    fn base_url(&self) -> &str {
        &self.base_url
    }

    fn request(&self, params: &[(String, String)]) -> Result<String, HarvestError> {
        Ok(self.provider.handle_request(params, &self.base_url))
    }
}

#[derive(Debug, Clone)]
pub struct HarvestOptions {
    pub metadata_prefix: String,
    pub set: Option<String>,
    pub from: Option<String>,
}

impl Default for HarvestOptions {
    fn default() -> Self {
        HarvestOptions {
            metadata_prefix: "oai_dc".into(),
            set: None,
            from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordFailure {
    pub identifier: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HarvestReport {
    /// Objects created by this run; `skipped` counts records without an http(s) identifier.
    pub stats: IngestStats,
    pub records: usize,
    pub pages: usize,
    pub updated: usize,
    pub unchanged: usize,
    pub deleted: usize,
    pub failures: Vec<RecordFailure>,
}

/// The first `dc:identifier` whose text is an http(s) URL.
pub fn first_http_identifier(xml: &str) -> Option<String> {
    let mut r = NsReader::from_str(xml);
    let mut inside = false;
    let mut text = String::new();
    loop {
        match r.read_resolved_event() {
            Ok((ns, Event::Start(e))) => {
                inside = e.local_name().as_ref() == b"identifier"
                    && match ns {
                        ResolveResult::Bound(Namespace(n)) => n == DC_NS.as_bytes(),
                        _ => e.name().as_ref() == b"dc:identifier",
                    };
                text.clear();
            }
            Ok((_, Event::Text(t))) if inside => text.push_str(&t.unescape().ok()?),
            Ok((_, Event::CData(t))) if inside => text.push_str(&String::from_utf8_lossy(&t)),
            Ok((_, Event::End(_))) => {
                if inside {
                    let v = text.trim();
                    let lower = v.to_ascii_lowercase();
                    if (lower.starts_with("http://") || lower.starts_with("https://")) && normalize_url(v).is_ok() {
                        return Some(v.to_string());
                    }
                }
                inside = false;
            }
            Ok((_, Event::Eof)) | Err(_) => return None,
            _ => {}
        }
    }
}

struct Harvester<'a> {
    repo: &'a Repository,
    base: String,
    agent: ObjectId,
    prefix: String,
    aggregations: HashMap<Option<String>, ObjectId>,
    report: HarvestReport,
}

impl Harvester<'_> {
    fn aggregation(&mut self, set: Option<&str>) -> Result<ObjectId, ApiError> {
        let key = set.map(str::to_string);
        if let Some(id) = self.aggregations.get(&key) {
            return Ok(id.clone());
        }
        let proxy = match set {
            Some(s) => {
                let mut u = url::Url::parse(&self.base).map_err(|e| ApiError::Invalid {
                    field: "baseUrl",
                    reason: e.to_string(),
                })?;
                u.query_pairs_mut().append_pair("set", s);
                u.to_string()
            }
            None => self.base.clone(),
        };
        let id = match self.repo.find_aggregation(&self.agent, &proxy)? {
            Some(id) => id,
            None => {
                self.report.stats.aggregations += 1;
                self.repo.create_aggregation(&self.agent, &ResourceSpec::url(&proxy))?
            }
        };
        self.aggregations.insert(key, id.clone());
        Ok(id)
    }

    fn ingest(&mut self, rec: &HarvestedRecord) -> Result<(), ApiError> {
        let source_id = &rec.header.identifier;
        let existing = self.repo.find_metadata_by_source(&self.agent, source_id)?;
        if rec.header.deleted {
            if let Some(m) = existing {
                self.repo.purge_metadata(&m)?;
                self.report.deleted += 1;
            }
            return Ok(());
        }
        let payload = rec.metadata.as_deref().unwrap_or("");
        let Some(url) = first_http_identifier(payload) else {
            self.report.stats.skipped += 1;
            return Ok(());
        };
        let mut aggs = Vec::new();
        if rec.header.sets.is_empty() {
            aggs.push(self.aggregation(None)?);
        }
        for s in &rec.header.sets {
            aggs.push(self.aggregation(Some(s))?);
        }
        if self.repo.find_resource_by_url(&normalize_url(&url)?)?.is_none() {
            self.report.stats.resources += 1;
        }
        let resource = self.repo.add_resource(&ResourceSpec::url(&url).in_aggregations(&aggs))?;
        match existing {
            Some(m) => {
                if self.repo.update_metadata(&m, &self.prefix, payload.as_bytes(), &aggs)? {
                    self.report.updated += 1;
                } else {
                    self.report.unchanged += 1;
                }
            }
            None => {
                self.repo.add_metadata(&MetadataSpec {
                    target: resource,
                    format_id: self.prefix.clone(),
                    payload: payload.as_bytes().to_vec(),
                    provider: Some(self.agent.clone()),
                    aggregations: aggs,
                    source_record_id: Some(source_id.clone()),
                })?;
                self.report.stats.metadata += 1;
            }
        }
        Ok(())
    }
}

/// Harvests every record `source` lists for `opts` into `repo`. Failures of
/// single records are collected and the run continues; they surface as
/// [`HarvestError::PartialIngest`] at the end.
pub fn harvest(repo: &Repository, source: &dyn OaiSource, opts: &HarvestOptions) -> Result<HarvestReport, HarvestError> {
    let started = Instant::now();
    let base = normalize_url(source.base_url())?;
    let mut report = HarvestReport::default();
    let agent = match repo.find_agent_by_homepage(&base)? {
        Some(a) => a,
        None => {
            report.stats.agents += 1;
            repo.add_agent_with_homepage(&format!("OAI-PMH provider {base}"), AgentKind::Service, Some(&base))?
        }
    };
    let mut h = Harvester {
        repo,
        base,
        agent,
        prefix: opts.metadata_prefix.clone(),
        aggregations: HashMap::new(),
        report,
    };

    let verb = |v: &str| ("verb".to_string(), v.to_string());
    let mut params = vec![verb("ListRecords"), ("metadataPrefix".into(), opts.metadata_prefix.clone())];
    if let Some(s) = &opts.set {
        params.push(("set".into(), s.clone()));
    }
    if let Some(f) = &opts.from {
        params.push(("from".into(), f.clone()));
    }
    loop {
        let xml = source.request(&params)?;
        let resp = parse_response(&xml).map_err(|e| HarvestError::Malformed(e.to_string()))?;
        h.report.pages += 1;
        if let Some((code, message)) = resp.error {
            if code == "noRecordsMatch" && h.report.pages == 1 {
                break;
            }
            return Err(HarvestError::RemoteProtocol {
                verb: "ListRecords".into(),
                code,
                message,
            });
        }
        for rec in &resp.records {
            h.report.records += 1;
            if let Err(e) = h.ingest(rec) {
                if !e.is_rejection() {
                    return Err(e.into());
                }
                h.report.failures.push(RecordFailure {
                    identifier: rec.header.identifier.clone(),
                    message: e.to_string(),
                });
            }
        }
        match resp.token {
            Some(t) if !t.value.is_empty() => params = vec![verb("ListRecords"), ("resumptionToken".into(), t.value)],
            _ => break,
        }
    }
    let mut report = h.report;
    report.stats.elapsed_secs = started.elapsed().as_secs_f64();
    if report.failures.is_empty() {
        Ok(report)
    } else {
        Err(HarvestError::PartialIngest(Box::new(report)))
    }
}
