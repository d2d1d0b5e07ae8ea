use std::cell::RefCell;
use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use ino_cli::harvest::first_http_identifier;
use ino_cli::{harvest, HarvestError, HarvestOptions, HttpSource, LocalSource, OaiSource, ServiceHandle};
use ino_core::corpus::{generate, CorpusProfile};
use ino_core::dissemination::DC_NS;
use ino_core::object_store::{Durability, StoreOptions};
use ino_core::oai_provider::{parse_response, OaiProvider};
use ino_core::{vocab, ObjectId, Repository, Term, VirtualClock};

fn open(dir: &Path) -> Arc<Repository> {
    Arc::new(
        Repository::open_default(
            dir,
            StoreOptions {
                durability: Durability::NoSync,
                ..Default::default()
            },
            Arc::new(VirtualClock::default()),
        )
        .unwrap(),
    )
}

fn provider(repo: &Arc<Repository>) -> Arc<OaiProvider> {
    Arc::new(OaiProvider::open(repo.clone(), Arc::new(VirtualClock::default())).unwrap())
}

/// Canned provider: answers ListRecords with fixed pages chained by tokens.
struct Canned {
    pages: Vec<String>,
    seen: RefCell<Vec<Vec<(String, String)>>>,
}

fn dc(identifiers: &[&str]) -> String {
    let ids: String = identifiers.iter().map(|i| format!("<dc:identifier>{i}</dc:identifier>")).collect();
    format!("<oai_dc:dc xmlns:oai_dc=\"http://www.openarchives.org/OAI/2.0/oai_dc/\" xmlns:dc=\"{DC_NS}\"><dc:title>t</dc:title>{ids}</oai_dc:dc>")
}

fn record(id: &str, sets: &[&str], metadata: Option<&str>) -> String {
    let specs: String = sets.iter().map(|s| format!("<setSpec>{s}</setSpec>")).collect();
    match metadata {
        Some(m) => format!(
            "<record><header><identifier>{id}</identifier><datestamp>2020-01-01T00:00:00Z</datestamp>{specs}</header>\
             <metadata>{m}</metadata></record>"
        ),
        None => format!(
            "<record><header status=\"deleted\"><identifier>{id}</identifier>\
             <datestamp>2020-01-01T00:00:00Z</datestamp>{specs}</header></record>"
        ),
    }
}

fn page(records: &[String], token: Option<&str>) -> String {
    let token = token.map(|t| format!("<resumptionToken>{t}</resumptionToken>")).unwrap_or_default();
    format!(
        "<?xml version=\"1.0\"?><OAI-PMH xmlns=\"http://www.openarchives.org/OAI/2.0/\">\
         <responseDate>2020-01-01T00:00:00Z</responseDate><request verb=\"ListRecords\">http://canned.example/oai</request>\
         <ListRecords>{}{token}</ListRecords></OAI-PMH>",
        records.concat()
    )
}

fn error(code: &str) -> String {
    format!(
        "<?xml version=\"1.0\"?><OAI-PMH xmlns=\"http://www.openarchives.org/OAI/2.0/\">\
         <responseDate>2020-01-01T00:00:00Z</responseDate><request>http://canned.example/oai</request>\
         <error code=\"{code}\">canned</error></OAI-PMH>"
    )
}

impl Canned {
    fn new(pages: Vec<String>) -> Self {
        Canned {
            pages,
            seen: RefCell::new(Vec::new()),
        }
    }
}

impl OaiSource for Canned {
    fn base_url(&self) -> &str {
        "http://canned.example/oai"
    }

    fn request(&self, params: &[(String, String)]) -> Result<String, HarvestError> {
        let mut seen = self.seen.borrow_mut();
        seen.push(params.to_vec());
        Ok(self.pages[seen.len() - 1].clone())
    }
}

fn stored_payload(repo: &Repository, m: &ObjectId, format: &str) -> Vec<u8> {
    repo.get_dissemination(m, format).unwrap().bytes
}

fn harvested_metadata(repo: &Repository) -> Vec<ObjectId> {
    let q = format!("SELECT ?m WHERE ?m <{}> ?s", vocab::SOURCE_RECORD_ID);
    repo.query_text(&q)
        .unwrap()
        .rows
        .iter()
        .map(|r| match &r[0] {
            Term::Iri(i) => ObjectId::parse(i).unwrap(),
            t => panic!("{t:?}"),
        })
        .collect()
}

#[test]
fn follows_tokens_and_skips_records_without_http_identifiers() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open(dir.path());
    let source = Canned::new(vec![
        page(
            &[
                record("oai:x:1", &["physics"], Some(&dc(&["urn:isbn:1", "http://example.org/one"]))),
                record("oai:x:2", &[], Some(&dc(&["urn:isbn:2"]))),
            ],
            Some("next"),
        ),
        page(&[record("oai:x:3", &["physics", "chemistry"], Some(&dc(&["https://example.org/three"])))], Some("")),
    ]);
    let report = harvest(&repo, &source, &HarvestOptions::default()).unwrap();
    let seen = source.seen.borrow();
    assert_eq!(seen.len(), 2);
    assert!(seen[1].contains(&("resumptionToken".into(), "next".into())));
    assert!(!seen[1].iter().any(|(k, _)| k == "metadataPrefix"));
    assert_eq!(report.records, 3);
    assert_eq!(report.stats.skipped, 1);
    assert_eq!((report.stats.agents, report.stats.aggregations, report.stats.metadata), (1, 2, 2));
    // Proxy resources are counted with their aggregations.
    assert_eq!(report.stats.resources, 2);
    assert_eq!(repo.store().live_count(), report.stats.objects_created());

    let agent = repo.find_agent_by_homepage("http://canned.example/oai").unwrap().unwrap();
    let physics = repo.find_aggregation(&agent, "http://canned.example/oai?set=physics").unwrap().unwrap();
    let chemistry = repo.find_aggregation(&agent, "http://canned.example/oai?set=chemistry").unwrap().unwrap();
    let three = repo.find_metadata_by_source(&agent, "oai:x:3").unwrap().unwrap();
    let members = |a: &ObjectId| repo.members(a).unwrap();
    assert!(members(&physics).contains(&three) && members(&chemistry).contains(&three));
    assert_eq!(stored_payload(&repo, &three, "oai_dc"), dc(&["https://example.org/three"]).into_bytes());
    assert!(repo.find_resource_by_url("http://example.org/one").unwrap().is_some());
    assert!(repo.audit().unwrap().is_clean());
}

#[test]
fn reharvest_updates_in_place_and_applies_deletions() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open(dir.path());
    let v1 = vec![page(
        &[
            record("oai:x:1", &[], Some(&dc(&["http://example.org/1"]))),
            record("oai:x:2", &[], Some(&dc(&["http://example.org/2"]))),
        ],
        None,
    )];
    let first = harvest(&repo, &Canned::new(v1.clone()), &HarvestOptions::default()).unwrap();
    assert_eq!(first.stats.metadata, 2);
    let objects = repo.store().live_count();

    let again = harvest(&repo, &Canned::new(v1), &HarvestOptions::default()).unwrap();
    assert_eq!(again.stats.objects_created(), 0);
    assert_eq!((again.unchanged, again.updated), (2, 0));
    assert_eq!(repo.store().live_count(), objects);

    let agent = repo.find_agent_by_homepage("http://canned.example/oai").unwrap().unwrap();
    let one = repo.find_metadata_by_source(&agent, "oai:x:1").unwrap().unwrap();
    let changed = dc(&["http://example.org/1", "http://example.org/alt"]);
    let v2 = vec![page(&[record("oai:x:1", &[], Some(&changed)), record("oai:x:2", &[], None)], None)];
    let third = harvest(&repo, &Canned::new(v2), &HarvestOptions::default()).unwrap();
    assert_eq!((third.updated, third.deleted, third.stats.objects_created()), (1, 1, 0));
    assert_eq!(repo.find_metadata_by_source(&agent, "oai:x:1").unwrap(), Some(one.clone()));
    assert_eq!(stored_payload(&repo, &one, "oai_dc"), changed.into_bytes());
    assert_eq!(repo.find_metadata_by_source(&agent, "oai:x:2").unwrap(), None);
    assert_eq!(repo.store().live_count(), objects - 1);
    assert!(repo.audit().unwrap().is_clean());
}

#[test]
fn remote_errors_and_per_record_failures() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open(dir.path());
    let report = harvest(&repo, &Canned::new(vec![error("noRecordsMatch")]), &HarvestOptions::default()).unwrap();
    assert_eq!(report.records, 0);

    match harvest(&repo, &Canned::new(vec![error("cannotDisseminateFormat")]), &HarvestOptions::default()) {
        Err(HarvestError::RemoteProtocol { verb, code, .. }) => {
            assert_eq!((verb.as_str(), code.as_str()), ("ListRecords", "cannotDisseminateFormat"))
        }
        other => panic!("{other:?}"),
    }
    let pages = vec![page(&[record("oai:x:1", &[], Some(&dc(&["http://example.org/1"])))], Some("t")), error("badResumptionToken")];
    assert!(matches!(
        harvest(&repo, &Canned::new(pages), &HarvestOptions::default()),
        Err(HarvestError::RemoteProtocol { code, .. }) if code == "badResumptionToken"
    ));

    let pages = vec![page(
        &[
            record("oai:y:1", &[], Some(&dc(&["http://example.org/y1"]))),
            record("oai:y:2", &[], Some(&dc(&["http://example.org/y2"]))),
        ],
        None,
    )];
    let opts = HarvestOptions {
        metadata_prefix: "Not-A-Format".into(),
        ..Default::default()
    };
    match harvest(&repo, &Canned::new(pages), &opts) {
        Err(HarvestError::PartialIngest(report)) => {
            assert_eq!(report.records, 2);
            assert_eq!(report.failures.len(), 2);
            assert_eq!(report.failures[0].identifier, "oai:y:1");
        }
        other => panic!("{other:?}"),
    }
    assert!(repo.audit().unwrap().is_clean());
}

/// (payload bytes, count) of every oai_dc record a provider lists.
fn payloads(source: &dyn OaiSource) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    let mut params = vec![("verb".to_string(), "ListRecords".to_string()), ("metadataPrefix".into(), "oai_dc".into())];
    loop {
        let resp = parse_response(&source.request(&params).unwrap()).unwrap();
        for r in resp.records {
            *out.entry(r.metadata.unwrap()).or_insert(0) += 1;
        }
        match resp.token {
            Some(t) if !t.value.is_empty() => params = vec![("verb".into(), "ListRecords".into()), ("resumptionToken".into(), t.value)],
            _ => return out,
        }
    }
}

#[test]
fn loopback_harvest_over_http_is_a_fixed_point() {
    let src_dir = tempfile::tempdir().unwrap();
    let src = open(src_dir.path());
    generate(&src, &CorpusProfile::new(300, 11)).unwrap();
    let src_oai = provider(&src);
    src_oai.set_page_size(40);
    let svc = ServiceHandle::start(src.clone(), src_oai.clone(), SocketAddr::from(([127, 0, 0, 1], 0)), None).unwrap();
    let http = HttpSource::new(&svc.oai_url()).unwrap();

    let a_dir = tempfile::tempdir().unwrap();
    let a = open(a_dir.path());
    let report = harvest(&a, &http, &HarvestOptions::default()).unwrap();
    let expected = src_oai.cache().records().filter(|r| r.format == "oai_dc" && !r.deleted).count();
    assert_eq!(report.records, expected);
    assert_eq!(report.stats.skipped, 0);
    assert_eq!(report.stats.metadata, expected);
    assert_eq!(harvested_metadata(&a).len(), expected);
    assert!(a.audit().unwrap().is_clean());

    let again = harvest(&a, &http, &HarvestOptions::default()).unwrap();
    assert_eq!(again.stats.objects_created(), 0);
    svc.stop().unwrap();

    let source_payloads = payloads(&LocalSource::new(src_oai, "http://src.example/oai"));
    let a_oai = provider(&a);
    let a_payloads = payloads(&LocalSource::new(a_oai.clone(), "http://a.example/oai"));
    assert_eq!(a_payloads, source_payloads);

    let b_dir = tempfile::tempdir().unwrap();
    let b = open(b_dir.path());
    let report = harvest(&b, &LocalSource::new(a_oai, "http://a.example/oai"), &HarvestOptions::default()).unwrap();
    assert_eq!(report.records, expected);
    assert_eq!(payloads(&LocalSource::new(provider(&b), "http://b.example/oai")), source_payloads);
    for payload in source_payloads.keys() {
        assert!(first_http_identifier(payload).is_some());
    }
}
