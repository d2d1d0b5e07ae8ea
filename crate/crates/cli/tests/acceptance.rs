//! Acceptance suite. Runs every criterion in order and prints one
//! PASS/FAIL line for each; the process fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use quick_xml::events::Event;
use quick_xml::Reader;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ino_cli::bench::{complex_query_samples, get_object_samples, median, percentile, simple_query_samples};
use ino_cli::harvest::first_http_identifier;
use ino_cli::{bench_all, harvest, BenchOptions, BenchOutcome, HarvestOptions, HttpSource, LocalSource, OaiSource, ServiceHandle};
use ino_core::corpus::{generate, CorpusIds, CorpusProfile, OpDriver, OpOutcome};
use ino_core::dissemination::{nsdl_dc_to_oai_dc, DisseminationPath};
use ino_core::ndr_api::{MetadataSpec, ResourceSpec};
use ino_core::object_store::{DatastreamContent, Durability, StoreOptions};
use ino_core::oai_provider::{parse_response, OaiProvider, OaiResponse, IDENTIFIER_PREFIX};
use ino_core::triple_index::{evaluate_brute_force, extract_triples, QuerySampler};
use ino_core::{vocab, ObjectId, Repository, SystemClock, Timestamp, Triple, TripleIndex, VirtualClock};

fn open(dir: &Path, durability: Durability, clock: Arc<dyn ino_core::Clock>) -> Arc<Repository> {
    Arc::new(
        Repository::open_default(
            dir,
            StoreOptions {
                durability,
                ..Default::default()
            },
            clock,
        )
        .expect("open repository"),
    )
}

fn open_virtual(dir: &Path) -> Arc<Repository> {
    open(dir, Durability::NoSync, Arc::new(VirtualClock::default()))
}

fn provider(repo: &Arc<Repository>) -> Arc<OaiProvider> {
    Arc::new(OaiProvider::open(repo.clone(), Arc::new(VirtualClock::default())).expect("open provider"))
}

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

/// Live object count, last sequence number and triple count.
fn fingerprint(repo: &Repository) -> (usize, u64, usize) {
    (repo.store().live_ids().len(), repo.store().last_seq(), repo.index().len())
}

fn metadata_for_counts(repo: &Repository) -> Result<Vec<(ObjectId, usize)>> {
    let mut out = Vec::new();
    for id in repo.store().live_ids() {
        let o = repo.get_object(&id)?;
        if o.has_type("Metadata") {
            out.push((id, o.count_predicate(vocab::METADATA_FOR)));
        }
    }
    Ok(out)
}

fn c1_constraint_enforcement() -> Result<String> {
    const STEPS: usize = 10_000;
    let started = Instant::now();
    let dir = tempfile::tempdir()?;
    let repo = open_virtual(dir.path());
    let mut driver = OpDriver::new(0x1c1);
    let (mut applied, mut rejected) = (0usize, 0usize);
    for step in 0..STEPS {
        let before = fingerprint(&repo);
        match driver.step(&repo)? {
            OpOutcome::Applied(_) => applied += 1,
            OpOutcome::Rejected(op, e) => {
                rejected += 1;
                ensure!(fingerprint(&repo) == before, "step {step}: rejected {op} ({e}) changed the repository");
            }
        }
        let audit = repo.audit()?;
        ensure!(audit.is_clean(), "step {step}: {:?}", audit.violations);
    }
    let audit = repo.audit()?;
    ensure!(audit.is_clean(), "final audit: {:?}", audit.violations);
    let counts = metadata_for_counts(&repo)?;
    let bad: Vec<_> = counts.iter().filter(|(_, n)| *n != 1).collect();
    ensure!(bad.is_empty(), "metadataFor count != 1 on {bad:?}");
    ensure!(rejected > STEPS / 10, "only {rejected} invalid calls were exercised");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "{STEPS} ops ({applied} applied, {rejected} rejected) with a full audit after each, {} objects, {} metadata each with one metadataFor, 0 violations, {:.1}s",
        audit.objects,
        counts.len(),
        elapsed.as_secs_f64()
    ))
}

/// About 1000 objects: 10 agents, 1 aggregation with its proxy, 564
/// resources and 423 metadata records.
const THOUSAND: usize = 564;

fn c2_query_oracle() -> Result<String> {
    let started = Instant::now();
    let dir = tempfile::tempdir()?;
    let repo = open_virtual(dir.path());
    let (stats, _) = generate(&repo, &CorpusProfile::new(THOUSAND, 2))?;
    let triples = repo.index().triples();
    let sampler = QuerySampler::new(&triples);
    let mut rng = ChaCha8Rng::seed_from_u64(0xc2);
    let (mut checked, mut nonempty) = (0, 0);
    let mut by_size = [0usize; 3];
    while checked < 200 {
        let size = rng.random_range(1..=3);
        let Some(q) = sampler.sample(&mut rng, size, 0.1) else { continue };
        let got = repo.query(&q)?;
        let want = evaluate_brute_force(&triples, &q)?;
        ensure!(got == want, "answers differ for {q}");
        checked += 1;
        by_size[size - 1] += 1;
        nonempty += usize::from(!got.is_empty());
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "{checked} queries ({}/{}/{} with 1/2/3 patterns, {nonempty} non-empty) over {} objects and {} triples, {:.1}s",
        by_size[0],
        by_size[1],
        by_size[2],
        stats.objects_created(),
        triples.len(),
        elapsed.as_secs_f64()
    ))
}

fn c3_index_rebuild() -> Result<String> {
    const SEQUENCES: u64 = 20;
    const OPS: usize = 500;
    let mut commits = 0;
    for seq in 0..SEQUENCES {
        let dir = tempfile::tempdir()?;
        let repo = open_virtual(dir.path());
        let mut driver = OpDriver::new(0xc3_000 + seq);
        for _ in 0..OPS {
            driver.step(&repo)?;
        }
        commits += repo.store().last_seq();
        let rebuilt = TripleIndex::new();
        rebuilt.rebuild(repo.store())?;
        let incremental = repo.index().triples();
        ensure!(incremental == rebuilt.triples(), "sequence {seq}: incremental index differs from rebuild");
        let mut extracted: Vec<Triple> = repo
            .store()
            .live_ids()
            .iter()
            .map(|id| repo.get_object(id).map(|o| extract_triples(&o)))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();
        extracted.sort();
        extracted.dedup();
        ensure!(incremental == extracted, "sequence {seq}: index differs from extracted triples");
    }
    Ok(format!("{SEQUENCES} sequences x {OPS} ops ({commits} commits): incremental == rebuild"))
}

type Header = (String, String, Vec<String>, bool);

/// Expected headers computed straight from stored objects, oldest first.
fn oai_oracle(repo: &Repository, format: &str, set: Option<&str>, from: Option<i64>, until: Option<i64>) -> Result<Vec<Header>> {
    let store = repo.store();
    let mut ids = store.live_ids();
    ids.extend(store.tombstone_ids());
    let mut rows = Vec::new();
    for id in ids {
        let obj = store.get_any(&id)?;
        if !obj.types.iter().any(|t| t == "Metadata") {
            continue;
        }
        let mut formats: BTreeSet<String> = obj
            .datastreams
            .iter()
            .filter_map(|d| d.ds_id.strip_prefix("format_").map(String::from))
            .collect();
        if formats.contains("nsdl_dc") {
            formats.insert("oai_dc".into());
        }
        if !formats.contains(format) {
            continue;
        }
        let mut sets: Vec<String> = obj
            .relationships
            .iter()
            .filter(|t| t.predicate == vocab::MEMBER_OF)
            .filter_map(|t| ObjectId::parse(t.object.as_str()).ok())
            .map(|g| g.local().to_string())
            .collect();
        sets.sort();
        if set.is_some_and(|s| !sets.iter().any(|x| x == s)) {
            continue;
        }
        let t = obj.modified.unix();
        if from.is_some_and(|f| t < f) || until.is_some_and(|u| t > u) {
            continue;
        }
        rows.push((t, format!("{IDENTIFIER_PREFIX}{}", id.local()), sets, !obj.is_active()));
    }
    rows.sort();
    Ok(rows.into_iter().map(|(t, i, s, d)| (i, Timestamp(t).to_iso(), s, d)).collect())
}

fn ask(p: &OaiProvider, params: &[(String, String)]) -> Result<OaiResponse> {
    let xml = p.handle_request(params, "http://acceptance.local/oai");
    parse_response(&xml).with_context(|| xml.chars().take(300).collect::<String>())
}

/// Headers of one complete list, following resumption tokens.
fn list_all(p: &OaiProvider, verb: &str, args: &[(&str, String)]) -> Result<(Vec<Header>, usize)> {
    let mut params: Vec<(String, String)> = vec![("verb".into(), verb.into())];
    params.extend(args.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let mut out = Vec::new();
    let mut pages = 0;
    loop {
        let r = ask(p, &params)?;
        pages += 1;
        if let Some((code, msg)) = &r.error {
            ensure!(code == "noRecordsMatch" && pages == 1 && out.is_empty(), "{code}: {msg}");
            return Ok((out, pages));
        }
        for rec in &r.records {
            let h = &rec.header;
            if verb == "ListRecords" {
                ensure!(rec.metadata.is_some() != h.deleted, "{}: metadata presence disagrees with status", h.identifier);
            }
            out.push((h.identifier.clone(), h.datestamp.clone(), h.sets.clone(), h.deleted));
        }
        match r.token.map(|t| t.value) {
            Some(t) if !t.is_empty() => params = vec![("verb".into(), verb.into()), ("resumptionToken".into(), t)],
            _ => return Ok((out, pages)),
        }
    }
}

const LOM: &str = "<lom xmlns=\"http://ltsc.ieee.org/xsd/LOM\"><general><title>t</title></general></lom>";

/// A 1k-object corpus reshaped so selections differ: extra sets with
/// overlapping members, a second native format and deleted records.
fn oai_corpus(dir: &Path) -> Result<(Arc<Repository>, CorpusIds)> {
    let repo = open_virtual(dir);
    let (_, ids) = generate(&repo, &CorpusProfile::new(THOUSAND, 4))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xc4);
    let agent = &ids.agents[0];
    for j in 0..3 {
        let g = repo.create_aggregation(agent, &ResourceSpec::url(&format!("http://sets.local/{j}")))?;
        let members: Vec<ObjectId> = ids.metadata.iter().filter(|_| rng.random_bool(0.25)).cloned().collect();
        repo.set_aggregation_membership(&g, &members)?;
    }
    for i in 0..25 {
        let r = ids.resources[rng.random_range(0..ids.resources.len())].clone();
        let g = ids.aggregations[0].clone();
        repo.add_metadata(&MetadataSpec {
            target: r,
            format_id: "lom".into(),
            payload: LOM.replace("<title>t", &format!("<title>t{i}")).into_bytes(),
            provider: Some(agent.clone()),
            aggregations: if i % 2 == 0 { vec![g] } else { Vec::new() },
            source_record_id: None,
        })?;
    }
    for m in ids.metadata.choose_multiple(&mut rng, 30) {
        repo.purge_metadata(m)?;
    }
    Ok((repo, ids))
}

fn c4_oai_conformance() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let (repo, _) = oai_corpus(dir.path())?;
    let p = provider(&repo);

    let all = oai_oracle(&repo, "oai_dc", None, None, None)?;
    let unix = |i: usize| Timestamp::parse_iso(&all[i * (all.len() - 1) / 100].1).expect("iso").unix();
    let sets: Vec<Option<String>> = std::iter::once(None)
        .chain(
            repo.query_text("SELECT ?g WHERE ?g <info:ino/def#objectType> <info:ino/def#Aggregation>")?
                .rows
                .iter()
                .map(|r| Some(ObjectId::parse(r[0].as_str()).expect("id").local().to_string())),
        )
        .collect();
    let froms = [None, Some(unix(25)), Some(unix(60))];
    let untils = [None, Some(unix(40)), Some(unix(90))];
    let formats = ["oai_dc", "nsdl_dc", "lom"];

    let (mut selections, mut requests, mut records) = (0, 0, 0);
    for page in [1usize, 7, 100] {
        p.set_page_size(page);
        for format in formats {
            for set in &sets {
                for from in froms {
                    for until in untils {
                        let mut args = vec![("metadataPrefix", format.to_string())];
                        if let Some(s) = set {
                            args.push(("set", s.clone()));
                        }
                        if let Some(f) = from {
                            args.push(("from", Timestamp(f).to_iso()));
                        }
                        if let Some(u) = until {
                            args.push(("until", Timestamp(u).to_iso()));
                        }
                        if from.zip(until).is_some_and(|(f, u)| f > u) {
                            let mut params = vec![("verb".to_string(), "ListRecords".to_string())];
                            params.extend(args.iter().map(|(k, v)| (k.to_string(), v.clone())));
                            let code = ask(&p, &params)?.error.map(|(c, _)| c);
                            ensure!(code.as_deref() == Some("badArgument"), "{args:?}: inverted range gave {code:?}");
                            requests += 1;
                            selections += 1;
                            continue;
                        }
                        let want = oai_oracle(&repo, format, set.as_deref(), from, until)?;
                        let verbs: &[&str] = if page == 7 { &["ListRecords", "ListIdentifiers"] } else { &["ListRecords"] };
                        for verb in verbs {
                            let (got, pages) = list_all(&p, verb, &args)?;
                            ensure!(got == want, "{verb} {args:?} page size {page}: {} records, oracle {}", got.len(), want.len());
                            requests += pages;
                            records += got.len();
                        }
                        selections += 1;
                    }
                }
            }
        }
    }
    ensure!(all.iter().any(|h| h.3), "corpus has no deleted records");

    // Incremental maintenance against batch recomputation.
    let dir = tempfile::tempdir()?;
    let repo = open_virtual(dir.path());
    generate(&repo, &CorpusProfile::new(150, 45))?;
    let p = provider(&repo);
    let mut driver = OpDriver::new(0xc44);
    let mut events = 0;
    while events < 500 {
        let before = repo.store().last_seq();
        driver.step(&repo)?;
        // Batch state is observable only at commit boundaries.
        for ev in repo.store().changes_since(before)? {
            p.apply_event(&ev)?;
            events += 1;
        }
        ensure!(p.cache() == p.batch_cache()?, "cache differs from batch after {events} events");
    }
    Ok(format!(
        "{} selections x page sizes 1/7/100 ({requests} requests, {records} headers) equal the direct scan, \
         inverted date ranges give badArgument; incremental == batch after each of {events} events",
        selections / 3
    ))
}

/// Multiset of oai_dc payloads served by `source`.
fn payloads(source: &dyn OaiSource) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    let mut params = vec![("verb".to_string(), "ListRecords".to_string()), ("metadataPrefix".into(), "oai_dc".into())];
    loop {
        let resp = parse_response(&source.request(&params)?)?;
        for r in resp.records {
            if let Some(m) = r.metadata {
                *out.entry(m).or_insert(0) += 1;
            }
        }
        match resp.token {
            Some(t) if !t.value.is_empty() => params = vec![("verb".into(), "ListRecords".into()), ("resumptionToken".into(), t.value)],
            _ => return Ok(out),
        }
    }
}

fn c5_self_harvest() -> Result<String> {
    let src_dir = tempfile::tempdir()?;
    let src = open_virtual(src_dir.path());
    generate(&src, &CorpusProfile::new(1000, 5))?;
    let src_oai = provider(&src);
    src_oai.set_page_size(100);
    let expected = src_oai.cache().records().filter(|r| r.format == "oai_dc" && !r.deleted).count();
    let src_payloads = payloads(&LocalSource::new(src_oai.clone(), "http://src.local/oai"))?;

    let svc = ServiceHandle::start(src.clone(), src_oai, loopback(), None)?;
    let a_dir = tempfile::tempdir()?;
    let a = open_virtual(a_dir.path());
    let first = harvest(&a, &HttpSource::new(&svc.oai_url())?, &HarvestOptions::default())?;
    let again = harvest(&a, &HttpSource::new(&svc.oai_url())?, &HarvestOptions::default())?;
    svc.stop()?;
    ensure!(first.records == expected, "harvested {} of {expected}", first.records);
    ensure!(first.stats.skipped == 0, "{} skipped", first.stats.skipped);
    ensure!(first.stats.metadata == expected, "{} metadata created", first.stats.metadata);
    ensure!(again.stats.objects_created() == 0, "re-harvest created {} objects", again.stats.objects_created());
    ensure!(a.audit()?.is_clean(), "harvested repository fails audit");

    let a_oai = provider(&a);
    let a_payloads = payloads(&LocalSource::new(a_oai.clone(), "http://a.local/oai"))?;
    ensure!(a_payloads == src_payloads, "first-generation payloads differ");

    let svc = ServiceHandle::start(a.clone(), a_oai, loopback(), None)?;
    let b_dir = tempfile::tempdir()?;
    let b = open_virtual(b_dir.path());
    let second = harvest(&b, &HttpSource::new(&svc.oai_url())?, &HarvestOptions::default())?;
    svc.stop()?;
    ensure!(second.records == expected && second.stats.skipped == 0, "second generation: {second:?}");
    let b_payloads = payloads(&LocalSource::new(provider(&b), "http://b.local/oai"))?;
    ensure!(b_payloads == src_payloads, "second-generation payloads differ");
    ensure!(src_payloads.keys().all(|p| first_http_identifier(p).is_some()), "payload without an http identifier");
    Ok(format!(
        "{expected} records over HTTP, 0 skipped, payload bytes identical across source and two harvest generations"
    ))
}

/// Ingest, harvest and dissemination figures at the 10k scale. About 10k
/// metadata records, so a full harvest lists 10k records.
fn ten_k() -> &'static Result<BenchOutcome, String> {
    static OUTCOME: OnceLock<Result<BenchOutcome, String>> = OnceLock::new();
    OUTCOME.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let opts = BenchOptions::new(CorpusProfile::new(13_334, 6));
        bench_all(dir.path(), &opts).map_err(|e| format!("{e:#}"))
    })
}

fn c6_ingest_rate() -> Result<String> {
    let o = ten_k().as_ref().map_err(anyhow::Error::msg)?;
    let s = o.report.ingest_sec_per_object;
    ensure!(o.objects >= 10_000, "only {} objects", o.objects);
    ensure!(s <= 0.7, "{s:.4} s/object");
    let tenfold = if s <= 0.07 { "met" } else { "not met" };
    Ok(format!(
        "{} objects, {:.6} s/object with synced commits (ceiling 0.7; 10x target 0.07 {tenfold}, {:.0}x under the ceiling)",
        o.objects,
        s,
        0.7 / s
    ))
}

fn c7_harvest_throughput() -> Result<String> {
    let o = ten_k().as_ref().map_err(anyhow::Error::msg)?;
    let rate = o.report.list_records_per_sec;
    ensure!(o.harvested_records >= 10_000, "only {} records", o.harvested_records);
    ensure!(o.read_only, "benchmark reads changed the repository");
    ensure!(rate >= 900.0, "{rate:.0} records/s");
    Ok(format!(
        "{rate:.0} records/s (median of 5 trials, 4 concurrent full ListRecords oai_dc harvests of {} records over HTTP; floor 900)",
        o.harvested_records
    ))
}

fn c8_query_latency() -> Result<String> {
    // 10 agents + 2x57 aggregation objects + 57,100 resources + 42,825 metadata.
    let dir = tempfile::tempdir()?;
    let repo = open(dir.path(), Durability::NoSync, Arc::new(SystemClock));
    let (stats, ids) = generate(&repo, &CorpusProfile::new(57_100, 8))?;
    let objects = stats.objects_created();
    ensure!(objects >= 100_000, "only {objects} objects");
    let simple = simple_query_samples(&repo, 200)?;
    let complex = complex_query_samples(&repo, &ids.aggregations, 200)?;
    let big = get_object_samples(&repo, 2000, 8)?;
    drop(repo);

    let small_dir = tempfile::tempdir()?;
    let small = open(small_dir.path(), Durability::NoSync, Arc::new(SystemClock));
    generate(&small, &CorpusProfile::new(THOUSAND, 8))?;
    let small_samples = get_object_samples(&small, 2000, 8)?;

    let (s50, s95, c50) = (median(&simple), percentile(&simple, 95.0), median(&complex));
    let ratio = median(&big) / median(&small_samples);
    let detail = format!(
        "{objects} objects: simple P50 {s50:.3} ms (P95 {s95:.3}, ceiling 25), 3-join P50 {c50:.3} ms (P95 {:.3}, ceiling 250); \
         getObject P50 {:.4} ms at 100k vs {:.4} ms at 1k (ratio {ratio:.2}, limit 3)",
        percentile(&complex, 95.0),
        median(&big),
        median(&small_samples),
    );
    if s50 > 25.0 || c50 > 250.0 || ratio >= 3.0 {
        bail!(detail);
    }
    Ok(detail)
}

const DUBLIN_CORE: [&str; 15] = [
    "contributor", "coverage", "creator", "date", "description", "format", "identifier", "language", "publisher",
    "relation", "rights", "source", "subject", "title", "type",
];

/// (local name, text) of every child of the document root, sorted.
fn children(xml: &[u8]) -> Result<Vec<(String, String)>> {
    let mut r = Reader::from_reader(xml);
    let mut depth = 0;
    let mut out = Vec::new();
    let mut current: Option<(String, String)> = None;
    let mut buf = Vec::new();
    loop {
        match r.read_event_into(&mut buf)? {
            Event::Start(e) => {
                depth += 1;
                if depth == 2 {
                    current = Some((String::from_utf8_lossy(e.local_name().as_ref()).into_owned(), String::new()));
                }
            }
            Event::Empty(e) if depth == 1 => out.push((String::from_utf8_lossy(e.local_name().as_ref()).into_owned(), String::new())),
            Event::Text(t) if depth == 2 => {
                if let Some(c) = current.as_mut() {
                    c.1.push_str(&t.unescape()?);
                }
            }
            Event::End(_) => {
                if depth == 2 {
                    out.extend(current.take());
                }
                depth -= 1;
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    out.sort();
    Ok(out)
}

fn c9_disseminations() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let repo = open_virtual(dir.path());
    let (_, ids) = generate(&repo, &CorpusProfile::new(400, 9))?;
    let oai = provider(&repo);
    let svc = ServiceHandle::start(repo.clone(), oai, loopback(), None)?;
    let client = reqwest::blocking::Client::new();
    let get = |id: &ObjectId, format: &str| -> Result<(Vec<u8>, String)> {
        let resp = client
            .get(format!("{}/disseminations/{}/{format}", svc.base_url(), id.local()))
            .send()?
            .error_for_status()?;
        let path = resp
            .headers()
            .get("x-ino-path")
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        Ok((resp.bytes()?.to_vec(), path))
    };
    for m in &ids.metadata {
        let stored = repo.get_datastream(m, "format_nsdl_dc")?;
        let DatastreamContent::Inline(payload) = stored.content else {
            bail!("{m}: metadata payload is not inline");
        };
        let (literal, path) = get(m, "nsdl_dc")?;
        ensure!(path == "literal" && literal == payload, "{m}: literal path changed the stored bytes");
        let (transformed, path) = get(m, "oai_dc")?;
        ensure!(path == "transformed", "{m}: oai_dc served as {path}");
        ensure!(transformed == nsdl_dc_to_oai_dc(&payload)?, "{m}: crosswalk output differs");
        let want: Vec<_> = children(&payload)?.into_iter().filter(|(n, _)| DUBLIN_CORE.contains(&n.as_str())).collect();
        ensure!(children(&transformed)? == want, "{m}: transformed elements are not the Dublin Core subset");
        ensure!(repo.get_dissemination(m, "oai_dc")?.path == DisseminationPath::Transformed, "{m}: path");
    }
    svc.stop()?;
    let o = ten_k().as_ref().map_err(anyhow::Error::msg)?;
    let (lit, tr) = (o.report.dissemination_literal_ms, o.report.dissemination_transformed_ms);
    Ok(format!(
        "{} records byte-correct on both paths; at 10k over HTTP literal {lit:.3} ms, transformed {tr:.3} ms, ratio {:.2}x (reference ratio 480/69 = 7.0x, not gated)",
        ids.metadata.len(),
        tr / lit
    ))
}

fn c10_out_of_scale() -> Result<String> {
    Ok("report only: 2.1M objects, 165M triples, multi-day cache preload and 32GB provisioning are not reproduced; \
        covered by C2-C4 equivalence and the scaled gates C6-C8"
        .into())
}

type Criterion = (&'static str, fn() -> Result<String>);

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 10] = [
        ("C1 constraint enforcement", c1_constraint_enforcement),
        ("C2 query-oracle equivalence", c2_query_oracle),
        ("C3 index-rebuild equivalence", c3_index_rebuild),
        ("C4 OAI conformance", c4_oai_conformance),
        ("C5 self-harvest fixed point", c5_self_harvest),
        ("C6 ingest rate", c6_ingest_rate),
        ("C7 harvest throughput", c7_harvest_throughput),
        ("C8 query latency", c8_query_latency),
        ("C9 dissemination paths", c9_disseminations),
        ("C10 out-of-scale figures", c10_out_of_scale),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(anyhow::anyhow!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} [{secs:.1}s]: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name} [{secs:.1}s]: {e:#}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
