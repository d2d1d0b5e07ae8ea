//! Benchmark harness: loads a seeded corpus, then times ingest, queries,
//! OAI-PMH harvests and disseminations.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ino_core::corpus::{generate, CorpusIds, CorpusProfile};
use ino_core::object_store::{Durability, StoreOptions};
use ino_core::oai_provider::{parse_response, OaiProvider};
use ino_core::{vocab, ConjunctiveQuery, ObjectId, Repository, SystemClock};

use crate::service::ServiceHandle;

/// The machine-readable report. Timings are wall-clock medians (P50) or
/// 95th percentiles in milliseconds unless the name says otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BenchReport {
    pub ingest_sec_per_object: f64,
    pub simple_query_ms_p50: f64,
    pub simple_query_ms_p95: f64,
    pub complex_query_ms_p50: f64,
    pub complex_query_ms_p95: f64,
    pub list_records_per_sec: f64,
    pub dissemination_literal_ms: f64,
    pub dissemination_transformed_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub profile: CorpusProfile,
    pub durability: Durability,
    /// Trials per query and dissemination measurement, at least 100.
    pub trials: usize,
    /// Full-harvest trials, at least 5.
    pub harvest_trials: usize,
    /// Concurrent harvest clients.
    pub concurrency: usize,
    pub page_size: usize,
}

impl BenchOptions {
    pub fn new(profile: CorpusProfile) -> Self {
        BenchOptions {
            profile,
            durability: Durability::Sync,
            trials: 100,
            harvest_trials: 5,
            concurrency: 4,
            page_size: ino_core::oai_provider::DEFAULT_PAGE_SIZE,
        }
    }
}

/// The report plus what was measured against.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchOutcome {
    pub report: BenchReport,
    pub objects: usize,
    pub harvested_records: usize,
    pub get_object_ms_p50: f64,
    /// Commit sequence and triple count were unchanged by the read benchmarks.
    pub read_only: bool,
}

/// Nearest-rank percentile of `samples` (milliseconds), `p` in (0, 100].
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

pub fn median(samples: &[f64]) -> f64 {
    percentile(samples, 50.0)
}

fn time_ms(f: impl FnOnce()) -> f64 {
    let t = Instant::now();
    f();
    t.elapsed().as_secs_f64() * 1e3
}

const TYPES: [&str; 4] = ["Resource", "Metadata", "Agent", "Aggregation"];

/// Single pattern on `objectType`: all objects of one type.
pub fn simple_query(type_name: &str) -> ConjunctiveQuery {
    ConjunctiveQuery::parse(&format!(
        "SELECT ?x WHERE ?x <{}> <{}>",
        vocab::OBJECT_TYPE,
        vocab::type_iri(type_name)
    ))
    .expect("well-formed query")
}

/// Metadata of the resource members of one aggregation: four patterns joined
/// on `?r` and `?m`.
pub fn complex_query(aggregation: &ObjectId) -> ConjunctiveQuery {
    ConjunctiveQuery::parse(&format!(
        "SELECT ?m ?r WHERE ?r <{member}> <{g}> ; ?r <{ty}> <{res}> ; ?m <{mdf}> ?r ; ?m <{ty}> <{md}>",
        member = vocab::MEMBER_OF,
        g = aggregation.as_str(),
        ty = vocab::OBJECT_TYPE,
        res = vocab::type_iri("Resource"),
        mdf = vocab::METADATA_FOR,
        md = vocab::type_iri("Metadata"),
    ))
    .expect("well-formed query")
}

/// Latency samples (ms) of the simple query, cycling over the four types.
pub fn simple_query_samples(repo: &Repository, trials: usize) -> anyhow::Result<Vec<f64>> {
    let queries: Vec<ConjunctiveQuery> = TYPES.iter().map(|t| simple_query(t)).collect();
    let mut out = Vec::with_capacity(trials);
    for i in 0..trials {
        let q = &queries[i % queries.len()];
        let t = Instant::now();
        let sol = repo.query(q)?;
        out.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(sol);
    }
    Ok(out)
}

/// Latency samples (ms) of the complex query, cycling over aggregations.
pub fn complex_query_samples(repo: &Repository, aggregations: &[ObjectId], trials: usize) -> anyhow::Result<Vec<f64>> {
    if aggregations.is_empty() {
        bail!("corpus has no aggregations");
    }
    let queries: Vec<ConjunctiveQuery> = aggregations.iter().map(complex_query).collect();
    let mut out = Vec::with_capacity(trials);
    for i in 0..trials {
        let q = &queries[i % queries.len()];
        let t = Instant::now();
        let sol = repo.query(q)?;
        out.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(sol);
    }
    Ok(out)
}

/// Latency samples (ms) of `getObject` over seeded random live ids.
pub fn get_object_samples(repo: &Repository, trials: usize, seed: u64) -> anyhow::Result<Vec<f64>> {
    let ids = repo.store().live_ids();
    if ids.is_empty() {
        bail!("repository is empty");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let id = &ids[rng.random_range(0..ids.len())];
        let t = Instant::now();
        let o = repo.get_object(id)?;
        out.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(o);
    }
    Ok(out)
}

/// One full ListRecords harvest over HTTP; returns the record count.
pub fn full_harvest(client: &reqwest::blocking::Client, oai_url: &str, prefix: &str) -> anyhow::Result<usize> {
    let mut params = vec![("verb".to_string(), "ListRecords".to_string()), ("metadataPrefix".into(), prefix.into())];
    let mut records = 0;
    loop {
        let mut url = url::Url::parse(oai_url)?;
        url.query_pairs_mut().extend_pairs(&params);
        let body = client.get(url).send()?.error_for_status()?.text()?;
        let resp = parse_response(&body)?;
        if let Some((code, msg)) = resp.error {
            if code == "noRecordsMatch" {
                return Ok(records);
            }
            bail!("{code}: {msg}");
        }
        records += resp.records.len();
        match resp.token {
            Some(t) if !t.value.is_empty() => {
                params = vec![("verb".into(), "ListRecords".into()), ("resumptionToken".into(), t.value)]
            }
            _ => return Ok(records),
        }
    }
}

/// Records per second of `concurrency` clients each running a full harvest,
/// one value per trial.
pub fn harvest_rates(oai_url: &str, concurrency: usize, trials: usize) -> anyhow::Result<(Vec<f64>, usize)> {
    let client = reqwest::blocking::Client::new();
    let expected = full_harvest(&client, oai_url, "oai_dc")?;
    let mut rates = Vec::with_capacity(trials);
    for _ in 0..trials {
        let started = Instant::now();
        let counts: Vec<anyhow::Result<usize>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..concurrency.max(1))
                .map(|_| s.spawn(|| full_harvest(&client, oai_url, "oai_dc")))
                .collect();
            handles.into_iter().map(|h| h.join().expect("harvest client panicked")).collect()
        });
        let secs = started.elapsed().as_secs_f64();
        let mut total = 0;
        for c in counts {
            let c = c?;
            if c != expected {
                bail!("harvest returned {c} records, expected {expected}");
            }
            total += c;
        }
        rates.push(total as f64 / secs);
    }
    Ok((rates, expected))
}

/// Latency samples (ms) of GET /disseminations/{id}/{format} over HTTP.
pub fn dissemination_samples(base_url: &str, ids: &[ObjectId], format: &str, trials: usize) -> anyhow::Result<Vec<f64>> {
    if ids.is_empty() {
        bail!("no metadata objects");
    }
    let client = reqwest::blocking::Client::new();
    let mut out = Vec::with_capacity(trials);
    for i in 0..trials {
        let url = format!("{base_url}/disseminations/{}/{format}", ids[i % ids.len()].local());
        let mut failed = None;
        let ms = time_ms(|| match client.get(&url).send().and_then(|r| r.error_for_status()).and_then(|r| r.bytes()) {
            Ok(b) => {
                std::hint::black_box(b);
            }
            Err(e) => failed = Some(e),
        });
        if let Some(e) = failed {
            return Err(e).with_context(|| format!("GET {url}"));
        }
        out.push(ms);
    }
    Ok(out)
}

fn fingerprint(repo: &Repository) -> (u64, usize) {
    (repo.store().last_seq(), repo.index().len())
}

/// Loads `opts.profile` into the empty directory `dir`, then measures every
/// report field.
pub fn bench_all(dir: &Path, opts: &BenchOptions) -> anyhow::Result<BenchOutcome> {
    let trials = opts.trials.max(100);
    let harvest_trials = opts.harvest_trials.max(5);
    let repo = Arc::new(Repository::open_default(
        dir,
        StoreOptions {
            durability: opts.durability,
            ..Default::default()
        },
        Arc::new(SystemClock),
    )?);
    let (stats, ids): (_, CorpusIds) = generate(&repo, &opts.profile)?;
    let objects = stats.objects_created();
    let ingest_sec_per_object = stats.elapsed_secs / objects.max(1) as f64;
    tracing::info!("ingested {objects} objects in {:.1}s", stats.elapsed_secs);

    let before = fingerprint(&repo);
    let simple = simple_query_samples(&repo, trials)?;
    let complex = complex_query_samples(&repo, &ids.aggregations, trials)?;
    let get_object = get_object_samples(&repo, trials, opts.profile.seed)?;

    let oai = Arc::new(OaiProvider::open(repo.clone(), Arc::new(SystemClock))?);
    oai.set_page_size(opts.page_size);
    let service = ServiceHandle::start(repo.clone(), oai, SocketAddr::from(([127, 0, 0, 1], 0)), None)?;
    let (rates, harvested_records) = harvest_rates(&service.oai_url(), opts.concurrency, harvest_trials)?;
    let literal = dissemination_samples(&service.base_url(), &ids.metadata, "nsdl_dc", trials)?;
    let transformed = dissemination_samples(&service.base_url(), &ids.metadata, "oai_dc", trials)?;
    let read_only = fingerprint(&repo) == before;
    service.stop()?;

    Ok(BenchOutcome {
        report: BenchReport {
            ingest_sec_per_object,
            simple_query_ms_p50: median(&simple),
            simple_query_ms_p95: percentile(&simple, 95.0),
            complex_query_ms_p50: median(&complex),
            complex_query_ms_p95: percentile(&complex, 95.0),
            list_records_per_sec: median(&rates),
            dissemination_literal_ms: median(&literal),
            dissemination_transformed_ms: median(&transformed),
        },
        objects,
        harvested_records,
        get_object_ms_p50: median(&get_object),
        read_only,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(median(&s), 50.0);
        assert_eq!(percentile(&s, 95.0), 95.0);
        assert_eq!(percentile(&s, 100.0), 100.0);
        assert_eq!(median(&[3.0]), 3.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn report_uses_the_published_field_names() {
        let r = BenchReport {
            ingest_sec_per_object: 1.0,
            simple_query_ms_p50: 2.0,
            simple_query_ms_p95: 3.0,
            complex_query_ms_p50: 4.0,
            complex_query_ms_p95: 5.0,
            list_records_per_sec: 6.0,
            dissemination_literal_ms: 7.0,
            dissemination_transformed_ms: 8.0,
        };
        let v = serde_json::to_value(r).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut want = vec![
            "ingestSecPerObject",
            "simpleQueryMsP50",
            "simpleQueryMsP95",
            "complexQueryMsP50",
            "complexQueryMsP95",
            "listRecordsPerSec",
            "disseminationLiteralMs",
            "disseminationTransformedMs",
        ];
        want.sort();
        assert_eq!(keys, want);
    }
}
