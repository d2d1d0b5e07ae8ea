//! Seeded synthetic corpora shaped like a digital library load: agents,
//! collections, resources with URL surrogates and nsdl_dc metadata.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ndr_api::{AgentKind, ApiError, MetadataSpec, Repository, ResourceContent, ResourceSpec};
use crate::object_store::{escape_text, ObjectId};
use crate::term::Term;
use crate::vocab;

pub const NSDL_DC_NS: &str = "http://ns.nsdl.org/nsdl_dc_v1.02/";
pub const DCTERMS_NS: &str = "http://purl.org/dc/terms/";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub resources: usize,
    pub metadata_per_resource: f64,
    pub agents: usize,
    pub seed: u64,
}

impl CorpusProfile {
    pub fn new(resources: usize, seed: u64) -> Self {
        CorpusProfile {
            resources,
            metadata_per_resource: 0.75,
            agents: 10,
            seed,
        }
    }

    pub fn aggregations(&self) -> usize {
        (self.resources / 1000).max(1)
    }

    pub fn metadata(&self) -> usize {
        (self.resources as f64 * self.metadata_per_resource).round() as usize
    }

    /// Objects created: agents, aggregations with their proxy resources,
    /// content resources and metadata.
    pub fn total_objects(&self) -> usize {
        self.agents + 2 * self.aggregations() + self.resources + self.metadata()
    }

    pub fn resource_url(&self, i: usize) -> String {
        format!("http://corpus.local/{}/{i}", self.seed)
    }

    pub fn collection_url(&self, j: usize) -> String {
        format!("http://corpus.local/{}/collection/{j}", self.seed)
    }

    /// Whether resource `i` receives a metadata record; spreads exactly
    /// `metadata()` records evenly over the resources.
    pub fn has_metadata(&self, i: usize) -> bool {
        let m = self.metadata().min(self.resources);
        let n = self.resources.max(1);
        (i + 1) * m / n > i * m / n
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub agents: usize,
    pub aggregations: usize,
    pub resources: usize,
    pub metadata: usize,
    pub skipped: usize,
    pub elapsed_secs: f64,
}

impl IngestStats {
    pub fn objects_created(&self) -> usize {
        self.agents + 2 * self.aggregations + self.resources + self.metadata
    }
}

/// Ids created by the generator, for tests and benchmarks.
#[derive(Debug, Clone, Default)]
pub struct CorpusIds {
    pub agents: Vec<ObjectId>,
    pub aggregations: Vec<ObjectId>,
    pub resources: Vec<ObjectId>,
    pub metadata: Vec<ObjectId>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("repository is not empty")]
    NotEmpty,
    #[error(transparent)]
    Api(#[from] ApiError),
}

const WORDS: [&str; 24] = [
    "wave", "energy", "cell", "orbit", "fraction", "river", "climate", "atom", "graph", "lens", "volcano", "circuit",
    "genome", "prism", "tide", "matrix", "fossil", "magnet", "plate", "enzyme", "star", "vector", "storm", "crystal",
];

fn phrase(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut out: Vec<&str> = (0..words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    if rng.random_bool(0.1) {
        out.push("& <friends>");
    }
    out.join(" ")
}

/// A flat nsdl_dc record: the identifier first, then a seeded mix of Dublin
/// Core elements and non-DC extras.
pub fn random_nsdl_dc(rng: &mut ChaCha8Rng, identifier: &str) -> String {
    const DC: [&str; 14] = [
        "title",
        "creator",
        "subject",
        "description",
        "publisher",
        "contributor",
        "date",
        "type",
        "format",
        "source",
        "language",
        "relation",
        "coverage",
        "rights",
    ];
    const EXTRA: [&str; 3] = ["audience", "educationLevel", "accessRights"];
    let mut out = format!(
        "<nsdl_dc:nsdl_dc xmlns:nsdl_dc=\"{NSDL_DC_NS}\" xmlns:dc=\"http://purl.org/dc/elements/1.1/\" \
         xmlns:dct=\"{DCTERMS_NS}\" schemaVersion=\"1.02.020\">\n  <dc:identifier>"
    );
    escape_text(identifier, &mut out);
    out.push_str("</dc:identifier>\n");
    let n = rng.random_range(1..=8);
    for _ in 0..n {
        let words = rng.random_range(1..=5);
        let text = phrase(rng, words);
        let (prefix, name) = if rng.random_bool(0.25) {
            ("dct", EXTRA[rng.random_range(0..EXTRA.len())])
        } else {
            ("dc", DC[rng.random_range(0..DC.len())])
        };
        out.push_str(&format!("  <{prefix}:{name}>"));
        escape_text(&text, &mut out);
        out.push_str(&format!("</{prefix}:{name}>\n"));
    }
    out.push_str("</nsdl_dc:nsdl_dc>");
    out
}

/// Loads a deterministic corpus into an empty repository.
pub fn generate(repo: &Repository, profile: &CorpusProfile) -> Result<(IngestStats, CorpusIds), CorpusError> {
    generate_with(repo, profile, |_| {})
}

/// As [`generate`], calling `progress` with the number of objects created so far.
pub fn generate_with(
    repo: &Repository,
    profile: &CorpusProfile,
    mut progress: impl FnMut(usize),
) -> Result<(IngestStats, CorpusIds), CorpusError> {
    if repo.store().id_count() != 0 {
        return Err(CorpusError::NotEmpty);
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut ids = CorpusIds::default();
    let kinds = [AgentKind::Organization, AgentKind::Person, AgentKind::Service];
    for i in 0..profile.agents {
        ids.agents.push(repo.add_agent(&format!("Corpus agent {i}"), kinds[i % kinds.len()])?);
    }
    for j in 0..profile.aggregations() {
        let agent = &ids.agents[j % ids.agents.len().max(1)];
        ids.aggregations
            .push(repo.create_aggregation(agent, &ResourceSpec::url(&profile.collection_url(j)))?);
    }
    progress(ids.agents.len() + 2 * ids.aggregations.len());
    let aggs = ids.aggregations.len();
    for i in 0..profile.resources {
        let k = rng.random_range(1..=3usize).min(aggs);
        let mut chosen: Vec<usize> = sample(&mut rng, aggs, k).into_vec();
        chosen.sort_unstable();
        let members: Vec<ObjectId> = chosen.iter().map(|&j| ids.aggregations[j].clone()).collect();
        let url = profile.resource_url(i);
        let r = repo.add_resource(&ResourceSpec::url(&url).in_aggregations(&members))?;
        ids.resources.push(r.clone());
        if profile.has_metadata(i) {
            let payload = random_nsdl_dc(&mut rng, &url);
            let m = repo.add_metadata(&MetadataSpec {
                target: r,
                format_id: "nsdl_dc".into(),
                payload: payload.into_bytes(),
                provider: ids.agents.get(i % profile.agents.max(1)).cloned(),
                aggregations: members,
                source_record_id: None,
            })?;
            ids.metadata.push(m);
        }
        if (i + 1) % 1000 == 0 {
            progress(ids.agents.len() + 2 * aggs + ids.resources.len() + ids.metadata.len());
        }
    }
    let stats = IngestStats {
        agents: ids.agents.len(),
        aggregations: ids.aggregations.len(),
        resources: ids.resources.len(),
        metadata: ids.metadata.len(),
        skipped: 0,
        elapsed_secs: started.elapsed().as_secs_f64(),
    };
    Ok((stats, ids))
}

/// Outcome of one random API operation.
#[derive(Debug)]
pub enum OpOutcome {
    Applied(&'static str),
    Rejected(&'static str, ApiError),
}

/// Seeded random walk over the NDR API, mixing valid calls with calls that
/// must be rejected (dangling targets, wrong types, cardinality breaches,
/// malformed input, purges with dependents).
pub struct OpDriver {
    rng: ChaCha8Rng,
    agents: Vec<ObjectId>,
    aggregations: Vec<ObjectId>,
    resources: Vec<ObjectId>,
    metadata: Vec<ObjectId>,
    counter: usize,
}

impl OpDriver {
    pub fn new(seed: u64) -> Self {
        OpDriver {
            rng: ChaCha8Rng::seed_from_u64(seed),
            agents: Vec::new(),
            aggregations: Vec::new(),
            resources: Vec::new(),
            metadata: Vec::new(),
            counter: 0,
        }
    }

    fn pick(&mut self, pool: Pool) -> ObjectId {
        let list = match pool {
            Pool::Agents => &self.agents,
            Pool::Aggregations => &self.aggregations,
            Pool::Resources => &self.resources,
            Pool::Metadata => &self.metadata,
        };
        if list.is_empty() || self.rng.random_bool(0.03) {
            return ObjectId::from_local(&format!("ghost-{}", self.rng.random_range(0..50))).expect("valid id");
        }
        list[self.rng.random_range(0..list.len())].clone()
    }

    /// Any known id, used where the wrong type is likely.
    fn pick_any(&mut self) -> ObjectId {
        let pool = [Pool::Agents, Pool::Aggregations, Pool::Resources, Pool::Metadata][self.rng.random_range(0..4)];
        self.pick(pool)
    }

    fn pick_aggs(&mut self, max: usize) -> Vec<ObjectId> {
        let n = self.rng.random_range(0..=max);
        let mut out: Vec<ObjectId> = (0..n).map(|_| self.pick(Pool::Aggregations)).collect();
        out.sort();
        out.dedup();
        out
    }

    fn url(&mut self) -> String {
        match self.rng.random_range(0..20) {
            0 => "not a url".to_string(),
            1 => format!("HTTP://Ops.Example.ORG:80/r{}#x", self.rng.random_range(0..200)),
            _ => format!("http://ops.example.org/r{}", self.rng.random_range(0..200)),
        }
    }

    fn payload(&mut self) -> Vec<u8> {
        if self.rng.random_bool(0.03) {
            return Vec::new();
        }
        let id = format!("http://ops.example.org/r{}", self.rng.random_range(0..200));
        random_nsdl_dc(&mut self.rng, &id).into_bytes()
    }

    fn format_id(&mut self) -> String {
        ["nsdl_dc", "nsdl_dc", "nsdl_dc", "lom", "Bad-Format"][self.rng.random_range(0..5)].to_string()
    }

    /// Performs one operation. Errors other than rejections are returned as
    /// `Err`; they indicate storage failures, not constraint enforcement.
    pub fn step(&mut self, repo: &Repository) -> Result<OpOutcome, ApiError> {
        self.counter += 1;
        let kind = self.rng.random_range(0..100);
        let (name, result): (&'static str, Result<Option<(Pool, ObjectId)>, ApiError>) = match kind {
            0..=5 => {
                let name = if self.rng.random_bool(0.05) { String::new() } else { format!("agent {}", self.counter) };
                let kinds = [AgentKind::Person, AgentKind::Organization, AgentKind::Service];
                let k = kinds[self.rng.random_range(0..3)];
                ("addAgent", repo.add_agent(&name, k).map(|id| Some((Pool::Agents, id))))
            }
            6..=10 => {
                let agent = if self.rng.random_bool(0.9) { self.pick(Pool::Agents) } else { self.pick_any() };
                let url = self.url();
                ("createAggregation", repo.create_aggregation(&agent, &ResourceSpec::url(&url)).map(|id| Some((Pool::Aggregations, id))))
            }
            11..=27 => {
                let aggs = self.pick_aggs(2);
                let spec = if self.rng.random_bool(0.1) {
                    ResourceSpec {
                        content: ResourceContent::Inline {
                            bytes: vec![self.rng.random(); 8],
                            media_type: "application/octet-stream".into(),
                        },
                        aggregations: aggs,
                    }
                } else {
                    let url = self.url();
                    ResourceSpec::url(&url).in_aggregations(&aggs)
                };
                ("addResource", repo.add_resource(&spec).map(|id| Some((Pool::Resources, id))))
            }
            28..=45 => {
                let target = if self.rng.random_bool(0.9) { self.pick(Pool::Resources) } else { self.pick_any() };
                let provider = match self.rng.random_range(0..10) {
                    0 => None,
                    1 => Some(self.pick_any()),
                    _ => Some(self.pick(Pool::Agents)),
                };
                let spec = MetadataSpec {
                    target,
                    format_id: self.format_id(),
                    payload: self.payload(),
                    provider,
                    aggregations: self.pick_aggs(2),
                    source_record_id: self.rng.random_bool(0.2).then(|| format!("src-{}", self.counter)),
                };
                ("addMetadata", repo.add_metadata(&spec).map(|id| Some((Pool::Metadata, id))))
            }
            46..=51 => {
                let id = self.pick(Pool::Metadata);
                let format = self.format_id();
                let payload = self.payload();
                let aggs = self.pick_aggs(2);
                ("updateMetadata", repo.update_metadata(&id, &format, &payload, &aggs).map(|_| None))
            }
            52..=57 => {
                let agg = if self.rng.random_bool(0.9) { self.pick(Pool::Aggregations) } else { self.pick_any() };
                let n = self.rng.random_range(0..6);
                let members: Vec<ObjectId> = (0..n)
                    .map(|_| {
                        let pool = if self.rng.random_bool(0.5) { Pool::Resources } else { Pool::Metadata };
                        if self.rng.random_bool(0.05) {
                            self.pick(Pool::Agents)
                        } else {
                            self.pick(pool)
                        }
                    })
                    .collect();
                ("setMembership", repo.set_aggregation_membership(&agg, &members).map(|_| None))
            }
            58..=69 => {
                let (subject, predicate, object) = match self.rng.random_range(0..7) {
                    0 => (self.pick(Pool::Metadata), vocab::METADATA_FOR, self.pick(Pool::Resources).to_term()),
                    1 => (self.pick(Pool::Metadata), vocab::PROVIDED_BY, self.pick(Pool::Agents).to_term()),
                    2 => (self.pick(Pool::Aggregations), vocab::REPRESENTED_BY, self.pick(Pool::Resources).to_term()),
                    3 => (self.pick(Pool::Agents), vocab::AGGREGATOR_FOR, self.pick(Pool::Aggregations).to_term()),
                    4 => (self.pick_any(), vocab::MEMBER_OF, self.pick(Pool::Aggregations).to_term()),
                    5 => (self.pick(Pool::Metadata), vocab::SOURCE_RECORD_ID, Term::literal(format!("s{}", self.counter))),
                    _ => (self.pick_any(), "info:ino/def#unregistered", self.pick_any().to_term()),
                };
                ("addRelationship", repo.add_relationship(&subject, predicate, object).map(|_| None))
            }
            70..=79 => {
                let subject = self.pick_any();
                let existing = repo.get_object(&subject).ok().and_then(|o| {
                    (!o.relationships.is_empty())
                        .then(|| o.relationships[self.rng.random_range(0..o.relationships.len())].clone())
                });
                let result = match existing {
                    Some(t) => repo.remove_relationship(&subject, &t.predicate, t.object),
                    None => repo.remove_relationship(&subject, vocab::MEMBER_OF, self.pick_any().to_term()),
                };
                ("removeRelationship", result.map(|_| None))
            }
            _ => {
                let (name, r) = match self.rng.random_range(0..10) {
                    0..=4 => {
                        let id = self.pick(Pool::Metadata);
                        ("purgeMetadata", repo.purge_metadata(&id))
                    }
                    5..=7 => {
                        let id = self.pick(Pool::Resources);
                        ("purgeResource", repo.purge_resource(&id))
                    }
                    8 => {
                        let id = self.pick(Pool::Aggregations);
                        ("purgeAggregation", repo.purge_aggregation(&id))
                    }
                    _ => {
                        let id = self.pick(Pool::Agents);
                        ("purgeAgent", repo.purge_agent(&id))
                    }
                };
                (name, r.map(|_| None))
            }
        };
        match result {
            Ok(created) => {
                if let Some((pool, id)) = created {
                    let list = self.pool_mut(pool);
                    if !list.contains(&id) {
                        list.push(id);
                    }
                }
                Ok(OpOutcome::Applied(name))
            }
            Err(e) if e.is_rejection() => Ok(OpOutcome::Rejected(name, e)),
            Err(e) => Err(e),
        }
    }

    fn pool_mut(&mut self, pool: Pool) -> &mut Vec<ObjectId> {
        match pool {
            Pool::Agents => &mut self.agents,
            Pool::Aggregations => &mut self.aggregations,
            Pool::Resources => &mut self.resources,
            Pool::Metadata => &mut self.metadata,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Pool {
    Agents,
    Aggregations,
    Resources,
    Metadata,
}
