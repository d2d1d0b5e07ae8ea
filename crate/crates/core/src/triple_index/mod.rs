//! In-memory triple index over the object store with three access orders
//! (subject-, predicate- and object-major), conjunctive query evaluation and
//! a brute-force reference evaluator.

mod brute;
mod query;
mod sample;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::object_store::{
    CommitHook, CommittedChange, DatastreamContent, DigitalObject, ObjectId, ObjectStore, StoreError,
};
use crate::term::{Term, Triple};
use crate::vocab;

pub use brute::{evaluate_brute_force, BRUTE_FORCE_LIMIT};
pub use sample::QuerySampler;
pub use query::{
    ConjunctiveQuery, PatternTerm, QueryError, SolutionRow, Solutions, TriplePattern, MAX_PATTERNS,
};

pub const DEFAULT_ROW_CAP: usize = 10_000_000;

/// System triples followed by relationship triples, in a fixed order.
pub fn extract_triples(obj: &DigitalObject) -> Vec<Triple> {
    let id = obj.id.as_str();
    let mut out = Vec::with_capacity(obj.types.len() + 3 + obj.datastreams.len() * 3 + obj.relationships.len());
    for t in &obj.types {
        out.push(Triple::new(id, vocab::OBJECT_TYPE, Term::Iri(vocab::type_iri(t))));
    }
    out.push(Triple::new(id, vocab::CREATED_DATE, Term::Literal(obj.created.to_iso())));
    out.push(Triple::new(id, vocab::MODIFIED_DATE, Term::Literal(obj.modified.to_iso())));
    out.push(Triple::new(id, vocab::STATE, Term::Literal(obj.state.as_str().to_string())));
    for ds in &obj.datastreams {
        let ds_iri = datastream_iri(&obj.id, &ds.ds_id);
        out.push(Triple::new(id, vocab::HAS_DATASTREAM, Term::Iri(ds_iri.clone())));
        out.push(Triple::new(ds_iri.clone(), vocab::MEDIA_TYPE, Term::Literal(ds.media_type.clone())));
        if let DatastreamContent::Surrogate(url) = &ds.content {
            out.push(Triple::new(ds_iri, vocab::LOCATION, Term::Literal(url.clone())));
        }
    }
    out.extend(obj.relationships.iter().cloned());
    out
}

pub fn datastream_iri(id: &ObjectId, ds_id: &str) -> String {
    format!("{id}/{ds_id}")
}

type Key = (u32, u32, u32);

const ANY: u32 = u32::MAX;

#[derive(Default, Clone)]
struct Inner {
    terms: Vec<Term>,
    ids: HashMap<Term, u32>,
    spo: BTreeSet<Key>,
    pos: BTreeSet<Key>,
    osp: BTreeSet<Key>,
    seq: u64,
}

impl Inner {
    fn intern(&mut self, t: Term) -> u32 {
        if let Some(&id) = self.ids.get(&t) {
            return id;
        }
        let id = self.terms.len() as u32;
        self.terms.push(t.clone());
        self.ids.insert(t, id);
        id
    }

    fn lookup(&self, t: &Term) -> Option<u32> {
        self.ids.get(t).copied()
    }

    fn lookup_iri(&self, s: &str) -> Option<u32> {
        // Avoids cloning into a Term for the common case.
        self.ids.get(&Term::Iri(s.to_string())).copied()
    }

    fn insert(&mut self, t: Triple) {
        let s = self.intern(Term::Iri(t.subject));
        let p = self.intern(Term::Iri(t.predicate));
        let o = self.intern(t.object);
        self.insert_ids(s, p, o);
    }

    fn insert_ids(&mut self, s: u32, p: u32, o: u32) {
        if self.spo.insert((s, p, o)) {
            self.pos.insert((p, o, s));
            self.osp.insert((o, s, p));
        }
    }

    fn remove_ids(&mut self, s: u32, p: u32, o: u32) {
        if self.spo.remove(&(s, p, o)) {
            self.pos.remove(&(p, o, s));
            self.osp.remove(&(o, s, p));
        }
    }

    fn remove_subject(&mut self, s: u32) {
        let keys: Vec<Key> = self.spo.range((s, 0, 0)..=(s, ANY, ANY)).copied().collect();
        for (s, p, o) in keys {
            self.remove_ids(s, p, o);
        }
    }

    /// Removes every triple extracted from the object: its own subject range
    /// and the subject ranges of its datastream IRIs.
    fn deindex(&mut self, id: &ObjectId) {
        let Some(s) = self.lookup_iri(id.as_str()) else {
            return;
        };
        if let Some(has_ds) = self.lookup_iri(vocab::HAS_DATASTREAM) {
            let ds: Vec<u32> = self
                .spo
                .range((s, has_ds, 0)..=(s, has_ds, ANY))
                .map(|&(_, _, o)| o)
                .collect();
            for d in ds {
                self.remove_subject(d);
            }
        }
        self.remove_subject(s);
    }

    fn index(&mut self, obj: &DigitalObject) {
        for t in extract_triples(obj) {
            self.insert(t);
        }
    }

    /// Calls `f` for every stored key matching the bound positions. Stops
    /// early when `f` returns false.
    fn scan(&self, s: Option<u32>, p: Option<u32>, o: Option<u32>, mut f: impl FnMut(u32, u32, u32) -> bool) {
        match (s, p, o) {
            (Some(s), Some(p), Some(o)) => {
                if self.spo.contains(&(s, p, o)) {
                    f(s, p, o);
                }
            }
            (Some(s), Some(p), None) => {
                for &(s, p, o) in self.spo.range((s, p, 0)..=(s, p, ANY)) {
                    if !f(s, p, o) {
                        return;
                    }
                }
            }
            (Some(s), None, Some(o)) => {
                for &(o, s, p) in self.osp.range((o, s, 0)..=(o, s, ANY)) {
                    if !f(s, p, o) {
                        return;
                    }
                }
            }
            (Some(s), None, None) => {
                for &(s, p, o) in self.spo.range((s, 0, 0)..=(s, ANY, ANY)) {
                    if !f(s, p, o) {
                        return;
                    }
                }
            }
            (None, Some(p), Some(o)) => {
                for &(p, o, s) in self.pos.range((p, o, 0)..=(p, o, ANY)) {
                    if !f(s, p, o) {
                        return;
                    }
                }
            }
            (None, Some(p), None) => {
                for &(p, o, s) in self.pos.range((p, 0, 0)..=(p, ANY, ANY)) {
                    if !f(s, p, o) {
                        return;
                    }
                }
            }
            (None, None, Some(o)) => {
                for &(o, s, p) in self.osp.range((o, 0, 0)..=(o, ANY, ANY)) {
                    if !f(s, p, o) {
                        return;
                    }
                }
            }
            (None, None, None) => {
                for &(s, p, o) in &self.spo {
                    if !f(s, p, o) {
                        return;
                    }
                }
            }
        }
    }

    fn count(&self, s: Option<u32>, p: Option<u32>, o: Option<u32>) -> usize {
        if (s, p, o) == (None, None, None) {
            return self.spo.len();
        }
        let mut n = 0;
        self.scan(s, p, o, |_, _, _| {
            n += 1;
            true
        });
        n
    }

    fn triple(&self, (s, p, o): Key) -> Triple {
        let iri = |id: u32| match &self.terms[id as usize] {
            Term::Iri(s) => s.clone(),
            Term::Literal(_) => unreachable!("subjects and predicates are IRIs"),
        };
        Triple {
            subject: iri(s),
            predicate: iri(p),
            object: self.terms[o as usize].clone(),
        }
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Var(usize),
    Const(u32),
}

struct Compiled {
    slots: [Slot; 3],
    estimate: usize,
}

/// Persisted form of the index. Terms are compacted to those in use.
#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    terms: Vec<Term>,
    triples: Vec<[u32; 3]>,
}

/// The triple index. Reads proceed concurrently; writes arrive through the
/// store's commit hook and are serialized with store commits.
pub struct TripleIndex {
    inner: RwLock<Inner>,
    row_cap: AtomicUsize,
}

impl Default for TripleIndex {
    fn default() -> Self {
        TripleIndex::new()
    }
}

impl std::fmt::Debug for TripleIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TripleIndex").field("triples", &self.len()).finish_non_exhaustive()
    }
}

impl TripleIndex {
    pub fn new() -> Self {
        TripleIndex {
            inner: RwLock::new(Inner::default()),
            row_cap: AtomicUsize::new(DEFAULT_ROW_CAP),
        }
    }

    /// Builds an index for `store`, from `snapshot` when it matches the
    /// store's last sequence number and by full rebuild otherwise, and
    /// registers it as a commit hook.
    pub fn attach(store: &ObjectStore, snapshot: Option<&Path>) -> Result<Arc<TripleIndex>, StoreError> {
        let index = Arc::new(TripleIndex::new());
        store.transaction(|_| {
            let loaded = match snapshot {
                Some(path) if path.exists() => index.load_snapshot(path).ok() == Some(store.last_seq()),
                _ => false,
            };
            if !loaded {
                index.rebuild_locked(store)?;
            }
            store.add_hook(index.clone());
            Ok::<_, StoreError>(())
        })?;
        Ok(index)
    }

    pub fn set_row_cap(&self, cap: usize) {
        self.row_cap.store(cap, Ordering::Relaxed);
    }

    pub fn row_cap(&self) -> usize {
        self.row_cap.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.inner.read().spo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequence number of the last commit reflected in the index.
    pub fn seq(&self) -> u64 {
        self.inner.read().seq
    }

    pub fn index_object(&self, obj: &DigitalObject) {
        let mut inner = self.inner.write();
        inner.deindex(&obj.id);
        inner.index(obj);
    }

    pub fn deindex_object(&self, id: &ObjectId) {
        self.inner.write().deindex(id);
    }

    /// Replaces the index content with the triples of every live object.
    pub fn rebuild(&self, store: &ObjectStore) -> Result<(), StoreError> {
        store.transaction(|_| self.rebuild_locked(store))
    }

    fn rebuild_locked(&self, store: &ObjectStore) -> Result<(), StoreError> {
        let mut fresh = Inner::default();
        for id in store.live_ids() {
            fresh.index(&store.get_object(&id)?);
        }
        fresh.seq = store.last_seq();
        *self.inner.write() = fresh;
        Ok(())
    }

    /// Every indexed triple in sorted order.
    pub fn triples(&self) -> Vec<Triple> {
        let inner = self.inner.read();
        let mut out: Vec<Triple> = inner.spo.iter().map(|&k| inner.triple(k)).collect();
        out.sort_unstable();
        out
    }

    pub fn match_pattern(&self, p: &TriplePattern) -> Vec<Triple> {
        let inner = self.inner.read();
        let Some(bound) = bind_consts(&inner, p) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        inner.scan(bound[0], bound[1], bound[2], |s, pr, o| {
            let t = inner.triple((s, pr, o));
            if p.matches(&t) {
                out.push(t);
            }
            true
        });
        out.sort_unstable();
        out
    }

    /// Candidate count of a pattern taken on its own: the exact size of the
    /// range selected by its constant positions.
    pub fn estimate(&self, p: &TriplePattern) -> usize {
        let inner = self.inner.read();
        match bind_consts(&inner, p) {
            Some(b) => inner.count(b[0], b[1], b[2]),
            None => 0,
        }
    }

    /// Order in which `evaluate` joins the patterns: ascending estimate, ties
    /// by position, preferring patterns that share a variable with those
    /// already joined so no cross product is formed while a connected
    /// pattern remains.
    pub fn plan(&self, q: &ConjunctiveQuery) -> Vec<usize> {
        let estimates: Vec<usize> = q.patterns.iter().map(|p| self.estimate(p)).collect();
        let vars: Vec<Vec<&str>> = q.patterns.iter().map(|p| p.vars().collect()).collect();
        join_order(&estimates, &vars)
    }

    pub fn evaluate(&self, q: &ConjunctiveQuery) -> Result<Solutions, QueryError> {
        q.validate()?;
        let cap = self.row_cap();
        let inner = self.inner.read();
        let names = q.variables();
        let slot_of = |v: &str| names.iter().position(|n| n == v).expect("variable collected");

        let mut compiled = Vec::with_capacity(q.patterns.len());
        for p in &q.patterns {
            let mut slots = [Slot::Const(0); 3];
            for (i, pos) in p.positions().into_iter().enumerate() {
                slots[i] = match pos {
                    PatternTerm::Var(v) => Slot::Var(slot_of(v)),
                    PatternTerm::Const(t) => match inner.lookup(t) {
                        Some(id) => Slot::Const(id),
                        None => return Ok(Solutions::from_rows(q.projected.clone(), Vec::new())),
                    },
                };
            }
            let c = |s: Slot| match s {
                Slot::Const(id) => Some(id),
                Slot::Var(_) => None,
            };
            // A lone pattern needs no join order.
            let estimate = if q.patterns.len() == 1 {
                0
            } else {
                inner.count(c(slots[0]), c(slots[1]), c(slots[2]))
            };
            compiled.push(Compiled { slots, estimate });
        }
        let estimates: Vec<usize> = compiled.iter().map(|c| c.estimate).collect();
        let vars: Vec<Vec<&str>> = q.patterns.iter().map(|p| p.vars().collect()).collect();
        let order = join_order(&estimates, &vars);

        let width = names.len();
        let mut rows: Vec<u32> = vec![ANY; width];
        let mut count = 1usize;
        for &pi in &order {
            let slots = compiled[pi].slots;
            let mut next: Vec<u32> = Vec::new();
            let mut next_count = 0usize;
            let mut overflow = false;
            for r in 0..count {
                let row = &rows[r * width..(r + 1) * width];
                let resolve = |s: Slot| match s {
                    Slot::Const(id) => Some(id),
                    Slot::Var(v) if row[v] != ANY => Some(row[v]),
                    Slot::Var(_) => None,
                };
                let bound = [resolve(slots[0]), resolve(slots[1]), resolve(slots[2])];
                inner.scan(bound[0], bound[1], bound[2], |s, p, o| {
                    let start = next.len();
                    next.extend_from_slice(row);
                    for (slot, value) in slots.iter().zip([s, p, o]) {
                        if let Slot::Var(v) = *slot {
                            let cell = &mut next[start + v];
                            if *cell == ANY {
                                *cell = value;
                            } else if *cell != value {
                                next.truncate(start);
                                return true;
                            }
                        }
                    }
                    next_count += 1;
                    if next_count > cap {
                        overflow = true;
                        return false;
                    }
                    true
                });
                if overflow {
                    return Err(QueryError::QueryTooLarge { cap });
                }
            }
            rows = next;
            count = next_count;
            if count == 0 {
                break;
            }
        }

        let proj: Vec<usize> = q.projected.iter().map(|v| slot_of(v)).collect();
        let mut ids: Vec<Vec<u32>> = (0..count)
            .map(|r| proj.iter().map(|&v| rows[r * width + v]).collect())
            .collect();
        let terms = &inner.terms;
        ids.sort_unstable_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| terms[*x as usize].cmp(&terms[*y as usize]))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        ids.dedup();
        let out = ids
            .into_iter()
            .map(|r| r.into_iter().map(|id| terms[id as usize].clone()).collect())
            .collect();
        Ok(Solutions::from_sorted_rows(q.projected.clone(), out))
    }

    /// Writes a snapshot tagged with the index's sequence number.
    pub fn save_snapshot(&self, path: &Path) -> io::Result<()> {
        let snap = {
            let inner = self.inner.read();
            let mut remap: HashMap<u32, u32> = HashMap::new();
            let mut terms = Vec::new();
            let mut map = |id: u32| {
                *remap.entry(id).or_insert_with(|| {
                    terms.push(inner.terms[id as usize].clone());
                    (terms.len() - 1) as u32
                })
            };
            let triples: Vec<[u32; 3]> = inner.spo.iter().map(|&(s, p, o)| [map(s), map(p), map(o)]).collect();
            Snapshot {
                seq: inner.seq,
                terms,
                triples,
            }
        };
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, &snap)?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        std::fs::rename(&tmp, path)
    }

    /// Replaces the index content with a snapshot and returns its sequence
    /// number.
    pub fn load_snapshot(&self, path: &Path) -> io::Result<u64> {
        let snap: Snapshot = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut fresh = Inner::default();
        for t in snap.terms {
            let before = fresh.terms.len();
            if fresh.intern(t) as usize != before {
                return Err(bad("duplicate term in snapshot"));
            }
        }
        let n = fresh.terms.len() as u32;
        for [s, p, o] in snap.triples {
            if s >= n || p >= n || o >= n {
                return Err(bad("term id out of range"));
            }
            if !fresh.terms[s as usize].is_iri() || !fresh.terms[p as usize].is_iri() {
                return Err(bad("literal in subject or predicate position"));
            }
            fresh.insert_ids(s, p, o);
        }
        fresh.seq = snap.seq;
        *self.inner.write() = fresh;
        Ok(snap.seq)
    }
}

fn bind_consts(inner: &Inner, p: &TriplePattern) -> Option<[Option<u32>; 3]> {
    let mut out = [None; 3];
    for (i, pos) in p.positions().into_iter().enumerate() {
        if let PatternTerm::Const(t) = pos {
            out[i] = Some(inner.lookup(t)?);
        }
    }
    Some(out)
}

fn join_order(estimates: &[usize], vars: &[Vec<&str>]) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::with_capacity(estimates.len());
    let mut bound: Vec<&str> = Vec::new();
    let mut remaining: Vec<usize> = (0..estimates.len()).collect();
    while !remaining.is_empty() {
        let connected = |i: &usize| vars[*i].iter().any(|v| bound.contains(v));
        let pick = remaining
            .iter()
            .copied()
            .filter(|i| order.is_empty() || connected(i))
            .min_by_key(|&i| (estimates[i], i))
            .or_else(|| remaining.iter().copied().min_by_key(|&i| (estimates[i], i)))
            .expect("remaining is non-empty");
        remaining.retain(|&i| i != pick);
        bound.extend(vars[pick].iter().copied());
        order.push(pick);
    }
    order
}

impl CommitHook for TripleIndex {
    fn on_commit(&self, changes: &[CommittedChange]) {
        let mut inner = self.inner.write();
        for c in changes {
            inner.deindex(&c.after.id);
            if c.after.is_active() {
                inner.index(&c.after);
            }
            inner.seq = inner.seq.max(c.after.seq);
        }
    }
}
