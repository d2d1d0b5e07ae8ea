//! Durable digital-object storage.
//!
//! Every object lives in its own canonical XML file at a sharded path. All
//! mutations go through [`ObjectStore::transaction`], which stages changes,
//! assigns gap-free sequence numbers and commits through the intent journal:
//!
//! 1. the intent record (full object bytes plus events) is appended and synced;
//! 2. object files are written (temp file + rename);
//! 3. events are appended to `events.log` and become visible in memory;
//! 4. a commit marker is appended.
//!
//! Recovery replays any intent that lacks a commit marker; torn intents are
//! discarded. Only one process may open a data directory.

mod journal;
mod model;
mod xml;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fs2::FileExt;
use parking_lot::{Mutex, RwLock};
use sha2::{Digest, Sha256};

use crate::clock::{Clock, Timestamp};

pub use journal::{Journal, JournalRecord};
pub use model::{
    valid_ds_id, valid_surrogate_url, valid_type_name, ChangeEvent, ChangeKind, Datastream, DatastreamContent,
    DigitalObject, InvalidObjectId, Mutation, ObjectDraft, ObjectId, ObjectState,
};
pub use xml::{deserialize_object, serialize_object, ParseError};

pub use xml::{escape_attr, escape_text};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("object {0} already exists")]
    DuplicateId(ObjectId),
    #[error("invalid object: {field}: {reason}")]
    InvalidObject { field: String, reason: String },
    #[error("object {0} not found")]
    NotFound(ObjectId),
    #[error("sequence {requested} is beyond the last committed sequence {max}")]
    SeqOutOfRange { requested: u64, max: u64 },
    #[error("stored object is unreadable: {0}")]
    Parse(#[from] ParseError),
    #[error("data directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("injected fault at {0:?}")]
    InjectedFault(FaultPoint),
    #[error("store is unusable after an interrupted commit; reopen it")]
    Poisoned,
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// Points in the commit path where a simulated crash can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Only part of the intent frame reaches the journal.
    TornIntent,
    AfterIntent,
    /// After this many object files have been written.
    AfterObjectWrites(usize),
    AfterEvents,
    BeforeCommitMarker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Durability {
    /// fsync the journal on every commit.
    #[default]
    Sync,
    /// Leave flushing to the OS. For tests and bulk loads that can be redone.
    NoSync,
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub durability: Durability,
    /// Journal size that triggers a checkpoint (journal truncation).
    pub checkpoint_bytes: u64,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            durability: Durability::Sync,
            checkpoint_bytes: 64 << 20,
        }
    }
}

/// Before/after images of one object in a committed transaction. `after` is a
/// tombstone when the object was purged.
#[derive(Debug, Clone)]
pub struct CommittedChange {
    pub before: Option<DigitalObject>,
    pub after: DigitalObject,
}

/// Observer invoked inside the commit's atomicity domain, after the object
/// files are written and before the commit becomes visible to readers.
pub trait CommitHook: Send + Sync {
    fn on_commit(&self, changes: &[CommittedChange]);
}

/// Relative path of an object's file: `objects/<h0h1>/<h2h3>/<local-id>.xml`
/// where `h` is the lowercase hex SHA-256 of the full IRI.
pub fn shard_path(id: &ObjectId) -> String {
    let digest = hex::encode(Sha256::digest(id.as_str().as_bytes()));
    format!("objects/{}/{}/{}.xml", &digest[0..2], &digest[2..4], id.local())
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    seq: u64,
    live: bool,
}

#[derive(Default)]
struct State {
    entries: HashMap<ObjectId, Entry>,
    events: Vec<ChangeEvent>,
    live: usize,
}

struct Writer {
    journal: Journal,
    events_file: File,
    poisoned: bool,
    fault: Option<FaultPoint>,
    dirty: Vec<PathBuf>,
}

pub struct ObjectStore {
    root: PathBuf,
    options: StoreOptions,
    clock: Arc<dyn Clock>,
    _lock: File,
    writer: Mutex<Writer>,
    state: RwLock<State>,
    hooks: RwLock<Vec<Arc<dyn CommitHook>>>,
}

impl std::fmt::Debug for ObjectStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectStore").field("root", &self.root).finish_non_exhaustive()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.is_dir() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("xml.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn event_line(e: &ChangeEvent) -> String {
    format!("{} {} {} {}\n", e.seq, e.kind.as_str(), e.object_id, e.timestamp.to_iso())
}

fn parse_event_line(line: &str) -> Option<ChangeEvent> {
    let mut parts = line.split(' ');
    let seq = parts.next()?.parse().ok()?;
    let kind = ChangeKind::parse(parts.next()?)?;
    let object_id = ObjectId::parse(parts.next()?).ok()?;
    let timestamp = Timestamp::parse_iso(parts.next()?).ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(ChangeEvent {
        seq,
        kind,
        object_id,
        timestamp,
    })
}

/// Reads `events.log`, truncating a torn final line.
fn load_events(path: &Path) -> Result<Vec<ChangeEvent>, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut events = Vec::new();
    let mut pos = 0usize;
    let mut good_end = 0usize;
    while pos < bytes.len() {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            break;
        };
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).ok();
        let ev = line.and_then(parse_event_line);
        let next = pos + nl + 1;
        match ev {
            Some(ev) if ev.seq == events.len() as u64 + 1 => events.push(ev),
            _ if next == bytes.len() => break,
            _ => {
                return Err(StoreError::Corrupt(format!(
                    "events.log: bad record at byte {pos} (expected seq {})",
                    events.len() + 1
                )))
            }
        }
        pos = next;
        good_end = pos;
    }
    if good_end < bytes.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(good_end as u64)?;
    }
    Ok(events)
}

impl ObjectStore {
    pub fn open(root: impl AsRef<Path>, options: StoreOptions, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("objects"))?;
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(root.join("LOCK"))?;
        if lock.try_lock_exclusive().is_err() {
            return Err(StoreError::Locked(root));
        }

        let events_path = root.join("events.log");
        let mut events = load_events(&events_path)?;
        let mut events_file = OpenOptions::new().create(true).append(true).open(&events_path)?;
        let sync = options.durability == Durability::Sync;

        let (mut journal, records) = Journal::open(&root.join("journal.log"))?;
        let committed: std::collections::HashSet<u64> = records
            .iter()
            .filter_map(|r| match r {
                JournalRecord::Commit { txid } => Some(*txid),
                _ => None,
            })
            .collect();
        for record in &records {
            let JournalRecord::Intent { txid, files, events: evs } = record else {
                continue;
            };
            if committed.contains(txid) {
                continue;
            }
            for (rel, body) in files {
                write_atomic(&root.join(rel), body.as_bytes())?;
            }
            let mut lines = String::new();
            for e in evs {
                let last = events.len() as u64;
                if e.seq <= last {
                    continue;
                }
                if e.seq != last + 1 {
                    return Err(StoreError::Corrupt(format!(
                        "journal intent {txid} has event {} after {last}",
                        e.seq
                    )));
                }
                lines.push_str(&event_line(e));
                events.push(e.clone());
            }
            events_file.write_all(lines.as_bytes())?;
            journal.append(&JournalRecord::Commit { txid: *txid }, false)?;
        }
        if !journal.is_empty() {
            events_file.sync_all()?;
            journal.truncate(sync)?;
        }

        let mut state = State::default();
        for e in &events {
            let live = e.kind != ChangeKind::Purged;
            let prev = state.entries.insert(e.object_id.clone(), Entry { seq: e.seq, live });
            match (prev.map(|p| p.live).unwrap_or(false), live) {
                (false, true) => state.live += 1,
                (true, false) => state.live -= 1,
                _ => {}
            }
        }
        state.events = events;
        if let Some(last) = state.events.last() {
            clock.not_before(last.timestamp.plus_secs(1));
        }

        Ok(ObjectStore {
            root,
            options,
            clock,
            _lock: lock,
            writer: Mutex::new(Writer {
                journal,
                events_file,
                poisoned: false,
                fault: None,
                dirty: Vec::new(),
            }),
            state: RwLock::new(state),
            hooks: RwLock::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn add_hook(&self, hook: Arc<dyn CommitHook>) {
        self.hooks.write().push(hook);
    }

    /// Arms a simulated crash for the next commit that reaches `point`.
    pub fn inject_fault(&self, point: FaultPoint) {
        self.writer.lock().fault = Some(point);
    }

    pub fn last_seq(&self) -> u64 {
        self.state.read().events.len() as u64
    }

    pub fn live_count(&self) -> usize {
        self.state.read().live
    }

    /// Number of ids ever created, tombstones included.
    pub fn id_count(&self) -> usize {
        self.state.read().entries.len()
    }

    pub fn is_live(&self, id: &ObjectId) -> bool {
        self.state.read().entries.get(id).is_some_and(|e| e.live)
    }

    /// Ids of live objects in sorted order.
    pub fn live_ids(&self) -> Vec<ObjectId> {
        let st = self.state.read();
        let mut ids: Vec<ObjectId> = st.entries.iter().filter(|(_, e)| e.live).map(|(k, _)| k.clone()).collect();
        ids.sort();
        ids
    }

    /// Ids of purged objects in sorted order.
    pub fn tombstone_ids(&self) -> Vec<ObjectId> {
        let st = self.state.read();
        let mut ids: Vec<ObjectId> = st.entries.iter().filter(|(_, e)| !e.live).map(|(k, _)| k.clone()).collect();
        ids.sort();
        ids
    }

    fn read_file(&self, id: &ObjectId, seq: u64) -> Result<DigitalObject, StoreError> {
        let bytes = fs::read(self.root.join(shard_path(id)))?;
        let mut obj = deserialize_object(&bytes)?;
        obj.seq = seq;
        Ok(obj)
    }

    /// Latest committed version of a live object.
    pub fn get_object(&self, id: &ObjectId) -> Result<DigitalObject, StoreError> {
        let st = self.state.read();
        match st.entries.get(id) {
            Some(e) if e.live => self.read_file(id, e.seq),
            _ => Err(StoreError::NotFound(id.clone())),
        }
    }

    /// Like [`get_object`](Self::get_object) but also returns tombstones.
    pub fn get_any(&self, id: &ObjectId) -> Result<DigitalObject, StoreError> {
        let st = self.state.read();
        match st.entries.get(id) {
            Some(e) => self.read_file(id, e.seq),
            None => Err(StoreError::NotFound(id.clone())),
        }
    }

    /// Raw bytes of the object file, tombstones included.
    pub fn object_file_bytes(&self, id: &ObjectId) -> Result<Vec<u8>, StoreError> {
        let st = self.state.read();
        if !st.entries.contains_key(id) {
            return Err(StoreError::NotFound(id.clone()));
        }
        Ok(fs::read(self.root.join(shard_path(id)))?)
    }

    /// All events with `seq > after`, in order.
    pub fn changes_since(&self, after: u64) -> Result<Vec<ChangeEvent>, StoreError> {
        let st = self.state.read();
        let max = st.events.len() as u64;
        if after > max {
            return Err(StoreError::SeqOutOfRange { requested: after, max });
        }
        Ok(st.events[after as usize..].to_vec())
    }

    pub fn create_object(&self, draft: ObjectDraft) -> Result<DigitalObject, StoreError> {
        let id = self.transaction(|tx| tx.create(draft))?;
        self.get_object(&id)
    }

    pub fn modify_object(&self, id: &ObjectId, mutation: Mutation) -> Result<DigitalObject, StoreError> {
        self.transaction(|tx| tx.modify(id, mutation))?;
        self.get_object(id)
    }

    pub fn purge_object(&self, id: &ObjectId) -> Result<(), StoreError> {
        self.transaction(|tx| tx.purge(id))
    }

    /// Runs `f` as one atomic composition under the single-writer lock. If `f`
    /// returns an error nothing is written.
    pub fn transaction<T, E>(&self, f: impl FnOnce(&mut Transaction<'_>) -> Result<T, E>) -> Result<T, E>
    where
        E: From<StoreError>,
    {
        let mut writer = self.writer.lock();
        if writer.poisoned {
            return Err(StoreError::Poisoned.into());
        }
        let mut tx = Transaction {
            store: self,
            now: None,
            order: Vec::new(),
            staged: HashMap::new(),
        };
        let out = f(&mut tx)?;
        self.commit(&mut writer, tx)?;
        Ok(out)
    }

    fn trip(&self, writer: &mut Writer, point: FaultPoint) -> Result<(), StoreError> {
        if writer.fault == Some(point) {
            writer.fault = None;
            writer.poisoned = true;
            return Err(StoreError::InjectedFault(point));
        }
        Ok(())
    }

    fn commit(&self, writer: &mut Writer, tx: Transaction<'_>) -> Result<(), StoreError> {
        if tx.order.is_empty() {
            return Ok(());
        }
        let now = tx.now.expect("staged changes imply a timestamp");
        let Transaction { order, mut staged, .. } = tx;
        let first_seq = self.last_seq() + 1;
        let mut events = Vec::new();
        for id in &order {
            let s = &staged[id];
            let mut push = |kind| {
                events.push(ChangeEvent {
                    seq: first_seq + events.len() as u64,
                    kind,
                    object_id: id.clone(),
                    timestamp: now,
                })
            };
            match (s.created, s.purged) {
                (true, true) => {
                    push(ChangeKind::Created);
                    push(ChangeKind::Purged);
                }
                (true, false) => push(ChangeKind::Created),
                (false, true) => push(ChangeKind::Purged),
                (false, false) => push(ChangeKind::Modified),
            }
            let last = events.last().expect("just pushed").seq;
            staged.get_mut(id).expect("staged").after.seq = last;
        }

        let files: Vec<(String, String)> = order
            .iter()
            .map(|id| {
                let body = serialize_object(&staged[id].after);
                (shard_path(id), String::from_utf8(body).expect("serializer emits UTF-8"))
            })
            .collect();
        let record = JournalRecord::Intent {
            txid: first_seq,
            files,
            events,
        };
        let sync = self.options.durability == Durability::Sync;

        if writer.fault == Some(FaultPoint::TornIntent) {
            let frame = journal::encode_frame(&record);
            writer.journal.append_raw(&frame[..frame.len() / 2], sync)?;
            self.trip(writer, FaultPoint::TornIntent)?;
        }
        writer.journal.append(&record, sync)?;
        self.trip(writer, FaultPoint::AfterIntent)?;
        let JournalRecord::Intent { files, events, .. } = record else {
            unreachable!()
        };

        {
            let mut st = self.state.write();
            for (i, (rel, body)) in files.iter().enumerate() {
                let path = self.root.join(rel);
                write_atomic(&path, body.as_bytes())?;
                if sync {
                    writer.dirty.push(path);
                }
                self.trip(writer, FaultPoint::AfterObjectWrites(i + 1))?;
            }
            let lines: String = events.iter().map(event_line).collect();
            writer.events_file.write_all(lines.as_bytes())?;
            self.trip(writer, FaultPoint::AfterEvents)?;

            for e in &events {
                let live = e.kind != ChangeKind::Purged;
                let prev = st.entries.insert(e.object_id.clone(), Entry { seq: e.seq, live });
                match (prev.map(|p| p.live).unwrap_or(false), live) {
                    (false, true) => st.live += 1,
                    (true, false) => st.live -= 1,
                    _ => {}
                }
            }
            st.events.extend(events);

            let changes: Vec<CommittedChange> = order
                .iter()
                .map(|id| {
                    let s = staged.remove(id).expect("staged");
                    CommittedChange {
                        before: s.before,
                        after: s.after,
                    }
                })
                .collect();
            for hook in self.hooks.read().iter() {
                hook.on_commit(&changes);
            }
        }

        self.trip(writer, FaultPoint::BeforeCommitMarker)?;
        writer.journal.append(&JournalRecord::Commit { txid: first_seq }, false)?;
        if writer.journal.len() > self.options.checkpoint_bytes {
            self.checkpoint_locked(writer)?;
        }
        Ok(())
    }

    fn checkpoint_locked(&self, writer: &mut Writer) -> Result<(), StoreError> {
        let sync = self.options.durability == Durability::Sync;
        if sync {
            writer.dirty.sort();
            writer.dirty.dedup();
            for path in writer.dirty.drain(..) {
                if let Ok(f) = File::open(&path) {
                    f.sync_all()?;
                }
            }
            writer.events_file.sync_all()?;
        }
        writer.journal.truncate(sync)?;
        Ok(())
    }

    /// Makes every committed change durable and empties the journal.
    pub fn checkpoint(&self) -> Result<(), StoreError> {
        let mut writer = self.writer.lock();
        if writer.poisoned {
            return Err(StoreError::Poisoned);
        }
        self.checkpoint_locked(&mut writer)
    }
}

struct Staged {
    before: Option<DigitalObject>,
    after: DigitalObject,
    created: bool,
    purged: bool,
}

/// Staged changes of one atomic composition. Reads see the staged state.
pub struct Transaction<'s> {
    store: &'s ObjectStore,
    now: Option<Timestamp>,
    order: Vec<ObjectId>,
    staged: HashMap<ObjectId, Staged>,
}

impl<'s> Transaction<'s> {
    pub fn store(&self) -> &'s ObjectStore {
        self.store
    }

    /// Commit timestamp shared by every change in this transaction.
    pub fn now(&mut self) -> Timestamp {
        *self.now.get_or_insert_with(|| self.store.clock.now())
    }

    fn exists_any(&self, id: &ObjectId) -> bool {
        self.staged.contains_key(id) || self.store.state.read().entries.contains_key(id)
    }

    pub fn is_live(&self, id: &ObjectId) -> bool {
        match self.staged.get(id) {
            Some(s) => !s.purged,
            None => self.store.is_live(id),
        }
    }

    pub fn get(&self, id: &ObjectId) -> Result<DigitalObject, StoreError> {
        match self.staged.get(id) {
            Some(s) if s.purged => Err(StoreError::NotFound(id.clone())),
            Some(s) => Ok(s.after.clone()),
            None => self.store.get_object(id),
        }
    }

    /// Ids touched so far, in first-touch order.
    pub fn touched(&self) -> &[ObjectId] {
        &self.order
    }

    /// Committed (pre-transaction) version of an object touched here, if it was live.
    pub fn before(&self, id: &ObjectId) -> Option<&DigitalObject> {
        self.staged.get(id).and_then(|s| s.before.as_ref())
    }

    /// A fresh id `info:ino/<prefix><n>` not used by any object, tombstones included.
    pub fn mint_id(&self, prefix: &str) -> ObjectId {
        let mut n = self.store.id_count() + self.staged.len() + 1;
        loop {
            let id = ObjectId::from_local(&format!("{prefix}{n}")).expect("minted ids are valid");
            if !self.exists_any(&id) {
                return id;
            }
            n += 1;
        }
    }

    pub fn create(&mut self, draft: ObjectDraft) -> Result<ObjectId, StoreError> {
        let id = match draft.id {
            Some(id) => id,
            None => self.mint_id("o"),
        };
        if self.exists_any(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        let now = self.now();
        let obj = DigitalObject {
            id: id.clone(),
            types: draft.types,
            state: ObjectState::Active,
            created: now,
            modified: now,
            datastreams: draft.datastreams,
            relationships: draft.relationships,
            seq: 0,
        };
        obj.validate()?;
        self.order.push(id.clone());
        self.staged.insert(
            id.clone(),
            Staged {
                before: None,
                after: obj,
                created: true,
                purged: false,
            },
        );
        Ok(id)
    }

    pub fn modify(&mut self, id: &ObjectId, mutation: Mutation) -> Result<(), StoreError> {
        let mut obj = self.get(id)?;
        if let Some(types) = mutation.types {
            obj.types = types;
        }
        if let Some(ds) = mutation.datastreams {
            obj.datastreams = ds;
        }
        if let Some(rels) = mutation.relationships {
            obj.relationships = rels;
        }
        let now = self.now();
        obj.modified = now.max(obj.created);
        obj.validate()?;
        self.put(obj, false);
        Ok(())
    }

    /// Replaces the staged image of an existing live object.
    fn put(&mut self, obj: DigitalObject, purged: bool) {
        let id = obj.id.clone();
        match self.staged.get_mut(&id) {
            Some(s) => {
                s.after = obj;
                s.purged = purged;
            }
            None => {
                let before = self.store.get_object(&id).ok();
                self.order.push(id.clone());
                self.staged.insert(
                    id,
                    Staged {
                        before,
                        after: obj,
                        created: false,
                        purged,
                    },
                );
            }
        }
    }

    pub fn purge(&mut self, id: &ObjectId) -> Result<(), StoreError> {
        let obj = self.get(id)?;
        let now = self.now();
        let tomb = obj.tombstone(now);
        self.put(tomb, true);
        Ok(())
    }
}
