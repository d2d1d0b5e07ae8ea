//! Append-only intent journal.
//!
//! Each frame is `len: u32 LE | crc32: u32 LE | payload`, where the payload is
//! a JSON-encoded [`JournalRecord`]. A torn or corrupt frame ends the readable
//! journal; everything after it is discarded on recovery.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ChangeEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum JournalRecord {
    /// Everything needed to redo a commit: the object files to write
    /// (relative path, full bytes) and the events to append.
    Intent {
        txid: u64,
        files: Vec<(String, String)>,
        events: Vec<ChangeEvent>,
    },
    Commit {
        txid: u64,
    },
}

pub struct Journal {
    file: File,
    len: u64,
}

const HEADER: usize = 8;

pub fn encode_frame(record: &JournalRecord) -> Vec<u8> {
    let payload = serde_json::to_vec(record).expect("journal records serialize");
    let mut frame = Vec::with_capacity(HEADER + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    frame.extend_from_slice(&payload);
    frame
}

impl Journal {
    /// Opens the journal and returns every intact record. A torn tail is
    /// truncated away.
    pub fn open(path: &Path) -> io::Result<(Journal, Vec<JournalRecord>)> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;

        let mut records = Vec::new();
        let mut pos = 0usize;
        while pos + HEADER <= buf.len() {
            let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
            let crc = u32::from_le_bytes(buf[pos + 4..pos + 8].try_into().unwrap());
            let end = pos + HEADER + len;
            if end > buf.len() {
                break;
            }
            let payload = &buf[pos + HEADER..end];
            if crc32fast::hash(payload) != crc {
                break;
            }
            match serde_json::from_slice(payload) {
                Ok(r) => records.push(r),
                Err(_) => break,
            }
            pos = end;
        }
        if pos < buf.len() {
            file.set_len(pos as u64)?;
        }
        file.seek(SeekFrom::Start(pos as u64))?;
        Ok((Journal { file, len: pos as u64 }, records))
    }

    pub fn append(&mut self, record: &JournalRecord, sync: bool) -> io::Result<()> {
        self.append_raw(&encode_frame(record), sync)
    }

    pub(crate) fn append_raw(&mut self, bytes: &[u8], sync: bool) -> io::Result<()> {
        self.file.write_all(bytes)?;
        self.len += bytes.len() as u64;
        if sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Drops all records. Only valid once every intent has been applied and
    /// made durable.
    pub fn truncate(&mut self, sync: bool) -> io::Result<()> {
        self.file.set_len(0)?;
        self.file.seek(SeekFrom::Start(0))?;
        self.len = 0;
        if sync {
            self.file.sync_all()?;
        }
        Ok(())
    }
}
