//! UTC timestamps at seconds granularity and injectable clocks.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

/// Seconds since the Unix epoch, always UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

/// 2006-01-01T00:00:00Z, where virtual clocks start by default.
pub const DEFAULT_EPOCH: Timestamp = Timestamp(1_136_073_600);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid timestamp `{0}`")]
pub struct TimestampError(pub String);

impl Timestamp {
    pub fn from_unix(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub fn unix(self) -> i64 {
        self.0
    }

    pub fn plus_secs(self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }

    /// Parses `YYYY-MM-DDThh:mm:ssZ`.
    pub fn parse_iso(s: &str) -> Result<Self, TimestampError> {
        let naive = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%SZ")
            .map_err(|_| TimestampError(s.to_string()))?;
        // The chrono parser is lenient about zero padding; canonical form only.
        let ts = Timestamp(naive.and_utc().timestamp());
        if ts.to_iso() != s {
            return Err(TimestampError(s.to_string()));
        }
        Ok(ts)
    }

    /// Parses a day-granularity `YYYY-MM-DD` date as its first second.
    pub fn parse_day(s: &str) -> Result<Self, TimestampError> {
        let date =
            NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| TimestampError(s.to_string()))?;
        if date.format("%Y-%m-%d").to_string() != s {
            return Err(TimestampError(s.to_string()));
        }
        let start = date.and_hms_opt(0, 0, 0).expect("midnight is valid");
        Ok(Timestamp(start.and_utc().timestamp()))
    }

    pub fn to_iso(self) -> String {
        match DateTime::<Utc>::from_timestamp(self.0, 0) {
            Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            None => format!("@{}", self.0),
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

impl FromStr for Timestamp {
    type Err = TimestampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timestamp::parse_iso(s)
    }
}

/// Source of commit timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;

    /// Guarantees later `now()` calls return at least `ts`. Used after reopening
    /// a repository so timestamps never run backwards across restarts.
    fn not_before(&self, _ts: Timestamp) {}
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp(Utc::now().timestamp())
    }
}

/// Deterministic clock: every `now()` returns the current value and then
/// advances by `step` seconds.
#[derive(Debug)]
pub struct VirtualClock {
    next: AtomicI64,
    step: i64,
}

impl VirtualClock {
    pub fn new(start: Timestamp, step: i64) -> Self {
        VirtualClock {
            next: AtomicI64::new(start.0),
            step,
        }
    }

    /// Peek at the value the next `now()` will return.
    pub fn peek(&self) -> Timestamp {
        Timestamp(self.next.load(Ordering::SeqCst))
    }

    pub fn advance(&self, secs: i64) {
        self.next.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        VirtualClock::new(DEFAULT_EPOCH, 1)
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.next.fetch_add(self.step, Ordering::SeqCst))
    }

    fn not_before(&self, ts: Timestamp) {
        self.next.fetch_max(ts.0, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_roundtrip() {
        let ts = Timestamp::parse_iso("2006-01-01T00:00:00Z").unwrap();
        assert_eq!(ts, DEFAULT_EPOCH);
        assert_eq!(ts.to_iso(), "2006-01-01T00:00:00Z");
        assert!(Timestamp::parse_iso("2006-1-01T00:00:00Z").is_err());
        assert!(Timestamp::parse_iso("2006-01-01T00:00:00").is_err());
        assert_eq!(Timestamp::parse_day("2006-01-02").unwrap(), DEFAULT_EPOCH.plus_secs(86_400));
    }

    #[test]
    fn virtual_clock_ticks_and_floors() {
        let c = VirtualClock::default();
        assert_eq!(c.now(), DEFAULT_EPOCH);
        assert_eq!(c.now(), DEFAULT_EPOCH.plus_secs(1));
        c.not_before(DEFAULT_EPOCH.plus_secs(100));
        assert_eq!(c.now(), DEFAULT_EPOCH.plus_secs(100));
        c.not_before(DEFAULT_EPOCH);
        assert_eq!(c.now(), DEFAULT_EPOCH.plus_secs(101));
    }
}
