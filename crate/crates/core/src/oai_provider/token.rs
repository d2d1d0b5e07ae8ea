use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64;
use base64::Engine as _;
use sha2::{Digest, Sha256};

use crate::clock::Timestamp;

pub const TOKEN_TTL_SECS: i64 = 3600;

/// Decoded resumption token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResumptionToken {
    pub query_key: String,
    pub offset: usize,
    pub epoch: u64,
    pub expiry: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad resumption token: {0}")]
pub struct BadResumptionToken(pub String);

/// Hash naming one list request: verb, format, set and the date bounds.
pub fn query_key(verb: &str, format: &str, set: Option<&str>, from: Option<&str>, until: Option<&str>) -> String {
    let mut h = Sha256::new();
    for part in [Some(verb), Some(format), set, from, until] {
        match part {
            Some(p) => {
                h.update([1]);
                h.update((p.len() as u32).to_le_bytes());
                h.update(p.as_bytes());
            }
            None => h.update([0]),
        }
    }
    hex::encode(&h.finalize()[..12])
}

impl ResumptionToken {
    pub fn encode(&self) -> String {
        B64.encode(format!("v1|{}|{}|{}|{}", self.query_key, self.offset, self.epoch, self.expiry.unix()))
    }

    /// Parses a token and checks it against the current epoch and time.
    pub fn decode(s: &str, epoch: u64, now: Timestamp) -> Result<Self, BadResumptionToken> {
        let bad = |m: &str| BadResumptionToken(m.to_string());
        let raw = B64.decode(s.trim()).map_err(|_| bad("not base64"))?;
        let text = String::from_utf8(raw).map_err(|_| bad("not UTF-8"))?;
        let parts: Vec<&str> = text.split('|').collect();
        let [version, key, offset, tok_epoch, expiry] = parts.as_slice() else {
            return Err(bad("wrong field count"));
        };
        if *version != "v1" {
            return Err(bad("unknown version"));
        }
        if key.len() != 24 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad("malformed query key"));
        }
        let token = ResumptionToken {
            query_key: key.to_string(),
            offset: offset.parse().map_err(|_| bad("malformed offset"))?,
            epoch: tok_epoch.parse().map_err(|_| bad("malformed epoch"))?,
            expiry: Timestamp(expiry.parse().map_err(|_| bad("malformed expiry"))?),
        };
        if token.epoch != epoch {
            return Err(bad("issued before the cache was rebuilt"));
        }
        if token.expiry < now {
            return Err(bad("expired"));
        }
        Ok(token)
    }
}
