// SPDX-License-Identifier: Apache-2.0

//! Finding certifiable subtrees.
//!
//! Active discovery runs on the platform against data published by the SCA.
//! Passive discovery runs on the SCA against an SML subtree the platform
//! submits.

mod active;
mod passive;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::cert::Policy;
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{Digest, HashAlg};

pub use active::{active_discover, bottom_up_candidates, precedes, Candidate, DEFAULT_MAX_GAPS};
pub use passive::{
    certifiable_roots, combined_update_set, passive_certify_lazy, passive_discover, PassiveRequest,
    PassiveResponse,
};

/// What the SCA publishes for active discovery.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DiscoveryData {
    pub values: BTreeSet<Digest>,
    /// `(target, required predecessor)`.
    pub conditions: Vec<(Digest, Digest)>,
    pub leaves: BTreeSet<Digest>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("discovery data line {line}: {message}")]
pub struct DiscoveryParseError {
    pub line: usize,
    pub message: String,
}

const MAGIC: &str = "TREEDD 1";

impl DiscoveryData {
    pub fn from_policy(policy: &Policy) -> Self {
        let mut dd = DiscoveryData::default();
        for (v, e) in policy.entries() {
            if e.leaf {
                dd.leaves.insert(v.clone());
            } else {
                dd.values.insert(v.clone());
                for r in &e.requires {
                    dd.conditions.push((v.clone(), r.clone()));
                }
            }
        }
        dd
    }

    /// Conditions must target certifiable values, and a value may not be
    /// both a node value and a leaf value.
    pub fn check(&self) -> Result<(), String> {
        if let Some((t, _)) = self
            .conditions
            .iter()
            .find(|(t, _)| !self.values.contains(t))
        {
            return Err(format!(
                "condition on {t}, which is not a certifiable value"
            ));
        }
        if let Some(v) = self.values.intersection(&self.leaves).next() {
            return Err(format!("{v} listed as both value and leaf"));
        }
        Ok(())
    }

    pub fn required_for(&self, target: &Digest) -> impl Iterator<Item = &Digest> {
        let target = target.clone();
        self.conditions
            .iter()
            .filter(move |(t, _)| *t == target)
            .map(|(_, r)| r)
    }

    pub fn to_text(&self, alg: HashAlg) -> String {
        let mut out = format!("{MAGIC}\nhash {}\n", alg.name());
        for v in &self.values {
            out.push_str(&format!("value {v}\n"));
        }
        for v in &self.leaves {
            out.push_str(&format!("leaf {v}\n"));
        }
        for (t, r) in &self.conditions {
            out.push_str(&format!("cond {t} {r}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<(HashAlg, Self), DiscoveryParseError> {
        let err = |line: usize, message: String| DiscoveryParseError { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(err(1, format!("expected {MAGIC:?}"))),
        }
        let alg = match lines.next() {
            Some((n, l)) => l
                .strip_prefix("hash ")
                .and_then(HashAlg::from_name)
                .ok_or_else(|| err(n, "expected `hash <alg>`".into()))?,
            None => return Err(err(2, "missing hash line".into())),
        };
        let mut dd = DiscoveryData::default();
        for (n, l) in lines {
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = l.split_whitespace().collect();
            let digest = |s: &str| -> Result<Digest, DiscoveryParseError> {
                let d = Digest::from_hex(s).map_err(|e| err(n, e.to_string()))?;
                alg.check(&d).map_err(|e| err(n, e.to_string()))?;
                if d.is_nil() {
                    return Err(err(n, "nil entry".into()));
                }
                Ok(d)
            };
            match f.as_slice() {
                ["value", v] => {
                    dd.values.insert(digest(v)?);
                }
                ["leaf", v] => {
                    dd.leaves.insert(digest(v)?);
                }
                ["cond", t, r] => dd.conditions.push((digest(t)?, digest(r)?)),
                _ => return Err(err(n, format!("unrecognised entry {l:?}"))),
            }
        }
        dd.check().map_err(|m| err(0, m))?;
        Ok((alg, dd))
    }
}

impl Canonical for DiscoveryData {
    fn encode(&self, enc: &mut Encoder) {
        let values: Vec<&Digest> = self.values.iter().collect();
        let leaves: Vec<&Digest> = self.leaves.iter().collect();
        enc.seq(&values, |e, d| {
            e.digest(d);
        })
        .seq(&self.conditions, |e, (t, r)| {
            e.digest(t).digest(r);
        })
        .seq(&leaves, |e, d| {
            e.digest(d);
        });
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(DiscoveryData {
            values: dec.seq(|d| d.digest())?.into_iter().collect(),
            conditions: dec.seq(|d| Ok((d.digest()?, d.digest()?)))?,
            leaves: dec.seq(|d| d.digest())?.into_iter().collect(),
        })
    }
}
