// SPDX-License-Identifier: Apache-2.0

//! SCA policy table.
//!
//! ```text
//! # comment
//! <hex node value> name=value[;name=value...]
//! ```
//!
//! Two property names are reserved: `role=leaf` marks a value the SCA knows
//! as a leaf measurement (usable for composed subtrees and bottom-up
//! discovery), and `requires=<hex>` adds a position condition: the entry is
//! only certifiable when a node with that value precedes it in the tree.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{Digest, HashAlg};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("policy line {line}: {message}")]
pub struct PolicyError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolicyEntry {
    pub properties: Vec<(String, String)>,
    pub leaf: bool,
    pub requires: Vec<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    alg: HashAlg,
    entries: BTreeMap<Digest, PolicyEntry>,
}

impl Policy {
    pub fn new(alg: HashAlg) -> Self {
        Policy {
            alg,
            entries: BTreeMap::new(),
        }
    }

    pub fn alg(&self) -> HashAlg {
        self.alg
    }

    pub fn insert(&mut self, value: Digest, entry: PolicyEntry) {
        self.entries.insert(value, entry);
    }

    /// Certifiable node entry for `value` (leaf-only entries excluded).
    pub fn node(&self, value: &Digest) -> Option<&PolicyEntry> {
        self.entries.get(value).filter(|e| !e.leaf)
    }

    pub fn leaf(&self, value: &Digest) -> Option<&PolicyEntry> {
        self.entries.get(value).filter(|e| e.leaf)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Digest, &PolicyEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(alg: HashAlg, text: &str) -> Result<Self, PolicyError> {
        let mut policy = Policy::new(alg);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| PolicyError { line, message };
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (hex, props) = l
                .split_once(char::is_whitespace)
                .ok_or_else(|| err("expected `<hex> name=value[;...]`".into()))?;
            let value = parse_digest(alg, hex).map_err(err)?;
            if value.is_nil() {
                return Err(err("nil is not certifiable".into()));
            }
            let mut entry = PolicyEntry::default();
            for p in props
                .trim()
                .split(';')
                .map(str::trim)
                .filter(|p| !p.is_empty())
            {
                let (k, v) = p
                    .split_once('=')
                    .ok_or_else(|| err(format!("property {p:?} lacks `=`")))?;
                let (k, v) = (k.trim(), v.trim());
                if k.is_empty() {
                    return Err(err("empty property name".into()));
                }
                match k {
                    "role" => match v {
                        "leaf" => entry.leaf = true,
                        "node" => entry.leaf = false,
                        _ => return Err(err(format!("unknown role {v:?}"))),
                    },
                    "requires" => entry.requires.push(parse_digest(alg, v).map_err(err)?),
                    _ => entry.properties.push((k.to_string(), v.to_string())),
                }
            }
            if !entry.leaf && entry.properties.is_empty() {
                return Err(err("node entry needs at least one property".into()));
            }
            if policy.entries.insert(value.clone(), entry).is_some() {
                return Err(err(format!("duplicate entry for {value}")));
            }
        }
        Ok(policy)
    }
}

fn parse_digest(alg: HashAlg, s: &str) -> Result<Digest, String> {
    let d = Digest::from_hex(s).map_err(|e| e.to_string())?;
    alg.check(&d).map_err(|e| e.to_string())?;
    Ok(d)
}
