// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use sha1::Sha1;
use sha2::{Digest as _, Sha256};

use super::CryptoError;

/// A node or register value: a hash output, or the distinguished `Nil` unit.
///
/// `Nil` is a tag, not a byte pattern, so no genuine hash (including all
/// zeroes) can ever be mistaken for it.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Digest {
    #[default]
    Nil,
    Hash(Vec<u8>),
}

impl Digest {
    pub fn is_nil(&self) -> bool {
        matches!(self, Digest::Nil)
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Digest::Nil => None,
            Digest::Hash(v) => Some(v),
        }
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        if s == "nil" {
            return Ok(Digest::Nil);
        }
        if s.is_empty() {
            return Err(CryptoError::BadHex(s.to_owned()));
        }
        // uppercase is rejected to keep the rendering canonical
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(CryptoError::BadHex(s.to_owned()));
        }
        hex::decode(s)
            .map(Digest::Hash)
            .map_err(|_| CryptoError::BadHex(s.to_owned()))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Digest::Nil => f.write_str("nil"),
            Digest::Hash(v) => f.write_str(&hex::encode(v)),
        }
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Digest::Nil => f.write_str("Nil"),
            Digest::Hash(v) => {
                let h = hex::encode(v);
                write!(f, "Digest({}..)", &h[..h.len().min(12)])
            }
        }
    }
}

impl FromStr for Digest {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

/// The configured hash function. Fixed for a register file and every tree it
/// roots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum HashAlg {
    #[default]
    Sha1,
    Sha256,
}

impl HashAlg {
    pub fn output_len(self) -> usize {
        match self {
            HashAlg::Sha1 => 20,
            HashAlg::Sha256 => 32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HashAlg::Sha1 => "sha1",
            HashAlg::Sha256 => "sha256",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sha1" => Some(HashAlg::Sha1),
            "sha256" => Some(HashAlg::Sha256),
            _ => None,
        }
    }

    pub fn id(self) -> u8 {
        match self {
            HashAlg::Sha1 => 1,
            HashAlg::Sha256 => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(HashAlg::Sha1),
            2 => Some(HashAlg::Sha256),
            _ => None,
        }
    }

    /// Measurement of raw data. Never `Nil`.
    pub fn hash(self, data: &[u8]) -> Digest {
        Digest::Hash(self.hash_bytes(data))
    }

    fn hash_bytes(self, data: &[u8]) -> Vec<u8> {
        match self {
            HashAlg::Sha1 => Sha1::digest(data).to_vec(),
            HashAlg::Sha256 => Sha256::digest(data).to_vec(),
        }
    }

    /// `x ⋄ y`: the hash of the concatenation, with `Nil` as a two-sided unit.
    pub fn extend(self, x: &Digest, y: &Digest) -> Digest {
        match (x, y) {
            (Digest::Nil, other) | (other, Digest::Nil) => other.clone(),
            (Digest::Hash(a), Digest::Hash(b)) => {
                let mut buf = Vec::with_capacity(a.len() + b.len());
                buf.extend_from_slice(a);
                buf.extend_from_slice(b);
                Digest::Hash(self.hash_bytes(&buf))
            }
        }
    }

    /// Order-parameterised extend: `x ⋄ y` when `right` is set (the running
    /// value `y` is the right child), otherwise `y ⋄ x`.
    pub fn chiral_extend(self, x: &Digest, right: bool, y: &Digest) -> Digest {
        if right {
            self.extend(x, y)
        } else {
            self.extend(y, x)
        }
    }

    /// Checks that a digest is `Nil` or has exactly this algorithm's length.
    pub fn check(self, d: &Digest) -> Result<(), CryptoError> {
        match d {
            Digest::Nil => Ok(()),
            Digest::Hash(v) if v.len() == self.output_len() => Ok(()),
            Digest::Hash(v) => Err(CryptoError::DigestLength {
                expected: self.output_len(),
                got: v.len(),
            }),
        }
    }
}

impl fmt::Display for HashAlg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
