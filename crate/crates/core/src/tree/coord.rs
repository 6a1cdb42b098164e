// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use super::TreeError;
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};

/// Longest coordinate representable. Trees are further limited by
/// [`super::MAX_TREE_DEPTH`].
pub const MAX_COORD_LEN: u8 = 63;

/// Position of a node: a bit string whose length is the node's level.
///
/// The empty coordinate is the root, which lives in a register rather than in
/// the SML. Bits are 1-indexed from the root downwards: bit 1 selects the
/// level-1 node, bit `k` the child at level `k`. A set bit means "right child".
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Coord {
    // bit 1 is the most significant of the `len` low bits
    path: u64,
    len: u8,
}

impl Coord {
    pub const ROOT: Coord = Coord { path: 0, len: 0 };

    pub fn root() -> Self {
        Self::ROOT
    }

    /// Coordinate at `level` whose bits spell `index` in binary.
    pub fn from_index(level: u8, index: u64) -> Self {
        assert!(level <= MAX_COORD_LEN);
        assert!(level == 0 && index == 0 || level > 0 && index >> level == 0);
        Coord {
            path: index,
            len: level,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        assert!(bits.len() <= MAX_COORD_LEN as usize);
        let path = bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64);
        Coord {
            path,
            len: bits.len() as u8,
        }
    }

    pub fn level(&self) -> u8 {
        self.len
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_root(&self) -> bool {
        self.len == 0
    }

    pub fn is_empty(&self) -> bool {
        self.is_root()
    }

    /// Position among the nodes of the same level, left to right.
    pub fn index(&self) -> u64 {
        self.path
    }

    /// Digit `k`, 1-indexed. Panics outside `1..=level`.
    pub fn bit(&self, k: usize) -> bool {
        assert!(
            k >= 1 && k <= self.len(),
            "bit {k} of a level-{} coord",
            self.len
        );
        (self.path >> (self.len() - k)) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (1..=self.len()).map(move |k| self.bit(k))
    }

    /// Length-`k` prefix.
    pub fn prefix(&self, k: usize) -> Coord {
        assert!(k <= self.len());
        Coord {
            path: if k == 0 {
                0
            } else {
                self.path >> (self.len() - k)
            },
            len: k as u8,
        }
    }

    pub fn child(&self, right: bool) -> Coord {
        assert!(self.len < MAX_COORD_LEN);
        Coord {
            path: (self.path << 1) | right as u64,
            len: self.len + 1,
        }
    }

    pub fn parent(&self) -> Option<Coord> {
        (!self.is_root()).then(|| self.prefix(self.len() - 1))
    }

    pub fn sibling(&self) -> Option<Coord> {
        (!self.is_root()).then_some(Coord {
            path: self.path ^ 1,
            len: self.len,
        })
    }

    /// Whether this node is the right child of its parent.
    pub fn is_right(&self) -> bool {
        !self.is_root() && self.path & 1 == 1
    }

    pub fn is_prefix_of(&self, other: &Coord) -> bool {
        self.len <= other.len && other.prefix(self.len()) == *self
    }

    pub fn concat(&self, tail: &Coord) -> Coord {
        assert!(self.len + tail.len <= MAX_COORD_LEN);
        if tail.is_root() {
            return *self;
        }
        Coord {
            path: (self.path << tail.len) | tail.path,
            len: self.len + tail.len,
        }
    }

    /// The coordinate relative to `prefix`, if `prefix` is on this node's trace.
    pub fn strip_prefix(&self, prefix: &Coord) -> Option<Coord> {
        if !prefix.is_prefix_of(self) {
            return None;
        }
        let rest = self.len - prefix.len;
        let mask = if rest == 0 { 0 } else { (1u64 << rest) - 1 };
        Some(Coord {
            path: self.path & mask,
            len: rest,
        })
    }

    /// Appends zero bits until the coordinate has length `len`.
    pub fn pad_zeros(&self, len: u8) -> Coord {
        assert!(len >= self.len && len <= MAX_COORD_LEN);
        Coord {
            path: self.path << (len - self.len),
            len,
        }
    }

    /// Half-open interval of leaf indices covered by this node in a tree of
    /// the given depth.
    pub fn leaf_range(&self, depth: u8) -> (u64, u64) {
        assert!(self.len <= depth);
        let shift = depth - self.len;
        (self.path << shift, (self.path + 1) << shift)
    }

    /// The prefixes of length `1..=ℓ`: the nodes from the top of the tree down
    /// to and including this one.
    pub fn trace_coords(&self) -> Result<Vec<Coord>, TreeError> {
        if self.is_root() {
            return Err(TreeError::EmptyCoord);
        }
        Ok((1..=self.len()).map(|k| self.prefix(k)).collect())
    }

    /// The siblings of [`Coord::trace_coords`], entry by entry.
    pub fn reduced_coords(&self) -> Result<Vec<Coord>, TreeError> {
        Ok(self
            .trace_coords()?
            .into_iter()
            .map(|c| c.sibling().expect("non-root"))
            .collect())
    }

    /// `self ≤ other`: `other` lies on this node's trace (or is this node).
    pub fn leq(&self, other: &Coord) -> bool {
        other.is_prefix_of(self)
    }
}

/// Lifted order on node sets: every element of `m` lies below some element of `n`.
pub fn leq_sets(m: &[Coord], n: &[Coord]) -> bool {
    m.iter().all(|a| n.iter().any(|b| a.leq(b)))
}

/// Alphabetical order on bit strings; a prefix sorts before its extensions.
impl Ord for Coord {
    fn cmp(&self, other: &Self) -> Ordering {
        let common = self.len.min(other.len) as usize;
        self.prefix(common)
            .path
            .cmp(&other.prefix(common).path)
            .then(self.len.cmp(&other.len))
    }
}

impl PartialOrd for Coord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coord(\"{self}\")")
    }
}

impl FromStr for Coord {
    type Err = TreeError;

    /// Parses a `0`/`1` string. The root may be written as an empty string
    /// or as `root`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "root" {
            return Ok(Coord::ROOT);
        }
        if s.len() > MAX_COORD_LEN as usize {
            return Err(TreeError::InvalidCoord(s.to_owned()));
        }
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(TreeError::InvalidCoord(s.to_owned())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Coord::from_bits(&bits))
    }
}

impl Canonical for Coord {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.len).u64(self.path);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let len = dec.u8()?;
        let path = dec.u64()?;
        if len > MAX_COORD_LEN || (len < 64 && path >> len != 0) {
            return Err(dec.invalid("malformed coordinate"));
        }
        Ok(Coord { path, len })
    }
}
