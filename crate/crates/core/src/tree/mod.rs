// SPDX-License-Identifier: Apache-2.0

//! Node coordinates, traces and reduced trees, and the SML tree store.

mod coord;
pub mod format;
mod sml;

use thiserror::Error;

use crate::crypto::CryptoError;

pub use coord::{leq_sets, Coord, MAX_COORD_LEN};
pub use format::{deserialize, serialize, SmlParseError};
pub use sml::{NodeRef, ReducedTree, SmlTree, Trace};

/// Deepest tree the SML store will allocate (every node is materialised).
pub const MAX_TREE_DEPTH: u8 = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("the root coordinate has no trace inside the SML")]
    EmptyCoord,
    #[error("invalid coordinate {0:?}")]
    InvalidCoord(String),
    #[error("coordinate {coord} is deeper than the tree depth {depth}")]
    CoordTooDeep { coord: Coord, depth: u8 },
    #[error("unsupported tree depth {0}")]
    BadDepth(u8),
    #[error("{got} leaves exceed capacity {capacity}")]
    TooManyLeaves { capacity: u64, got: u64 },
    #[error("reduced tree has {got} entries, expected {expected}")]
    ReducedLength { expected: usize, got: usize },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}
