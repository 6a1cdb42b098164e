// SPDX-License-Identifier: Apache-2.0

//! The protected register file and the tree command set.
//!
//! [`Tpm`] emulates a module with `r` verification data registers. Roots of
//! SML trees live in registers; the tree itself is held outside (see
//! [`crate::tss`]), and every node the caller hands in is checked against a
//! protected root before it is trusted.
//!
//! Verification failures are ordinary results ([`Verification::Mismatch`],
//! [`NodeVerifyReport::Breach`]). Misuse of the register file (wrong state,
//! stale session, too few registers) is an [`EngineError`].

mod quote;
mod registers;
mod tpm;

use thiserror::Error;

use crate::crypto::{CryptoError, Digest};
use crate::tree::{Coord, Trace};

pub use quote::{Quote, QuoteError, QuotePayload};
pub use registers::{RegisterId, RegisterInfo, RegisterState, TreeUid, VdatEntry};
pub use tpm::{EngineConfig, EngineStats, Tpm, DEFAULT_REGISTERS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("no register {0}")]
    NoSuchRegister(RegisterId),
    #[error("{command}: register {register} is in state {state}")]
    StateViolation {
        command: &'static str,
        register: RegisterId,
        state: RegisterState,
    },
    #[error("illegal transition of register {register} from {from} by {command}")]
    IllegalTransition {
        command: &'static str,
        register: RegisterId,
        from: RegisterState,
    },
    #[error("tree complete: register {0} holds a full tree")]
    TreeComplete(RegisterId),
    #[error("insufficient registers: need {needed}, {free} free")]
    InsufficientRegisters { needed: usize, free: usize },
    #[error("session binding violation: {0}")]
    BindingViolation(BindingViolation),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum BindingViolation {
    #[error("unknown session")]
    Unknown,
    #[error("session already consumed")]
    Consumed,
    #[error("session invalidated by an intervening command")]
    Invalidated,
    #[error("session nonce mismatch")]
    NonceMismatch,
}

/// Result of a protected comparison against a root register.
#[must_use]
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verification<T> {
    Verified(T),
    /// The recomputed root differs from the register ("verification error").
    Mismatch,
}

impl<T> Verification<T> {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verification::Verified(_))
    }

    pub fn verified(self) -> Option<T> {
        match self {
            Verification::Verified(v) => Some(v),
            Verification::Mismatch => None,
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Verification<U> {
        match self {
            Verification::Verified(v) => Verification::Verified(f(v)),
            Verification::Mismatch => Verification::Mismatch,
        }
    }
}

/// Outcome of full top-down node verification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeVerifyReport {
    Ok,
    /// The integrity chain first breaks at `level`; `computed` is the parent
    /// value recomputed from the supplied trace and sibling at that level.
    Breach {
        level: usize,
        computed: Digest,
    },
}

/// Handle to the registers loaded by a verified load, required by the
/// matching update. Consumable once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateSession {
    pub id: u64,
    pub nonce: Digest,
    pub coord: Coord,
    pub root: RegisterId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionStatus {
    Armed,
    Consumed,
    Invalidated,
}

/// New trace (top-down, ending with the updated node) and new root value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub trace: Trace,
    pub root: Digest,
}

/// Nodes written by one tree-extend, leaf first, plus the new root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtendOutcome {
    pub leaf: Coord,
    pub nodes: Vec<crate::tree::NodeRef>,
    pub root: Digest,
    /// Set when this extend filled the tree.
    pub full: bool,
}
