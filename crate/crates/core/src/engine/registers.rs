// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use crate::crypto::Digest;
use crate::tree::Coord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RegisterId(pub u16);

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifies one tree managed by the register file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreeUid(pub u32);

impl fmt::Display for TreeUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Allowed transitions:
///
/// ```text
/// Free -> ActiveRoot      tree creation
/// ActiveRoot -> CompleteRoot   close (explicit, or automatic when full)
/// Free <-> TreeBuild      scratch for an active tree
/// Free -> ReducedTree     verified load
/// ReducedTree -> Free     update completion or release
/// ActiveRoot | CompleteRoot -> Free   explicit release of the whole tree
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegisterState {
    Free,
    ActiveRoot,
    CompleteRoot,
    TreeBuild,
    ReducedTree,
}

impl RegisterState {
    pub fn short_name(self) -> &'static str {
        match self {
            RegisterState::Free => "Free",
            RegisterState::ActiveRoot => "AR",
            RegisterState::CompleteRoot => "CR",
            RegisterState::TreeBuild => "TB",
            RegisterState::ReducedTree => "RT",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        Some(match s {
            "Free" => RegisterState::Free,
            "AR" => RegisterState::ActiveRoot,
            "CR" => RegisterState::CompleteRoot,
            "TB" => RegisterState::TreeBuild,
            "RT" => RegisterState::ReducedTree,
            _ => return None,
        })
    }

    pub fn is_root(self) -> bool {
        matches!(
            self,
            RegisterState::ActiveRoot | RegisterState::CompleteRoot
        )
    }
}

impl fmt::Display for RegisterState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Snapshot of one register and its allocation-table entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterInfo {
    pub value: Digest,
    pub state: RegisterState,
    pub tree: Option<TreeUid>,
    pub coord: Option<Coord>,
}

impl Default for RegisterInfo {
    fn default() -> Self {
        RegisterInfo {
            value: Digest::Nil,
            state: RegisterState::Free,
            tree: None,
            coord: None,
        }
    }
}

/// One row of the verification data allocation table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VdatEntry {
    pub register: RegisterId,
    pub state: RegisterState,
    pub tree: Option<TreeUid>,
    pub coord: Option<Coord>,
}
