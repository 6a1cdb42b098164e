// SPDX-License-Identifier: Apache-2.0

use super::DiscoveryData;
use crate::crypto::Digest;
use crate::tree::{Coord, NodeRef, SmlTree};

/// Unknown leaves tolerated in a gapped bottom-up candidate.
pub const DEFAULT_MAX_GAPS: usize = 1;

/// `r` precedes `s` when all of `r`'s leaves lie strictly left of `s`'s.
pub fn precedes(r: &Coord, s: &Coord, depth: u8) -> bool {
    r.leaf_range(depth).1 <= s.leaf_range(depth).0
}

fn occupied_nodes(tree: &SmlTree) -> Vec<NodeRef> {
    let mut out = Vec::new();
    let root = tree.recompute_root();
    if !root.is_nil() {
        out.push(NodeRef::new(Coord::ROOT, root));
    }
    for c in tree.coords() {
        let v = tree.get(&c).expect("coordinate in range");
        if !v.is_nil() {
            out.push(NodeRef::new(c, v.clone()));
        }
    }
    out
}

/// Nodes (the root included) whose value the SCA lists as certifiable and
/// whose position conditions hold. A value with several conditions needs
/// all of them; each is satisfied by any preceding occurrence of the
/// required value.
pub fn active_discover(tree: &SmlTree, dd: &DiscoveryData) -> Vec<NodeRef> {
    let nodes = occupied_nodes(tree);
    let depth = tree.depth();
    nodes
        .iter()
        .filter(|n| dd.values.contains(&n.value))
        .filter(|n| {
            dd.required_for(&n.value).all(|req| {
                nodes
                    .iter()
                    .any(|r| r.value == *req && precedes(&r.coord, &n.coord, depth))
            })
        })
        .cloned()
        .collect()
}

/// A bottom-up guess: a span root whose occupied leaves are known, except
/// for the listed missing ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub node: NodeRef,
    /// Occupied leaves whose values are not in the discovery data.
    pub missing: Vec<Coord>,
}

impl Candidate {
    pub fn is_full(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Maximal subtrees whose occupied leaves are all certifiable leaves, plus
/// maximal gapped subtrees (at most `max_gaps` unknown leaves) that strictly
/// contain such a subtree.
pub fn bottom_up_candidates(tree: &SmlTree, dd: &DiscoveryData, max_gaps: usize) -> Vec<Candidate> {
    let depth = tree.depth();
    // per level: (occupied, unknown) leaf counts of each node
    let mut counts: Vec<Vec<(usize, usize)>> = vec![Vec::new(); depth as usize + 1];
    counts[depth as usize] = (0..tree.capacity())
        .map(|i| {
            let l = tree.leaf(i);
            match (l.is_nil(), dd.leaves.contains(l)) {
                (true, _) => (0, 0),
                (false, true) => (1, 0),
                (false, false) => (1, 1),
            }
        })
        .collect();
    for level in (0..depth as usize).rev() {
        let below = &counts[level + 1];
        counts[level] = (0..below.len() / 2)
            .map(|i| {
                let (a, b) = (below[2 * i], below[2 * i + 1]);
                (a.0 + b.0, a.1 + b.1)
            })
            .collect();
    }
    let at = |c: &Coord| counts[c.len()][c.index() as usize];
    let full = |c: &Coord| {
        let (occ, unk) = at(c);
        occ > 0 && unk == 0
    };
    let gapped = |c: &Coord| {
        let (_, unk) = at(c);
        unk >= 1 && unk <= max_gaps
    };
    let all: Vec<Coord> = std::iter::once(Coord::ROOT).chain(tree.coords()).collect();
    let full_max: Vec<Coord> = all
        .iter()
        .filter(|c| full(c) && c.parent().is_none_or(|p| !full(&p)))
        .copied()
        .collect();

    let value = |c: &Coord| -> Digest {
        if c.is_root() {
            tree.recompute_root()
        } else {
            tree.get(c).expect("in range").clone()
        }
    };
    let mut out: Vec<Candidate> = full_max
        .iter()
        .map(|c| Candidate {
            node: NodeRef::new(*c, value(c)),
            missing: Vec::new(),
        })
        .collect();
    for c in &all {
        let maximal = c.parent().is_none_or(|p| !gapped(&p));
        let contains_full = full_max.iter().any(|f| f != c && c.is_prefix_of(f));
        if gapped(c) && maximal && contains_full {
            let (lo, hi) = c.leaf_range(depth);
            let missing = (lo..hi)
                .filter(|&i| {
                    let l = tree.leaf(i);
                    !l.is_nil() && !dd.leaves.contains(l)
                })
                .map(|i| Coord::from_index(depth, i))
                .collect();
            out.push(Candidate {
                node: NodeRef::new(*c, value(c)),
                missing,
            });
        }
    }
    out
}
