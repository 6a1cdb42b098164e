// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::{CertError, ScaResponse};
use crate::crypto::{Digest, HashAlg};
use crate::engine::Verification;
use crate::tree::{Coord, NodeRef};
use crate::tss::Platform;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UpdateSetError {
    #[error("update set is not dependency-free: {0} lies on the trace of {1}")]
    Dependent(Coord, Coord),
    #[error("{coord} is not below the certified node {bound}")]
    NotBelow { coord: Coord, bound: Coord },
    #[error("{coord} is deeper than the tree depth {depth}")]
    TooDeep { coord: Coord, depth: u8 },
    #[error("duplicate coordinate {0}")]
    Duplicate(Coord),
}

/// A dependency-free set of node updates, kept in coordinate order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UpdateSet {
    entries: BTreeMap<Coord, Digest>,
}

impl UpdateSet {
    /// Validates dependency-freeness and, when `bound` is given, `U ≤ bound`.
    pub fn new(
        entries: impl IntoIterator<Item = (Coord, Digest)>,
        bound: Option<&Coord>,
    ) -> Result<Self, UpdateSetError> {
        let mut map = BTreeMap::new();
        for (c, v) in entries {
            if map.insert(c, v).is_some() {
                return Err(UpdateSetError::Duplicate(c));
            }
        }
        if let Some(b) = bound {
            if let Some(c) = map.keys().find(|c| !c.leq(b)) {
                return Err(UpdateSetError::NotBelow {
                    coord: *c,
                    bound: *b,
                });
            }
        }
        // in alphabetical order a prefix relation shows up between neighbours
        let keys: Vec<&Coord> = map.keys().collect();
        for w in keys.windows(2) {
            if w[0].is_prefix_of(w[1]) {
                return Err(UpdateSetError::Dependent(*w[0], *w[1]));
            }
        }
        Ok(UpdateSet { entries: map })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Coord, &Digest)> {
        self.entries.iter()
    }

    pub fn coords(&self) -> impl Iterator<Item = &Coord> {
        self.entries.keys()
    }

    pub fn get(&self, c: &Coord) -> Option<&Digest> {
        self.entries.get(c)
    }

    pub fn check_depth(&self, depth: u8) -> Result<(), UpdateSetError> {
        match self.entries.keys().find(|c| c.level() > depth) {
            Some(c) => Err(UpdateSetError::TooDeep { coord: *c, depth }),
            None => Ok(()),
        }
    }

    /// Union of two sets; fails if the result is not dependency-free.
    pub fn union(&self, other: &UpdateSet) -> Result<UpdateSet, UpdateSetError> {
        UpdateSet::new(
            self.entries
                .iter()
                .chain(other.entries.iter())
                .map(|(c, v)| (*c, v.clone())),
            None,
        )
    }
}

impl fmt::Display for UpdateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (c, v) in &self.entries {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            write!(f, "{c}:{v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BindingLayout {
    /// Keep the tree as is; the certificate binds through `s` itself.
    Empty,
    /// Replace `s` by `k = (m(C_s) ⋄ m(M_s)) ⋄ s`.
    FullBinding,
    Custom(Vec<(Coord, Digest)>),
}

/// `k = (m(C_s) ⋄ m(M_s)) ⋄ s_old`.
pub fn binding_value(alg: HashAlg, r: &ScaResponse, s_old: &Digest) -> Digest {
    alg.extend(&binding_left(alg, r), s_old)
}

/// `m(C_s) ⋄ m(M_s)`, the value at `⟨s⟩∥0` after a full binding.
pub fn binding_left(alg: HashAlg, r: &ScaResponse) -> Digest {
    alg.extend(&r.certificate.measure(alg), &r.manifest().measure(alg))
}

/// Phase 4: the update set that ties the certificate to the tree.
pub fn phase4_binding_update_set(
    alg: HashAlg,
    r: &ScaResponse,
    s_old: &NodeRef,
    layout: &BindingLayout,
    depth: u8,
) -> Result<UpdateSet, UpdateSetError> {
    let s = s_old.coord;
    let u = match layout {
        BindingLayout::Empty => UpdateSet::empty(),
        BindingLayout::FullBinding => UpdateSet::new(
            [
                (s.child(false).child(false), r.certificate.measure(alg)),
                (s.child(false).child(true), r.manifest().measure(alg)),
                (s.child(true), s_old.value.clone()),
            ],
            Some(&s),
        )?,
        BindingLayout::Custom(entries) => UpdateSet::new(entries.iter().cloned(), Some(&s))?,
    };
    u.check_depth(depth)?;
    Ok(u)
}

/// Phase 5: one verified update per entry, in coordinate order. A failed
/// verification aborts; entries before it stay applied.
pub fn phase5_apply_naive(u: &UpdateSet, platform: &mut Platform) -> Result<Digest, CertError> {
    u.check_depth(platform.sml.depth())?;
    for (c, v) in u.iter() {
        if let Verification::Mismatch = platform.update_node(c, v)? {
            return Err(CertError::Verification(*c));
        }
    }
    Ok(platform.root_value())
}

/// A maximal set of updates whose common subtree depends on nothing else.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntrinsicSubset {
    pub span_root: Coord,
    pub members: Vec<Coord>,
}

/// Nodes whose new value is determined by `U` alone: members of `U`, and
/// inner nodes both of whose children are such nodes.
pub fn intrinsic_nodes(u: &UpdateSet) -> BTreeSet<Coord> {
    let mut set: BTreeSet<Coord> = u.coords().copied().collect();
    let max = set.iter().map(|c| c.level()).max().unwrap_or(0);
    for level in (1..=max).rev() {
        let parents: Vec<Coord> = set
            .iter()
            .filter(|c| c.level() == level)
            .filter_map(|c| c.parent())
            .collect();
        for p in parents {
            if set.contains(&p.child(false)) && set.contains(&p.child(true)) {
                set.insert(p);
            }
        }
    }
    set
}

/// Maximal intrinsic subsets with at least two members, each with the
/// highest intrinsic node above it as span root.
pub fn find_intrinsic_subsets(u: &UpdateSet) -> Vec<IntrinsicSubset> {
    let intrinsic = intrinsic_nodes(u);
    intrinsic
        .iter()
        .filter(|c| u.get(c).is_none())
        .filter(|c| c.parent().is_none_or(|p| !intrinsic.contains(&p)))
        .map(|r| IntrinsicSubset {
            span_root: *r,
            members: u.coords().filter(|m| r.is_prefix_of(m)).copied().collect(),
        })
        .collect()
}

/// Whether `members` (a subset of `u`) is intrinsic: every node of its
/// spanned subtree is intrinsic. Returns the span root if so.
pub fn is_intrinsic_subset(u: &UpdateSet, members: &[Coord]) -> Option<Coord> {
    let span = span_root(members)?;
    let intrinsic = intrinsic_nodes(u);
    let spanned = members
        .iter()
        .all(|m| (span.len()..=m.len()).all(|k| intrinsic.contains(&m.prefix(k))));
    spanned.then_some(span)
}

/// Longest common prefix of the coordinates.
pub fn span_root(coords: &[Coord]) -> Option<Coord> {
    let first = coords.first()?;
    let mut len = first.len();
    for c in &coords[1..] {
        len = len.min(c.len());
        while !first.prefix(len).is_prefix_of(c) {
            len -= 1;
        }
    }
    Some(first.prefix(len))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BulkReport {
    pub root: Digest,
    pub subsets: Vec<IntrinsicSubset>,
    /// Verified updates issued in the final naive pass.
    pub verified_updates: usize,
}

/// Bulk update: each intrinsic subset is pre-computed by tree-extending its
/// normalised, nil-padded members into a temporary register, then replaced
/// in `U` by a single entry at its span root.
pub fn bulk_update(u: &UpdateSet, platform: &mut Platform) -> Result<BulkReport, CertError> {
    u.check_depth(platform.sml.depth())?;
    let subsets = find_intrinsic_subsets(u);
    let mut remaining: BTreeMap<Coord, Digest> = u.iter().map(|(c, v)| (*c, v.clone())).collect();
    let mut interior: Vec<NodeRef> = Vec::new();

    for sub in &subsets {
        let rel: Vec<Coord> = sub
            .members
            .iter()
            .map(|m| {
                m.strip_prefix(&sub.span_root)
                    .expect("member below span root")
            })
            .collect();
        let depth = rel
            .iter()
            .map(|c| c.level())
            .max()
            .expect("non-empty subset");
        let mut leaves: BTreeMap<u64, Digest> = BTreeMap::new();
        for (r, m) in rel.iter().zip(&sub.members) {
            leaves.insert(
                r.pad_zeros(depth).index(),
                u.get(m).expect("member").clone(),
            );
        }
        let last = *leaves.keys().next_back().expect("non-empty");

        let (_, reg) = platform.tpm.create_tree(depth)?;
        let mut built: BTreeMap<Coord, Digest> = BTreeMap::new();
        let result = (|| -> Result<Digest, CertError> {
            for i in 0..=last {
                let v = leaves.get(&i).cloned().unwrap_or(Digest::Nil);
                let out = platform.tpm.tree_extend(reg, &v)?;
                for n in out.nodes {
                    built.insert(n.coord, n.value);
                }
            }
            Ok(platform.tpm.pcr_read(reg)?)
        })();
        platform.tpm.release(reg)?;
        let v_prime = result?;

        for (r, m) in rel.iter().zip(&sub.members) {
            remaining.remove(m);
            for k in 1..=r.len() {
                let c = r.prefix(k);
                let v = built.get(&c).cloned().unwrap_or(Digest::Nil);
                interior.push(NodeRef::new(sub.span_root.concat(&c), v));
            }
        }
        remaining.insert(sub.span_root, v_prime);
    }

    let rest = UpdateSet::new(remaining, None)?;
    let root = phase5_apply_naive(&rest, platform)?;
    platform.sml.apply(&interior)?;
    Ok(BulkReport {
        root,
        subsets,
        verified_updates: rest.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> Coord {
        s.parse().unwrap()
    }

    fn d(i: u8) -> Digest {
        HashAlg::Sha1.hash(&[i])
    }

    fn set(cs: &[&str]) -> UpdateSet {
        UpdateSet::new(cs.iter().enumerate().map(|(i, s)| (c(s), d(i as u8))), None).unwrap()
    }

    #[test]
    fn dependency_freeness() {
        assert_eq!(
            UpdateSet::new([(c("0"), d(0)), (c("01"), d(1))], None),
            Err(UpdateSetError::Dependent(c("0"), c("01")))
        );
        assert!(UpdateSet::new([(c("00"), d(0)), (c("01"), d(1))], None).is_ok());
        assert_eq!(
            UpdateSet::new([(c("10"), d(0))], Some(&c("0"))),
            Err(UpdateSetError::NotBelow {
                coord: c("10"),
                bound: c("0")
            })
        );
    }

    #[test]
    fn four_leaves_under_grandparent() {
        let u = set(&["1000", "1001", "1010", "1011"]);
        let subs = find_intrinsic_subsets(&u);
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].span_root, c("10"));
        assert_eq!(subs[0].members.len(), 4);
    }

    #[test]
    fn unrelated_leaves_have_no_subsets() {
        assert!(find_intrinsic_subsets(&set(&["000", "110"])).is_empty());
        assert!(find_intrinsic_subsets(&set(&["01"])).is_empty());
    }

    #[test]
    fn binding_layout_subsets() {
        let u = set(&["0100", "0101", "011"]);
        // the pair under s0 is intrinsic on its own
        assert_eq!(
            is_intrinsic_subset(&u, &[c("0100"), c("0101")]),
            Some(c("010"))
        );
        // and together with s1 the whole of s is determined by U
        let subs = find_intrinsic_subsets(&u);
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].span_root, c("01"));
        assert_eq!(subs[0].members, vec![c("0100"), c("0101"), c("011")]);
    }

    #[test]
    fn sibling_of_update_is_not_intrinsic() {
        // s01 is neither updated nor determined by U
        let u = set(&["0100", "011", "00"]);
        let nodes = intrinsic_nodes(&u);
        assert!(!nodes.contains(&c("0101")));
        assert!(!nodes.contains(&c("010")));
        assert!(find_intrinsic_subsets(&u).is_empty());
    }

    #[test]
    fn span_roots() {
        assert_eq!(span_root(&[c("0100"), c("011")]), Some(c("01")));
        assert_eq!(span_root(&[c("0"), c("1")]), Some(Coord::ROOT));
        assert_eq!(span_root(&[c("0110")]), Some(c("0110")));
    }
}
