// SPDX-License-Identifier: Apache-2.0

use super::{Coord, TreeError, MAX_TREE_DEPTH};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{Digest, HashAlg};
use crate::engine::RegisterId;

/// A node value together with its position.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub coord: Coord,
    pub value: Digest,
}

impl NodeRef {
    pub fn new(coord: Coord, value: Digest) -> Self {
        Self { coord, value }
    }
}

/// The nodes on the path from level 1 down to a subject node, inclusive.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub entries: Vec<NodeRef>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> Vec<Digest> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }
}

/// The siblings of a node's trace: its authentication path.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReducedTree {
    pub entries: Vec<NodeRef>,
}

impl ReducedTree {
    /// Pairs `values` with the reduced coordinates of `coord`.
    pub fn from_values(coord: &Coord, values: Vec<Digest>) -> Result<Self, TreeError> {
        let coords = if coord.is_root() {
            Vec::new()
        } else {
            coord.reduced_coords()?
        };
        if coords.len() != values.len() {
            return Err(TreeError::ReducedLength {
                expected: coords.len(),
                got: values.len(),
            });
        }
        Ok(ReducedTree {
            entries: coords
                .into_iter()
                .zip(values)
                .map(|(c, v)| NodeRef::new(c, v))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> Vec<Digest> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    /// Whether the entry coordinates are exactly the reduced coordinates of `coord`.
    pub fn matches(&self, coord: &Coord) -> bool {
        if coord.is_root() {
            return self.entries.is_empty();
        }
        match coord.reduced_coords() {
            Ok(rc) => {
                rc.len() == self.entries.len()
                    && rc.iter().zip(&self.entries).all(|(c, e)| *c == e.coord)
            }
            Err(_) => false,
        }
    }
}

/// The stored measurement log: a depth-`d` binary tree of digests.
///
/// Every coordinate of length `1..=d` has an entry (`Nil` where unoccupied),
/// so the tree shape is fixed at creation. Mutation does not enforce
/// consistency; [`SmlTree::first_inconsistency`] checks it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmlTree {
    alg: HashAlg,
    depth: u8,
    // heap layout: coord c lives at (1 << level) | index; slots 0 and 1 unused
    nodes: Vec<Digest>,
    leaf_count: u64,
    root_register: RegisterId,
}

fn slot(c: &Coord) -> usize {
    (1usize << c.level()) | c.index() as usize
}

impl SmlTree {
    pub fn new(alg: HashAlg, depth: u8, root_register: RegisterId) -> Result<Self, TreeError> {
        if depth == 0 || depth > MAX_TREE_DEPTH {
            return Err(TreeError::BadDepth(depth));
        }
        Ok(SmlTree {
            alg,
            depth,
            nodes: vec![Digest::Nil; 1usize << (depth + 1)],
            leaf_count: 0,
            root_register,
        })
    }

    /// Builds a tree from leaves placed left to right, computing every inner
    /// node directly. This is the reference construction; it does not go
    /// through the register engine.
    pub fn from_leaves(
        alg: HashAlg,
        depth: u8,
        leaves: &[Digest],
        root_register: RegisterId,
    ) -> Result<Self, TreeError> {
        let mut t = Self::new(alg, depth, root_register)?;
        if leaves.len() as u64 > t.capacity() {
            return Err(TreeError::TooManyLeaves {
                capacity: t.capacity(),
                got: leaves.len() as u64,
            });
        }
        for (i, leaf) in leaves.iter().enumerate() {
            t.nodes[(1usize << depth) | i] = leaf.clone();
        }
        t.leaf_count = leaves.len() as u64;
        t.rehash_all();
        Ok(t)
    }

    /// Recomputes every inner node from the leaves.
    pub fn rehash_all(&mut self) {
        for level in (1..self.depth).rev() {
            for i in 0..(1u64 << level) {
                let c = Coord::from_index(level, i);
                let v = self.alg.extend(
                    &self.nodes[slot(&c.child(false))],
                    &self.nodes[slot(&c.child(true))],
                );
                self.nodes[slot(&c)] = v;
            }
        }
    }

    pub fn alg(&self) -> HashAlg {
        self.alg
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn capacity(&self) -> u64 {
        1u64 << self.depth
    }

    pub fn leaf_count(&self) -> u64 {
        self.leaf_count
    }

    pub fn set_leaf_count(&mut self, n: u64) {
        self.leaf_count = n;
    }

    pub fn root_register(&self) -> RegisterId {
        self.root_register
    }

    pub fn set_root_register(&mut self, r: RegisterId) {
        self.root_register = r;
    }

    pub fn check_coord(&self, c: &Coord) -> Result<(), TreeError> {
        if c.level() > self.depth {
            return Err(TreeError::CoordTooDeep {
                coord: *c,
                depth: self.depth,
            });
        }
        Ok(())
    }

    /// Value at a non-root coordinate inside the tree.
    pub fn get(&self, c: &Coord) -> Result<&Digest, TreeError> {
        self.check_coord(c)?;
        if c.is_root() {
            return Err(TreeError::EmptyCoord);
        }
        Ok(&self.nodes[slot(c)])
    }

    /// Overwrites a single node without touching anything else.
    pub fn set(&mut self, c: &Coord, value: Digest) -> Result<(), TreeError> {
        self.check_coord(c)?;
        if c.is_root() {
            return Err(TreeError::EmptyCoord);
        }
        self.alg.check(&value)?;
        self.nodes[slot(c)] = value;
        Ok(())
    }

    pub fn node_ref(&self, c: &Coord) -> Result<NodeRef, TreeError> {
        Ok(NodeRef::new(*c, self.get(c)?.clone()))
    }

    pub fn leaf(&self, index: u64) -> &Digest {
        &self.nodes[slot(&Coord::from_index(self.depth, index))]
    }

    /// All coordinates of length `1..=d` in breadth-first order.
    pub fn coords(&self) -> impl Iterator<Item = Coord> {
        let depth = self.depth;
        (1..=depth).flat_map(|level| (0..(1u64 << level)).map(move |i| Coord::from_index(level, i)))
    }

    pub fn trace(&self, c: &Coord) -> Result<Trace, TreeError> {
        self.check_coord(c)?;
        Ok(Trace {
            entries: c
                .trace_coords()?
                .into_iter()
                .map(|t| NodeRef::new(t, self.nodes[slot(&t)].clone()))
                .collect(),
        })
    }

    /// Reads the siblings of `c`'s trace from the SML. The root has an empty
    /// reduced tree.
    pub fn reduced_tree(&self, c: &Coord) -> Result<ReducedTree, TreeError> {
        self.check_coord(c)?;
        if c.is_root() {
            return Ok(ReducedTree::default());
        }
        Ok(ReducedTree {
            entries: c
                .reduced_coords()?
                .into_iter()
                .map(|r| NodeRef::new(r, self.nodes[slot(&r)].clone()))
                .collect(),
        })
    }

    /// Effective value of `c` recomputed from the leaves below it.
    ///
    /// An inner node whose whole subtree recomputes to `Nil` keeps its stored
    /// value: this is how a subtree replaced by a single update value (with
    /// the stale nodes below it cleared) is represented.
    pub fn recompute(&self, c: &Coord) -> Digest {
        if c.level() == self.depth {
            return self.nodes[slot(c)].clone();
        }
        let v = self.alg.extend(
            &self.recompute(&c.child(false)),
            &self.recompute(&c.child(true)),
        );
        if v.is_nil() && !c.is_root() {
            self.nodes[slot(c)].clone()
        } else {
            v
        }
    }

    /// Bottom-up recomputation of the root. Does not mutate the tree.
    pub fn recompute_root(&self) -> Digest {
        let mut level_vals: Vec<Digest> =
            (0..self.capacity()).map(|i| self.leaf(i).clone()).collect();
        for level in (0..self.depth).rev() {
            level_vals = (0..(1u64 << level))
                .map(|i| {
                    let v = self
                        .alg
                        .extend(&level_vals[2 * i as usize], &level_vals[2 * i as usize + 1]);
                    if v.is_nil() && level > 0 {
                        self.nodes[slot(&Coord::from_index(level, i))].clone()
                    } else {
                        v
                    }
                })
                .collect();
        }
        level_vals.pop().expect("one root")
    }

    /// Checks every inner node against its children, deepest level first,
    /// and finally the level-1 pair against `root` (when given). Returns the
    /// first coordinate whose stored value is inconsistent; the empty
    /// coordinate means the root comparison failed.
    pub fn first_inconsistency(&self, root: Option<&Digest>) -> Option<Coord> {
        for level in (1..self.depth).rev() {
            for i in 0..(1u64 << level) {
                let c = Coord::from_index(level, i);
                let l = &self.nodes[slot(&c.child(false))];
                let r = &self.nodes[slot(&c.child(true))];
                let stored = &self.nodes[slot(&c)];
                let collapsed = l.is_nil() && r.is_nil();
                if !collapsed && self.alg.extend(l, r) != *stored {
                    return Some(c);
                }
            }
        }
        let top = self.alg.extend(&self.nodes[2], &self.nodes[3]);
        match root {
            Some(v) if *v != top => Some(Coord::ROOT),
            _ => None,
        }
    }

    pub fn is_consistent(&self, root: Option<&Digest>) -> bool {
        self.first_inconsistency(root).is_none()
    }

    /// Writes a batch of node values.
    pub fn apply(&mut self, nodes: &[NodeRef]) -> Result<(), TreeError> {
        for n in nodes {
            if n.coord.is_root() {
                continue;
            }
            self.set(&n.coord, n.value.clone())?;
        }
        Ok(())
    }

    /// Clears every node strictly below `c` to `Nil`.
    pub fn clear_below(&mut self, c: &Coord) -> Result<(), TreeError> {
        self.check_coord(c)?;
        for level in (c.level() + 1)..=self.depth {
            let (start, end) = c.leaf_range(level);
            for i in start..end {
                self.nodes[(1usize << level) | i as usize] = Digest::Nil;
            }
        }
        Ok(())
    }

    /// Nodes strictly below `c` that hold a value.
    pub fn occupied_below(&self, c: &Coord) -> usize {
        ((c.level() + 1)..=self.depth)
            .map(|level| {
                let (start, end) = c.leaf_range(level);
                (start..end)
                    .filter(|&i| !self.nodes[(1usize << level) | i as usize].is_nil())
                    .count()
            })
            .sum()
    }

    /// Copies the subtree below `c` into a tree of depth `d - level(c)` with
    /// relative coordinates.
    pub fn subtree(&self, c: &Coord) -> Result<SmlTree, TreeError> {
        self.check_coord(c)?;
        let sub_depth = self.depth - c.level();
        let mut out = SmlTree::new(self.alg, sub_depth, self.root_register)?;
        for rel in out.coords().collect::<Vec<_>>() {
            out.nodes[slot(&rel)] = self.nodes[slot(&c.concat(&rel))].clone();
        }
        out.leaf_count = (0..out.capacity())
            .filter(|&i| !out.leaf(i).is_nil())
            .count() as u64;
        Ok(out)
    }

    /// Writes `sub` (relative coordinates) below `c`.
    pub fn graft(&mut self, c: &Coord, sub: &SmlTree) -> Result<(), TreeError> {
        self.check_coord(c)?;
        if sub.depth + c.level() != self.depth {
            return Err(TreeError::BadDepth(sub.depth));
        }
        for rel in sub.coords() {
            self.nodes[slot(&c.concat(&rel))] = sub.nodes[slot(&rel)].clone();
        }
        Ok(())
    }
}

impl Canonical for SmlTree {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.alg.id())
            .u8(self.depth)
            .u64(self.leaf_count)
            .u32(self.root_register.0 as u32);
        for c in self.coords() {
            enc.digest(&self.nodes[slot(&c)]);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let alg =
            HashAlg::from_id(dec.u8()?).ok_or_else(|| dec.invalid("unknown hash algorithm"))?;
        let depth = dec.u8()?;
        let leaf_count = dec.u64()?;
        let reg = u16::try_from(dec.u32()?).map_err(|_| dec.invalid("register id out of range"))?;
        // one byte per node at least; refuse before allocating
        if depth > MAX_TREE_DEPTH || dec.remaining() < (1usize << (depth + 1)) - 2 {
            return Err(dec.invalid("tree depth inconsistent with input length"));
        }
        let mut t =
            SmlTree::new(alg, depth, RegisterId(reg)).map_err(|e| dec.invalid(e.to_string()))?;
        if leaf_count > t.capacity() {
            return Err(dec.invalid("leaf count exceeds capacity"));
        }
        t.leaf_count = leaf_count;
        for c in t.coords().collect::<Vec<_>>() {
            let d = dec.digest()?;
            alg.check(&d).map_err(|e| dec.invalid(e.to_string()))?;
            t.nodes[slot(&c)] = d;
        }
        Ok(t)
    }
}

impl Canonical for NodeRef {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.coord).digest(&self.value);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(NodeRef::new(dec.decode()?, dec.digest()?))
    }
}
