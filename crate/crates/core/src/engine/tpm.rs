// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};

use log::debug;

use super::{
    BindingViolation, EngineError, ExtendOutcome, NodeVerifyReport, Quote, QuotePayload,
    RegisterId, RegisterInfo, RegisterState, SessionStatus, TreeUid, UpdateOutcome, UpdateSession,
    VdatEntry, Verification,
};
use crate::codec::Encoder;
use crate::crypto::{Digest, HashAlg, SigningKey};
use crate::tree::{Coord, NodeRef, ReducedTree, Trace, MAX_TREE_DEPTH};

pub const DEFAULT_REGISTERS: usize = 24;

type Result<T> = std::result::Result<T, EngineError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    pub alg: HashAlg,
    pub registers: usize,
    /// Close a tree (AR -> CR) as soon as it holds `2^d` leaves.
    pub auto_close: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            alg: HashAlg::Sha1,
            registers: DEFAULT_REGISTERS,
            auto_close: true,
        }
    }
}

/// Operation counters, for cost comparisons between update strategies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub commands: u64,
    /// Root comparisons (verify, verify-load, verified update, node quote).
    pub verifications: u64,
    /// Individual `⋄` evaluations inside the engine.
    pub extends: u64,
    pub tree_extends: u64,
    pub updates: u64,
}

#[derive(Clone, Debug)]
struct TreeState {
    depth: u8,
    leaf_count: u64,
    root: RegisterId,
    // frontier[h]: TB register holding the left node at height h, if any
    frontier: Vec<Option<RegisterId>>,
}

#[derive(Clone, Debug)]
struct SessionRecord {
    nonce: Digest,
    coord: Coord,
    root: RegisterId,
    // B_1..B_ℓ followed by V*
    bound: Vec<RegisterId>,
    status: SessionStatus,
}

/// The emulated register file and its command set.
///
/// Every public command runs to completion before the next one starts; any
/// command that names a register bound to an armed update session
/// invalidates that session, whether or not the command itself succeeds.
#[derive(Clone, Debug)]
pub struct Tpm {
    config: EngineConfig,
    regs: Vec<RegisterInfo>,
    trees: BTreeMap<TreeUid, TreeState>,
    next_tree: u32,
    sessions: HashMap<u64, SessionRecord>,
    next_session: u64,
    // rolls on every command; mixed into session nonces
    rolling: u64,
    stats: EngineStats,
}

impl Default for Tpm {
    fn default() -> Self {
        Self::new(EngineConfig::default())
    }
}

impl Tpm {
    pub fn new(config: EngineConfig) -> Self {
        assert!(config.registers > 0 && config.registers <= u16::MAX as usize);
        Tpm {
            config,
            regs: vec![RegisterInfo::default(); config.registers],
            trees: BTreeMap::new(),
            next_tree: 0,
            sessions: HashMap::new(),
            next_session: 1,
            rolling: 0,
            stats: EngineStats::default(),
        }
    }

    pub fn with_alg(alg: HashAlg) -> Self {
        Self::new(EngineConfig {
            alg,
            ..EngineConfig::default()
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn alg(&self) -> HashAlg {
        self.config.alg
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = EngineStats::default();
    }

    // ---- introspection (not commands; never touch sessions) ----

    pub fn register(&self, id: RegisterId) -> Option<&RegisterInfo> {
        self.regs.get(id.0 as usize)
    }

    pub fn registers(&self) -> impl Iterator<Item = (RegisterId, &RegisterInfo)> {
        self.regs
            .iter()
            .enumerate()
            .map(|(i, r)| (RegisterId(i as u16), r))
    }

    pub fn vdat(&self) -> Vec<VdatEntry> {
        self.registers()
            .filter(|(_, r)| r.state != RegisterState::Free)
            .map(|(id, r)| VdatEntry {
                register: id,
                state: r.state,
                tree: r.tree,
                coord: r.coord,
            })
            .collect()
    }

    pub fn free_count(&self) -> usize {
        self.regs
            .iter()
            .filter(|r| r.state == RegisterState::Free)
            .count()
    }

    pub fn session_status(&self, id: u64) -> Option<SessionStatus> {
        self.sessions.get(&id).map(|s| s.status)
    }

    pub fn tree_depth(&self, root: RegisterId) -> Option<u8> {
        self.tree_of(root).ok().map(|(_, t)| t.depth)
    }

    pub fn tree_leaf_count(&self, root: RegisterId) -> Option<u64> {
        self.tree_of(root).ok().map(|(_, t)| t.leaf_count)
    }

    /// Structural invariants of the allocation table.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (uid, t) in &self.trees {
            let roots: Vec<_> = self
                .registers()
                .filter(|(_, r)| r.tree == Some(*uid) && r.state.is_root())
                .map(|(id, _)| id)
                .collect();
            if roots != [t.root] {
                return Err(format!("tree {uid} has root registers {roots:?}"));
            }
            for tb in t.frontier.iter().flatten() {
                if self.regs[tb.0 as usize].state != RegisterState::TreeBuild {
                    return Err(format!("frontier register {tb} of {uid} is not TB"));
                }
            }
        }
        for (id, s) in &self.sessions {
            if s.status == SessionStatus::Armed {
                for b in &s.bound {
                    if self.regs[b.0 as usize].state != RegisterState::ReducedTree {
                        return Err(format!("session {id} bound register {b} is not RT"));
                    }
                }
            } else if !s.bound.is_empty() {
                return Err(format!("finished session {id} still holds registers"));
            }
        }
        Ok(())
    }

    /// Restores a register verbatim, e.g. from persisted device state.
    pub fn restore_register(&mut self, id: RegisterId, info: RegisterInfo) -> Result<()> {
        let slot = self
            .regs
            .get_mut(id.0 as usize)
            .ok_or(EngineError::NoSuchRegister(id))?;
        *slot = info;
        Ok(())
    }

    /// Restores tree bookkeeping for a root register restored with
    /// [`Tpm::restore_register`]. The TB frontier is rebuilt from
    /// `frontier` (height-indexed register ids).
    pub fn restore_tree(
        &mut self,
        uid: TreeUid,
        root: RegisterId,
        depth: u8,
        leaf_count: u64,
        frontier: Vec<Option<RegisterId>>,
    ) -> Result<()> {
        if depth == 0 || depth > MAX_TREE_DEPTH || frontier.len() != depth as usize {
            return Err(EngineError::InvalidArgument("bad tree state".into()));
        }
        self.trees.insert(
            uid,
            TreeState {
                depth,
                leaf_count,
                root,
                frontier,
            },
        );
        self.next_tree = self.next_tree.max(uid.0 + 1);
        Ok(())
    }

    /// Height-indexed TB registers of the tree rooted at `root`.
    pub fn tree_frontier(&self, root: RegisterId) -> Option<(TreeUid, Vec<Option<RegisterId>>)> {
        self.tree_of(root)
            .ok()
            .map(|(uid, t)| (uid, t.frontier.clone()))
    }

    // ---- plumbing ----

    fn info(&self, id: RegisterId) -> Result<&RegisterInfo> {
        self.regs
            .get(id.0 as usize)
            .ok_or(EngineError::NoSuchRegister(id))
    }

    fn slot(&mut self, id: RegisterId) -> &mut RegisterInfo {
        &mut self.regs[id.0 as usize]
    }

    /// Runs one command: counts it, rolls the nonce, invalidates sessions
    /// bound to any named register, and afterwards frees registers held by
    /// sessions that are no longer armed.
    fn run<T>(
        &mut self,
        name: &'static str,
        named: &[RegisterId],
        body: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        self.stats.commands += 1;
        self.rolling += 1;
        for s in self.sessions.values_mut() {
            if s.status == SessionStatus::Armed
                && named.iter().any(|r| *r == s.root || s.bound.contains(r))
            {
                s.status = SessionStatus::Invalidated;
            }
        }
        let out = body(self);
        self.sweep_sessions();
        match &out {
            Ok(_) => debug!("{name} regs={named:?} -> ok"),
            Err(e) => debug!("{name} regs={named:?} -> {e}"),
        }
        out
    }

    fn sweep_sessions(&mut self) {
        let mut to_free = Vec::new();
        for s in self.sessions.values_mut() {
            if s.status != SessionStatus::Armed && !s.bound.is_empty() {
                to_free.append(&mut s.bound);
            }
        }
        for r in to_free {
            if self.regs[r.0 as usize].state == RegisterState::ReducedTree {
                self.free(r);
            }
        }
    }

    fn free(&mut self, id: RegisterId) {
        *self.slot(id) = RegisterInfo::default();
    }

    fn alloc(&mut self, n: usize, state: RegisterState) -> Result<Vec<RegisterId>> {
        let free: Vec<RegisterId> = self
            .registers()
            .filter(|(_, r)| r.state == RegisterState::Free)
            .map(|(id, _)| id)
            .take(n)
            .collect();
        if free.len() < n {
            return Err(EngineError::InsufficientRegisters {
                needed: n,
                free: self.free_count(),
            });
        }
        for id in &free {
            *self.slot(*id) = RegisterInfo {
                value: Digest::Nil,
                state,
                tree: None,
                coord: None,
            };
        }
        Ok(free)
    }

    fn ensure_free(&self, n: usize) -> Result<()> {
        let free = self.free_count();
        if free < n {
            return Err(EngineError::InsufficientRegisters { needed: n, free });
        }
        Ok(())
    }

    fn ext(&mut self, x: &Digest, y: &Digest) -> Digest {
        self.stats.extends += 1;
        self.config.alg.extend(x, y)
    }

    fn chiral(&mut self, x: &Digest, right: bool, y: &Digest) -> Digest {
        self.stats.extends += 1;
        self.config.alg.chiral_extend(x, right, y)
    }

    fn tree_of(&self, root: RegisterId) -> Result<(TreeUid, &TreeState)> {
        let info = self.info(root)?;
        match (info.state, info.tree) {
            (s, Some(uid)) if s.is_root() => Ok((uid, &self.trees[&uid])),
            (state, _) => Err(EngineError::StateViolation {
                command: "tree root",
                register: root,
                state,
            }),
        }
    }

    /// Checks that `root` holds a tree root and that `(n, reduced)` are
    /// well-formed for it. Returns the root state.
    fn check_node_args(
        &self,
        command: &'static str,
        root: RegisterId,
        coord: &Coord,
        value: &Digest,
        reduced: &[NodeRef],
    ) -> Result<RegisterState> {
        let info = self.info(root)?;
        if !info.state.is_root() {
            return Err(EngineError::StateViolation {
                command,
                register: root,
                state: info.state,
            });
        }
        let (_, tree) = self.tree_of(root)?;
        if coord.level() > tree.depth {
            return Err(EngineError::InvalidArgument(format!(
                "coordinate {coord} deeper than tree depth {}",
                tree.depth
            )));
        }
        let shape = ReducedTree {
            entries: reduced.to_vec(),
        };
        if !shape.matches(coord) {
            return Err(EngineError::InvalidArgument(format!(
                "reduced tree does not match coordinate {coord}"
            )));
        }
        self.config.alg.check(value)?;
        for r in reduced {
            self.config.alg.check(&r.value)?;
        }
        Ok(info.state)
    }

    fn trace_from_emitted(coord: &Coord, mut emitted: Vec<Digest>) -> Trace {
        // emitted runs from the node upwards
        emitted.reverse();
        let coords = if coord.is_root() {
            Vec::new()
        } else {
            coord.trace_coords().expect("non-root")
        };
        Trace {
            entries: coords
                .into_iter()
                .zip(emitted)
                .map(|(c, v)| NodeRef::new(c, v))
                .collect(),
        }
    }

    // ---- register administration ----

    /// Allocates a free register as the active root of a new, empty tree.
    pub fn create_tree(&mut self, depth: u8) -> Result<(TreeUid, RegisterId)> {
        self.run("TPM_Tree_Create", &[], |tpm| {
            if depth == 0 || depth > MAX_TREE_DEPTH {
                return Err(EngineError::InvalidArgument(format!("tree depth {depth}")));
            }
            let reg = tpm.alloc(1, RegisterState::ActiveRoot)?[0];
            let uid = TreeUid(tpm.next_tree);
            tpm.next_tree += 1;
            tpm.slot(reg).tree = Some(uid);
            tpm.slot(reg).coord = Some(Coord::ROOT);
            tpm.trees.insert(
                uid,
                TreeState {
                    depth,
                    leaf_count: 0,
                    root: reg,
                    frontier: vec![None; depth as usize],
                },
            );
            Ok((uid, reg))
        })
    }

    /// AR -> CR. The tree accepts no further tree-extends.
    pub fn close_tree(&mut self, reg: RegisterId) -> Result<()> {
        self.run("TPM_Tree_Close", &[reg], |tpm| {
            let info = tpm.info(reg)?;
            if info.state != RegisterState::ActiveRoot {
                return Err(EngineError::IllegalTransition {
                    command: "close",
                    register: reg,
                    from: info.state,
                });
            }
            tpm.close_inner(reg);
            Ok(())
        })
    }

    fn close_inner(&mut self, reg: RegisterId) {
        let uid = self.regs[reg.0 as usize].tree.expect("root has tree");
        self.slot(reg).state = RegisterState::CompleteRoot;
        let frontier = std::mem::take(&mut self.trees.get_mut(&uid).unwrap().frontier);
        for tb in frontier.iter().flatten() {
            self.free(*tb);
        }
        self.trees.get_mut(&uid).unwrap().frontier = vec![None; frontier.len()];
    }

    /// Returns a register to the free pool: a loaded reduced-tree register
    /// (its session is invalidated), or a tree root together with the whole
    /// tree and its scratch registers.
    pub fn release(&mut self, reg: RegisterId) -> Result<()> {
        self.run("TPM_Release", &[reg], |tpm| {
            let info = tpm.info(reg)?.clone();
            match info.state {
                RegisterState::ReducedTree => {
                    tpm.free(reg);
                    Ok(())
                }
                RegisterState::ActiveRoot | RegisterState::CompleteRoot => {
                    let uid = info.tree.expect("root has tree");
                    let tree = tpm.trees.remove(&uid).expect("tree exists");
                    for tb in tree.frontier.iter().flatten() {
                        tpm.free(*tb);
                    }
                    tpm.free(reg);
                    Ok(())
                }
                from => Err(EngineError::IllegalTransition {
                    command: "release",
                    register: reg,
                    from,
                }),
            }
        })
    }

    /// Sets the nil flag of an unmanaged register.
    pub fn reset_to_nil(&mut self, reg: RegisterId) -> Result<()> {
        self.run("TPM_PCR_Reset", &[reg], |tpm| {
            let info = tpm.info(reg)?;
            if info.state != RegisterState::Free {
                return Err(EngineError::IllegalTransition {
                    command: "reset",
                    register: reg,
                    from: info.state,
                });
            }
            tpm.slot(reg).value = Digest::Nil;
            Ok(())
        })
    }

    /// Ordinary extend `V <- V ⋄ m` on an unmanaged register. With `V` nil
    /// this writes `m` directly.
    pub fn pcr_extend(&mut self, reg: RegisterId, m: &Digest) -> Result<Digest> {
        self.run("TPM_Extend", &[reg], |tpm| {
            tpm.config.alg.check(m)?;
            let info = tpm.info(reg)?;
            if info.state != RegisterState::Free {
                return Err(EngineError::StateViolation {
                    command: "TPM_Extend",
                    register: reg,
                    state: info.state,
                });
            }
            let v = info.value.clone();
            let out = tpm.ext(&v, m);
            tpm.slot(reg).value = out.clone();
            Ok(out)
        })
    }

    pub fn pcr_read(&mut self, reg: RegisterId) -> Result<Digest> {
        self.run("TPM_PCRRead", &[reg], |tpm| {
            Ok(tpm.info(reg)?.value.clone())
        })
    }

    // ---- tree building ----

    /// Appends `m` at the next free leaf of the tree rooted in `reg`.
    ///
    /// Completed left subtrees wait in TB registers, one per height, and are
    /// merged upward like carries in a binary counter. The root register
    /// always holds the root of the current tree with unoccupied positions
    /// treated as nil.
    pub fn tree_extend(&mut self, reg: RegisterId, m: &Digest) -> Result<ExtendOutcome> {
        self.run("TPM_Tree_Extend", &[reg], |tpm| {
            tpm.config.alg.check(m)?;
            let info = tpm.info(reg)?.clone();
            let uid = match (info.state, info.tree) {
                (s, Some(uid)) if s.is_root() => uid,
                (state, _) => {
                    return Err(EngineError::StateViolation {
                        command: "TPM_Tree_Extend",
                        register: reg,
                        state,
                    })
                }
            };
            let tree = tpm.trees[&uid].clone();
            if tree.leaf_count >= 1u64 << tree.depth {
                return Err(EngineError::TreeComplete(reg));
            }
            if info.state != RegisterState::ActiveRoot {
                return Err(EngineError::StateViolation {
                    command: "TPM_Tree_Extend",
                    register: reg,
                    state: info.state,
                });
            }

            let mut frontier = tree.frontier.clone();
            let leaf = Coord::from_index(tree.depth, tree.leaf_count);
            let mut coord = leaf;
            let mut cur = m.clone();
            let mut nodes = vec![NodeRef::new(coord, cur.clone())];
            for slot in frontier.iter_mut() {
                if coord.is_right() {
                    let tb = slot.expect("left sibling is buffered");
                    let left = tpm.regs[tb.0 as usize].value.clone();
                    cur = tpm.ext(&left, &cur);
                } else {
                    let tb = match *slot {
                        Some(tb) => tb,
                        None => {
                            let tb = tpm.alloc(1, RegisterState::TreeBuild)?[0];
                            tpm.slot(tb).tree = Some(uid);
                            *slot = Some(tb);
                            tb
                        }
                    };
                    tpm.slot(tb).value = cur.clone();
                }
                coord = coord.parent().expect("below root");
                if !coord.is_root() {
                    nodes.push(NodeRef::new(coord, cur.clone()));
                }
            }

            tpm.stats.tree_extends += 1;
            tpm.slot(reg).value = cur.clone();
            let t = tpm.trees.get_mut(&uid).unwrap();
            t.frontier = frontier;
            t.leaf_count += 1;
            let full = t.leaf_count == 1u64 << t.depth;
            if full && tpm.config.auto_close {
                tpm.close_inner(reg);
            }
            Ok(ExtendOutcome {
                leaf,
                nodes,
                root: cur,
                full,
            })
        })
    }

    // ---- verification ----

    /// Verified load: recompute the root from `n` and its reduced tree using
    /// `ℓ+1` registers. On a match the loaded registers stay bound to an
    /// update session and the computed trace is returned; on a mismatch
    /// they are released.
    pub fn reduced_tree_verify_load(
        &mut self,
        n: &NodeRef,
        reduced: &ReducedTree,
        root: RegisterId,
    ) -> Result<Verification<(Trace, UpdateSession)>> {
        self.run("TPM_Reduced_Tree_Verify_Load", &[root], |tpm| {
            tpm.load_inner(n, reduced, root)
        })
    }

    fn load_inner(
        &mut self,
        n: &NodeRef,
        reduced: &ReducedTree,
        root: RegisterId,
    ) -> Result<Verification<(Trace, UpdateSession)>> {
        tpm_check(self, "TPM_Reduced_Tree_Verify_Load", root, n, reduced)?;
        let level = n.coord.len();
        let regs = self.alloc(level + 1, RegisterState::ReducedTree)?;
        let (buf, vstar) = regs.split_at(level);
        let vstar = vstar[0];
        for (b, r) in buf.iter().zip(&reduced.entries) {
            let s = self.slot(*b);
            s.value = r.value.clone();
            s.coord = Some(r.coord);
        }
        self.slot(vstar).value = n.value.clone();
        self.slot(vstar).coord = Some(n.coord);
        self.stats.verifications += 1;

        let mut emitted = Vec::with_capacity(level);
        for k in (1..=level).rev() {
            let cur = self.regs[vstar.0 as usize].value.clone();
            emitted.push(cur.clone());
            let bk = self.regs[buf[k - 1].0 as usize].value.clone();
            let next = self.chiral(&bk, n.coord.bit(k), &cur);
            self.slot(vstar).value = next;
        }

        if self.regs[vstar.0 as usize].value != self.regs[root.0 as usize].value {
            for r in &regs {
                self.free(*r);
            }
            return Ok(Verification::Mismatch);
        }

        let id = self.next_session;
        self.next_session += 1;
        let nonce = self.session_nonce(id);
        self.sessions.insert(
            id,
            SessionRecord {
                nonce: nonce.clone(),
                coord: n.coord,
                root,
                bound: regs.clone(),
                status: SessionStatus::Armed,
            },
        );
        let trace = Self::trace_from_emitted(&n.coord, emitted);
        Ok(Verification::Verified((
            trace,
            UpdateSession {
                id,
                nonce,
                coord: n.coord,
                root,
            },
        )))
    }

    fn session_nonce(&self, id: u64) -> Digest {
        let mut enc = Encoder::new();
        enc.str("session").u64(id).u64(self.rolling);
        self.config.alg.hash(&enc.finish())
    }

    /// Single-register verification: streams the reduced tree through one
    /// buffer and returns the root on a match. Arms no session.
    pub fn reduced_tree_verify(
        &mut self,
        n: &NodeRef,
        reduced: &ReducedTree,
        root: RegisterId,
    ) -> Result<Verification<Digest>> {
        self.run("TPM_Reduced_Tree_Verify", &[root], |tpm| {
            tpm.verify_inner(n, reduced, root, 1)
                .map(|v| v.map(|(root, _)| root))
        })
    }

    /// Returns the root value and the buffer register (still allocated when
    /// `keep` > 1 so quoting can use a copy of `n`).
    fn verify_inner(
        &mut self,
        n: &NodeRef,
        reduced: &ReducedTree,
        root: RegisterId,
        registers: usize,
    ) -> Result<Verification<(Digest, Vec<RegisterId>)>> {
        tpm_check(self, "TPM_Reduced_Tree_Verify", root, n, reduced)?;
        self.ensure_free(registers)?;
        let regs = self.alloc(registers, RegisterState::ReducedTree)?;
        let b = regs[0];
        for r in &regs {
            self.slot(*r).value = n.value.clone();
        }
        self.stats.verifications += 1;
        for k in (1..=n.coord.len()).rev() {
            let cur = self.regs[b.0 as usize].value.clone();
            let next = self.chiral(&reduced.entries[k - 1].value, n.coord.bit(k), &cur);
            self.slot(b).value = next;
        }
        let v = self.regs[root.0 as usize].value.clone();
        let ok = self.regs[b.0 as usize].value == v;
        self.free(b);
        if !ok {
            for r in &regs {
                self.free(*r);
            }
            return Ok(Verification::Mismatch);
        }
        Ok(Verification::Verified((v, regs[1..].to_vec())))
    }

    /// Full top-down verification of a node's trace against the root,
    /// reporting the first level at which the chain breaks.
    pub fn tree_node_verify(
        &mut self,
        coord: &Coord,
        reduced: &ReducedTree,
        trace: &Trace,
        root: RegisterId,
    ) -> Result<NodeVerifyReport> {
        self.run("TPM_Tree_Node_Verify", &[root], |tpm| {
            let info = tpm.info(root)?;
            if !info.state.is_root() {
                return Err(EngineError::StateViolation {
                    command: "TPM_Tree_Node_Verify",
                    register: root,
                    state: info.state,
                });
            }
            if coord.is_root() {
                return Err(EngineError::InvalidArgument(
                    "root coordinate has no trace".into(),
                ));
            }
            let trace_ok = trace.len() == coord.len()
                && trace
                    .entries
                    .iter()
                    .zip(coord.trace_coords().expect("non-root"))
                    .all(|(e, c)| e.coord == c);
            if !trace_ok || !reduced.matches(coord) {
                return Err(EngineError::InvalidArgument(format!(
                    "trace or reduced tree does not match coordinate {coord}"
                )));
            }
            let depth = tpm.tree_of(root)?.1.depth;
            if coord.level() > depth {
                return Err(EngineError::InvalidArgument(format!(
                    "coordinate {coord} deeper than tree depth {depth}"
                )));
            }
            for e in trace.entries.iter().chain(&reduced.entries) {
                tpm.config.alg.check(&e.value)?;
            }

            let regs = tpm.alloc(3, RegisterState::ReducedTree)?;
            let (b, c, d) = (regs[0], regs[1], regs[2]);
            let v = tpm.regs[root.0 as usize].value.clone();
            tpm.slot(c).value = v;
            tpm.stats.verifications += 1;
            let mut report = NodeVerifyReport::Ok;
            for k in 1..=coord.len() {
                let tk = trace.entries[k - 1].value.clone();
                tpm.slot(b).value = tk.clone();
                tpm.slot(d).value = tk.clone();
                let computed = tpm.chiral(&reduced.entries[k - 1].value, coord.bit(k), &tk);
                tpm.slot(b).value = computed.clone();
                if tpm.regs[c.0 as usize].value == computed {
                    tpm.slot(c).value = tpm.regs[d.0 as usize].value.clone();
                } else {
                    report = NodeVerifyReport::Breach { level: k, computed };
                    break;
                }
            }
            for r in regs {
                tpm.free(r);
            }
            Ok(report)
        })
    }

    // ---- update ----

    /// Writes `new` at the node fixed by a preceding verified load and
    /// propagates it to the root through the loaded siblings.
    pub fn reduced_tree_update(
        &mut self,
        session: &UpdateSession,
        new: &Digest,
    ) -> Result<UpdateOutcome> {
        let named = self
            .sessions
            .get(&session.id)
            .map(|s| s.root)
            .into_iter()
            .collect::<Vec<_>>();
        // the update is the one command allowed to use its own bound registers
        self.stats.commands += 1;
        self.rolling += 1;
        let out = self.update_inner(session, new);
        // any other session bound to the same root is now stale
        for (id, s) in self.sessions.iter_mut() {
            if *id != session.id && s.status == SessionStatus::Armed && named.contains(&s.root) {
                s.status = SessionStatus::Invalidated;
            }
        }
        self.sweep_sessions();
        match &out {
            Ok(_) => debug!("TPM_Reduced_Tree_Update session={} -> ok", session.id),
            Err(e) => debug!("TPM_Reduced_Tree_Update session={} -> {e}", session.id),
        }
        out
    }

    fn update_inner(&mut self, session: &UpdateSession, new: &Digest) -> Result<UpdateOutcome> {
        let rec = self
            .sessions
            .get(&session.id)
            .ok_or(EngineError::BindingViolation(BindingViolation::Unknown))?;
        match rec.status {
            SessionStatus::Armed => {}
            SessionStatus::Consumed => {
                return Err(EngineError::BindingViolation(BindingViolation::Consumed))
            }
            SessionStatus::Invalidated => {
                return Err(EngineError::BindingViolation(BindingViolation::Invalidated))
            }
        }
        if rec.nonce != session.nonce || rec.coord != session.coord || rec.root != session.root {
            return Err(EngineError::BindingViolation(
                BindingViolation::NonceMismatch,
            ));
        }
        self.config.alg.check(new)?;
        let rec = rec.clone();
        for b in &rec.bound {
            if self.regs[b.0 as usize].state != RegisterState::ReducedTree {
                return Err(EngineError::BindingViolation(BindingViolation::Invalidated));
            }
        }

        let level = rec.coord.len();
        let root = rec.root;
        self.stats.updates += 1;
        self.slot(root).value = new.clone();
        let mut emitted = Vec::with_capacity(level);
        for k in (1..=level).rev() {
            let cur = self.regs[root.0 as usize].value.clone();
            emitted.push(cur.clone());
            let bk = self.regs[rec.bound[k - 1].0 as usize].value.clone();
            let next = self.chiral(&bk, rec.coord.bit(k), &cur);
            self.slot(root).value = next;
        }
        let s = self.sessions.get_mut(&session.id).unwrap();
        s.status = SessionStatus::Consumed;
        Ok(UpdateOutcome {
            trace: Self::trace_from_emitted(&rec.coord, emitted),
            root: self.regs[root.0 as usize].value.clone(),
        })
    }

    /// Verified load followed by update, as one command. A verification
    /// failure leaves the root and all registers unchanged.
    pub fn tree_node_verified_update(
        &mut self,
        n: &NodeRef,
        new: &Digest,
        reduced: &ReducedTree,
        root: RegisterId,
    ) -> Result<Verification<UpdateOutcome>> {
        self.run("TPM_Tree_Node_Verified_Update", &[root], |tpm| {
            tpm.config.alg.check(new)?;
            match tpm.load_inner(n, reduced, root)? {
                Verification::Mismatch => Ok(Verification::Mismatch),
                Verification::Verified((_, session)) => {
                    tpm.update_inner(&session, new).map(Verification::Verified)
                }
            }
        })
    }

    // ---- quotes ----

    /// Plain register quote (`QUOT`).
    pub fn quote(&mut self, reg: RegisterId, aik: &SigningKey, nonce: &[u8]) -> Result<Quote> {
        self.run("TPM_Quote", &[reg], |tpm| {
            let value = tpm.info(reg)?.value.clone();
            Ok(Quote::sign(
                QuotePayload::Register {
                    register: reg,
                    value,
                },
                aik,
                nonce,
            ))
        })
    }

    /// Verifies `n` against a complete root and signs its value (`TREEQUOT`).
    /// The coordinate is included only when `include_coord` is set.
    pub fn tree_node_quote(
        &mut self,
        n: &NodeRef,
        reduced: &ReducedTree,
        root: RegisterId,
        aik: &SigningKey,
        nonce: &[u8],
        include_coord: bool,
    ) -> Result<Verification<Quote>> {
        self.run("TPM_Tree_Node_Quote", &[root], |tpm| {
            tpm.require_complete_root("TPM_Tree_Node_Quote", root)?;
            // one buffer for the verification, one copy of n to quote
            let v = tpm.verify_inner(n, reduced, root, 2)?;
            Ok(match v {
                Verification::Mismatch => Verification::Mismatch,
                Verification::Verified((_, copy)) => {
                    let quoted = tpm.regs[copy[0].0 as usize].value.clone();
                    for r in copy {
                        tpm.free(r);
                    }
                    Verification::Verified(Quote::sign(
                        QuotePayload::TreeNode {
                            value: quoted,
                            coord: include_coord.then_some(n.coord),
                        },
                        aik,
                        nonce,
                    ))
                }
            })
        })
    }

    /// Signs a node, its reduced tree values and the selected root without
    /// verifying them (`REDTREEQUOT`); the validator does the recomputation.
    pub fn reduced_tree_quote(
        &mut self,
        n: &NodeRef,
        reduced: &[Digest],
        root: RegisterId,
        aik: &SigningKey,
        nonce: &[u8],
    ) -> Result<Quote> {
        self.run("TPM_Reduced_Tree_Quote", &[root], |tpm| {
            tpm.require_complete_root("TPM_Reduced_Tree_Quote", root)?;
            if reduced.len() != n.coord.len() {
                return Err(EngineError::InvalidArgument(format!(
                    "{} sibling values for a level-{} node",
                    reduced.len(),
                    n.coord.len()
                )));
            }
            tpm.config.alg.check(&n.value)?;
            for r in reduced {
                tpm.config.alg.check(r)?;
            }
            let root_value = tpm.regs[root.0 as usize].value.clone();
            Ok(Quote::sign(
                QuotePayload::ReducedTree {
                    value: n.value.clone(),
                    coord: n.coord,
                    reduced: reduced.to_vec(),
                    root_register: root,
                    root_value,
                },
                aik,
                nonce,
            ))
        })
    }

    fn require_complete_root(&self, command: &'static str, root: RegisterId) -> Result<()> {
        let info = self.info(root)?;
        if info.state != RegisterState::CompleteRoot {
            return Err(EngineError::StateViolation {
                command,
                register: root,
                state: info.state,
            });
        }
        Ok(())
    }
}

fn tpm_check(
    tpm: &Tpm,
    command: &'static str,
    root: RegisterId,
    n: &NodeRef,
    reduced: &ReducedTree,
) -> Result<()> {
    tpm.check_node_args(command, root, &n.coord, &n.value, &reduced.entries)
        .map(|_| ())
}
