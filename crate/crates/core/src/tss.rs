// SPDX-License-Identifier: Apache-2.0

//! Platform-side software stack: an engine plus the SML it roots.
//!
//! [`Platform`] keeps the SML mirror in step with the engine. Every command
//! that changes the root also writes the nodes it computed into the SML, so
//! `sml.recompute_root()` and the root register agree after each call.

use thiserror::Error;

use crate::crypto::{Digest, SigningKey};
use crate::engine::{
    EngineConfig, EngineError, ExtendOutcome, NodeVerifyReport, Quote, RegisterId, Tpm,
    UpdateOutcome, Verification,
};
use crate::tree::{Coord, NodeRef, ReducedTree, SmlTree, TreeError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TssError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

pub type Result<T> = std::result::Result<T, TssError>;

#[derive(Clone, Debug)]
pub struct Platform {
    pub tpm: Tpm,
    pub sml: SmlTree,
    pub aik: SigningKey,
}

impl Platform {
    /// A fresh engine with one empty depth-`depth` tree.
    pub fn new(config: EngineConfig, depth: u8, aik: SigningKey) -> Result<Self> {
        let mut tpm = Tpm::new(config);
        let (_, root) = tpm.create_tree(depth)?;
        let sml = SmlTree::new(config.alg, depth, root)?;
        Ok(Platform { tpm, sml, aik })
    }

    /// Builds a tree by sequential tree-extends. With `close` set the root
    /// is moved to CR even if the tree is not full.
    pub fn build(
        config: EngineConfig,
        depth: u8,
        measurements: &[Digest],
        aik: SigningKey,
        close: bool,
    ) -> Result<Self> {
        let mut p = Self::new(config, depth, aik)?;
        for m in measurements {
            p.extend(m)?;
        }
        if close {
            p.close()?;
        }
        Ok(p)
    }

    /// Wraps existing engine state (e.g. restored from disk).
    pub fn from_parts(tpm: Tpm, sml: SmlTree, aik: SigningKey) -> Self {
        Platform { tpm, sml, aik }
    }

    pub fn root_register(&self) -> RegisterId {
        self.sml.root_register()
    }

    pub fn root_value(&self) -> Digest {
        self.tpm
            .register(self.root_register())
            .map(|r| r.value.clone())
            .unwrap_or_default()
    }

    pub fn extend(&mut self, m: &Digest) -> Result<ExtendOutcome> {
        let out = self.tpm.tree_extend(self.root_register(), m)?;
        self.sml.apply(&out.nodes)?;
        self.sml.set_leaf_count(self.sml.leaf_count() + 1);
        Ok(out)
    }

    /// Closes the tree unless the engine already did so when it filled up.
    pub fn close(&mut self) -> Result<()> {
        let reg = self.root_register();
        let state = self.tpm.register(reg).map(|r| r.state);
        if state == Some(crate::engine::RegisterState::ActiveRoot) {
            self.tpm.close_tree(reg)?;
        }
        Ok(())
    }

    /// The node at `coord` as stored; the root coordinate reads the register.
    pub fn node(&self, coord: &Coord) -> Result<NodeRef> {
        if coord.is_root() {
            return Ok(NodeRef::new(Coord::ROOT, self.root_value()));
        }
        Ok(self.sml.node_ref(coord)?)
    }

    pub fn reduced_tree(&self, coord: &Coord) -> Result<ReducedTree> {
        Ok(self.sml.reduced_tree(coord)?)
    }

    /// Single-register verification of the stored node against the root.
    pub fn verify_node(&mut self, coord: &Coord) -> Result<Verification<Digest>> {
        let n = self.node(coord)?;
        let red = self.reduced_tree(coord)?;
        Ok(self
            .tpm
            .reduced_tree_verify(&n, &red, self.root_register())?)
    }

    /// Top-down verification of the stored trace of `coord`.
    pub fn node_verify(&mut self, coord: &Coord) -> Result<NodeVerifyReport> {
        let red = self.reduced_tree(coord)?;
        let trace = self.sml.trace(coord)?;
        Ok(self
            .tpm
            .tree_node_verify(coord, &red, &trace, self.root_register())?)
    }

    /// Verified update of one node. On success the new trace is written to
    /// the SML and the nodes below `coord`, which no longer hash to it, are
    /// cleared to nil.
    pub fn update_node(
        &mut self,
        coord: &Coord,
        new: &Digest,
    ) -> Result<Verification<UpdateOutcome>> {
        let n = self.node(coord)?;
        let red = self.reduced_tree(coord)?;
        let out = self
            .tpm
            .tree_node_verified_update(&n, new, &red, self.root_register())?;
        if let Verification::Verified(o) = &out {
            self.sml.apply(&o.trace.entries)?;
            let stale = self.sml.occupied_below(coord);
            self.sml.clear_below(coord)?;
            if stale > 0 {
                log::info!("update at {coord} invalidated {stale} nodes below it");
            }
        }
        Ok(out)
    }

    /// `TREEQUOT` over a node, or `QUOT` over the root register when `coord`
    /// is the root.
    pub fn quote_node(
        &mut self,
        coord: &Coord,
        nonce: &[u8],
        include_coord: bool,
    ) -> Result<Verification<Quote>> {
        let root = self.root_register();
        if coord.is_root() {
            let q = self.tpm.quote(root, &self.aik, nonce)?;
            return Ok(Verification::Verified(q));
        }
        let n = self.node(coord)?;
        let red = self.reduced_tree(coord)?;
        Ok(self
            .tpm
            .tree_node_quote(&n, &red, root, &self.aik, nonce, include_coord)?)
    }

    /// `REDTREEQUOT` over a node with its stored reduced tree.
    pub fn quote_reduced(&mut self, coord: &Coord, nonce: &[u8]) -> Result<Quote> {
        let n = self.node(coord)?;
        let red = self.reduced_tree(coord)?;
        Ok(self.tpm.reduced_tree_quote(
            &n,
            &red.values(),
            self.root_register(),
            &self.aik,
            nonce,
        )?)
    }
}
