// SPDX-License-Identifier: Apache-2.0

//! Emulated verification data registers rooting Merkle trees of
//! measurements, with subtree certification between a platform, a subtree
//! certification authority and a validator.

pub mod cert;
pub mod codec;
pub mod crypto;
pub mod discovery;
pub mod engine;
pub mod tree;
pub mod tss;
pub mod wire;
