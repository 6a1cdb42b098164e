// SPDX-License-Identifier: Apache-2.0

//! Hashing, the extend operation and its chiral variant, and the deterministic
//! signatures used for quotes and certificates.

mod digest;
mod sign;

use thiserror::Error;

pub use digest::{Digest, HashAlg};
pub use sign::{KeyId, Signature, SigningKey, Tag, VerifyingKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid key material")]
    InvalidKey,
    #[error("signature does not verify")]
    BadSignature,
    #[error("signature was made by a different key")]
    WrongSigner,
    #[error("digest length {got}, expected {expected}")]
    DigestLength { expected: usize, got: usize },
    #[error("invalid hex digest {0:?}")]
    BadHex(String),
}
