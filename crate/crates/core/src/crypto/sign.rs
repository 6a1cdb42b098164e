// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use ed25519_dalek::{Signer as _, Verifier as _};
use sha2::{Digest as _, Sha256};

use super::CryptoError;
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};

/// Fixed string carried in every signed blob, telling the verifier what kind
/// of statement the signature covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Quot,
    TreeQuot,
    RedTreeQuot,
    Cert,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Quot => "QUOT",
            Tag::TreeQuot => "TREEQUOT",
            Tag::RedTreeQuot => "REDTREEQUOT",
            Tag::Cert => "CERT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "QUOT" => Some(Tag::Quot),
            "TREEQUOT" => Some(Tag::TreeQuot),
            "REDTREEQUOT" => Some(Tag::RedTreeQuot),
            "CERT" => Some(Tag::Cert),
            _ => None,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// SHA-256 fingerprint of a public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub [u8; 32]);

impl KeyId {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({}..)", hex::encode(&self.0[..6]))
    }
}

impl Canonical for KeyId {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let b = dec.bytes()?;
        let arr: [u8; 32] = b
            .try_into()
            .map_err(|_| dec.invalid("key id must be 32 bytes"))?;
        Ok(KeyId(arr))
    }
}

#[derive(Clone)]
pub struct SigningKey {
    inner: ed25519_dalek::SigningKey,
}

impl SigningKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self {
            inner: ed25519_dalek::SigningKey::from_bytes(&seed),
        }
    }

    pub fn from_seed_bytes(seed: &[u8]) -> Result<Self, CryptoError> {
        let seed: [u8; 32] = seed.try_into().map_err(|_| CryptoError::InvalidKey)?;
        Ok(Self::from_seed(seed))
    }

    pub fn seed(&self) -> [u8; 32] {
        self.inner.to_bytes()
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey {
            inner: self.inner.verifying_key(),
        }
    }

    pub fn key_id(&self) -> KeyId {
        self.verifying_key().key_id()
    }

    /// Deterministic signature over `(tag, payload, nonce)`.
    pub fn sign(&self, tag: Tag, payload: &[u8], nonce: &[u8]) -> Signature {
        let msg = signed_message(tag, payload, nonce);
        Signature {
            signer: self.key_id(),
            bytes: self.inner.sign(&msg).to_bytes(),
        }
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKey({:?})", self.key_id())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerifyingKey {
    inner: ed25519_dalek::VerifyingKey,
}

impl VerifyingKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::InvalidKey)?;
        ed25519_dalek::VerifyingKey::from_bytes(&arr)
            .map(|inner| Self { inner })
            .map_err(|_| CryptoError::InvalidKey)
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.inner.to_bytes()
    }

    pub fn key_id(&self) -> KeyId {
        KeyId(Sha256::digest(self.inner.as_bytes()).into())
    }

    pub fn verify(
        &self,
        tag: Tag,
        payload: &[u8],
        nonce: &[u8],
        sig: &Signature,
    ) -> Result<(), CryptoError> {
        if sig.signer != self.key_id() {
            return Err(CryptoError::WrongSigner);
        }
        let msg = signed_message(tag, payload, nonce);
        let s = ed25519_dalek::Signature::from_bytes(&sig.bytes);
        self.inner
            .verify(&msg, &s)
            .map_err(|_| CryptoError::BadSignature)
    }
}

impl fmt::Debug for VerifyingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerifyingKey({:?})", self.key_id())
    }
}

impl Canonical for VerifyingKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.to_bytes());
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let b = dec.bytes()?;
        VerifyingKey::from_bytes(b).map_err(|_| dec.invalid("invalid public key"))
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Signature {
    pub signer: KeyId,
    pub bytes: [u8; 64],
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature(by {:?})", self.signer)
    }
}

impl Canonical for Signature {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.signer).bytes(&self.bytes);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let signer = dec.decode()?;
        let b = dec.bytes()?;
        let bytes: [u8; 64] = b
            .try_into()
            .map_err(|_| dec.invalid("signature must be 64 bytes"))?;
        Ok(Signature { signer, bytes })
    }
}

fn signed_message(tag: Tag, payload: &[u8], nonce: &[u8]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str(tag.as_str()).bytes(payload).bytes(nonce);
    enc.finish()
}
