// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use super::RegisterId;
use crate::codec::{Canonical, DecodeError, DecodeErrorKind, Decoder, Encoder};
use crate::crypto::{
    CryptoError, Digest, HashAlg, KeyId, Signature, SigningKey, Tag, VerifyingKey,
};
use crate::tree::Coord;

/// What a quote attests to. The variant determines the signed tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QuotePayload {
    /// Plain register quote (`QUOT`).
    Register { register: RegisterId, value: Digest },
    /// Verified tree node (`TREEQUOT`). The coordinate is only signed when
    /// the caller asks for it.
    TreeNode { value: Digest, coord: Option<Coord> },
    /// Node plus its reduced tree and the root, for the validator to check
    /// (`REDTREEQUOT`).
    ReducedTree {
        value: Digest,
        coord: Coord,
        reduced: Vec<Digest>,
        root_register: RegisterId,
        root_value: Digest,
    },
}

impl QuotePayload {
    pub fn tag(&self) -> Tag {
        match self {
            QuotePayload::Register { .. } => Tag::Quot,
            QuotePayload::TreeNode { .. } => Tag::TreeQuot,
            QuotePayload::ReducedTree { .. } => Tag::RedTreeQuot,
        }
    }

    pub fn value(&self) -> &Digest {
        match self {
            QuotePayload::Register { value, .. }
            | QuotePayload::TreeNode { value, .. }
            | QuotePayload::ReducedTree { value, .. } => value,
        }
    }
}

impl Canonical for QuotePayload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            QuotePayload::Register { register, value } => {
                enc.u8(0).u32(register.0 as u32).digest(value);
            }
            QuotePayload::TreeNode { value, coord } => {
                enc.u8(1).digest(value).option(coord.as_ref(), |e, c| {
                    e.encode(c);
                });
            }
            QuotePayload::ReducedTree {
                value,
                coord,
                reduced,
                root_register,
                root_value,
            } => {
                enc.u8(2)
                    .digest(value)
                    .encode(coord)
                    .seq(reduced, |e, d| {
                        e.digest(d);
                    })
                    .u32(root_register.0 as u32)
                    .digest(root_value);
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let reg = |dec: &mut Decoder<'_>| -> Result<RegisterId, DecodeError> {
            let r = dec.u32()?;
            u16::try_from(r)
                .map(RegisterId)
                .map_err(|_| dec.invalid("register id out of range"))
        };
        match dec.u8()? {
            0 => Ok(QuotePayload::Register {
                register: reg(dec)?,
                value: dec.digest()?,
            }),
            1 => Ok(QuotePayload::TreeNode {
                value: dec.digest()?,
                coord: dec.option(|d| d.decode())?,
            }),
            2 => Ok(QuotePayload::ReducedTree {
                value: dec.digest()?,
                coord: dec.decode()?,
                reduced: dec.seq(|d| d.digest())?,
                root_register: reg(dec)?,
                root_value: dec.digest()?,
            }),
            t => Err(dec.error(DecodeErrorKind::InvalidTag(t))),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuoteError {
    #[error("quote signature invalid: {0}")]
    Signature(#[from] CryptoError),
    #[error("quote nonce does not match the challenge")]
    Nonce,
    #[error("reduced-tree quote does not recompute to its root")]
    RootMismatch,
    #[error("reduced-tree quote has {got} siblings for a level-{level} node")]
    Shape { level: usize, got: usize },
}

/// An AIK-signed statement over a register or tree node value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quote {
    pub payload: QuotePayload,
    pub nonce: Vec<u8>,
    pub signature: Signature,
}

impl Quote {
    pub(crate) fn sign(payload: QuotePayload, aik: &SigningKey, nonce: &[u8]) -> Quote {
        let bytes = payload.to_canonical_bytes();
        let signature = aik.sign(payload.tag(), &bytes, nonce);
        Quote {
            payload,
            nonce: nonce.to_vec(),
            signature,
        }
    }

    pub fn tag(&self) -> Tag {
        self.payload.tag()
    }

    pub fn aik_id(&self) -> KeyId {
        self.signature.signer
    }

    /// The quoted node (or register) value.
    pub fn value(&self) -> &Digest {
        self.payload.value()
    }

    /// Checks the signature and, when `nonce` is given, that the quote
    /// answers that challenge.
    pub fn verify(&self, aik: &VerifyingKey, nonce: Option<&[u8]>) -> Result<(), QuoteError> {
        aik.verify(
            self.tag(),
            &self.payload.to_canonical_bytes(),
            &self.nonce,
            &self.signature,
        )?;
        if let Some(n) = nonce {
            if n != self.nonce.as_slice() {
                return Err(QuoteError::Nonce);
            }
        }
        Ok(())
    }

    /// For `REDTREEQUOT`: recompute the root from the node, its coordinate
    /// and the signed siblings, and compare with the signed root value.
    /// Other quote kinds pass trivially.
    pub fn check_reduced_tree(&self, alg: HashAlg) -> Result<(), QuoteError> {
        if let QuotePayload::ReducedTree {
            value,
            coord,
            reduced,
            root_value,
            ..
        } = &self.payload
        {
            if reduced.len() != coord.len() {
                return Err(QuoteError::Shape {
                    level: coord.len(),
                    got: reduced.len(),
                });
            }
            let mut acc = value.clone();
            for k in (1..=coord.len()).rev() {
                acc = alg.chiral_extend(&reduced[k - 1], coord.bit(k), &acc);
            }
            if acc != *root_value {
                return Err(QuoteError::RootMismatch);
            }
        }
        Ok(())
    }
}

impl Canonical for Quote {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.payload)
            .bytes(&self.nonce)
            .encode(&self.signature);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Quote {
            payload: dec.decode()?,
            nonce: dec.bytes()?.to_vec(),
            signature: dec.decode()?,
        })
    }
}
