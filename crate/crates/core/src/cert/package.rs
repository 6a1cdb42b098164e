// SPDX-License-Identifier: Apache-2.0

use super::{AikCertificate, CertError, ReferenceValue};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{Digest, VerifyingKey};
use crate::engine::{EngineError, Quote, QuoteError, RegisterState, Verification};
use crate::tree::{Coord, NodeRef, SmlTree};
use crate::tss::Platform;

/// `Q ⊆ {P, s, C_a, a_pub}` plus optional coordinate and auxiliary data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttestationPackage {
    pub quote: Quote,
    /// `s`; omitted when the SCA is expected to know it.
    pub subject: Option<Digest>,
    pub aik_cert: Option<AikCertificate>,
    pub aik_pub: VerifyingKey,
    pub coord: Option<Coord>,
    /// Reference-value certificates for leaves the SCA may not know.
    pub reference_values: Vec<ReferenceValue>,
    /// The SML below `s` (relative coordinates), for composed certification.
    pub subtree: Option<SmlTree>,
}

impl Canonical for AttestationPackage {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.quote)
            .option(self.subject.as_ref(), |e, d| {
                e.digest(d);
            })
            .option(self.aik_cert.as_ref(), |e, c| {
                e.encode(c);
            })
            .encode(&self.aik_pub)
            .option(self.coord.as_ref(), |e, c| {
                e.encode(c);
            })
            .seq(&self.reference_values, |e, r| {
                e.encode(r);
            })
            .option(self.subtree.as_ref(), |e, t| {
                e.encode(t);
            });
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AttestationPackage {
            quote: dec.decode()?,
            subject: dec.option(|d| d.digest())?,
            aik_cert: dec.option(|d| d.decode())?,
            aik_pub: dec.decode()?,
            coord: dec.option(|d| d.decode())?,
            reference_values: dec.seq(|d| d.decode())?,
            subtree: dec.option(|d| d.decode())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackageOptions {
    pub include_subject: bool,
    pub include_aik_cert: bool,
    pub include_coord: bool,
    pub reference_values: Vec<ReferenceValue>,
    pub subtree: Option<SmlTree>,
}

impl Default for PackageOptions {
    fn default() -> Self {
        PackageOptions {
            include_subject: true,
            include_aik_cert: false,
            include_coord: false,
            reference_values: Vec::new(),
            subtree: None,
        }
    }
}

/// Phase 1: `P = Sig_a(s)`. A tree node gets a `TREEQUOT`; the root
/// coordinate gets a plain `QUOT` over the root register. Either way the
/// tree must be closed.
pub fn phase1_quote(
    platform: &mut Platform,
    coord: &Coord,
    nonce: &[u8],
    include_coord: bool,
) -> Result<Quote, CertError> {
    let root = platform.root_register();
    let state = platform
        .tpm
        .register(root)
        .map(|r| r.state)
        .unwrap_or(RegisterState::Free);
    if coord.is_root() && state != RegisterState::CompleteRoot {
        return Err(CertError::Tss(
            EngineError::StateViolation {
                command: "TPM_Quote",
                register: root,
                state,
            }
            .into(),
        ));
    }
    match platform.quote_node(coord, nonce, include_coord)? {
        Verification::Verified(q) => Ok(q),
        Verification::Mismatch => Err(CertError::Verification(*coord)),
    }
}

/// Phase 2: assembles `Q`. The quote is checked locally first.
pub fn phase2_package(
    quote: Quote,
    s: &NodeRef,
    aik_cert: Option<&AikCertificate>,
    aik_pub: &VerifyingKey,
    options: PackageOptions,
) -> Result<AttestationPackage, QuoteError> {
    quote.verify(aik_pub, None)?;
    Ok(AttestationPackage {
        quote,
        subject: options.include_subject.then(|| s.value.clone()),
        aik_cert: if options.include_aik_cert {
            aik_cert.cloned()
        } else {
            None
        },
        aik_pub: *aik_pub,
        coord: options.include_coord.then_some(s.coord),
        reference_values: options.reference_values,
        subtree: options.subtree,
    })
}
