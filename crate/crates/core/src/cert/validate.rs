// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;

use thiserror::Error;

use super::{binding_left, AikCertificate, CertBinding, CertMode, ScaResponse, SubtreeCertificate};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{CryptoError, Digest, HashAlg, VerifyingKey};
use crate::engine::{Quote, QuoteError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RejectReason {
    #[error("quote signature does not verify under the AIK: {0}")]
    QuoteSignature(QuoteError),
    #[error("quote nonce is stale or was never issued")]
    Freshness,
    #[error("reduced-tree quote does not recompute to its root: {0}")]
    ReducedTree(QuoteError),
    #[error("AIK certificate rejected: {0}")]
    AikCertificate(CryptoError),
    #[error("the AIK is not vouched for by the PCA")]
    AikUntrusted,
    #[error("subtree certificate signature invalid: {0}")]
    CertificateSignature(CryptoError),
    #[error("certificate is bound to a different AIK")]
    BindingMismatch,
    #[error("certificate-embedded quote is invalid: {0}")]
    EmbeddedQuote(QuoteError),
    #[error("quoted value does not match the certified node")]
    NodeValueMismatch,
}

/// How the quoted value was tied to the certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Evidence {
    /// The quote is over `s` itself.
    Direct,
    /// The quote is over `m(C_s) ⋄ m(M_s)`, the left child of a full binding.
    BindingLeft,
    /// The quote is over `k`, recomputed from the disclosed `s_old`.
    BindingNode,
}

/// Everything a platform submits for validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationData {
    pub quote: Quote,
    pub response: ScaResponse,
    pub aik_pub: VerifyingKey,
    pub aik_cert: Option<AikCertificate>,
    /// `s`, disclosed (needed to check a `k` quote or a concealed direct quote).
    pub subject: Option<Digest>,
}

impl ValidationData {
    pub fn certificate(&self) -> &SubtreeCertificate {
        &self.response.certificate
    }
}

impl Canonical for ValidationData {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.quote)
            .encode(&self.response)
            .encode(&self.aik_pub)
            .option(self.aik_cert.as_ref(), |e, c| {
                e.encode(c);
            })
            .option(self.subject.as_ref(), |e, d| {
                e.digest(d);
            });
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ValidationData {
            quote: dec.decode()?,
            response: dec.decode()?,
            aik_pub: dec.decode()?,
            aik_cert: dec.option(|d| d.decode())?,
            subject: dec.option(|d| d.digest())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Accepted {
    pub mode: CertMode,
    pub evidence: Evidence,
    pub properties: Vec<(String, String)>,
}

/// Validator: issues challenges and checks validation data against them.
#[derive(Clone, Debug)]
pub struct Validator {
    alg: HashAlg,
    sca: VerifyingKey,
    pca: Option<VerifyingKey>,
    outstanding: HashSet<Vec<u8>>,
}

impl Validator {
    pub fn new(alg: HashAlg, sca: VerifyingKey) -> Self {
        Validator {
            alg,
            sca,
            pca: None,
            outstanding: HashSet::new(),
        }
    }

    /// Requires the AIK to be vouched for by this PCA, either through a
    /// submitted AIK certificate or the SCA's manifest statement.
    pub fn with_pca(mut self, pca: VerifyingKey) -> Self {
        self.pca = Some(pca);
        self
    }

    /// A fresh nonce; each is accepted once.
    pub fn challenge(&mut self) -> Vec<u8> {
        let nonce: [u8; 20] = rand::random();
        self.outstanding.insert(nonce.to_vec());
        nonce.to_vec()
    }

    /// Registers a challenge issued elsewhere, e.g. by an earlier process.
    pub fn expect_challenge(&mut self, nonce: &[u8]) {
        self.outstanding.insert(nonce.to_vec());
    }

    pub fn validate_subtree(&mut self, data: &ValidationData) -> Result<Accepted, RejectReason> {
        let q = &data.quote;
        q.verify(&data.aik_pub, None)
            .map_err(RejectReason::QuoteSignature)?;
        if !self.outstanding.remove(&q.nonce) {
            return Err(RejectReason::Freshness);
        }
        q.check_reduced_tree(self.alg)
            .map_err(RejectReason::ReducedTree)?;

        let cert = data.certificate();
        if let Some(pca) = &self.pca {
            match &data.aik_cert {
                Some(c) => {
                    c.verify(pca).map_err(RejectReason::AikCertificate)?;
                    if c.subject != data.aik_pub {
                        return Err(RejectReason::AikUntrusted);
                    }
                }
                None if cert.manifest.aik_checked => {}
                None => return Err(RejectReason::AikUntrusted),
            }
        }
        cert.verify(&self.sca)
            .map_err(RejectReason::CertificateSignature)?;

        // same-AIK platform binding
        match &cert.binding {
            CertBinding::Revealed(p) => {
                p.verify(&data.aik_pub, None).map_err(|e| match e {
                    QuoteError::Signature(CryptoError::WrongSigner) => {
                        RejectReason::BindingMismatch
                    }
                    e => RejectReason::EmbeddedQuote(e),
                })?;
                if cert.manifest.subject.as_ref() != Some(p.value()) {
                    return Err(RejectReason::NodeValueMismatch);
                }
            }
            CertBinding::Concealed(a) => {
                if *a != data.aik_pub.key_id() || data.response.bind.is_some_and(|b| b != *a) {
                    return Err(RejectReason::BindingMismatch);
                }
            }
        }

        let quoted = q.value();
        let left = binding_left(self.alg, &data.response);
        let s = cert.manifest.subject.as_ref().or(data.subject.as_ref());
        let evidence = if cert.manifest.subject.as_ref() == Some(quoted) {
            Evidence::Direct
        } else if *quoted == left {
            Evidence::BindingLeft
        } else if s.is_some_and(|s| self.alg.extend(&left, s) == *quoted) {
            Evidence::BindingNode
        } else {
            return Err(RejectReason::NodeValueMismatch);
        };

        Ok(Accepted {
            mode: cert.mode(),
            evidence,
            properties: cert.manifest.properties.clone(),
        })
    }
}
