// SPDX-License-Identifier: Apache-2.0

use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use super::{
    AttestationPackage, CertBinding, CertMode, Manifest, Policy, ScaResponse, SubtreeCertificate,
};
use crate::crypto::{CryptoError, Digest, HashAlg, KeyId, SigningKey, Tag, VerifyingKey};
use crate::engine::{Quote, QuoteError, QuotePayload};
use crate::tree::Coord;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScaError {
    #[error("quote rejected: {0}")]
    BadQuote(QuoteError),
    #[error("quote kind {0} cannot be certified")]
    UnsupportedQuote(Tag),
    #[error("AIK certificate rejected: {0}")]
    BadAikCertificate(CryptoError),
    #[error("AIK certificate is for a different key")]
    AikCertificateSubject,
    #[error("an AIK certificate is required")]
    MissingAikCertificate,
    #[error("package subject does not match the quoted value")]
    SubjectMismatch,
    #[error("package coordinate does not match the quoted coordinate")]
    CoordMismatch,
    #[error("node value {0} is not certifiable")]
    Unknown(Digest),
    #[error("{} leaf values are neither known nor covered by reference values", .0.len())]
    GapNotCovered(Vec<Digest>),
    #[error("submitted subtree is inconsistent at {0}")]
    InconsistentSubtree(Coord),
    #[error("a quote over the subtree root is required")]
    MissingQuote,
}

impl ScaError {
    /// Stable numeric code for error frames.
    pub fn code(&self) -> u8 {
        match self {
            ScaError::BadQuote(_) => 1,
            ScaError::UnsupportedQuote(_) => 2,
            ScaError::BadAikCertificate(_) => 3,
            ScaError::AikCertificateSubject => 4,
            ScaError::MissingAikCertificate => 5,
            ScaError::SubjectMismatch => 6,
            ScaError::CoordMismatch => 7,
            ScaError::Unknown(_) => 8,
            ScaError::GapNotCovered(_) => 9,
            ScaError::InconsistentSubtree(_) => 10,
            ScaError::MissingQuote => 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaConfig {
    pub mode: CertMode,
    pub require_aik_cert: bool,
    /// Fixed manifest timestamp; the system clock when unset.
    pub timestamp: Option<u64>,
}

impl Default for ScaConfig {
    fn default() -> Self {
        ScaConfig {
            mode: CertMode::Revealed,
            require_aik_cert: false,
            timestamp: None,
        }
    }
}

/// Subtree certification authority.
#[derive(Clone, Debug)]
pub struct Sca {
    key: SigningKey,
    policy: Policy,
    pca: Option<VerifyingKey>,
    rv_issuers: Vec<VerifyingKey>,
    config: ScaConfig,
}

impl Sca {
    pub fn new(key: SigningKey, policy: Policy, config: ScaConfig) -> Self {
        let own = key.verifying_key();
        Sca {
            key,
            policy,
            pca: None,
            rv_issuers: vec![own],
            config,
        }
    }

    pub fn with_pca(mut self, pca: VerifyingKey) -> Self {
        self.pca = Some(pca);
        self
    }

    /// Trusts reference-value certificates signed by `issuer`.
    pub fn trust_reference_issuer(mut self, issuer: VerifyingKey) -> Self {
        self.rv_issuers.push(issuer);
        self
    }

    pub fn public(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn alg(&self) -> HashAlg {
        self.policy.alg()
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn config(&self) -> &ScaConfig {
        &self.config
    }

    fn now(&self) -> u64 {
        self.config.timestamp.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
    }

    /// Checks the AIK certificate if present; returns whether it was checked.
    pub(crate) fn check_aik(
        &self,
        aik: &VerifyingKey,
        cert: Option<&super::AikCertificate>,
    ) -> Result<bool, ScaError> {
        match (cert, &self.pca) {
            (Some(c), Some(pca)) => {
                c.verify(pca).map_err(ScaError::BadAikCertificate)?;
                if c.subject != *aik {
                    return Err(ScaError::AikCertificateSubject);
                }
                Ok(true)
            }
            (None, _) if self.config.require_aik_cert => Err(ScaError::MissingAikCertificate),
            _ => Ok(false),
        }
    }

    /// Phase 3: verify `Q`, recognise `s`, and issue `C_s` in the configured mode.
    pub fn verify_and_issue(&self, q: &AttestationPackage) -> Result<ScaResponse, ScaError> {
        q.quote
            .verify(&q.aik_pub, None)
            .map_err(ScaError::BadQuote)?;
        let quoted_coord = match &q.quote.payload {
            QuotePayload::Register { .. } => None,
            QuotePayload::TreeNode { coord, .. } => *coord,
            QuotePayload::ReducedTree { coord, .. } => {
                q.quote
                    .check_reduced_tree(self.alg())
                    .map_err(ScaError::BadQuote)?;
                Some(*coord)
            }
        };
        if let (Some(a), Some(b)) = (&q.coord, &quoted_coord) {
            if a != b {
                return Err(ScaError::CoordMismatch);
            }
        }
        let aik_checked = self.check_aik(&q.aik_pub, q.aik_cert.as_ref())?;
        let s = q.quote.value().clone();
        if let Some(subject) = &q.subject {
            if *subject != s {
                return Err(ScaError::SubjectMismatch);
            }
        }
        let properties = self.recognise(&s, q)?;
        Ok(self.issue(
            s,
            properties,
            &q.aik_pub,
            Some(&q.quote),
            aik_checked,
            self.config.mode,
        ))
    }

    /// Property statements for `s`: a direct policy entry, or a composition
    /// of known leaves when the package carries the subtree below `s`.
    fn recognise(
        &self,
        s: &Digest,
        q: &AttestationPackage,
    ) -> Result<Vec<(String, String)>, ScaError> {
        if let Some(e) = self.policy.node(s) {
            return Ok(e.properties.clone());
        }
        let Some(sub) = &q.subtree else {
            return Err(ScaError::Unknown(s.clone()));
        };
        if sub.alg() != self.alg() {
            return Err(ScaError::Unknown(s.clone()));
        }
        if let Some(c) = sub.first_inconsistency(Some(s)) {
            return Err(ScaError::InconsistentSubtree(c));
        }
        let leaves: Vec<Digest> = (0..sub.capacity())
            .map(|i| sub.leaf(i).clone())
            .filter(|l| !l.is_nil())
            .collect();
        if leaves.is_empty() || sub.recompute_root() != *s {
            return Err(ScaError::Unknown(s.clone()));
        }
        let covered = |v: &Digest| {
            q.reference_values
                .iter()
                .any(|rv| rv.value == *v && self.rv_issuers.iter().any(|k| rv.verify(k).is_ok()))
        };
        let mut missing = Vec::new();
        let mut props: Vec<(String, String)> = Vec::new();
        let mut by_reference = 0usize;
        for l in &leaves {
            if let Some(e) = self.policy.leaf(l) {
                for p in &e.properties {
                    if !props.contains(p) {
                        props.push(p.clone());
                    }
                }
            } else if covered(l) {
                by_reference += 1;
            } else {
                missing.push(l.clone());
            }
        }
        if !missing.is_empty() {
            return Err(ScaError::GapNotCovered(missing));
        }
        props.push(("composition".into(), "leaves".into()));
        props.push(("leaf-count".into(), leaves.len().to_string()));
        props.push(("reference-values".into(), by_reference.to_string()));
        Ok(props)
    }

    /// Signs a certificate for `s`. `s` is named in the manifest unless the
    /// mode is concealed. The certificate embeds `p` when revealed and a
    /// quote is at hand, and is bound through `bind(a)` otherwise.
    pub(crate) fn issue(
        &self,
        s: Digest,
        properties: Vec<(String, String)>,
        aik: &VerifyingKey,
        p: Option<&Quote>,
        aik_checked: bool,
        mode: CertMode,
    ) -> ScaResponse {
        let revealed = mode == CertMode::Revealed;
        let manifest = Manifest {
            subject: revealed.then_some(s),
            properties,
            timestamp: self.now(),
            issuer: self.key.key_id(),
            aik_checked,
        };
        let bind_a: KeyId = aik.key_id();
        let binding = match p {
            Some(p) if revealed => CertBinding::Revealed(p.clone()),
            _ => CertBinding::Concealed(bind_a),
        };
        let certificate = SubtreeCertificate::sign(&self.key, manifest, binding);
        ScaResponse {
            bind: matches!(certificate.binding, CertBinding::Concealed(_)).then_some(bind_a),
            certificate,
        }
    }
}
