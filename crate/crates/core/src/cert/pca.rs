// SPDX-License-Identifier: Apache-2.0

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{CryptoError, KeyId, Signature, SigningKey, Tag, VerifyingKey};

/// Offline privacy CA: a self-signed root that certifies AIK public keys.
#[derive(Clone, Debug)]
pub struct Pca {
    key: SigningKey,
}

impl Pca {
    pub fn new(key: SigningKey) -> Self {
        Pca { key }
    }

    pub fn public(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn issue(&self, aik: &VerifyingKey, label: &str) -> AikCertificate {
        let signature = self.key.sign(Tag::Cert, &aik_payload(aik, label), &[]);
        AikCertificate {
            subject: *aik,
            label: label.to_string(),
            signature,
        }
    }
}

fn aik_payload(aik: &VerifyingKey, label: &str) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("aik").encode(aik).str(label);
    enc.finish()
}

/// `C_a`: binds an AIK public key to the platform under the PCA.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AikCertificate {
    pub subject: VerifyingKey,
    pub label: String,
    pub signature: Signature,
}

impl AikCertificate {
    pub fn issuer(&self) -> KeyId {
        self.signature.signer
    }

    pub fn verify(&self, pca: &VerifyingKey) -> Result<(), CryptoError> {
        pca.verify(
            Tag::Cert,
            &aik_payload(&self.subject, &self.label),
            &[],
            &self.signature,
        )
    }
}

impl Canonical for AikCertificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.subject)
            .str(&self.label)
            .encode(&self.signature);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AikCertificate {
            subject: dec.decode()?,
            label: dec.str()?.to_string(),
            signature: dec.decode()?,
        })
    }
}
