// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use crate::codec::{Canonical, DecodeError, DecodeErrorKind, Decoder, Encoder};
use crate::crypto::{
    CryptoError, Digest, HashAlg, KeyId, Signature, SigningKey, Tag, VerifyingKey,
};
use crate::engine::Quote;

/// How a subtree certificate is tied to the platform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CertMode {
    /// The certificate embeds the platform's quote over `s`.
    Revealed,
    /// The certificate carries only the AIK fingerprint; `s` never appears.
    Concealed,
}

impl CertMode {
    pub fn name(self) -> &'static str {
        match self {
            CertMode::Revealed => "revealed",
            CertMode::Concealed => "concealed",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "revealed" => Some(CertMode::Revealed),
            "concealed" => Some(CertMode::Concealed),
            _ => None,
        }
    }
}

impl fmt::Display for CertMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `M_s`: the SCA's statement about the property a subtree represents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    /// The certified node value; absent in concealed mode.
    pub subject: Option<Digest>,
    pub properties: Vec<(String, String)>,
    /// Issuer clock, seconds since the epoch. Informational.
    pub timestamp: u64,
    pub issuer: KeyId,
    /// Set when the SCA checked the AIK certificate up to the PCA.
    pub aik_checked: bool,
}

impl Manifest {
    pub fn property(&self, name: &str) -> Option<&str> {
        self.properties
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    /// `m(M_s)`.
    pub fn measure(&self, alg: HashAlg) -> Digest {
        alg.hash(&self.to_canonical_bytes())
    }
}

impl Canonical for Manifest {
    fn encode(&self, enc: &mut Encoder) {
        enc.option(self.subject.as_ref(), |e, d| {
            e.digest(d);
        })
        .seq(&self.properties, |e, (k, v)| {
            e.str(k).str(v);
        })
        .u64(self.timestamp)
        .encode(&self.issuer)
        .bool(self.aik_checked);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Manifest {
            subject: dec.option(|d| d.digest())?,
            properties: dec.seq(|d| Ok((d.str()?.to_string(), d.str()?.to_string())))?,
            timestamp: dec.u64()?,
            issuer: dec.decode()?,
            aik_checked: dec.bool()?,
        })
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject {
            Some(s) => write!(f, "subject={s}")?,
            None => write!(f, "subject=concealed")?,
        }
        for (k, v) in &self.properties {
            write!(f, " prop.{k}={v}")?;
        }
        write!(
            f,
            " timestamp={} issuer={} aik_checked={}",
            self.timestamp, self.issuer, self.aik_checked
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CertBinding {
    /// `P`, verbatim.
    Revealed(Quote),
    /// `bind(a)`: fingerprint of the AIK public key.
    Concealed(KeyId),
}

/// `C_s`: `Sig_SCA(M_s ∥ P)` or `Sig_SCA(M_s ∥ bind(a))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubtreeCertificate {
    pub manifest: Manifest,
    pub binding: CertBinding,
    pub signature: Signature,
}

fn cert_payload(manifest: &Manifest, binding: &CertBinding) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("subtree").encode(manifest);
    encode_binding(&mut enc, binding);
    enc.finish()
}

fn encode_binding(enc: &mut Encoder, binding: &CertBinding) {
    match binding {
        CertBinding::Revealed(p) => {
            enc.u8(0).encode(p);
        }
        CertBinding::Concealed(a) => {
            enc.u8(1).encode(a);
        }
    }
}

impl SubtreeCertificate {
    pub fn sign(sca: &SigningKey, manifest: Manifest, binding: CertBinding) -> Self {
        let signature = sca.sign(Tag::Cert, &cert_payload(&manifest, &binding), &[]);
        SubtreeCertificate {
            manifest,
            binding,
            signature,
        }
    }

    /// Revealed when the manifest names the certified value.
    pub fn mode(&self) -> CertMode {
        match self.manifest.subject {
            Some(_) => CertMode::Revealed,
            None => CertMode::Concealed,
        }
    }

    /// The AIK the certificate is bound to.
    pub fn aik_id(&self) -> KeyId {
        match &self.binding {
            CertBinding::Revealed(p) => p.aik_id(),
            CertBinding::Concealed(a) => *a,
        }
    }

    pub fn verify(&self, sca: &VerifyingKey) -> Result<(), CryptoError> {
        sca.verify(
            Tag::Cert,
            &cert_payload(&self.manifest, &self.binding),
            &[],
            &self.signature,
        )
    }

    /// `m(C_s)`.
    pub fn measure(&self, alg: HashAlg) -> Digest {
        alg.hash(&self.to_canonical_bytes())
    }
}

impl Canonical for SubtreeCertificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.manifest);
        encode_binding(enc, &self.binding);
        enc.encode(&self.signature);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let manifest = dec.decode()?;
        let binding = match dec.u8()? {
            0 => CertBinding::Revealed(dec.decode()?),
            1 => CertBinding::Concealed(dec.decode()?),
            t => return Err(dec.error(DecodeErrorKind::InvalidTag(t))),
        };
        Ok(SubtreeCertificate {
            manifest,
            binding,
            signature: dec.decode()?,
        })
    }
}

impl fmt::Display for SubtreeCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mode={} aik={} {}",
            self.mode(),
            self.aik_id(),
            self.manifest
        )
    }
}

/// A signed statement that `value` is a known-good measurement, used to
/// cover leaves the SCA does not know itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceValue {
    pub value: Digest,
    pub label: String,
    pub signature: Signature,
}

fn rv_payload(value: &Digest, label: &str) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("reference-value").digest(value).str(label);
    enc.finish()
}

impl ReferenceValue {
    pub fn sign(issuer: &SigningKey, value: Digest, label: &str) -> Self {
        let signature = issuer.sign(Tag::Cert, &rv_payload(&value, label), &[]);
        ReferenceValue {
            value,
            label: label.to_string(),
            signature,
        }
    }

    pub fn verify(&self, issuer: &VerifyingKey) -> Result<(), CryptoError> {
        issuer.verify(
            Tag::Cert,
            &rv_payload(&self.value, &self.label),
            &[],
            &self.signature,
        )
    }
}

impl Canonical for ReferenceValue {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.value)
            .str(&self.label)
            .encode(&self.signature);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ReferenceValue {
            value: dec.digest()?,
            label: dec.str()?.to_string(),
            signature: dec.decode()?,
        })
    }
}

/// `R`: what the SCA returns for one certified node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaResponse {
    pub certificate: SubtreeCertificate,
    /// `bind(a)`, present in concealed mode.
    pub bind: Option<KeyId>,
}

impl ScaResponse {
    pub fn manifest(&self) -> &Manifest {
        &self.certificate.manifest
    }
}

impl Canonical for ScaResponse {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.certificate)
            .option(self.bind.as_ref(), |e, b| {
                e.encode(b);
            });
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ScaResponse {
            certificate: dec.decode()?,
            bind: dec.option(|d| d.decode())?,
        })
    }
}

impl Canonical for CertMode {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            CertMode::Revealed => 0,
            CertMode::Concealed => 1,
        });
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(CertMode::Revealed),
            1 => Ok(CertMode::Concealed),
            t => Err(dec.error(DecodeErrorKind::InvalidTag(t))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(subject: Option<Digest>) -> Manifest {
        Manifest {
            subject,
            properties: vec![("component".into(), "loader".into())],
            timestamp: 7,
            issuer: SigningKey::from_seed([5; 32]).key_id(),
            aik_checked: false,
        }
    }

    #[test]
    fn concealed_round_trip_and_tamper() {
        let sca = SigningKey::from_seed([5; 32]);
        let aik = SigningKey::from_seed([6; 32]).key_id();
        let c = SubtreeCertificate::sign(&sca, manifest(None), CertBinding::Concealed(aik));
        c.verify(&sca.verifying_key()).unwrap();
        let bytes = c.to_canonical_bytes();
        assert_eq!(SubtreeCertificate::from_canonical_bytes(&bytes).unwrap(), c);
        let mut t = c.clone();
        t.manifest.properties[0].1 = "shell".into();
        assert!(t.verify(&sca.verifying_key()).is_err());
        assert_eq!(c.mode(), CertMode::Concealed);
        assert_eq!(c.aik_id(), aik);
    }

    #[test]
    fn reference_value_round_trip() {
        let k = SigningKey::from_seed([8; 32]);
        let rv = ReferenceValue::sign(&k, HashAlg::Sha1.hash(b"x"), "lib");
        rv.verify(&k.verifying_key()).unwrap();
        let back = ReferenceValue::from_canonical_bytes(&rv.to_canonical_bytes()).unwrap();
        assert_eq!(back, rv);
    }

    #[test]
    fn manifest_measure_depends_on_content() {
        let a = manifest(None).measure(HashAlg::Sha1);
        let b = manifest(Some(HashAlg::Sha1.hash(b"s"))).measure(HashAlg::Sha1);
        assert_ne!(a, b);
    }
}
