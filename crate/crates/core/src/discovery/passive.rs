// SPDX-License-Identifier: Apache-2.0

use super::active::precedes;
use crate::cert::{
    phase4_binding_update_set, AikCertificate, AttestationPackage, BindingLayout, Policy, Sca,
    ScaError, ScaResponse, UpdateSet, UpdateSetError,
};
use crate::codec::{Canonical, DecodeError, DecodeErrorKind, Decoder, Encoder};
use crate::crypto::{HashAlg, VerifyingKey};
use crate::engine::Quote;
use crate::tree::{Coord, NodeRef, SmlTree};

/// A platform's submission for passive discovery: the subtree below `root`
/// in relative coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PassiveRequest {
    pub root: NodeRef,
    pub subtree: SmlTree,
    /// Quote over `root`; required unless `lazy`.
    pub quote: Option<Quote>,
    pub aik_pub: VerifyingKey,
    pub aik_cert: Option<AikCertificate>,
    /// Ask for candidates first and quote them individually afterwards.
    pub lazy: bool,
}

impl Canonical for PassiveRequest {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.root)
            .encode(&self.subtree)
            .option(self.quote.as_ref(), |e, q| {
                e.encode(q);
            })
            .encode(&self.aik_pub)
            .option(self.aik_cert.as_ref(), |e, c| {
                e.encode(c);
            })
            .bool(self.lazy);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(PassiveRequest {
            root: dec.decode()?,
            subtree: dec.decode()?,
            quote: dec.option(|d| d.decode())?,
            aik_pub: dec.decode()?,
            aik_cert: dec.option(|d| d.decode())?,
            lazy: dec.bool()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PassiveResponse {
    /// Eager mode: one certificate per certifiable root.
    Certified(Vec<(NodeRef, ScaResponse)>),
    /// Lazy mode: the roots the platform should quote next.
    Candidates(Vec<NodeRef>),
}

impl Canonical for PassiveResponse {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            PassiveResponse::Certified(v) => {
                enc.u8(0).seq(v, |e, (n, r)| {
                    e.encode(n).encode(r);
                });
            }
            PassiveResponse::Candidates(v) => {
                enc.u8(1).seq(v, |e, n| {
                    e.encode(n);
                });
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(PassiveResponse::Certified(
                dec.seq(|d| Ok((d.decode()?, d.decode()?)))?,
            )),
            1 => Ok(PassiveResponse::Candidates(dec.seq(|d| d.decode())?)),
            t => Err(dec.error(DecodeErrorKind::InvalidTag(t))),
        }
    }
}

/// Highest nodes of the subtree (its root included) whose values the policy
/// certifies; no returned node lies below another. Coordinates are absolute.
/// Position conditions are checked within the submitted subtree.
pub fn certifiable_roots(policy: &Policy, root: &NodeRef, subtree: &SmlTree) -> Vec<NodeRef> {
    let depth = subtree.depth();
    let value = |rel: &Coord| {
        if rel.is_root() {
            root.value.clone()
        } else {
            subtree.get(rel).expect("in range").clone()
        }
    };
    let all: Vec<NodeRef> = std::iter::once(Coord::ROOT)
        .chain(subtree.coords())
        .map(|c| NodeRef::new(c, value(&c)))
        .filter(|n| !n.value.is_nil())
        .collect();
    let ok = |n: &NodeRef| {
        policy.node(&n.value).is_some_and(|e| {
            e.requires.iter().all(|req| {
                all.iter()
                    .any(|r| r.value == *req && precedes(&r.coord, &n.coord, depth))
            })
        })
    };
    let mut out = Vec::new();
    let mut stack = vec![Coord::ROOT];
    while let Some(c) = stack.pop() {
        let n = NodeRef::new(c, value(&c));
        if !n.value.is_nil() && ok(&n) {
            out.push(NodeRef::new(root.coord.concat(&c), n.value));
        } else if c.level() < depth {
            stack.push(c.child(true));
            stack.push(c.child(false));
        }
    }
    out
}

/// SCA side of passive discovery. The subtree must hash up to `root`; in
/// eager mode the quote over `root` vouches for the whole submission and
/// each root found gets a certificate bound to the AIK.
pub fn passive_discover(sca: &Sca, req: &PassiveRequest) -> Result<PassiveResponse, ScaError> {
    if req.subtree.alg() != sca.alg() {
        return Err(ScaError::InconsistentSubtree(req.root.coord));
    }
    if let Some(rel) = req.subtree.first_inconsistency(Some(&req.root.value)) {
        return Err(ScaError::InconsistentSubtree(req.root.coord.concat(&rel)));
    }
    let roots = certifiable_roots(sca.policy(), &req.root, &req.subtree);
    if req.lazy {
        return Ok(PassiveResponse::Candidates(roots));
    }
    let quote = req.quote.as_ref().ok_or(ScaError::MissingQuote)?;
    quote
        .verify(&req.aik_pub, None)
        .map_err(ScaError::BadQuote)?;
    if *quote.value() != req.root.value {
        return Err(ScaError::SubjectMismatch);
    }
    let aik_checked = sca.check_aik(&req.aik_pub, req.aik_cert.as_ref())?;
    // no per-root quote exists, so certificates bind through the AIK
    let mode = sca.config().mode;
    Ok(PassiveResponse::Certified(
        roots
            .into_iter()
            .map(|n| {
                let props = sca
                    .policy()
                    .node(&n.value)
                    .expect("certifiable")
                    .properties
                    .clone();
                let r = sca.issue(
                    n.value.clone(),
                    props,
                    &req.aik_pub,
                    None,
                    aik_checked,
                    mode,
                );
                (n, r)
            })
            .collect(),
    ))
}

/// Second round of lazy passive discovery: one package per candidate, each
/// carrying a quote over that candidate. Every package goes through the
/// normal certification path.
pub fn passive_certify_lazy(
    sca: &Sca,
    packages: &[AttestationPackage],
) -> Result<Vec<ScaResponse>, ScaError> {
    packages.iter().map(|q| sca.verify_and_issue(q)).collect()
}

/// One update set binding every certificate from a passive run. Roots deep
/// enough get the full three-node binding; the rest are left unchanged.
pub fn combined_update_set(
    alg: HashAlg,
    certs: &[(NodeRef, ScaResponse)],
    depth: u8,
) -> Result<UpdateSet, UpdateSetError> {
    let mut u = UpdateSet::empty();
    for (n, r) in certs {
        let layout = if n.coord.level() + 2 <= depth {
            BindingLayout::FullBinding
        } else {
            BindingLayout::Empty
        };
        u = u.union(&phase4_binding_update_set(alg, r, n, &layout, depth)?)?;
    }
    Ok(u)
}
