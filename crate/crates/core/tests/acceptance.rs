// SPDX-License-Identifier: Apache-2.0

//! Acceptance criteria, each timed against its limit. Reference values come
//! from the oracle in `common`, never from the crate under test.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use common::*;
use treetpm::cert::{
    bulk_update, phase1_quote, phase2_package, phase4_binding_update_set, phase5_apply_naive,
    BindingLayout, CertMode, Evidence, PackageOptions, Policy, PolicyEntry, RejectReason, Sca,
    ScaConfig, ScaError, ScaResponse, UpdateSet, ValidationData, Validator,
};
use treetpm::codec::Canonical;
use treetpm::crypto::{Digest, SigningKey};
use treetpm::discovery::{
    active_discover, bottom_up_candidates, passive_discover, DiscoveryData, PassiveRequest,
};
use treetpm::engine::{
    EngineError, NodeVerifyReport, RegisterId, RegisterState, Tpm, UpdateSession,
};
use treetpm::tree::{Coord, NodeRef, ReducedTree, SmlTree, Trace};
use treetpm::tss::Platform;
use treetpm::wire::{spawn_local, Client, ScaService, WireError};

type Outcome = Result<(), String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_leaves(
    rng: &mut StdRng,
    depth: usize,
    nil_p: f64,
    alphabet: Option<u64>,
) -> Vec<Option<H>> {
    let count = rng.random_range(1..=1usize << depth);
    (0..count)
        .map(|_| {
            if rng.random_bool(nil_p) {
                None
            } else {
                Some(match alphabet {
                    Some(k) => meas(rng.random_range(0..k)),
                    None => rng.random(),
                })
            }
        })
        .collect()
}

/// Eight single-entry corruptions: bit flips of a hash, random values for nil.
fn corruptions(rng: &mut StdRng, d: &Digest) -> Vec<Digest> {
    (0..8)
        .map(|_| match d.as_bytes() {
            None => to_digest(Some(rng.random())),
            Some(b) => {
                let mut b = b.to_vec();
                let bit = rng.random_range(0..b.len() * 8);
                b[bit / 8] ^= 1 << (bit % 8);
                Digest::Hash(b)
            }
        })
        .collect()
}

fn with_entry(red: &ReducedTree, k: usize, v: Digest) -> ReducedTree {
    let mut out = red.clone();
    out.entries[k].value = v;
    out
}

fn all_coords(depth: usize) -> Vec<String> {
    (0..=depth)
        .flat_map(|l| (0..1u64 << l).map(move |i| bits(l, i)))
        .collect()
}

// ---- 1: tree construction ----

fn c1_construction() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    for t in 0..1000 {
        let depth = rng.random_range(1..=8usize);
        let leaves = random_leaves(&mut rng, depth, 0.2, None);
        let want = oracle_nodes(&leaves, depth);
        let p = platform(depth as u8, &leaves, 1);
        check!(
            p.root_value() == to_digest(want[""]),
            "tree {t}: root {} != oracle {}",
            p.root_value(),
            to_digest(want[""])
        );
        for (c, v) in &want {
            if c.is_empty() {
                continue;
            }
            let got = p.sml.get(&coord(c)).map_err(|e| e.to_string())?;
            check!(
                *got == to_digest(*v),
                "tree {t}: node {c} differs from oracle"
            );
        }
    }
    Ok(())
}

// ---- 2: verification soundness and completeness ----

fn alg1_accepts(
    tpm: &mut Tpm,
    n: &NodeRef,
    red: &ReducedTree,
    root: RegisterId,
) -> Result<bool, String> {
    let free = tpm.free_count();
    let v = tpm
        .reduced_tree_verify_load(n, red, root)
        .map_err(|e| e.to_string())?;
    let ok = v.is_verified();
    if ok {
        // naming the root abandons the armed session and frees its registers
        tpm.pcr_read(root).map_err(|e| e.to_string())?;
    }
    check!(tpm.free_count() == free, "verify-load leaked registers");
    Ok(ok)
}

fn alg2_accepts(
    tpm: &mut Tpm,
    n: &NodeRef,
    red: &ReducedTree,
    root: RegisterId,
) -> Result<bool, String> {
    Ok(tpm
        .reduced_tree_verify(n, red, root)
        .map_err(|e| e.to_string())?
        .is_verified())
}

fn c2_verification() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    for t in 0..100 {
        let depth = rng.random_range(1..=6usize);
        let leaves = random_leaves(&mut rng, depth, 0.2, None);
        let mut p = platform(depth as u8, &leaves, 1);
        let root = p.root_register();
        for c in all_coords(depth) {
            let c = coord(&c);
            let n = p.node(&c).map_err(|e| e.to_string())?;
            let red = p.reduced_tree(&c).map_err(|e| e.to_string())?;
            check!(
                alg1_accepts(&mut p.tpm, &n, &red, root)?,
                "tree {t}: Alg1 rejected honest {c}"
            );
            check!(
                alg2_accepts(&mut p.tpm, &n, &red, root)?,
                "tree {t}: Alg2 rejected honest {c}"
            );
            for bad in corruptions(&mut rng, &n.value) {
                let n2 = NodeRef::new(c, bad);
                check!(
                    !alg1_accepts(&mut p.tpm, &n2, &red, root)?,
                    "tree {t}: Alg1 accepted corrupted node {c}"
                );
                check!(
                    !alg2_accepts(&mut p.tpm, &n2, &red, root)?,
                    "tree {t}: Alg2 accepted corrupted node {c}"
                );
            }
            for k in 0..red.len() {
                for bad in corruptions(&mut rng, &red.entries[k].value) {
                    let r2 = with_entry(&red, k, bad);
                    check!(
                        !alg1_accepts(&mut p.tpm, &n, &r2, root)?,
                        "tree {t}: Alg1 accepted corrupted sibling {k} of {c}"
                    );
                    check!(
                        !alg2_accepts(&mut p.tpm, &n, &r2, root)?,
                        "tree {t}: Alg2 accepted corrupted sibling {k} of {c}"
                    );
                }
            }
        }
    }
    Ok(())
}

// ---- 3: breach localisation ----

fn c3_localisation() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    for depth in 1..=5usize {
        for t in 0..4 {
            let nil_p = if t == 0 { 0.0 } else { 0.25 };
            let leaves = random_leaves(&mut rng, depth, nil_p, None);
            let mut p = platform(depth as u8, &leaves, 1);
            let root = p.root_register();
            for c in all_coords(depth).iter().skip(1) {
                let c = coord(c);
                let red = p.reduced_tree(&c).map_err(|e| e.to_string())?;
                let trace = p.sml.trace(&c).map_err(|e| e.to_string())?;
                let report = p
                    .tpm
                    .tree_node_verify(&c, &red, &trace, root)
                    .map_err(|e| e.to_string())?;
                check!(
                    report == NodeVerifyReport::Ok,
                    "depth {depth}: honest trace of {c} reported {report:?}"
                );
                for j in 1..=c.len() {
                    let honest = trace.entries[j - 1].value.clone();
                    let mut variants = corruptions(&mut rng, &honest);
                    if !honest.is_nil() {
                        variants.push(Digest::Nil);
                    }
                    for bad in variants {
                        let mut t2: Trace = trace.clone();
                        t2.entries[j - 1].value = bad;
                        let report = p
                            .tpm
                            .tree_node_verify(&c, &red, &t2, root)
                            .map_err(|e| e.to_string())?;
                        check!(
                            matches!(report, NodeVerifyReport::Breach { level, .. } if level == j),
                            "depth {depth}: corruption at level {j} of {c} reported {report:?}"
                        );
                    }
                }
            }
        }
    }
    Ok(())
}

// ---- 4: update correctness ----

fn c4_update() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    for depth in 1..=5usize {
        for t in 0..20 {
            let leaves = random_leaves(&mut rng, depth, 0.2, None);
            let base = platform(depth as u8, &leaves, 1);
            let nodes = oracle_nodes(&leaves, depth);
            for cs in all_coords(depth) {
                let c = coord(&cs);
                let new: H = rng.random();
                let mut p = base.clone();
                let out = p
                    .update_node(&c, &to_digest(Some(new)))
                    .map_err(|e| e.to_string())?;
                check!(
                    out.is_verified(),
                    "depth {depth} tree {t}: update of {cs} refused"
                );

                let mut want = nodes.clone();
                for (k, v) in want.iter_mut() {
                    if k.len() > cs.len() && k.starts_with(&cs) {
                        *v = None;
                    }
                }
                want.insert(cs.clone(), Some(new));
                oracle_propagate(&mut want, &cs);
                check!(
                    p.root_value() == to_digest(want[""]),
                    "depth {depth} tree {t}: root after updating {cs} differs from oracle"
                );
                for (k, v) in want.iter().filter(|(k, _)| !k.is_empty()) {
                    check!(
                        *p.sml.get(&coord(k)).unwrap() == to_digest(*v),
                        "depth {depth} tree {t}: node {k} after updating {cs} differs from oracle"
                    );
                }
                let again = p.verify_node(&c).map_err(|e| e.to_string())?;
                check!(
                    again.is_verified(),
                    "depth {depth} tree {t}: updated {cs} fails re-verification"
                );
            }
        }
    }
    Ok(())
}

// ---- 5: bulk update ----

fn cover(rng: &mut StdRng, c: &str, depth: usize, force: bool, out: &mut Vec<String>) {
    if c.len() == depth || (!force && rng.random_bool(0.5)) {
        out.push(c.to_string());
    } else {
        cover(rng, &format!("{c}0"), depth, false, out);
        cover(rng, &format!("{c}1"), depth, false, out);
    }
}

fn comparable(a: &str, b: &str) -> bool {
    a.starts_with(b) || b.starts_with(a)
}

fn random_update_set(rng: &mut StdRng, depth: usize) -> Vec<String> {
    let mut set = Vec::new();
    if rng.random_bool(0.6) {
        let level = rng.random_range(0..depth);
        let r = bits(level, rng.random_range(0..1u64 << level));
        cover(rng, &r, depth, true, &mut set);
    }
    for _ in 0..rng.random_range(0..5) {
        let level = rng.random_range(1..=depth);
        let c = bits(level, rng.random_range(0..1u64 << level));
        if set.iter().all(|s| !comparable(s, &c)) {
            set.push(c);
        }
    }
    if set.is_empty() {
        set.push(bits(depth, 0));
    }
    set
}

/// Whether some node outside `u` has its whole subtree covered by `u`.
fn has_intrinsic_subset(u: &BTreeSet<String>, depth: usize) -> bool {
    fn covered(c: &str, u: &BTreeSet<String>, depth: usize) -> bool {
        u.contains(c)
            || (c.len() < depth
                && covered(&format!("{c}0"), u, depth)
                && covered(&format!("{c}1"), u, depth))
    }
    all_coords(depth)
        .iter()
        .any(|c| !u.contains(c) && covered(c, u, depth))
}

fn c5_bulk() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let mut with_subset = 0;
    for t in 0..500 {
        let depth = rng.random_range(1..=6usize);
        let leaves = random_leaves(&mut rng, depth, 0.2, None);
        let base = platform(depth as u8, &leaves, 1);
        let coords = random_update_set(&mut rng, depth);
        let values: Vec<H> = coords.iter().map(|_| rng.random()).collect();
        let u = UpdateSet::new(
            coords
                .iter()
                .zip(&values)
                .map(|(c, v)| (coord(c), to_digest(Some(*v)))),
            None,
        )
        .map_err(|e| format!("set {t}: {e}"))?;

        let mut want = oracle_nodes(&leaves, depth);
        for (c, v) in u.iter() {
            let cs = c.to_string();
            for (k, x) in want.iter_mut() {
                if k.len() > cs.len() && k.starts_with(&cs) {
                    *x = None;
                }
            }
            want.insert(cs.clone(), from_digest(v));
            oracle_propagate(&mut want, &cs);
        }

        let mut naive = base.clone();
        let before = naive.tpm.stats().verifications;
        phase5_apply_naive(&u, &mut naive).map_err(|e| format!("set {t}: naive: {e}"))?;
        let naive_v = naive.tpm.stats().verifications - before;

        let mut bulk = base.clone();
        let before = bulk.tpm.stats().verifications;
        bulk_update(&u, &mut bulk).map_err(|e| format!("set {t}: bulk: {e}"))?;
        let bulk_v = bulk.tpm.stats().verifications - before;

        check!(
            naive.root_value() == to_digest(want[""]),
            "set {t}: naive root differs from oracle"
        );
        check!(
            bulk.root_value() == naive.root_value(),
            "set {t}: bulk root differs from naive"
        );
        check!(
            bulk.sml == naive.sml,
            "set {t}: bulk SML differs from naive"
        );
        let set: BTreeSet<String> = coords.iter().cloned().collect();
        if has_intrinsic_subset(&set, depth) {
            with_subset += 1;
            check!(
                bulk_v < naive_v,
                "set {t}: bulk used {bulk_v} verifications, naive {naive_v}"
            );
        } else {
            check!(
                bulk_v == naive_v,
                "set {t}: no intrinsic subset but {bulk_v} != {naive_v}"
            );
        }
    }
    check!(
        with_subset >= 100,
        "only {with_subset} sets had an intrinsic subset"
    );
    Ok(())
}

// ---- 6 and 7: certification over the wire ----

const SUBJECT: &str = "0";

struct Issued {
    platform: Platform,
    response: ScaResponse,
    s_old: NodeRef,
    sca_pub: treetpm::crypto::VerifyingKey,
}

fn eight_leaves() -> Vec<Option<H>> {
    (1..=8).map(|i| Some(meas(i))).collect()
}

fn sca(mode: CertMode, s: &Digest) -> Sca {
    let mut policy = Policy::new(ALG);
    policy.insert(
        s.clone(),
        PolicyEntry {
            properties: vec![("component".into(), "boot chain".into())],
            ..PolicyEntry::default()
        },
    );
    Sca::new(
        SigningKey::from_seed([9; 32]),
        policy,
        ScaConfig {
            mode,
            timestamp: Some(1_700_000_000),
            ..ScaConfig::default()
        },
    )
}

fn certify_over_wire(mode: CertMode) -> Result<Issued, String> {
    let mut p = platform(3, &eight_leaves(), 1);
    let c = coord(SUBJECT);
    let s_old = p.node(&c).map_err(|e| e.to_string())?;
    let sca = sca(mode, &s_old.value);
    let sca_pub = sca.public();
    let addr = spawn_local(Arc::new(ScaService::new(sca))).map_err(|e| e.to_string())?;
    let mut client = Client::connect(addr).map_err(|e| e.to_string())?;

    let quote = phase1_quote(&mut p, &c, b"phase one", true).map_err(|e| e.to_string())?;
    let pkg = phase2_package(
        quote,
        &s_old,
        None,
        &p.aik.verifying_key(),
        PackageOptions {
            include_coord: true,
            ..PackageOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let response = client.attest(&pkg).map_err(|e| e.to_string())?;
    Ok(Issued {
        platform: p,
        response,
        s_old,
        sca_pub,
    })
}

fn bind(p: &mut Platform, r: &ScaResponse, s_old: &NodeRef) -> Outcome {
    let u = phase4_binding_update_set(ALG, r, s_old, &BindingLayout::FullBinding, 3)
        .map_err(|e| e.to_string())?;
    bulk_update(&u, p).map_err(|e| e.to_string())?;
    Ok(())
}

fn present(
    v: &mut Validator,
    quoter: &mut Platform,
    at: &Coord,
    r: &ScaResponse,
    claimed: &SigningKey,
) -> Result<Result<treetpm::cert::Accepted, RejectReason>, String> {
    let nonce = v.challenge();
    let quote = quoter
        .quote_node(at, &nonce, true)
        .map_err(|e| e.to_string())?
        .verified()
        .ok_or("quote refused")?;
    Ok(v.validate_subtree(&ValidationData {
        quote,
        response: r.clone(),
        aik_pub: claimed.verifying_key(),
        aik_cert: None,
        subject: None,
    }))
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

fn c6_end_to_end() -> Outcome {
    for mode in [CertMode::Revealed, CertMode::Concealed] {
        let Issued {
            platform: mut p,
            response: r,
            s_old,
            sca_pub,
        } = certify_over_wire(mode)?;
        check!(
            r.certificate.mode() == mode,
            "{mode}: issued {}",
            r.certificate.mode()
        );
        let mut other = platform(3, &eight_leaves(), 2);
        let mut v = Validator::new(ALG, sca_pub);

        let at = match mode {
            CertMode::Revealed => coord(SUBJECT),
            CertMode::Concealed => {
                let s = s_old.value.as_bytes().unwrap();
                let bytes = r.to_canonical_bytes();
                check!(!contains(&bytes, s), "concealed response contains s");
                check!(
                    !contains(&r.certificate.to_canonical_bytes(), s),
                    "concealed certificate contains s"
                );
                check!(r.manifest().subject.is_none(), "concealed manifest names s");
                bind(&mut p, &r, &s_old)?;
                bind(&mut other, &r, &s_old)?;
                coord(SUBJECT).child(false)
            }
        };
        let own = p.aik.clone();
        let accepted = present(&mut v, &mut p, &at, &r, &own)?
            .map_err(|e| format!("{mode}: honest presentation rejected: {e}"))?;
        check!(
            accepted.mode == mode,
            "{mode}: accepted as {}",
            accepted.mode
        );

        // same tree, different AIK: claiming its own key or the certified one
        let foreign = other.aik.clone();
        let res = present(&mut v, &mut other, &at, &r, &foreign)?;
        check!(
            res == Err(RejectReason::BindingMismatch),
            "{mode}: foreign AIK got {res:?}"
        );
        let res = present(&mut v, &mut other, &at, &r, &own)?;
        check!(
            matches!(res, Err(RejectReason::QuoteSignature(_))),
            "{mode}: foreign quote under the certified AIK got {res:?}"
        );
    }
    Ok(())
}

fn c7_binding_layout() -> Outcome {
    for mode in [CertMode::Revealed, CertMode::Concealed] {
        let Issued {
            platform: mut p,
            response: r,
            s_old,
            sca_pub,
        } = certify_over_wire(mode)?;
        bind(&mut p, &r, &s_old)?;

        let m_c = sha1(&r.certificate.to_canonical_bytes());
        let m_m = sha1(&r.manifest().to_canonical_bytes());
        let left = ext(Some(m_c), Some(m_m));
        let k = ext(left, from_digest(&s_old.value));
        let c = coord(SUBJECT);
        check!(
            p.node(&c).unwrap().value == to_digest(k),
            "{mode}: bound node differs from (m(C) . m(M)) . s_old"
        );
        check!(
            p.node(&c.child(false)).unwrap().value == to_digest(left),
            "{mode}: left child differs"
        );
        check!(
            p.node(&c.child(true)).unwrap().value == s_old.value,
            "{mode}: right child is not s_old"
        );

        let right = oracle_nodes(&eight_leaves(), 3)["1"];
        let root = ext(k, right);
        check!(
            p.root_value() == to_digest(root),
            "{mode}: root after binding differs from oracle"
        );

        let mut v = Validator::new(ALG, sca_pub);
        let own = p.aik.clone();
        let accepted = present(&mut v, &mut p, &c.child(false), &r, &own)?
            .map_err(|e| format!("{mode}: quote of the left child rejected: {e}"))?;
        check!(
            accepted.evidence == Evidence::BindingLeft,
            "{mode}: evidence {:?}",
            accepted.evidence
        );
    }
    Ok(())
}

// ---- 8: session binding ----

#[derive(Clone, Copy, Debug)]
enum Kind {
    Read,
    Extend,
    Release,
    TreeExtend,
    Load,
}

#[derive(Clone, Copy, Debug)]
enum Cmd {
    On(Kind, RegisterId),
    Create,
}

struct Fixture {
    n: NodeRef,
    red: ReducedTree,
    other: RegisterId,
    other_n: NodeRef,
    other_red: ReducedTree,
}

/// Runs `cmd` and returns the registers it names.
fn run_cmd(tpm: &mut Tpm, cmd: Cmd, fx: &Fixture) -> Vec<RegisterId> {
    let m = to_digest(Some(meas(99)));
    match cmd {
        Cmd::Create => {
            let _ = tpm.create_tree(2);
            Vec::new()
        }
        Cmd::On(kind, r) => {
            let _ = match kind {
                Kind::Read => tpm.pcr_read(r).map(drop),
                Kind::Extend => tpm.pcr_extend(r, &m).map(drop),
                Kind::Release => tpm.release(r),
                Kind::TreeExtend => tpm.tree_extend(r, &m).map(drop),
                Kind::Load => {
                    let (n, red) = if r == fx.other {
                        (&fx.other_n, &fx.other_red)
                    } else {
                        (&fx.n, &fx.red)
                    };
                    tpm.reduced_tree_verify_load(n, red, r).map(drop)
                }
            };
            vec![r]
        }
    }
}

fn expected_root(n: &NodeRef, red: &ReducedTree, new: H) -> Option<H> {
    let mut v = Some(new);
    for k in (1..=n.coord.len()).rev() {
        let sib = from_digest(&red.entries[k - 1].value);
        v = if n.coord.bit(k) {
            ext(sib, v)
        } else {
            ext(v, sib)
        };
    }
    v
}

fn c8_session_binding() -> Outcome {
    let kinds = [
        Kind::Read,
        Kind::Extend,
        Kind::Release,
        Kind::TreeExtend,
        Kind::Load,
    ];
    let new: H = sha1(b"new value");
    let mut sequences = 0u64;
    for depth in 1..=3usize {
        let leaves: Vec<Option<H>> = (0..1u64 << depth).map(|i| Some(meas(i))).collect();
        for cs in all_coords(depth) {
            let c = coord(&cs);
            let mut p = platform(depth as u8, &leaves, 1);
            let root = p.root_register();
            let (_, other) = p.tpm.create_tree(3).map_err(|e| e.to_string())?;
            let (l0, l1) = (to_digest(Some(meas(50))), to_digest(Some(meas(51))));
            p.tpm.tree_extend(other, &l0).map_err(|e| e.to_string())?;
            p.tpm.tree_extend(other, &l1).map_err(|e| e.to_string())?;
            let other_sml = SmlTree::from_leaves(ALG, 3, &[l0, l1], other).unwrap();
            let oc = coord("00");
            let fx = Fixture {
                n: p.node(&c).unwrap(),
                red: p.reduced_tree(&c).unwrap(),
                other,
                other_n: other_sml.node_ref(&oc).unwrap(),
                other_red: other_sml.reduced_tree(&oc).unwrap(),
            };
            let (_, session): (Trace, UpdateSession) = p
                .tpm
                .reduced_tree_verify_load(&fx.n, &fx.red, root)
                .map_err(|e| e.to_string())?
                .verified()
                .ok_or("honest load refused")?;
            let bound: Vec<RegisterId> = p
                .tpm
                .registers()
                .filter(|(_, r)| r.state == RegisterState::ReducedTree)
                .map(|(id, _)| id)
                .collect();
            check!(
                bound.len() == c.len() + 1,
                "{cs}: {} bound registers",
                bound.len()
            );
            let free = RegisterId(p.tpm.registers().count() as u16 - 1);
            let mut targets = vec![bound[0], *bound.last().unwrap(), root, other, free];
            targets.dedup();
            let mut cmds: Vec<Cmd> = kinds
                .iter()
                .flat_map(|k| targets.iter().map(move |t| Cmd::On(*k, *t)))
                .collect();
            cmds.push(Cmd::Create);
            let guarded: BTreeSet<RegisterId> = bound.iter().copied().chain([root]).collect();
            let want = to_digest(expected_root(&fx.n, &fx.red, new));

            for a in &cmds {
                let mut s1 = p.tpm.clone();
                let n1 = run_cmd(&mut s1, *a, &fx);
                for b in &cmds {
                    let mut s2 = s1.clone();
                    let n2 = run_cmd(&mut s2, *b, &fx);
                    for d in &cmds {
                        let mut s3 = s2.clone();
                        let n3 = run_cmd(&mut s3, *d, &fx);
                        sequences += 1;
                        let touched = n1.iter().chain(&n2).chain(&n3).any(|r| guarded.contains(r));
                        let before = s3.register(root).map(|r| r.value.clone());
                        let res = s3.reduced_tree_update(&session, &to_digest(Some(new)));
                        if touched {
                            check!(
                                matches!(res, Err(EngineError::BindingViolation(_))),
                                "{cs}: update allowed after {a:?} {b:?} {d:?}"
                            );
                            check!(
                                s3.register(root).map(|r| r.value.clone()) == before,
                                "{cs}: refused update changed the root"
                            );
                        } else {
                            let out = res.map_err(|e| format!("{cs}: {a:?} {b:?} {d:?}: {e}"))?;
                            check!(out.root == want, "{cs}: update root differs from oracle");
                        }
                        s3.check_invariants()
                            .map_err(|e| format!("{cs}: {a:?} {b:?} {d:?}: {e}"))?;
                    }
                }
            }
        }
    }
    check!(sequences > 0, "no sequences run");
    Ok(())
}

// ---- 9: discovery ----

fn leaf_range(c: &str, depth: usize) -> (u64, u64) {
    let idx = if c.is_empty() {
        0
    } else {
        u64::from_str_radix(c, 2).unwrap()
    };
    let span = 1u64 << (depth - c.len());
    (idx * span, (idx + 1) * span)
}

fn oracle_active(
    nodes: &BTreeMap<String, Option<H>>,
    depth: usize,
    dd: &DiscoveryData,
) -> BTreeSet<(String, Digest)> {
    let occupied: Vec<(&String, Digest)> = nodes
        .iter()
        .filter_map(|(c, v)| v.map(|v| (c, to_digest(Some(v)))))
        .collect();
    occupied
        .iter()
        .filter(|(_, v)| dd.values.contains(v))
        .filter(|(c, v)| {
            dd.conditions
                .iter()
                .filter(|(t, _)| t == v)
                .all(|(_, req)| {
                    occupied.iter().any(|(r, rv)| {
                        rv == req && leaf_range(r, depth).1 <= leaf_range(c, depth).0
                    })
                })
        })
        .map(|(c, v)| ((*c).clone(), v.clone()))
        .collect()
}

type CandidateKey = (String, Digest, Vec<String>);

fn oracle_bottom_up(
    nodes: &BTreeMap<String, Option<H>>,
    depth: usize,
    dd: &DiscoveryData,
    max_gaps: usize,
) -> BTreeSet<CandidateKey> {
    let leaf = |i: u64| nodes[&bits(depth, i)].map(|h| to_digest(Some(h)));
    let counts = |c: &str| {
        let (lo, hi) = leaf_range(c, depth);
        let occ = (lo..hi).filter(|&i| leaf(i).is_some()).count();
        let unk = (lo..hi)
            .filter(|&i| leaf(i).is_some_and(|l| !dd.leaves.contains(&l)))
            .count();
        (occ, unk)
    };
    let full = |c: &str| {
        let (occ, unk) = counts(c);
        occ > 0 && unk == 0
    };
    let gapped = |c: &str| (1..=max_gaps).contains(&counts(c).1);
    let parent = |c: &str| c[..c.len() - 1].to_string();
    let coords = all_coords(depth);
    let full_max: Vec<&String> = coords
        .iter()
        .filter(|c| full(c) && (c.is_empty() || !full(&parent(c))))
        .collect();
    let mut out: BTreeSet<CandidateKey> = full_max
        .iter()
        .map(|c| ((*c).clone(), to_digest(nodes[*c]), Vec::new()))
        .collect();
    for c in &coords {
        let maximal = c.is_empty() || !gapped(&parent(c));
        let contains_full = full_max
            .iter()
            .any(|f| *f != c && f.starts_with(c.as_str()));
        if gapped(c) && maximal && contains_full {
            let (lo, hi) = leaf_range(c, depth);
            let missing = (lo..hi)
                .filter(|&i| leaf(i).is_some_and(|l| !dd.leaves.contains(&l)))
                .map(|i| bits(depth, i))
                .collect();
            out.insert((c.clone(), to_digest(nodes[c]), missing));
        }
    }
    out
}

fn c9_discovery() -> Outcome {
    let mut rng = StdRng::seed_from_u64(9);
    let aik = SigningKey::from_seed([1; 32]);
    for t in 0..100 {
        let depth = rng.random_range(2..=5usize);
        let leaves = random_leaves(&mut rng, depth, 0.15, Some(6));
        let nodes = oracle_nodes(&leaves, depth);
        let p = platform(depth as u8, &leaves, 1);
        let present: Vec<Digest> = nodes
            .values()
            .flatten()
            .map(|h| to_digest(Some(*h)))
            .collect();

        let mut dd = DiscoveryData::default();
        for v in &present {
            if rng.random_bool(0.3) {
                dd.values.insert(v.clone());
            }
        }
        dd.values.insert(to_digest(Some(sha1(b"absent"))));
        let targets: Vec<Digest> = dd.values.iter().cloned().collect();
        for _ in 0..rng.random_range(0..4) {
            let target = targets[rng.random_range(0..targets.len())].clone();
            let req = if !present.is_empty() && rng.random_bool(0.8) {
                present[rng.random_range(0..present.len())].clone()
            } else {
                to_digest(Some(sha1(b"missing predecessor")))
            };
            dd.conditions.push((target, req));
        }
        for i in 0..6 {
            if rng.random_bool(0.6) {
                dd.leaves.insert(to_digest(Some(meas(i))));
            }
        }

        let got: BTreeSet<(String, Digest)> = active_discover(&p.sml, &dd)
            .into_iter()
            .map(|n| (n.coord.to_string().replace("root", ""), n.value))
            .collect();
        let want = oracle_active(&nodes, depth, &dd);
        check!(
            got == want,
            "tree {t}: active discovery {got:?} != oracle {want:?}"
        );

        for max_gaps in 0..=2 {
            let got: BTreeSet<CandidateKey> = bottom_up_candidates(&p.sml, &dd, max_gaps)
                .into_iter()
                .map(|c| {
                    (
                        c.node.coord.to_string().replace("root", ""),
                        c.node.value,
                        c.missing.iter().map(|m| m.to_string()).collect(),
                    )
                })
                .collect();
            let want = oracle_bottom_up(&nodes, depth, &dd, max_gaps);
            check!(
                got == want,
                "tree {t} gaps {max_gaps}: bottom-up {got:?} != oracle {want:?}"
            );
        }

        // passive: the honest subtree passes, any single changed node fails
        let sub_root = coord(&bits(1, rng.random_range(0..2)));
        let root = p.node(&sub_root).unwrap();
        if root.value.is_nil() {
            continue;
        }
        let sca = sca(CertMode::Revealed, &root.value);
        let mut quoter = p.clone();
        let quote = quoter
            .quote_node(&sub_root, b"passive", false)
            .map_err(|e| e.to_string())?
            .verified()
            .ok_or("quote refused")?;
        let honest = p.sml.subtree(&sub_root).unwrap();
        let mut req = PassiveRequest {
            root: root.clone(),
            subtree: honest.clone(),
            quote: Some(quote),
            aik_pub: aik.verifying_key(),
            aik_cert: None,
            lazy: false,
        };
        passive_discover(&sca, &req).map_err(|e| format!("tree {t}: honest passive: {e}"))?;
        let rels: Vec<Coord> = honest.coords().collect();
        let rel = rels[rng.random_range(0..rels.len())];
        let bad = corruptions(&mut rng, honest.get(&rel).unwrap()).remove(0);
        req.subtree.set(&rel, bad).unwrap();
        for lazy in [false, true] {
            req.lazy = lazy;
            let res = passive_discover(&sca, &req);
            check!(
                matches!(res, Err(ScaError::InconsistentSubtree(_))),
                "tree {t}: tampered subtree at {rel} (lazy={lazy}) got {res:?}"
            );
        }
    }

    // and once over the wire
    let p = platform(3, &eight_leaves(), 1);
    let c = coord(SUBJECT);
    let root = p.node(&c).unwrap();
    let mut quoter = p.clone();
    let quote = quoter
        .quote_node(&c, b"x", false)
        .unwrap()
        .verified()
        .unwrap();
    let mut subtree = p.sml.subtree(&c).unwrap();
    subtree
        .set(&coord("01"), to_digest(Some(sha1(b"evil"))))
        .unwrap();
    let addr = spawn_local(Arc::new(ScaService::new(sca(
        CertMode::Revealed,
        &root.value,
    ))))
    .map_err(|e| e.to_string())?;
    let mut client = Client::connect(addr).map_err(|e| e.to_string())?;
    let res = client.passive_discover(&PassiveRequest {
        root,
        subtree,
        quote: Some(quote),
        aik_pub: aik.verifying_key(),
        aik_cert: None,
        lazy: false,
    });
    check!(
        matches!(res, Err(WireError::Remote { code, .. }) if code == ScaError::InconsistentSubtree(Coord::ROOT).code()),
        "tampered subtree over the wire got {res:?}"
    );
    Ok(())
}

type Criterion = (&'static str, fn() -> Outcome, u64);

#[test]
fn acceptance() {
    // (name, check, limit in seconds)
    let criteria: [Criterion; 9] = [
        ("tree construction matches the oracle", c1_construction, 10),
        (
            "verification accepts honest input, rejects corruption",
            c2_verification,
            30,
        ),
        ("breach localisation", c3_localisation, 10),
        ("single-node update", c4_update, 10),
        (
            "bulk update equals naive and saves verifications",
            c5_bulk,
            30,
        ),
        ("certification end to end, both modes", c6_end_to_end, 5),
        ("full binding layout", c7_binding_layout, 5),
        ("session binding under interleaving", c8_session_binding, 10),
        ("discovery against the oracle", c9_discovery, 20),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = f();
        let elapsed = start.elapsed();
        let res = res.and_then(|()| {
            if elapsed > Duration::from_secs(*limit) {
                Err(format!("took {elapsed:.2?}, limit {limit}s"))
            } else {
                Ok(())
            }
        });
        let line = match &res {
            Ok(()) => format!("criterion {}: PASS {name} ({elapsed:.2?})", i + 1),
            Err(e) => format!("criterion {}: FAIL {name} ({elapsed:.2?}): {e}", i + 1),
        };
        writeln!(out, "{line}").unwrap();
        if res.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
