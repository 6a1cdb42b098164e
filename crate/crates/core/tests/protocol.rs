// SPDX-License-Identifier: Apache-2.0

mod common;

use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use common::*;
use treetpm::cert::{
    bulk_update, phase1_quote, phase2_package, CertMode, Evidence, PackageOptions, Policy,
    PolicyEntry, Sca, ScaConfig, ValidationData, Validator,
};
use treetpm::crypto::Digest;
use treetpm::discovery::{combined_update_set, DiscoveryData, PassiveRequest, PassiveResponse};
use treetpm::tree::Coord;
use treetpm::tss::Platform;
use treetpm::wire::{
    codes, read_frame, spawn_local, Client, Frame, MessageType, ScaService, WireError,
    DEFAULT_MAX_FRAME,
};

fn leaves() -> Vec<Option<H>> {
    (1..=8).map(|i| Some(meas(i))).collect()
}

/// Policy over the values at `0` and `11`, with `11` conditional on `10`.
fn service(mode: CertMode, p: &Platform) -> Arc<ScaService> {
    let v = |s: &str| p.node(&coord(s)).unwrap().value;
    let mut policy = Policy::new(ALG);
    policy.insert(
        v("0"),
        PolicyEntry {
            properties: vec![("component".into(), "loader".into())],
            ..PolicyEntry::default()
        },
    );
    policy.insert(
        v("11"),
        PolicyEntry {
            properties: vec![("component".into(), "kernel".into())],
            requires: vec![v("10")],
            ..PolicyEntry::default()
        },
    );
    policy.insert(
        to_digest(Some(meas(1))),
        PolicyEntry {
            leaf: true,
            ..PolicyEntry::default()
        },
    );
    let sca = Sca::new(
        treetpm::crypto::SigningKey::from_seed([9; 32]),
        policy,
        ScaConfig {
            mode,
            timestamp: Some(1),
            ..ScaConfig::default()
        },
    );
    Arc::new(ScaService::new(sca))
}

fn start(mode: CertMode, p: &Platform) -> (Arc<ScaService>, SocketAddr) {
    let svc = service(mode, p);
    let addr = spawn_local(svc.clone()).unwrap();
    (svc, addr)
}

fn root_request(p: &mut Platform, lazy: bool) -> PassiveRequest {
    let root = p.node(&Coord::ROOT).unwrap();
    let quote = (!lazy).then(|| {
        p.quote_node(&Coord::ROOT, b"passive", false)
            .unwrap()
            .verified()
            .unwrap()
    });
    PassiveRequest {
        root,
        subtree: p.sml.clone(),
        quote,
        aik_pub: p.aik.verifying_key(),
        aik_cert: None,
        lazy,
    }
}

#[test]
fn published_data_lists_policy() {
    let p = platform(3, &leaves(), 1);
    let (svc, addr) = start(CertMode::Revealed, &p);
    let mut client = Client::connect(addr).unwrap();
    let published = client.discovery_data().unwrap();
    assert_eq!(published.alg, ALG);
    assert_eq!(
        published.data,
        DiscoveryData::from_policy(svc.sca().policy())
    );
    assert_eq!(published.data.values.len(), 2);
    assert_eq!(published.data.conditions.len(), 1);
    assert_eq!(published.data.leaves.len(), 1);
}

#[test]
fn eager_passive_certifies_and_binds() {
    for mode in [CertMode::Revealed, CertMode::Concealed] {
        let mut p = platform(3, &leaves(), 1);
        let (svc, addr) = start(mode, &p);
        let mut client = Client::connect(addr).unwrap();
        let req = root_request(&mut p, false);
        let PassiveResponse::Certified(certs) = client.passive_discover(&req).unwrap() else {
            panic!("expected certificates");
        };
        let found: Vec<String> = certs.iter().map(|(n, _)| n.coord.to_string()).collect();
        assert_eq!(found, ["0", "11"]);
        for (n, r) in &certs {
            assert_eq!(r.certificate.mode(), mode);
            assert_eq!(r.manifest().subject.is_some(), mode == CertMode::Revealed);
            if mode == CertMode::Concealed {
                assert_eq!(r.manifest().subject, None);
                assert_ne!(r.manifest().subject.as_ref(), Some(&n.value));
            }
        }

        let u = combined_update_set(ALG, &certs, 3).unwrap();
        // "0" gets the three-node binding, "11" sits too deep for one
        assert_eq!(u.len(), 3);
        bulk_update(&u, &mut p).unwrap();
        let (n0, r0) = &certs[0];
        let mut v = Validator::new(ALG, svc.sca().public());
        let nonce = v.challenge();
        let quote = p
            .quote_node(&n0.coord.child(false), &nonce, true)
            .unwrap()
            .verified()
            .unwrap();
        let ok = v
            .validate_subtree(&ValidationData {
                quote,
                response: r0.clone(),
                aik_pub: p.aik.verifying_key(),
                aik_cert: None,
                subject: None,
            })
            .unwrap();
        assert_eq!(ok.evidence, Evidence::BindingLeft);
        assert_eq!(ok.mode, mode);
    }
}

#[test]
fn lazy_passive_then_quotes() {
    let mut p = platform(3, &leaves(), 1);
    let (svc, addr) = start(CertMode::Revealed, &p);
    let mut client = Client::connect(addr).unwrap();
    let req = root_request(&mut p, true);
    let PassiveResponse::Candidates(cands) = client.passive_discover(&req).unwrap() else {
        panic!("expected candidates");
    };
    assert_eq!(cands.len(), 2);
    let aik_pub = p.aik.verifying_key();
    let pkgs: Vec<_> = cands
        .iter()
        .map(|n| {
            let q = phase1_quote(&mut p, &n.coord, b"lazy", true).unwrap();
            phase2_package(q, n, None, &aik_pub, PackageOptions::default()).unwrap()
        })
        .collect();
    let responses = client.lazy_quotes(&pkgs).unwrap();
    assert_eq!(responses.len(), 2);

    let mut v = Validator::new(ALG, svc.sca().public());
    for (n, r) in cands.iter().zip(&responses) {
        assert_eq!(r.manifest().subject.as_ref(), Some(&n.value));
        let nonce = v.challenge();
        let quote = p
            .quote_node(&n.coord, &nonce, true)
            .unwrap()
            .verified()
            .unwrap();
        let ok = v
            .validate_subtree(&ValidationData {
                quote,
                response: r.clone(),
                aik_pub,
                aik_cert: None,
                subject: None,
            })
            .unwrap();
        assert_eq!(ok.evidence, Evidence::Direct);
    }
}

#[test]
fn lazy_quote_for_uncertifiable_value_is_refused() {
    let mut p = platform(3, &leaves(), 1);
    let (_, addr) = start(CertMode::Revealed, &p);
    let mut client = Client::connect(addr).unwrap();
    let c = coord("10");
    let n = p.node(&c).unwrap();
    let q = phase1_quote(&mut p, &c, b"n", true).unwrap();
    let pkg = phase2_package(
        q,
        &n,
        None,
        &p.aik.verifying_key(),
        PackageOptions::default(),
    )
    .unwrap();
    let err = client.lazy_quotes(&[pkg]).unwrap_err();
    assert!(matches!(err, WireError::Remote { .. }), "{err:?}");
    // the session is still usable
    client.discovery_data().unwrap();
}

#[test]
fn unknown_type_keeps_the_session() {
    let p = platform(3, &leaves(), 1);
    let (_, addr) = start(CertMode::Revealed, &p);
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(
        &Frame {
            kind: 0x33,
            payload: vec![1],
        }
        .to_bytes(),
    )
    .unwrap();
    let reply = read_frame(&mut s, DEFAULT_MAX_FRAME).unwrap().unwrap();
    assert_eq!(reply.message_type(), Some(MessageType::Error));
    assert_eq!(reply.payload[1], codes::UNKNOWN_TYPE);
    let mut client = Client::from_channel(Box::new(s));
    client.discovery_data().unwrap();
}

#[test]
fn random_frames_never_break_the_service() {
    let p = platform(3, &leaves(), 1);
    let (svc, addr) = start(CertMode::Concealed, &p);
    let mut rng = StdRng::seed_from_u64(77);
    let kinds: Vec<u8> = MessageType::ALL.iter().map(|t| t.byte()).collect();

    for _ in 0..10_000 {
        let kind = if rng.random_bool(0.8) {
            kinds[rng.random_range(0..kinds.len())]
        } else {
            rng.random()
        };
        let len = rng.random_range(0..64);
        let mut payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        if rng.random_bool(0.5) && !payload.is_empty() {
            payload[0] = 1;
        }
        // any outcome is fine as long as nothing panics
        let _ = svc.handle(&Frame { kind, payload });
    }

    for _ in 0..200 {
        let mut s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        let len = rng.random_range(0..40);
        let junk: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let _ = s.write_all(&junk);
        let _ = s.shutdown(Shutdown::Write);
        // the server answers or hangs up; a reset is fine when it closed
        // with junk still unread, a timeout is not
        let mut back = Vec::new();
        if let Err(e) = s.read_to_end(&mut back) {
            assert_eq!(e.kind(), ErrorKind::ConnectionReset, "{e}");
        }
    }

    let mut p = p;
    let c = coord("0");
    let n = p.node(&c).unwrap();
    let q = phase1_quote(&mut p, &c, b"after fuzz", true).unwrap();
    let pkg = phase2_package(
        q,
        &n,
        None,
        &p.aik.verifying_key(),
        PackageOptions::default(),
    )
    .unwrap();
    let mut client = Client::connect(addr).unwrap();
    let r = client.attest(&pkg).unwrap();
    assert_eq!(r.certificate.mode(), CertMode::Concealed);
    let s = n.value.as_bytes().unwrap();
    let bytes = treetpm::codec::Canonical::to_canonical_bytes(&r);
    assert!(!bytes.windows(s.len()).any(|w| w == s));
}

#[test]
fn attest_with_wrong_subject_is_refused() {
    let mut p = platform(3, &leaves(), 1);
    let (_, addr) = start(CertMode::Revealed, &p);
    let c = coord("0");
    let n = p.node(&c).unwrap();
    let q = phase1_quote(&mut p, &c, b"n", true).unwrap();
    let mut pkg = phase2_package(
        q,
        &n,
        None,
        &p.aik.verifying_key(),
        PackageOptions::default(),
    )
    .unwrap();
    pkg.subject = Some(Digest::from_hex(&hex::encode(meas(42))).unwrap());
    let mut client = Client::connect(addr).unwrap();
    assert!(matches!(client.attest(&pkg), Err(WireError::Remote { .. })));
}
