// SPDX-License-Identifier: Apache-2.0

//! Reference implementations that share no code with the crate: a plain
//! SHA-1, the nil-unit extend, and brute-force tree construction keyed by
//! coordinate strings.

#![allow(dead_code)]

use std::collections::BTreeMap;

use treetpm::crypto::{Digest, HashAlg, SigningKey};
use treetpm::engine::EngineConfig;
use treetpm::tree::Coord;
use treetpm::tss::Platform;

pub type H = [u8; 20];

pub fn sha1(data: &[u8]) -> H {
    let mut h: [u32; 5] = [0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0];
    let mut msg = data.to_vec();
    let bits = (data.len() as u64).wrapping_mul(8);
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&bits.to_be_bytes());
    for block in msg.chunks(64) {
        let mut w = [0u32; 80];
        for i in 0..16 {
            w[i] = u32::from_be_bytes(block[4 * i..4 * i + 4].try_into().unwrap());
        }
        for i in 16..80 {
            w[i] = (w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16]).rotate_left(1);
        }
        let [mut a, mut b, mut c, mut d, mut e] = h;
        for (i, wi) in w.iter().enumerate() {
            let (f, k) = match i {
                0..=19 => ((b & c) | (!b & d), 0x5A827999),
                20..=39 => (b ^ c ^ d, 0x6ED9EBA1),
                40..=59 => ((b & c) | (b & d) | (c & d), 0x8F1BBCDC),
                _ => (b ^ c ^ d, 0xCA62C1D6),
            };
            let t = a
                .rotate_left(5)
                .wrapping_add(f)
                .wrapping_add(e)
                .wrapping_add(k)
                .wrapping_add(*wi);
            e = d;
            d = c;
            c = b.rotate_left(30);
            b = a;
            a = t;
        }
        for (x, y) in h.iter_mut().zip([a, b, c, d, e]) {
            *x = x.wrapping_add(y);
        }
    }
    let mut out = [0u8; 20];
    for (i, x) in h.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&x.to_be_bytes());
    }
    out
}

pub fn ext(x: Option<H>, y: Option<H>) -> Option<H> {
    match (x, y) {
        (None, o) | (o, None) => o,
        (Some(x), Some(y)) => {
            let mut buf = x.to_vec();
            buf.extend_from_slice(&y);
            Some(sha1(&buf))
        }
    }
}

pub fn bits(level: usize, index: u64) -> String {
    (0..level)
        .map(|k| {
            if index >> (level - 1 - k) & 1 == 1 {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

/// Every node value, the root under `""`.
pub fn oracle_nodes(leaves: &[Option<H>], depth: usize) -> BTreeMap<String, Option<H>> {
    let mut nodes = BTreeMap::new();
    for i in 0..1u64 << depth {
        nodes.insert(bits(depth, i), leaves.get(i as usize).copied().flatten());
    }
    for level in (0..depth).rev() {
        for i in 0..1u64 << level {
            let c = bits(level, i);
            let v = ext(nodes[&format!("{c}0")], nodes[&format!("{c}1")]);
            nodes.insert(c, v);
        }
    }
    nodes
}

/// Re-derives the ancestors of `c` after it was overwritten.
pub fn oracle_propagate(nodes: &mut BTreeMap<String, Option<H>>, c: &str) {
    let mut cur = c.to_string();
    while !cur.is_empty() {
        cur.pop();
        let v = ext(nodes[&format!("{cur}0")], nodes[&format!("{cur}1")]);
        nodes.insert(cur.clone(), v);
    }
}

pub fn to_digest(h: Option<H>) -> Digest {
    match h {
        None => Digest::Nil,
        Some(h) => Digest::from_hex(&hex::encode(h)).unwrap(),
    }
}

pub fn from_digest(d: &Digest) -> Option<H> {
    d.as_bytes().map(|b| b.try_into().unwrap())
}

pub fn coord(s: &str) -> Coord {
    if s.is_empty() {
        Coord::ROOT
    } else {
        s.parse().unwrap()
    }
}

pub fn meas(i: u64) -> H {
    sha1(format!("m{i}").as_bytes())
}

/// Closed platform built by tree-extending `leaves` (nil leaves included).
pub fn platform(depth: u8, leaves: &[Option<H>], aik_seed: u8) -> Platform {
    let ms: Vec<Digest> = leaves.iter().map(|l| to_digest(*l)).collect();
    Platform::build(
        EngineConfig::default(),
        depth,
        &ms,
        SigningKey::from_seed([aik_seed; 32]),
        true,
    )
    .unwrap()
}

pub fn sha1_digest(data: &[u8]) -> Digest {
    to_digest(Some(sha1(data)))
}

pub const ALG: HashAlg = HashAlg::Sha1;
