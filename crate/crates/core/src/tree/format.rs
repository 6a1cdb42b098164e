// SPDX-License-Identifier: Apache-2.0

//! Text format of the stored measurement log.
//!
//! ```text
//! TREESML 1
//! hash sha1
//! depth 2
//! leaf-count 4
//! root-register 0
//! 0 44bae70ba028e9de6a18bcf1e62ab21f671de8de
//! 1 1eed06c67eab6990eeae4ec3984d2a1cc9c61f42
//! 00 ae23b94c...
//! ...
//! ```
//!
//! Five header lines, then one `<coord> <hex|nil>` line per node in
//! breadth-first order. Every line ends with `\n`. The rendering is
//! canonical: serializing a parsed file reproduces it byte for byte.

use thiserror::Error;

use super::{Coord, SmlTree};
use crate::crypto::{Digest, HashAlg};
use crate::engine::RegisterId;

pub const MAGIC: &str = "TREESML";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}, column {column}: {message}")]
pub struct SmlParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> SmlParseError {
    SmlParseError {
        line,
        column,
        message: message.into(),
    }
}

pub fn serialize(tree: &SmlTree) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!("{MAGIC} {VERSION}\n"));
    out.push_str(&format!("hash {}\n", tree.alg().name()));
    out.push_str(&format!("depth {}\n", tree.depth()));
    out.push_str(&format!("leaf-count {}\n", tree.leaf_count()));
    out.push_str(&format!("root-register {}\n", tree.root_register().0));
    for c in tree.coords() {
        let v = tree.get(&c).expect("in range");
        out.push_str(&format!("{c} {v}\n"));
    }
    out.into_bytes()
}

fn header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    key: &str,
) -> Result<(usize, &'a str), SmlParseError> {
    let (no, line) = lines
        .next()
        .ok_or_else(|| err(0, 1, format!("missing header line `{key}`")))?;
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok((no, v)),
        _ => Err(err(no, 1, format!("expected `{key} <value>`"))),
    }
}

fn number<T: std::str::FromStr>(no: usize, key: &str, v: &str) -> Result<T, SmlParseError> {
    v.parse()
        .map_err(|_| err(no, key.len() + 2, format!("invalid {key} `{v}`")))
}

pub fn deserialize(bytes: &[u8]) -> Result<SmlTree, SmlParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let before = &bytes[..e.valid_up_to()];
        let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
        err(line, 1, "invalid utf-8")
    })?;
    let body = text
        .strip_suffix('\n')
        .ok_or_else(|| err(text.lines().count().max(1), 1, "missing final newline"))?;
    let mut lines = body.split('\n').enumerate().map(|(i, l)| (i + 1, l));

    let (no, version) = header(&mut lines, MAGIC)?;
    if version != VERSION.to_string() {
        return Err(err(
            no,
            MAGIC.len() + 2,
            format!("unsupported version `{version}`"),
        ));
    }
    let (no, alg) = header(&mut lines, "hash")?;
    let alg = HashAlg::from_name(alg).ok_or_else(|| err(no, 6, format!("unknown hash `{alg}`")))?;
    let (no, v) = header(&mut lines, "depth")?;
    let depth: u8 = number(no, "depth", v)?;
    let (no, v) = header(&mut lines, "leaf-count")?;
    let leaf_count: u64 = number(no, "leaf-count", v)?;
    let (no, v) = header(&mut lines, "root-register")?;
    let root_reg: u16 = number(no, "root-register", v)?;

    let mut tree =
        SmlTree::new(alg, depth, RegisterId(root_reg)).map_err(|e| err(3, 7, e.to_string()))?;
    if leaf_count > tree.capacity() {
        return Err(err(4, 12, "leaf-count exceeds capacity"));
    }
    tree.set_leaf_count(leaf_count);

    let expected: Vec<Coord> = tree.coords().collect();
    for want in &expected {
        let (no, line) = lines
            .next()
            .ok_or_else(|| err(0, 1, format!("missing node line for `{want}`")))?;
        let (coord, value) = line
            .split_once(' ')
            .ok_or_else(|| err(no, 1, "expected `<coord> <digest>`"))?;
        if coord != want.to_string() {
            return Err(err(
                no,
                1,
                format!("expected coord `{want}`, found `{coord}`"),
            ));
        }
        let col = coord.len() + 2;
        let d = Digest::from_hex(value).map_err(|e| err(no, col, e.to_string()))?;
        alg.check(&d).map_err(|e| err(no, col, e.to_string()))?;
        tree.set(want, d).expect("checked");
    }
    if let Some((no, _)) = lines.next() {
        return Err(err(no, 1, "unexpected trailing line"));
    }
    Ok(tree)
}
