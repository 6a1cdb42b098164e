// SPDX-License-Identifier: Apache-2.0

//! Files the CLI reads and writes.
//!
//! The emulated device state lives next to the SML in `<sml>.tpm`. It stands
//! in for the protected register file, so `tamper` never touches it.
//!
//! ```text
//! TREETPM-STATE 1
//! hash sha1
//! registers 24
//! auto-close 1
//! tree <uid> <root-reg> <depth> <leaf-count> <tb,tb,-,...>
//! reg <id> <AR|CR|TB|RT> <uid|-> <coord|root|-> <hex|nil>
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use treetpm::codec::{Canonical, DecodeError, Decoder, Encoder};
use treetpm::crypto::{Digest, HashAlg, SigningKey, VerifyingKey};
use treetpm::engine::{EngineConfig, RegisterId, RegisterInfo, RegisterState, Tpm, TreeUid};
use treetpm::tree::{self, Coord, SmlTree};
use treetpm::tss::Platform;

const STATE_MAGIC: &str = "TREETPM-STATE 1";

pub fn state_path(sml: &Path) -> PathBuf {
    let mut p = sml.as_os_str().to_owned();
    p.push(".tpm");
    PathBuf::from(p)
}

pub fn read_sml(path: &Path) -> Result<SmlTree> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    tree::deserialize(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_sml(path: &Path, sml: &SmlTree) -> Result<()> {
    fs::write(path, tree::serialize(sml)).with_context(|| format!("writing {}", path.display()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or("-".to_string(), |x| x.to_string())
}

fn coord_token(c: Option<Coord>) -> String {
    match c {
        None => "-".into(),
        Some(c) if c.is_root() => "root".into(),
        Some(c) => c.to_string(),
    }
}

pub fn render_state(tpm: &Tpm, root: RegisterId) -> Result<String> {
    let cfg = tpm.config();
    let mut out = format!(
        "{STATE_MAGIC}\nhash {}\nregisters {}\nauto-close {}\n",
        cfg.alg.name(),
        cfg.registers,
        u8::from(cfg.auto_close)
    );
    let (uid, frontier) = tpm
        .tree_frontier(root)
        .ok_or_else(|| anyhow!("register {root} does not hold a tree"))?;
    let frontier: Vec<String> = frontier.iter().map(|r| opt(r.map(|r| r.0))).collect();
    out.push_str(&format!(
        "tree {} {} {} {} {}\n",
        uid.0,
        root.0,
        tpm.tree_depth(root).expect("tree"),
        tpm.tree_leaf_count(root).expect("tree"),
        frontier.join(",")
    ));
    for (id, r) in tpm.registers() {
        if r.state == RegisterState::Free {
            continue;
        }
        out.push_str(&format!(
            "reg {} {} {} {} {}\n",
            id.0,
            r.state,
            opt(r.tree.map(|t| t.0)),
            coord_token(r.coord),
            r.value
        ));
    }
    Ok(out)
}

pub fn parse_state(text: &str) -> Result<Tpm> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    if lines.next().map(|(_, l)| l) != Some(STATE_MAGIC) {
        bail!("state line 1: expected `{STATE_MAGIC}`");
    }
    let mut next = |key: &str| -> Result<String> {
        let (n, l) = lines
            .next()
            .ok_or_else(|| anyhow!("state file truncated before `{key}`"))?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => bail!("state line {n}: expected `{key}`"),
        }
    };
    let alg = next("hash")?;
    let alg = HashAlg::from_name(&alg).ok_or_else(|| anyhow!("unknown hash {alg}"))?;
    let registers: usize = next("registers")?.parse().context("registers")?;
    let auto_close = next("auto-close")? == "1";
    let tree = next("tree")?;
    let f: Vec<&str> = tree.split(' ').collect();
    let [uid, root, depth, count, frontier] = f.as_slice() else {
        bail!("malformed tree line");
    };
    let frontier = frontier
        .split(',')
        .map(|t| match t {
            "-" => Ok(None),
            t => t.parse().map(|r| Some(RegisterId(r))),
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .context("tree frontier")?;

    let mut tpm = Tpm::new(EngineConfig {
        alg,
        registers,
        auto_close,
    });
    for (n, l) in lines {
        let f: Vec<&str> = l.split(' ').collect();
        let ["reg", id, state, uid, coord, value] = f.as_slice() else {
            bail!("state line {n}: expected a register line");
        };
        let state = RegisterState::from_short_name(state)
            .ok_or_else(|| anyhow!("state line {n}: bad state {state}"))?;
        let tree = match *uid {
            "-" => None,
            u => Some(TreeUid(u.parse().context("tree uid")?)),
        };
        let coord = match *coord {
            "-" => None,
            c => Some(c.parse::<Coord>()?),
        };
        let value = Digest::from_hex(value)?;
        alg.check(&value)?;
        let id = RegisterId(id.parse().context("register id")?);
        tpm.restore_register(
            id,
            RegisterInfo {
                value,
                state,
                tree,
                coord,
            },
        )?;
    }
    tpm.restore_tree(
        TreeUid(uid.parse()?),
        RegisterId(root.parse()?),
        depth.parse()?,
        count.parse()?,
        frontier,
    )?;
    tpm.check_invariants()
        .map_err(|e| anyhow!("inconsistent device state: {e}"))?;
    Ok(tpm)
}

pub fn save(platform: &Platform, sml_path: &Path) -> Result<()> {
    write_sml(sml_path, &platform.sml)?;
    let state = render_state(&platform.tpm, platform.root_register())?;
    let p = state_path(sml_path);
    fs::write(&p, state).with_context(|| format!("writing {}", p.display()))
}

/// Loads the SML and its device state. Commands that never sign get a
/// throwaway AIK.
pub fn load(sml_path: &Path, aik: Option<SigningKey>) -> Result<Platform> {
    let sml = read_sml(sml_path)?;
    let p = state_path(sml_path);
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    let tpm = parse_state(&text).with_context(|| format!("parsing {}", p.display()))?;
    if tpm.tree_depth(sml.root_register()) != Some(sml.depth()) {
        bail!("SML root register does not match the device state");
    }
    if tpm.alg() != sml.alg() {
        bail!("SML hash algorithm does not match the device state");
    }
    let aik = aik.unwrap_or_else(|| SigningKey::from_seed(rand::random()));
    Ok(Platform::from_parts(tpm, sml, aik))
}

pub fn read_signing_key(path: &Path) -> Result<SigningKey> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let seed = hex::decode(text.trim()).context("key file is not hex")?;
    Ok(SigningKey::from_seed_bytes(&seed)?)
}

pub fn read_public_key(path: &Path) -> Result<VerifyingKey> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bytes = hex::decode(text.trim()).context("public key file is not hex")?;
    Ok(VerifyingKey::from_bytes(&bytes)?)
}

/// Measurements file: one hex digest per line; blank lines and `#`
/// comments are skipped.
pub fn read_measurements(path: &Path, alg: HashAlg) -> Result<Vec<Digest>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let d = Digest::from_hex(l).with_context(|| format!("line {}", i + 1))?;
        alg.check(&d).with_context(|| format!("line {}", i + 1))?;
        out.push(d);
    }
    Ok(out)
}

pub fn read_canonical<T: Canonical>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    T::from_canonical_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn write_canonical<T: Canonical>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, v.to_canonical_bytes()).with_context(|| format!("writing {}", path.display()))
}

/// What `certify` leaves behind for `present`: the certified node, its
/// value before binding, and whether the binding nodes were written.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IssuedRecord {
    pub coord: Coord,
    pub s_old: Digest,
    pub bound: bool,
    pub response: treetpm::cert::ScaResponse,
}

impl Canonical for IssuedRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.encode(&self.coord)
            .digest(&self.s_old)
            .bool(self.bound)
            .encode(&self.response);
    }

    fn decode(dec: &mut Decoder<'_>) -> std::result::Result<Self, DecodeError> {
        Ok(IssuedRecord {
            coord: dec.decode()?,
            s_old: dec.digest()?,
            bound: dec.bool()?,
            response: dec.decode()?,
        })
    }
}
