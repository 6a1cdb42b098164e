// SPDX-License-Identifier: Apache-2.0

//! `treetpm`: build and check hash-tree measurement logs against an emulated
//! device, certify subtrees with an SCA service and validate the results.
//!
//! Every command prints one `key=value` result record (plus one record per
//! item for listing commands) and exits 0 on success, 1 when a verification
//! or validation says no, and 2 on errors.

mod record;
mod state;

use std::fs::{self, OpenOptions};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use treetpm::cert::{
    bulk_update, phase1_quote, phase2_package, phase4_binding_update_set, BindingLayout, CertMode,
    PackageOptions, Policy, Sca, ScaConfig, ValidationData, Validator,
};
use treetpm::crypto::{Digest, HashAlg, SigningKey};
use treetpm::discovery::{
    active_discover, bottom_up_candidates, DiscoveryData, PassiveRequest, PassiveResponse,
    DEFAULT_MAX_GAPS,
};
use treetpm::engine::{EngineConfig, NodeVerifyReport, Verification, DEFAULT_REGISTERS};
use treetpm::tree::{Coord, NodeRef};
use treetpm::tss::Platform;
use treetpm::wire::{self, Client, Plaintext, ScaService, WireError};

use record::Record;
use state::IssuedRecord;

const SCA_ADDR_ENV: &str = "TREETPM_SCA_ADDR";

#[derive(Parser)]
#[command(
    name = "treetpm",
    version,
    about = "Hash-tree TPM emulator and subtree certification"
)]
struct Cli {
    /// Log engine commands and protocol events (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and check stored measurement logs.
    #[command(subcommand)]
    Tree(TreeCmd),
    /// Overwrite one SML node without touching the device state.
    Tamper {
        sml: PathBuf,
        coord: Coord,
        /// New value, hex or `nil`.
        value: String,
    },
    /// Quote a node with the AIK.
    Quote {
        sml: PathBuf,
        coord: Coord,
        #[arg(long)]
        aik: PathBuf,
        #[arg(long, value_enum, default_value_t = Variant::Tree)]
        variant: Variant,
        /// Nonce in hex; random when omitted.
        #[arg(long)]
        nonce: Option<String>,
        /// Where to write the encoded quote.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Get a node certified by the SCA and bind the certificate into the tree.
    Certify(CertifyArgs),
    /// Build validation data for a certified node from a validator challenge.
    Present {
        sml: PathBuf,
        /// Record written by `certify`.
        cert: PathBuf,
        #[arg(long)]
        aik: PathBuf,
        #[arg(long)]
        challenge: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print a fresh validator challenge.
    Challenge,
    /// Check validation data as a validator.
    Validate {
        bundle: PathBuf,
        /// SCA public key file.
        #[arg(long)]
        sca_key: PathBuf,
        /// The challenge the bundle must answer.
        #[arg(long)]
        challenge: String,
        /// Require the AIK to be vouched for by this PCA.
        #[arg(long)]
        pca_key: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Alg::Sha1)]
        alg: Alg,
    },
    /// Find certifiable nodes in an SML.
    Discover(DiscoverArgs),
    /// Generate an Ed25519 key; writes `<out>` (seed) and `<out>.pub`.
    Keygen { out: PathBuf },
    /// Subtree certification authority.
    #[command(subcommand)]
    Sca(ScaCmd),
}

#[derive(Subcommand)]
enum TreeCmd {
    /// Tree-extend measurements into a fresh tree and write the SML.
    Build {
        measurements: PathBuf,
        #[arg(short, long)]
        depth: u8,
        /// SML path; `<measurements>.sml` by default.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Alg::Sha1)]
        alg: Alg,
        #[arg(long, default_value_t = DEFAULT_REGISTERS)]
        registers: usize,
        /// Leave the tree open for further extends.
        #[arg(long)]
        open: bool,
    },
    /// Verify a node against the root register with one register.
    VerifyNode { sml: PathBuf, coord: Coord },
    /// Verify a node's whole trace top-down and report where it breaks.
    NodeVerify { sml: PathBuf, coord: Coord },
    /// Verified update of one node.
    Update {
        sml: PathBuf,
        coord: Coord,
        value: String,
    },
    /// Append measurements to an open tree.
    Extend { sml: PathBuf, values: Vec<String> },
    /// Close an open tree.
    Close { sml: PathBuf },
}

#[derive(Args)]
struct CertifyArgs {
    sml: PathBuf,
    coord: Coord,
    #[arg(long)]
    aik: PathBuf,
    #[arg(long, env = SCA_ADDR_ENV)]
    sca: String,
    /// Binding written into the tree; `full` needs two levels below the node.
    #[arg(long, value_enum, default_value_t = Binding::Auto)]
    binding: Binding,
    /// Where to write the issued certificate record; `<sml>.cert` by default.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DiscoverArgs {
    sml: PathBuf,
    /// Discovery data file; fetched from the SCA when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, env = SCA_ADDR_ENV)]
    sca: Option<String>,
    /// Also list span-root candidates built from known leaves.
    #[arg(long)]
    bottom_up: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_GAPS)]
    max_gaps: usize,
    /// Submit the whole tree to the SCA and let it find the nodes.
    #[arg(long, requires = "aik")]
    passive: bool,
    #[arg(long)]
    aik: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ScaCmd {
    /// Serve the wire protocol until killed.
    Serve {
        #[arg(long)]
        policy: PathBuf,
        /// SCA signing key.
        #[arg(long)]
        key: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7340")]
        bind: String,
        #[arg(long, value_enum, default_value_t = Mode::Revealed)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Alg::Sha1)]
        alg: Alg,
        /// Append one line per issued certificate to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write the discovery data derived from a policy.
    Publish {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_enum, default_value_t = Alg::Sha1)]
        alg: Alg,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Alg {
    Sha1,
    Sha256,
}

impl From<Alg> for HashAlg {
    fn from(a: Alg) -> Self {
        match a {
            Alg::Sha1 => HashAlg::Sha1,
            Alg::Sha256 => HashAlg::Sha256,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Tree,
    Redtree,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Binding {
    Auto,
    Full,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Revealed,
    Concealed,
}

/// Ok, or a negative verification answer.
enum Outcome {
    Ok,
    Negative,
}

fn parse_digest(s: &str, alg: HashAlg) -> Result<Digest> {
    let d = Digest::from_hex(s)?;
    alg.check(&d)?;
    Ok(d)
}

fn parse_nonce(s: &str) -> Result<Vec<u8>> {
    hex::decode(s).context("nonce must be hex")
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let name = command_name(&cli.command);
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Negative) => ExitCode::from(1),
        Err(e) => {
            Record::new("error", name)
                .kv("message", format!("{e:#}"))
                .print();
            ExitCode::from(2)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Tree(t) => match t {
            TreeCmd::Build { .. } => "tree-build",
            TreeCmd::VerifyNode { .. } => "tree-verify-node",
            TreeCmd::NodeVerify { .. } => "tree-node-verify",
            TreeCmd::Update { .. } => "tree-update",
            TreeCmd::Extend { .. } => "tree-extend",
            TreeCmd::Close { .. } => "tree-close",
        },
        Command::Tamper { .. } => "tamper",
        Command::Quote { .. } => "quote",
        Command::Certify(_) => "certify",
        Command::Present { .. } => "present",
        Command::Challenge => "challenge",
        Command::Validate { .. } => "validate",
        Command::Discover(_) => "discover",
        Command::Keygen { .. } => "keygen",
        Command::Sca(ScaCmd::Serve { .. }) => "sca-serve",
        Command::Sca(ScaCmd::Publish { .. }) => "sca-publish",
    }
}

fn run(command: Command) -> Result<Outcome> {
    let name = command_name(&command);
    match command {
        Command::Tree(t) => tree(t, name),
        Command::Tamper { sml, coord, value } => {
            let mut tree = state::read_sml(&sml)?;
            if coord.is_root() {
                bail!("the root lives in the device register, not the SML");
            }
            let v = if value == "nil" {
                Digest::Nil
            } else {
                parse_digest(&value, tree.alg())?
            };
            let old = tree.get(&coord)?.clone();
            tree.set(&coord, v.clone())?;
            state::write_sml(&sml, &tree)?;
            Record::new("ok", name)
                .kv("coord", coord)
                .kv("old", old)
                .kv("new", v)
                .print();
            Ok(Outcome::Ok)
        }
        Command::Quote {
            sml,
            coord,
            aik,
            variant,
            nonce,
            output,
        } => {
            let mut p = state::load(&sml, Some(state::read_signing_key(&aik)?))?;
            let nonce = match nonce {
                Some(n) => parse_nonce(&n)?,
                None => rand::random::<[u8; 20]>().to_vec(),
            };
            let q = match variant {
                Variant::Tree => p.quote_node(&coord, &nonce, true)?,
                Variant::Redtree => Verification::Verified(p.quote_reduced(&coord, &nonce)?),
            };
            let Verification::Verified(q) = q else {
                Record::new("mismatch", name).kv("coord", coord).print();
                return Ok(Outcome::Negative);
            };
            let out = output.unwrap_or_else(|| with_suffix(&sml, ".quote"));
            state::write_canonical(&out, &q)?;
            Record::new("ok", name)
                .kv("tag", q.tag())
                .kv("value", q.value())
                .kv("nonce", hex::encode(&q.nonce))
                .kv("quote", out.display())
                .print();
            Ok(Outcome::Ok)
        }
        Command::Certify(args) => certify(args, name),
        Command::Present {
            sml,
            cert,
            aik,
            challenge,
            output,
        } => {
            let mut p = state::load(&sml, Some(state::read_signing_key(&aik)?))?;
            let rec: IssuedRecord = state::read_canonical(&cert)?;
            let nonce = parse_nonce(&challenge)?;
            // a bound node is attested through its left child m(C)⋄m(M)
            let target = if rec.bound {
                rec.coord.child(false)
            } else {
                rec.coord
            };
            let Verification::Verified(quote) = p.quote_node(&target, &nonce, true)? else {
                Record::new("mismatch", name).kv("coord", target).print();
                return Ok(Outcome::Negative);
            };
            let data = ValidationData {
                quote,
                response: rec.response,
                aik_pub: p.aik.verifying_key(),
                aik_cert: None,
                subject: (!rec.bound).then_some(rec.s_old),
            };
            state::write_canonical(&output, &data)?;
            Record::new("ok", name)
                .kv("quoted", target)
                .kv("bundle", output.display())
                .print();
            Ok(Outcome::Ok)
        }
        Command::Challenge => {
            let nonce: [u8; 20] = rand::random();
            Record::new("ok", name)
                .kv("challenge", hex::encode(nonce))
                .print();
            Ok(Outcome::Ok)
        }
        Command::Validate {
            bundle,
            sca_key,
            challenge,
            pca_key,
            alg,
        } => {
            let data: ValidationData = state::read_canonical(&bundle)?;
            let mut v = Validator::new(alg.into(), state::read_public_key(&sca_key)?);
            if let Some(pca) = pca_key {
                v = v.with_pca(state::read_public_key(&pca)?);
            }
            v.expect_challenge(&parse_nonce(&challenge)?);
            match v.validate_subtree(&data) {
                Ok(a) => {
                    let props: Vec<String> = a
                        .properties
                        .iter()
                        .map(|(k, v)| format!("{k}:{v}"))
                        .collect();
                    Record::new("accept", name)
                        .kv("mode", a.mode)
                        .kv("evidence", format!("{:?}", a.evidence).to_lowercase())
                        .kv("properties", props.join(","))
                        .print();
                    Ok(Outcome::Ok)
                }
                Err(e) => {
                    Record::new("reject", name).kv("reason", e).print();
                    Ok(Outcome::Negative)
                }
            }
        }
        Command::Discover(args) => discover(args, name),
        Command::Keygen { out } => {
            let key = SigningKey::from_seed(rand::random());
            fs::write(&out, hex::encode(key.seed()) + "\n")?;
            let pub_path = with_suffix(&out, ".pub");
            fs::write(
                &pub_path,
                hex::encode(key.verifying_key().to_bytes()) + "\n",
            )?;
            Record::new("ok", name)
                .kv("key", out.display())
                .kv("public", pub_path.display())
                .kv("key-id", key.key_id())
                .print();
            Ok(Outcome::Ok)
        }
        Command::Sca(ScaCmd::Serve {
            policy,
            key,
            bind,
            mode,
            alg,
            log,
        }) => {
            let alg: HashAlg = alg.into();
            let policy = Policy::parse(alg, &fs::read_to_string(&policy)?)?;
            let config = ScaConfig {
                mode: match mode {
                    Mode::Revealed => CertMode::Revealed,
                    Mode::Concealed => CertMode::Concealed,
                },
                ..ScaConfig::default()
            };
            let sca = Sca::new(state::read_signing_key(&key)?, policy, config);
            let mut service = ScaService::new(sca);
            if let Some(path) = log {
                let f = OpenOptions::new().create(true).append(true).open(&path)?;
                service = service.with_issuance_log(f);
            }
            let listener = TcpListener::bind(&bind).with_context(|| format!("binding {bind}"))?;
            Record::new("ok", name)
                .kv("addr", listener.local_addr()?)
                .kv("mode", service.sca().config().mode)
                .kv("policy-entries", service.sca().policy().len())
                .print();
            wire::serve(listener, Arc::new(service), Arc::new(Plaintext))?;
            Ok(Outcome::Ok)
        }
        Command::Sca(ScaCmd::Publish {
            policy,
            alg,
            output,
        }) => {
            let alg: HashAlg = alg.into();
            let policy = Policy::parse(alg, &fs::read_to_string(&policy)?)?;
            let dd = DiscoveryData::from_policy(&policy);
            let text = dd.to_text(alg);
            match &output {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
            if output.is_some() {
                Record::new("ok", name)
                    .kv("values", dd.values.len())
                    .kv("leaves", dd.leaves.len())
                    .kv("conditions", dd.conditions.len())
                    .print();
            }
            Ok(Outcome::Ok)
        }
    }
}

fn tree(cmd: TreeCmd, name: &str) -> Result<Outcome> {
    match cmd {
        TreeCmd::Build {
            measurements,
            depth,
            output,
            alg,
            registers,
            open,
        } => {
            let alg: HashAlg = alg.into();
            let ms = state::read_measurements(&measurements, alg)?;
            let config = EngineConfig {
                alg,
                registers,
                ..EngineConfig::default()
            };
            let aik = SigningKey::from_seed(rand::random());
            let p = Platform::build(config, depth, &ms, aik, !open)?;
            let out = output.unwrap_or_else(|| measurements.with_extension("sml"));
            state::save(&p, &out)?;
            Record::new("ok", name)
                .kv("root", p.root_value())
                .kv("depth", depth)
                .kv("leaves", p.sml.leaf_count())
                .kv(
                    "state",
                    p.tpm.register(p.root_register()).expect("root").state,
                )
                .kv("sml", out.display())
                .print();
            Ok(Outcome::Ok)
        }
        TreeCmd::VerifyNode { sml, coord } => {
            let mut p = state::load(&sml, None)?;
            let node = p.node(&coord)?;
            match p.verify_node(&coord)? {
                Verification::Verified(root) => {
                    Record::new("verified", name)
                        .kv("coord", coord)
                        .kv("value", node.value)
                        .kv("root", root)
                        .print();
                    Ok(Outcome::Ok)
                }
                Verification::Mismatch => {
                    Record::new("mismatch", name).kv("coord", coord).print();
                    Ok(Outcome::Negative)
                }
            }
        }
        TreeCmd::NodeVerify { sml, coord } => {
            let mut p = state::load(&sml, None)?;
            match p.node_verify(&coord)? {
                NodeVerifyReport::Ok => {
                    Record::new("verified", name).kv("coord", coord).print();
                    Ok(Outcome::Ok)
                }
                NodeVerifyReport::Breach { level, computed } => {
                    let at = if level == 0 {
                        Coord::ROOT
                    } else {
                        coord.prefix(level)
                    };
                    Record::new("breach", name)
                        .kv("coord", coord)
                        .kv("level", level)
                        .kv(
                            "node",
                            if at.is_root() {
                                "root".into()
                            } else {
                                at.to_string()
                            },
                        )
                        .kv("computed", computed)
                        .print();
                    Ok(Outcome::Negative)
                }
            }
        }
        TreeCmd::Update { sml, coord, value } => {
            let mut p = state::load(&sml, None)?;
            let v = parse_digest(&value, p.sml.alg())?;
            match p.update_node(&coord, &v)? {
                Verification::Verified(out) => {
                    state::save(&p, &sml)?;
                    Record::new("updated", name)
                        .kv("coord", coord)
                        .kv("root", out.root)
                        .print();
                    Ok(Outcome::Ok)
                }
                Verification::Mismatch => {
                    Record::new("mismatch", name).kv("coord", coord).print();
                    Ok(Outcome::Negative)
                }
            }
        }
        TreeCmd::Extend { sml, values } => {
            let mut p = state::load(&sml, None)?;
            for v in &values {
                p.extend(&parse_digest(v, p.sml.alg())?)?;
            }
            state::save(&p, &sml)?;
            Record::new("ok", name)
                .kv("root", p.root_value())
                .kv("leaves", p.sml.leaf_count())
                .print();
            Ok(Outcome::Ok)
        }
        TreeCmd::Close { sml } => {
            let mut p = state::load(&sml, None)?;
            p.close()?;
            state::save(&p, &sml)?;
            Record::new("ok", name).kv("root", p.root_value()).print();
            Ok(Outcome::Ok)
        }
    }
}

fn refused(name: &str, e: WireError) -> Result<Outcome> {
    match e {
        WireError::Remote { code, message } => {
            Record::new("refused", name)
                .kv("code", code)
                .kv("message", message)
                .print();
            Ok(Outcome::Negative)
        }
        e => Err(e.into()),
    }
}

fn certify(args: CertifyArgs, name: &str) -> Result<Outcome> {
    let CertifyArgs {
        sml,
        coord,
        aik,
        sca,
        binding,
        output,
    } = args;
    let mut p = state::load(&sml, Some(state::read_signing_key(&aik)?))?;
    let depth = p.sml.depth();
    let alg = p.sml.alg();
    let s = p.node(&coord)?;

    // the SCA does not check freshness of P, so any nonce will do
    let nonce: [u8; 20] = rand::random();
    let quote = phase1_quote(&mut p, &coord, &nonce, true)?;
    let opts = PackageOptions {
        include_coord: true,
        ..PackageOptions::default()
    };
    let pkg = phase2_package(quote, &s, None, &p.aik.verifying_key(), opts)?;
    let mut client =
        Client::connect(sca.as_str()).with_context(|| format!("connecting to {sca}"))?;
    let response = match client.attest(&pkg) {
        Ok(r) => r,
        Err(e) => return refused(name, e),
    };
    info!("certificate issued in {} mode", response.certificate.mode());

    let full = match binding {
        Binding::Full => true,
        Binding::None => false,
        Binding::Auto => coord.level() + 2 <= depth,
    };
    let layout = if full {
        BindingLayout::FullBinding
    } else {
        BindingLayout::Empty
    };
    let u = phase4_binding_update_set(alg, &response, &s, &layout, depth)?;
    let report = bulk_update(&u, &mut p)?;
    if !u.is_empty() && p.node(&coord)?.value == s.value {
        return Err(anyhow!("binding update left the node unchanged"));
    }
    state::save(&p, &sml)?;
    let out = output.unwrap_or_else(|| with_suffix(&sml, ".cert"));
    let rec = IssuedRecord {
        coord,
        s_old: s.value,
        bound: full,
        response,
    };
    state::write_canonical(&out, &rec)?;
    Record::new("ok", name)
        .kv("coord", coord)
        .kv("mode", rec.response.certificate.mode())
        .kv("bound", full)
        .kv("updates", u.len())
        .kv("verified-updates", report.verified_updates)
        .kv("root", report.root)
        .kv("cert", out.display())
        .print();
    Ok(Outcome::Ok)
}

fn discover(args: DiscoverArgs, name: &str) -> Result<Outcome> {
    let DiscoverArgs {
        sml,
        data,
        sca,
        bottom_up,
        max_gaps,
        passive,
        aik,
    } = args;
    let sca_addr = || {
        sca.clone()
            .ok_or_else(|| anyhow!("no SCA address (--sca or {SCA_ADDR_ENV})"))
    };

    if passive {
        let aik = state::read_signing_key(aik.as_deref().expect("clap requires --aik"))?;
        let mut p = state::load(&sml, Some(aik))?;
        let nonce: [u8; 20] = rand::random();
        let quote = phase1_quote(&mut p, &Coord::ROOT, &nonce, false)?;
        let req = PassiveRequest {
            root: NodeRef::new(Coord::ROOT, p.root_value()),
            subtree: p.sml.clone(),
            quote: Some(quote),
            aik_pub: p.aik.verifying_key(),
            aik_cert: None,
            lazy: false,
        };
        let addr = sca_addr()?;
        let mut client =
            Client::connect(addr.as_str()).with_context(|| format!("connecting to {addr}"))?;
        let resp = match client.passive_discover(&req) {
            Ok(r) => r,
            Err(e) => return refused(name, e),
        };
        let PassiveResponse::Certified(certs) = resp else {
            bail!("SCA answered an eager request with candidates");
        };
        for (n, r) in &certs {
            Record::new("certified", name)
                .kv("coord", n.coord)
                .kv("value", &n.value)
                .kv("mode", r.certificate.mode())
                .print();
        }
        Record::new("ok", name).kv("certified", certs.len()).print();
        return Ok(Outcome::Ok);
    }

    let tree = state::read_sml(&sml)?;
    let (alg, dd) = match data {
        Some(path) => DiscoveryData::parse(&fs::read_to_string(&path)?)?,
        None => {
            let addr = sca_addr()?;
            let published = Client::connect(addr.as_str())
                .with_context(|| format!("connecting to {addr}"))?
                .discovery_data()?;
            (published.alg, published.data)
        }
    };
    if alg != tree.alg() {
        bail!(
            "discovery data uses {}, the SML uses {}",
            alg.name(),
            tree.alg().name()
        );
    }
    let found = active_discover(&tree, &dd);
    for n in &found {
        let coord = if n.coord.is_root() {
            "root".to_string()
        } else {
            n.coord.to_string()
        };
        Record::new("found", name)
            .kv("coord", coord)
            .kv("value", &n.value)
            .print();
    }
    let mut candidates = 0;
    if bottom_up {
        for c in bottom_up_candidates(&tree, &dd, max_gaps) {
            let coord = if c.node.coord.is_root() {
                "root".to_string()
            } else {
                c.node.coord.to_string()
            };
            let missing: Vec<String> = c.missing.iter().map(|m| m.to_string()).collect();
            Record::new("candidate", name)
                .kv("coord", coord)
                .kv("value", &c.node.value)
                .kv(
                    "missing",
                    if missing.is_empty() {
                        "-".into()
                    } else {
                        missing.join(",")
                    },
                )
                .print();
            candidates += 1;
        }
    }
    Record::new("ok", name)
        .kv("found", found.len())
        .kv("candidates", candidates)
        .print();
    Ok(Outcome::Ok)
}
