//! Line-oriented scenario scripts and their instrumented execution.
//!
//! ```text
//! # comments run to end of line
//! SPAWN peers=64 seed=7 k=3 n=20 y=2
//! USER alice pk
//! USER bob pk
//! SUBVERT 12 deny                 # peer number
//! SUBVERT notes#2 forge           # peer responsible for replica 2 of `notes`
//! SUBVERT random 3 deny,forge     # seeded distinct peers, behaviors cycled
//! PUT alice notes "hello" protected
//! SET alice notes grant bob read rekey alice
//! SHARE alice notes bob           # hand the data key over out of band
//! GET bob notes
//! REVOKE alice notes bob
//! REPLAY notes                    # replay everything captured so far
//! ADVANCE 31000                   # milliseconds
//! ASSERT GOT bob "hello"          # also: none, error=no-read-access
//! ASSERT MESSAGES 14
//! ASSERT ACCEPTED 7
//! ASSERT USER-OPS SO=1 HO=1 AO_sk=1
//! ASSERT PEER-OPS HO=7
//! ASSERT REPLAYED 0
//! ASSERT OWNER notes alice
//! ```
//!
//! Every PUT, SET, GET and REVOKE adds measured rows to the run's report,
//! compared against the artifact profile.

use std::collections::BTreeMap;

use krac_core::auth::AuthIdentity;
use krac_core::client::{ClientError, Replies};
use krac_core::crypto::{derived_rng, sha256, DIGEST_LEN};
use krac_core::scenario::{replay_everything, BehaviorKind};
use krac_core::simnet::OpTraffic;
use krac_core::{
    derive_positions, ChangeKind, ClientSession, Delegation, Index, Mechanism, NetConfig, Network, OpClass,
    OpCounter, PeerDecision, Rights,
};
use rand::seq::index::sample;
use thiserror::Error;

use crate::formulas::{FormulaSet, Operation, Params, Phase, Profile, Role, Scheme};
use crate::report::{OverheadReport, Row, Status};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Peer(usize),
    Replica { index: String, replica_no: u32 },
    Random { count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeSpec {
    pub kind: ChangeKind,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    Value(Vec<u8>),
    Nothing,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Check {
    Got { user: String, expect: Expect },
    Messages(u64),
    Accepted(usize),
    UserOps(Vec<(OpClass, u64)>),
    PeerOps(Vec<(OpClass, u64)>),
    Replayed(usize),
    Owner { index: String, user: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Spawn {
        peers: Option<usize>,
        seed: Option<u64>,
        k: Option<usize>,
        n: Option<usize>,
        y: Option<u64>,
    },
    User { name: String, mechanism: Mechanism },
    Subvert { target: Target, behaviors: Vec<BehaviorKind> },
    Put { user: String, index: String, value: Vec<u8>, protected: bool },
    Get { user: String, index: String },
    Set { user: String, index: String, changes: Vec<ChangeSpec> },
    Share { from: String, index: String, to: String },
    Revoke { user: String, index: String, revoked: String },
    Replay { index: String },
    Advance { ms: u64 },
    Assert(Check),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub line: usize,
    pub text: String,
    pub command: Command,
}

pub fn parse(script: &str) -> Result<Vec<Statement>, ScriptError> {
    let mut out = Vec::new();
    for (i, raw) in script.lines().enumerate() {
        let line = i + 1;
        let text = strip_comment(raw).trim();
        if text.is_empty() {
            continue;
        }
        let err = |message: String| ScriptError { line, message };
        let words = shlex::split(text).ok_or_else(|| err("unbalanced quotes".into()))?;
        let command = parse_command(&words).map_err(err)?;
        out.push(Statement {
            line,
            text: text.to_string(),
            command,
        });
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted && (i == 0 || line[..i].ends_with(char::is_whitespace)) => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_command(words: &[String]) -> Result<Command, String> {
    let keyword = words[0].to_ascii_uppercase();
    let args = &words[1..];
    let arg = |i: usize, what: &str| args.get(i).cloned().ok_or_else(|| format!("{keyword}: missing {what}"));
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("{keyword} takes {n} arguments, got {}", args.len()))
        }
    };
    match keyword.as_str() {
        "SPAWN" => {
            let mut spawn = (None, None, None, None, None);
            for a in args {
                let (key, value) = a.split_once('=').ok_or_else(|| format!("SPAWN: expected key=value, got {a}"))?;
                match key {
                    "peers" => spawn.0 = Some(number(value)?),
                    "seed" => spawn.1 = Some(number(value)?),
                    "k" => spawn.2 = Some(number(value)?),
                    "n" => spawn.3 = Some(number(value)?),
                    "y" => spawn.4 = Some(number(value)?),
                    other => return Err(format!("SPAWN: unknown key {other}")),
                }
            }
            Ok(Command::Spawn {
                peers: spawn.0,
                seed: spawn.1,
                k: spawn.2,
                n: spawn.3,
                y: spawn.4,
            })
        }
        "USER" => {
            arity(2)?;
            let mechanism = args[1].parse().map_err(|e| format!("USER: {e}"))?;
            Ok(Command::User {
                name: args[0].clone(),
                mechanism,
            })
        }
        "SUBVERT" => {
            let first = arg(0, "target")?;
            let (target, rest) = if first.eq_ignore_ascii_case("random") {
                let count = number(&arg(1, "count")?)?;
                (Target::Random { count }, &args[2..])
            } else if let Some((index, replica)) = first.split_once('#') {
                let replica_no = number(replica)?;
                (
                    Target::Replica {
                        index: index.to_string(),
                        replica_no,
                    },
                    &args[1..],
                )
            } else {
                (Target::Peer(number(&first)?), &args[1..])
            };
            if rest.len() != 1 {
                return Err("SUBVERT: expected one behavior list".into());
            }
            let behaviors = rest[0]
                .split(',')
                .map(str::parse)
                .collect::<Result<Vec<BehaviorKind>, _>>()?;
            Ok(Command::Subvert { target, behaviors })
        }
        "PUT" => {
            if !(3..=4).contains(&args.len()) {
                return Err("PUT takes user, index, value and an optional `protected`".into());
            }
            let protected = match args.get(3).map(String::as_str) {
                None => false,
                Some("protected") => true,
                Some(other) => return Err(format!("PUT: unexpected {other}")),
            };
            Ok(Command::Put {
                user: args[0].clone(),
                index: args[1].clone(),
                value: args[2].clone().into_bytes(),
                protected,
            })
        }
        "GET" => {
            arity(2)?;
            Ok(Command::Get {
                user: args[0].clone(),
                index: args[1].clone(),
            })
        }
        "SET" => {
            let user = arg(0, "user")?;
            let index = arg(1, "index")?;
            let mut changes = Vec::new();
            let mut rest = args[2..].iter();
            while let Some(kind) = rest.next() {
                let target = rest.next().ok_or_else(|| format!("SET: {kind} needs a user"))?.clone();
                let kind = match kind.as_str() {
                    "grant" => {
                        let right = rest.next().ok_or("SET: grant needs a right")?;
                        ChangeKind::Grant(parse_right(right)?)
                    }
                    "remove" => ChangeKind::Remove,
                    "rekey" => ChangeKind::Rekey,
                    other => return Err(format!("SET: unknown change {other}")),
                };
                changes.push(ChangeSpec { kind, user: target });
            }
            if changes.is_empty() {
                return Err("SET: no changes".into());
            }
            Ok(Command::Set { user, index, changes })
        }
        "SHARE" => {
            arity(3)?;
            Ok(Command::Share {
                from: args[0].clone(),
                index: args[1].clone(),
                to: args[2].clone(),
            })
        }
        "REVOKE" => {
            arity(3)?;
            Ok(Command::Revoke {
                user: args[0].clone(),
                index: args[1].clone(),
                revoked: args[2].clone(),
            })
        }
        "REPLAY" => {
            arity(1)?;
            Ok(Command::Replay { index: args[0].clone() })
        }
        "ADVANCE" => {
            arity(1)?;
            Ok(Command::Advance { ms: number(&args[0])? })
        }
        "ASSERT" => parse_check(args).map(Command::Assert),
        other => Err(format!("unknown command {other}")),
    }
}

fn parse_check(args: &[String]) -> Result<Check, String> {
    let what = args.first().ok_or("ASSERT: missing check")?.to_ascii_uppercase();
    let rest = &args[1..];
    let single = || -> Result<&String, String> {
        match rest {
            [one] => Ok(one),
            _ => Err(format!("ASSERT {what}: expected one argument")),
        }
    };
    match what.as_str() {
        "GOT" => {
            let [user, expect] = rest else {
                return Err("ASSERT GOT takes a user and an expectation".into());
            };
            let expect = if expect == "none" {
                Expect::Nothing
            } else if let Some(name) = expect.strip_prefix("error=") {
                Expect::Error(name.to_string())
            } else {
                Expect::Value(expect.clone().into_bytes())
            };
            Ok(Check::Got {
                user: user.clone(),
                expect,
            })
        }
        "MESSAGES" => Ok(Check::Messages(number(single()?)?)),
        "ACCEPTED" => Ok(Check::Accepted(number(single()?)?)),
        "REPLAYED" => Ok(Check::Replayed(number(single()?)?)),
        "USER-OPS" => Ok(Check::UserOps(parse_counts(rest)?)),
        "PEER-OPS" => Ok(Check::PeerOps(parse_counts(rest)?)),
        "OWNER" => {
            let [index, user] = rest else {
                return Err("ASSERT OWNER takes an index and a user".into());
            };
            Ok(Check::Owner {
                index: index.clone(),
                user: user.clone(),
            })
        }
        other => Err(format!("unknown check {other}")),
    }
}

fn parse_counts(args: &[String]) -> Result<Vec<(OpClass, u64)>, String> {
    if args.is_empty() {
        return Err("expected CLASS=count pairs".into());
    }
    args.iter()
        .map(|a| {
            let (symbol, count) = a.split_once('=').ok_or_else(|| format!("expected CLASS=count, got {a}"))?;
            let class = OpClass::ALL
                .into_iter()
                .find(|c| c.symbol().eq_ignore_ascii_case(symbol))
                .ok_or_else(|| format!("unknown operation class {symbol}"))?;
            Ok((class, number(count)?))
        })
        .collect()
}

fn parse_right(s: &str) -> Result<Rights, String> {
    match s.to_ascii_lowercase().as_str() {
        "o" | "owner" => Ok(Rights::Owner),
        "a" | "admin" => Ok(Rights::Admin),
        "w" | "write" => Ok(Rights::Write),
        "r" | "read" => Ok(Rights::Read),
        other => Err(format!("unknown right {other}")),
    }
}

fn number<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("expected a number, got {s:?}"))
}

pub fn error_name(e: &ClientError) -> &'static str {
    match e {
        ClientError::NotEnoughApiPeers { .. } => "not-enough-api-peers",
        ClientError::NoMajority => "no-majority",
        ClientError::NoReadAccess => "no-read-access",
        ClientError::CorruptEnvelope => "corrupt-envelope",
        ClientError::NoCredentials => "no-credentials",
        ClientError::Auth(_) => "auth",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertOutcome {
    pub line: usize,
    pub text: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptRun {
    pub report: OverheadReport,
    pub asserts: Vec<AssertOutcome>,
    /// Hex digest over every peer's store at the end of the run.
    pub store_digest: Option<String>,
}

impl ScriptRun {
    pub fn passed(&self) -> bool {
        self.asserts.iter().all(|a| a.passed)
    }
}

pub const DEFAULT_PEERS: usize = 64;

/// Effect of the most recent network command.
#[derive(Debug, Clone, Default)]
struct Effect {
    traffic: Vec<OpTraffic>,
    user_ops: OpCounter,
    peer_ops: OpCounter,
    accepted: usize,
}

struct Runner {
    seed: u64,
    params: Params,
    peers: usize,
    formulas: FormulaSet,
    net: Option<Network>,
    users: BTreeMap<String, ClientSession>,
    results: BTreeMap<String, Result<Option<Vec<u8>>, ClientError>>,
    last: Effect,
    replayed: Option<usize>,
    report: OverheadReport,
}

/// Executes `script` on a fresh simulated network. `params` supplies the
/// defaults for `k`, `n` and `y`; SPAWN may override them.
pub fn run_experiment(script: &str, params: &Params, seed: u64) -> Result<ScriptRun, ScriptError> {
    let statements = parse(script)?;
    params.validate().map_err(|e| ScriptError {
        line: 0,
        message: e.to_string(),
    })?;
    let mut runner = Runner {
        seed,
        params: *params,
        peers: DEFAULT_PEERS,
        formulas: FormulaSet::new(Profile::Artifact),
        net: None,
        users: BTreeMap::new(),
        results: BTreeMap::new(),
        last: Effect::default(),
        replayed: None,
        report: OverheadReport::new(),
    };
    let mut asserts = Vec::new();
    for st in &statements {
        let fail = |message: String| ScriptError { line: st.line, message };
        match &st.command {
            Command::Assert(check) => {
                let (passed, detail) = runner.check(check).map_err(fail)?;
                asserts.push(AssertOutcome {
                    line: st.line,
                    text: st.text.clone(),
                    passed,
                    detail,
                });
            }
            other => runner.execute(other).map_err(fail)?,
        }
    }
    let store_digest = runner.net.as_ref().map(|n| n.store_digest().to_hex());
    Ok(ScriptRun {
        report: runner.report,
        asserts,
        store_digest,
    })
}

fn index(name: &str) -> Result<Index, String> {
    Index::new(name.as_bytes().to_vec()).map_err(|e| e.to_string())
}

fn accepted(replies: &Replies) -> usize {
    replies.iter().filter(|r| r.as_ref().is_some_and(PeerDecision::is_success)).count()
}

impl Runner {
    fn net(&mut self) -> Result<&mut Network, String> {
        if self.net.is_none() {
            let config = NetConfig {
                y: self.params.y as u32,
                zkp_rounds: self.params.n as usize,
                ..NetConfig::default()
            };
            let net = Network::spawn_with(self.peers, self.seed, config).map_err(|e| e.to_string())?;
            self.net = Some(net);
        }
        Ok(self.net.as_mut().expect("spawned above"))
    }

    fn k(&self) -> usize {
        self.params.k as usize
    }

    fn session(&mut self, name: &str) -> Result<&mut ClientSession, String> {
        self.users.get_mut(name).ok_or_else(|| format!("no user {name}"))
    }

    fn execute(&mut self, command: &Command) -> Result<(), String> {
        match command {
            Command::Spawn { peers, seed, k, n, y } => {
                if self.net.is_some() {
                    return Err("SPAWN must come before anything touching the network".into());
                }
                self.peers = peers.unwrap_or(self.peers);
                self.seed = seed.unwrap_or(self.seed);
                let p = Params {
                    k: k.map_or(self.params.k, |v| v as u64),
                    n: n.map_or(self.params.n, |v| v as u64),
                    y: y.unwrap_or(self.params.y),
                    ..self.params
                };
                p.validate().map_err(|e| e.to_string())?;
                self.params = p;
                self.net()?;
            }
            Command::User { name, mechanism } => {
                let digest = sha256(&[&self.seed.to_be_bytes(), name.as_bytes()]);
                let seed = u64::from_be_bytes(digest.0[..8].try_into().expect("8 bytes"));
                let k = self.k();
                let session = ClientSession::attach(self.net()?, seed, k, *mechanism).map_err(|e| e.to_string())?;
                self.users.insert(name.clone(), session);
            }
            Command::Subvert { target, behaviors } => {
                let k = self.k();
                let seed = self.seed;
                let net = self.net()?;
                let peers: Vec<usize> = match target {
                    Target::Peer(p) => vec![*p],
                    Target::Replica { index: name, replica_no } => {
                        let positions = derive_positions(&index(name)?, k);
                        let position = positions
                            .get((*replica_no as usize).wrapping_sub(1))
                            .ok_or_else(|| format!("replica {replica_no} outside 1..={}", positions.len()))?;
                        vec![net.responsible(position)]
                    }
                    Target::Random { count } => {
                        if *count > net.len() {
                            return Err(format!("cannot subvert {count} of {} peers", net.len()));
                        }
                        let mut rng = derived_rng(b"krac/script/subvert", &[&seed.to_be_bytes()]);
                        sample(&mut rng, net.len(), *count).into_vec()
                    }
                };
                for (i, peer) in peers.into_iter().enumerate() {
                    let kind = behaviors[i % behaviors.len()];
                    net.subvert(peer, kind.instantiate()).map_err(|e| e.to_string())?;
                }
            }
            Command::Put {
                user,
                index: name,
                value,
                protected,
            } => {
                let idx = index(name)?;
                let phase = self.phase(user, &idx)?;
                let (effect, session) = self.measured(user, |s, net| {
                    s.put(net, &idx, value, *protected).map(|r| accepted(&r))
                })?;
                let scheme = Scheme::implemented(session.mechanism());
                let p = Params { a: 0, ..self.params };
                self.op_rows(scheme, Operation::Put, phase, &p, &effect);
                self.storage_rows(user, &idx, scheme, false)?;
            }
            Command::Set {
                user,
                index: name,
                changes,
            } => {
                let idx = index(name)?;
                let phase = self.phase(user, &idx)?;
                let mut delegations = Vec::with_capacity(changes.len());
                for c in changes {
                    let grantee = if &c.user == user {
                        self.session(user)?
                            .own_grantee(&idx)
                            .ok_or("a user can delegate to itself only after touching the index")?
                    } else {
                        let net = self.net.as_ref().ok_or("no network")?;
                        let other = self.users.get_mut(&c.user).ok_or_else(|| format!("no user {}", c.user))?;
                        other.grantee(net, &idx)
                    };
                    delegations.push(Delegation { grantee, kind: c.kind });
                }
                let wraps = delegations
                    .iter()
                    .filter(|d| d.kind != ChangeKind::Remove && d.grantee.public_key.is_some())
                    .count() as u64;
                let (effect, session) =
                    self.measured(user, |s, net| s.set(net, &idx, &delegations).map(|r| accepted(&r)))?;
                let scheme = Scheme::implemented(session.mechanism());
                let p = Params { a: wraps, ..self.params };
                self.op_rows(scheme, Operation::Set, phase, &p, &effect);
                self.storage_rows(user, &idx, scheme, true)?;
            }
            Command::Get { user, index: name } => {
                let idx = index(name)?;
                let mut result = None;
                let (effect, session) = self.measured(user, |s, net| {
                    let r = s.get(net, &idx);
                    let ok = usize::from(matches!(r, Ok(Some(_))));
                    result = Some(r);
                    Ok(ok)
                })?;
                let scheme = Scheme::implemented(session.mechanism());
                let p = Params { a: 0, ..self.params };
                self.op_rows(scheme, Operation::Get, Phase::Subsequent, &p, &effect);
                self.results.insert(user.clone(), result.expect("closure ran"));
            }
            Command::Share { from, index: name, to } => {
                let idx = index(name)?;
                let key = self
                    .session(from)?
                    .export_key(&idx)
                    .ok_or_else(|| format!("{from} holds no key for {name}"))?;
                self.session(to)?.import_key(&idx, key);
            }
            Command::Revoke {
                user,
                index: name,
                revoked,
            } => {
                let idx = index(name)?;
                let net = self.net.as_ref().ok_or("no network")?;
                let grantee = self
                    .users
                    .get_mut(revoked)
                    .ok_or_else(|| format!("no user {revoked}"))?
                    .grantee(net, &idx);
                let (effect, session) = self.measured(user, |s, net| {
                    s.revoke_read(net, &idx, &grantee)
                        .map(|o| accepted(&o.put).min(accepted(&o.set)))
                })?;
                let scheme = Scheme::implemented(session.mechanism());
                for traffic in &effect.traffic {
                    let Ok(op) = traffic.label.parse::<Operation>() else {
                        continue;
                    };
                    let predicted = self.formulas.messages(scheme, op, Phase::Subsequent, &self.params).map_err(|e| e.to_string())?;
                    let row = self.row(scheme, &self.params, "messages", Some(op), Phase::Subsequent, Role::User);
                    self.report.push(finish(
                        row,
                        predicted.formula,
                        Some(traffic.messages as f64),
                        predicted.value as f64,
                        Status::Exact,
                    ));
                }
            }
            Command::Replay { index: name } => {
                let idx = index(name)?;
                let k = self.k();
                let (_, accepted) = replay_everything(self.net()?, &idx, k);
                self.replayed = Some(accepted);
            }
            Command::Advance { ms } => self.net()?.advance_clock(*ms),
            Command::Assert(_) => unreachable!("handled by the caller"),
        }
        Ok(())
    }

    fn phase(&mut self, user: &str, idx: &Index) -> Result<Phase, String> {
        Ok(if self.session(user)?.credentials(idx).is_some() {
            Phase::Subsequent
        } else {
            Phase::Initial
        })
    }

    /// Runs `f` for `user` and records what it cost.
    fn measured(
        &mut self,
        user: &str,
        f: impl FnOnce(&mut ClientSession, &mut Network) -> Result<usize, ClientError>,
    ) -> Result<(Effect, &ClientSession), String> {
        self.net()?;
        let net = self.net.as_mut().expect("spawned");
        let session = self.users.get_mut(user).ok_or_else(|| format!("no user {user}"))?;
        let ledger_before = net.ledger().ops().len();
        let user_before = *session.ops();
        let peer_before = net.peer_ops();
        let accepted = f(session, net).map_err(|e| format!("{user}: {e}"))?;
        let effect = Effect {
            traffic: net.ledger().ops()[ledger_before..].to_vec(),
            user_ops: *session.ops() - user_before,
            peer_ops: net.peer_ops() - peer_before,
            accepted,
        };
        self.last = effect.clone();
        Ok((effect, self.users.get(user).expect("present")))
    }

    fn row(&self, scheme: Scheme, p: &Params, metric: &str, op: Option<Operation>, phase: Phase, role: Role) -> Row {
        Row {
            mechanism: scheme.name().to_string(),
            k: p.k,
            n: p.n,
            a: p.a,
            y: p.y,
            metric: metric.to_string(),
            operation: op.map_or(String::new(), |o| o.name().to_string()),
            phase: phase.name().to_string(),
            role: role.name().to_string(),
            formula: String::new(),
            measured: None,
            predicted: 0.0,
            delta: None,
            status: Status::Exact,
        }
    }

    fn op_rows(&mut self, scheme: Scheme, op: Operation, phase: Phase, p: &Params, effect: &Effect) {
        let f = self.formulas;
        let traffic = effect.traffic.last().cloned().unwrap_or_default();
        if let Ok(m) = f.messages(scheme, op, phase, p) {
            let row = self.row(scheme, p, "messages", Some(op), phase, Role::User);
            self.report.push(finish(
                row,
                m.formula,
                Some(traffic.messages as f64),
                m.value as f64,
                Status::Exact,
            ));
        }
        if op != Operation::Get && phase == Phase::Subsequent {
            if let Ok(s) = f.auth_bytes(scheme, p) {
                let per_replica = traffic.auth_bytes as f64 / p.replicas() as f64;
                let status = if scheme == Scheme::Zkp { Status::Bound } else { Status::Exact };
                let row = self.row(scheme, p, "auth_bytes", Some(op), phase, Role::User);
                self.report
                    .push(finish(row, s.formula, Some(per_replica), s.value as f64, status));
            }
        }
        for (role, counter) in [(Role::User, &effect.user_ops), (Role::Peer, &effect.peer_ops)] {
            let Ok(expr) = f.ops(scheme, op, phase, role, p) else {
                continue;
            };
            for class in OpClass::ALL {
                let randomized = class == OpClass::Modular && phase == Phase::Subsequent && scheme == Scheme::Zkp;
                let status = if randomized && op != Operation::Get {
                    Status::Mean
                } else {
                    Status::Exact
                };
                let row = self.row(scheme, p, &format!("ops.{}", class.symbol()), Some(op), phase, role);
                self.report.push(finish(
                    row,
                    expr.formula,
                    Some(counter.get(class) as f64),
                    expr.value.get(class),
                    status,
                ));
            }
        }
    }

    /// User storage for `user` at `idx`; with `peer_side`, also the bytes
    /// replica 1 keeps for the user's ACL item.
    fn storage_rows(&mut self, user: &str, idx: &Index, scheme: Scheme, peer_side: bool) -> Result<(), String> {
        let f = self.formulas;
        let p = Params { a: 0, ..self.params };
        let session = self.users.get(user).ok_or_else(|| format!("no user {user}"))?;
        let (Some(total), Some(identities)) = (session.storage_bytes(idx), session.identities(idx)) else {
            return Ok(());
        };
        let identity: AuthIdentity = identities[0].clone();
        let once = session.master_storage_bytes();
        let storage = f.user_storage(scheme).map_err(|e| e.to_string())?;
        let row = self.row(scheme, &p, "user_storage", None, Phase::Subsequent, Role::User);
        self.report.push(finish(
            row,
            storage.formula,
            Some((total - DIGEST_LEN) as f64),
            storage.value.at(p.k) as f64,
            Status::Exact,
        ));
        let once_pred = f.user_storage_once(scheme).map_err(|e| e.to_string())?;
        let row = self.row(scheme, &p, "user_storage_once", None, Phase::Subsequent, Role::User);
        self.report.push(finish(
            row,
            once_pred.formula,
            Some(once as f64),
            once_pred.value as f64,
            Status::Exact,
        ));

        if !peer_side {
            return Ok(());
        }
        let net = self.net.as_ref().ok_or("no network")?;
        let position = derive_positions(idx, self.k())[0];
        let peer = net.responsible(&position);
        if net.behavior(peer).is_some() {
            return Ok(());
        }
        let Some(entry) = net.peer(peer).store().get(&position) else {
            return Ok(());
        };
        let Some(measured) = entry.item_storage_len(&identity) else {
            return Ok(());
        };
        let keyed = entry.value.item(&identity).is_some_and(|i| i.wrapped_key.is_some());
        let status = match scheme {
            Scheme::Oth => Status::Exact,
            Scheme::PkEcc | Scheme::PkRsa if keyed => Status::Exact,
            _ => Status::Bound,
        };
        let pred = f.peer_item_storage(scheme).map_err(|e| e.to_string())?;
        let row = self.row(scheme, &p, "peer_item_storage", None, Phase::Subsequent, Role::Peer);
        self.report
            .push(finish(row, pred.formula, Some(measured as f64), pred.value as f64, status));
        Ok(())
    }

    fn check(&mut self, check: &Check) -> Result<(bool, String), String> {
        let counts = |counter: &OpCounter, want: &[(OpClass, u64)]| {
            let got: Vec<String> = want
                .iter()
                .map(|(c, _)| format!("{}={}", c.symbol(), counter.get(*c)))
                .collect();
            (want.iter().all(|(c, n)| counter.get(*c) == *n), got.join(" "))
        };
        Ok(match check {
            Check::Got { user, expect } => {
                let got = self.results.get(user).ok_or_else(|| format!("{user} has not read anything"))?;
                let passed = match (expect, got) {
                    (Expect::Value(v), Ok(Some(g))) => v == g,
                    (Expect::Nothing, Ok(None)) => true,
                    (Expect::Error(name), Err(e)) => name == error_name(e),
                    _ => false,
                };
                let detail = match got {
                    Ok(Some(v)) => format!("got {:?}", String::from_utf8_lossy(v)),
                    Ok(None) => "got none".to_string(),
                    Err(e) => format!("got error={}", error_name(e)),
                };
                (passed, detail)
            }
            Check::Messages(want) => {
                let got: u64 = self.last.traffic.iter().map(|t| t.messages).sum();
                (got == *want, format!("messages={got}"))
            }
            Check::Accepted(want) => (self.last.accepted == *want, format!("accepted={}", self.last.accepted)),
            Check::UserOps(want) => counts(&self.last.user_ops, want),
            Check::PeerOps(want) => counts(&self.last.peer_ops, want),
            Check::Replayed(want) => {
                let got = self.replayed.ok_or("no REPLAY has run")?;
                (got == *want, format!("replayed={got}"))
            }
            Check::Owner { index: name, user } => {
                let idx = index(name)?;
                let k = self.k();
                let ids = self
                    .session(user)?
                    .identities(&idx)
                    .ok_or_else(|| format!("{user} has no identity for {name}"))?
                    .to_vec();
                let net = self.net.as_ref().ok_or("no network")?;
                let mut honest = 0;
                let mut owned = 0;
                for p in derive_positions(&idx, k) {
                    let peer = net.responsible(&p);
                    if net.behavior(peer).is_some() {
                        continue;
                    }
                    honest += 1;
                    let mine = &ids[if ids.len() == 1 { 0 } else { p.replica_no as usize - 1 }];
                    if net
                        .peer(peer)
                        .store()
                        .get(&p)
                        .is_some_and(|e| &e.value.owner().identity == mine)
                    {
                        owned += 1;
                    }
                }
                (owned == honest, format!("owner at {owned}/{honest} honest replicas"))
            }
        })
    }
}

fn finish(mut row: Row, formula: &str, measured: Option<f64>, predicted: f64, status: Status) -> Row {
    row.formula = formula.to_string();
    row.measured = measured;
    row.predicted = predicted;
    row.delta = measured.map(|m| m - predicted);
    row.status = status;
    row
}
