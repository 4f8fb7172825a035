//! Analytic overhead model: message counts, authenticator sizes, storage and
//! per-role operation counts, evaluated under a primitive-size profile.
//!
//! The `paper` profile carries the published constants (RSA-2048 and
//! ECC-224 keys, 83-byte residues, 160-bit positions) and reprints them. The `artifact`
//! profile carries this implementation's sizes (Ed25519, 672-bit modulus,
//! SHA-256, canonical encoding) and its operation accounting.

use std::fmt;
use std::str::FromStr;

use krac_core::auth::{SALT_LEN, WINDOW_STORED_LEN};
use krac_core::crypto::{KeyPair, DIGEST_LEN, PUBLIC_KEY_LEN, SIGNATURE_LEN, WRAPPED_KEY_LEN};
use krac_core::{Mechanism, OpClass};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("unknown {what} `{value}`")]
    Unknown { what: &'static str, value: String },
    #[error("{0} is evaluated analytically only")]
    AnalyticalOnly(Scheme),
    #[error("no {phase} {operation} figure for {role}")]
    NotModelled {
        operation: Operation,
        phase: Phase,
        role: Role,
    },
    #[error("parameter {name}={value} outside 0..={max}")]
    OutOfRange { name: &'static str, value: u64, max: u64 },
    #[error("routing cost y={0} must be a positive even number")]
    OddRoutingCost(u64),
}

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident, $what:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = FormulaError;

            fn from_str(s: &str) -> Result<Self, FormulaError> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(FormulaError::Unknown { what: $what, value: s.to_string() }),
                }
            }
        }
    };
}

named_enum!(Profile, "profile" { Paper => "paper", Artifact => "artifact" });
named_enum!(
    /// A mechanism together with the primitive it is sized for.
    Scheme, "scheme" { PkRsa => "pk-rsa", PkEcc => "pk-ecc", Zkp => "zkp", Oth => "oth" }
);
named_enum!(Operation, "operation" { Get => "get", Put => "put", Set => "set" });
named_enum!(Phase, "phase" { Initial => "initial", Subsequent => "subsequent" });
named_enum!(Role, "role" { User => "user", Peer => "peer" });

impl Scheme {
    pub fn mechanism(self) -> Mechanism {
        match self {
            Scheme::PkRsa | Scheme::PkEcc => Mechanism::Pk,
            Scheme::Zkp => Mechanism::Zkp,
            Scheme::Oth => Mechanism::Oth,
        }
    }

    /// The scheme this implementation runs for `mechanism`.
    pub fn implemented(mechanism: Mechanism) -> Scheme {
        match mechanism {
            Mechanism::Pk => Scheme::PkEcc,
            Mechanism::Zkp => Scheme::Zkp,
            Mechanism::Oth => Scheme::Oth,
        }
    }
}

/// Model parameters: resilience `k`, ZKP rounds `n`, ACL size `a` and
/// routing cost `y` (messages per request/reply exchange).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Params {
    pub k: u64,
    pub n: u64,
    pub a: u64,
    pub y: u64,
}

impl Default for Params {
    fn default() -> Self {
        Params { k: 20, n: 20, a: 10, y: 2 }
    }
}

impl Params {
    pub fn validate(&self) -> Result<(), FormulaError> {
        for (name, value, max) in [("k", self.k, 64), ("n", self.n, 64), ("a", self.a, 256)] {
            if value > max {
                return Err(FormulaError::OutOfRange { name, value, max });
            }
        }
        if self.y == 0 || self.y % 2 == 1 {
            return Err(FormulaError::OddRoutingCost(self.y));
        }
        Ok(())
    }

    pub fn replicas(&self) -> u64 {
        2 * self.k + 1
    }
}

/// `intercept + slope·k` bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub intercept: u64,
    pub slope: u64,
}

impl Affine {
    pub fn at(&self, k: u64) -> u64 {
        self.intercept + self.slope * k
    }
}

/// A linear combination of operation classes. Coefficients are expected
/// counts, fractional where a term is an average over challenge bits.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OpExpr {
    coefficients: [f64; 6],
}

impl OpExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn term(mut self, class: OpClass, count: f64) -> Self {
        self.coefficients[slot(class)] += count;
        self
    }

    pub fn get(&self, class: OpClass) -> f64 {
        self.coefficients[slot(class)]
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for c in &mut self.coefficients {
            *c *= factor;
        }
        self
    }
}

fn slot(class: OpClass) -> usize {
    OpClass::ALL.iter().position(|c| *c == class).expect("listed")
}

impl fmt::Display for OpExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = OpClass::ALL
            .iter()
            .filter(|c| self.get(**c) != 0.0)
            .map(|c| format!("{} {}", self.get(*c), c.symbol()))
            .collect();
        if terms.is_empty() {
            f.write_str("0")
        } else {
            f.write_str(&terms.join(" + "))
        }
    }
}

/// Symbolic form and value of one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub formula: &'static str,
    pub value: T,
}

/// Residue width of the implemented ZKP group.
pub const ARTIFACT_RESIDUE_LEN: u64 = 84;
/// Bytes a plain DHT user keeps per index anyway: one position digest.
pub fn position_len(profile: Profile) -> u64 {
    match profile {
        Profile::Paper => 20,
        Profile::Artifact => DIGEST_LEN as u64,
    }
}

/// Length of one canonical record header: tag plus field count.
const HEADER: u64 = 1 + 4;
/// Length prefix of one variable-length field or list.
const PREFIX: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormulaSet {
    pub profile: Profile,
}

impl FormulaSet {
    pub fn new(profile: Profile) -> Self {
        FormulaSet { profile }
    }

    fn supports(&self, scheme: Scheme) -> Result<(), FormulaError> {
        if self.profile == Profile::Artifact && scheme == Scheme::PkRsa {
            return Err(FormulaError::AnalyticalOnly(scheme));
        }
        Ok(())
    }

    /// Messages exchanged by one operation with all `2k+1` replicas. The
    /// artifact's initial ZKP access enrols without a challenge round.
    pub fn messages(&self, scheme: Scheme, op: Operation, phase: Phase, p: &Params) -> Result<Prediction<u64>, FormulaError> {
        p.validate()?;
        self.supports(scheme)?;
        let enrol = self.profile == Profile::Artifact && phase == Phase::Initial;
        Ok(match (scheme, op) {
            (Scheme::Zkp, Operation::Put | Operation::Set) if !enrol => Prediction {
                formula: "(2k+1)·2y",
                value: p.replicas() * 2 * p.y,
            },
            _ => Prediction {
                formula: "(2k+1)·y",
                value: p.replicas() * p.y,
            },
        })
    }

    /// Messages beyond the `y` a plain DHT operation costs.
    pub fn message_overhead(
        &self,
        scheme: Scheme,
        op: Operation,
        phase: Phase,
        p: &Params,
    ) -> Result<Prediction<u64>, FormulaError> {
        let m = self.messages(scheme, op, phase, p)?;
        Ok(Prediction {
            formula: if m.value == p.replicas() * p.y { "2k·y" } else { "(4k+1)·y" },
            value: m.value - p.y,
        })
    }

    /// Authenticator bytes carried per replica by an authenticated write.
    /// Under the artifact profile ZKP residues are counted at full width,
    /// so the figure is an upper bound there.
    pub fn auth_bytes(&self, scheme: Scheme, p: &Params) -> Result<Prediction<u64>, FormulaError> {
        p.validate()?;
        self.supports(scheme)?;
        let n = p.n;
        Ok(match (self.profile, scheme) {
            (Profile::Paper, Scheme::PkRsa) => Prediction {
                formula: "4 + 294 + 256",
                value: 4 + 294 + 256,
            },
            (Profile::Paper, Scheme::PkEcc) => Prediction {
                formula: "4 + 80 + 63",
                value: 4 + 80 + 63,
            },
            (Profile::Paper, Scheme::Zkp) => Prediction {
                formula: "83·n",
                value: 83 * n,
            },
            (Profile::Paper, Scheme::Oth) => Prediction {
                formula: "2·32",
                value: 64,
            },
            (Profile::Artifact, Scheme::PkEcc) => Prediction {
                formula: "5 + (4+32) + (4+4) + (4+64)",
                value: HEADER + (PREFIX + PUBLIC_KEY_LEN as u64) + (PREFIX + 4) + (PREFIX + SIGNATURE_LEN as u64),
            },
            (Profile::Artifact, Scheme::Zkp) => {
                let residue = PREFIX + ARTIFACT_RESIDUE_LEN;
                let list = PREFIX + 4 + n * residue;
                let commit = HEADER + residue + list;
                let response = HEADER + residue + (PREFIX + 8) + list;
                Prediction {
                    formula: "(5 + 88 + 8 + 88n) + (5 + 88 + 12 + 8 + 88n)",
                    value: commit + response,
                }
            }
            (Profile::Artifact, Scheme::Oth) => Prediction {
                formula: "5 + (4+32) + (4+32)",
                value: HEADER + 2 * (PREFIX + DIGEST_LEN as u64),
            },
            (Profile::Artifact, Scheme::PkRsa) => unreachable!("rejected by supports"),
        })
    }

    /// Per-index user storage beyond a plain DHT user's, affine in `k`.
    pub fn user_storage(&self, scheme: Scheme) -> Result<Prediction<Affine>, FormulaError> {
        self.supports(scheme)?;
        let positions = 2 * DIGEST_LEN as u64;
        Ok(match (self.profile, scheme) {
            (Profile::Paper, Scheme::PkRsa) => Prediction {
                formula: "1196 + 40k",
                value: Affine { intercept: 1196, slope: 40 },
            },
            (Profile::Paper, Scheme::PkEcc) => Prediction {
                formula: "117 + 40k",
                value: Affine { intercept: 117, slope: 40 },
            },
            (Profile::Paper, Scheme::Zkp) => Prediction {
                formula: "25 + 40k",
                value: Affine { intercept: 25, slope: 40 },
            },
            (Profile::Paper, Scheme::Oth) => Prediction {
                formula: "48 + 104k",
                value: Affine { intercept: 48, slope: 104 },
            },
            (Profile::Artifact, Scheme::PkEcc) => Prediction {
                formula: "68 + 64k",
                value: Affine {
                    intercept: KeyPair::STORED_LEN as u64 + 4,
                    slope: positions,
                },
            },
            (Profile::Artifact, Scheme::Zkp) => Prediction {
                formula: "84 + 64k",
                value: Affine {
                    intercept: ARTIFACT_RESIDUE_LEN,
                    slope: positions,
                },
            },
            (Profile::Artifact, Scheme::Oth) => Prediction {
                formula: "48 + 128k",
                value: Affine {
                    intercept: SALT_LEN as u64 + DIGEST_LEN as u64,
                    slope: 2 * DIGEST_LEN as u64 + positions,
                },
            },
            (Profile::Artifact, Scheme::PkRsa) => unreachable!("rejected by supports"),
        })
    }

    /// Bytes held once per user regardless of the number of indexes.
    pub fn user_storage_once(&self, scheme: Scheme) -> Result<Prediction<u64>, FormulaError> {
        self.supports(scheme)?;
        Ok(match (self.profile, scheme) {
            (Profile::Paper, Scheme::Oth) => Prediction { formula: "32", value: 32 },
            (Profile::Artifact, Scheme::Oth) => Prediction {
                formula: "32",
                value: DIGEST_LEN as u64,
            },
            _ => Prediction { formula: "0", value: 0 },
        })
    }

    /// Raw bytes a responsible peer keeps for one ACL item, including its
    /// verification state. PK items are counted with a wrapped key.
    pub fn peer_item_storage(&self, scheme: Scheme) -> Result<Prediction<u64>, FormulaError> {
        self.supports(scheme)?;
        Ok(match (self.profile, scheme) {
            (Profile::Paper, Scheme::PkRsa) => Prediction {
                formula: "256 + 1 + 128 + 294",
                value: 679,
            },
            (Profile::Paper, Scheme::PkEcc) => Prediction {
                formula: "64 + 1 + 128 + 80",
                value: 273,
            },
            (Profile::Paper, Scheme::Zkp) => Prediction {
                formula: "83 + 1",
                value: 84,
            },
            (Profile::Paper, Scheme::Oth) => Prediction {
                formula: "32 + 16 + 1",
                value: 49,
            },
            (Profile::Artifact, Scheme::PkEcc) => Prediction {
                formula: "32 + 64 + 1 + 8",
                value: (PUBLIC_KEY_LEN + WRAPPED_KEY_LEN + 1 + WINDOW_STORED_LEN) as u64,
            },
            (Profile::Artifact, Scheme::Zkp) => Prediction {
                formula: "84 + 1",
                value: ARTIFACT_RESIDUE_LEN + 1,
            },
            (Profile::Artifact, Scheme::Oth) => Prediction {
                formula: "32 + 16 + 1 + 32",
                value: (DIGEST_LEN + SALT_LEN + 1 + DIGEST_LEN) as u64,
            },
            (Profile::Artifact, Scheme::PkRsa) => unreachable!("rejected by supports"),
        })
    }

    /// Expected operation counts of one operation. Peer figures are summed
    /// over all `2k+1` replicas. For PK, `a` is the number of keys wrapped.
    pub fn ops(
        &self,
        scheme: Scheme,
        op: Operation,
        phase: Phase,
        role: Role,
        p: &Params,
    ) -> Result<Prediction<OpExpr>, FormulaError> {
        use OpClass::*;
        p.validate()?;
        let replicas = p.replicas() as f64;
        let a = p.a as f64;
        let n = p.n as f64;
        let paper = self.profile == Profile::Paper;
        let pk = scheme.mechanism() == Mechanism::Pk;
        if !paper && scheme == Scheme::PkRsa {
            return Err(FormulaError::AnalyticalOnly(scheme));
        }
        let e = OpExpr::zero();
        let pred = |formula: &'static str, value: OpExpr| Ok(Prediction { formula, value });
        match (role, phase, op) {
            (Role::User, Phase::Initial, Operation::Get) | (Role::Peer, Phase::Initial, Operation::Get) => {
                Err(FormulaError::NotModelled {
                    operation: op,
                    phase,
                    role,
                })
            }
            (Role::User, Phase::Initial, _) => {
                let sealed = op == Operation::Put;
                let so = if sealed { 1.0 } else { 0.0 };
                match scheme.mechanism() {
                    // The artifact's put carries no ACL: the keys are
                    // wrapped by the set that follows it.
                    Mechanism::Pk if paper || !sealed => pred(
                        if sealed { "KG + SO + a·AO_pk" } else { "KG + a·AO_pk" },
                        e.term(KeyGen, 1.0).term(Symmetric, so).term(PublicKeyOp, a),
                    ),
                    Mechanism::Pk => pred("KG + SO", e.term(KeyGen, 1.0).term(Symmetric, so)),
                    Mechanism::Zkp => pred(
                        if sealed { "MO + SO" } else { "MO" },
                        e.term(Modular, 1.0).term(Symmetric, so),
                    ),
                    // The artifact counts the HMAC deriving each secret as
                    // well as the hash of it.
                    Mechanism::Oth if paper => pred(
                        if sealed { "(2k+1)·HO + SO" } else { "(2k+1)·HO" },
                        e.term(Hash, replicas).term(Symmetric, so),
                    ),
                    Mechanism::Oth => pred(
                        if sealed { "2(2k+1)·HO + SO" } else { "2(2k+1)·HO" },
                        e.term(Hash, 2.0 * replicas).term(Symmetric, so),
                    ),
                }
            }
            (Role::User, Phase::Subsequent, Operation::Get) => {
                if pk {
                    pred("AO_sk + SO", e.term(SecretKeyOp, 1.0).term(Symmetric, 1.0))
                } else {
                    pred("SO", e.term(Symmetric, 1.0))
                }
            }
            (Role::User, Phase::Subsequent, _) => {
                let sealed = op == Operation::Put;
                let so = if sealed { 1.0 } else { 0.0 };
                match scheme.mechanism() {
                    Mechanism::Pk if paper || !sealed => pred(
                        if sealed { "SO + a·AO_pk + HO + AO_sk" } else { "a·AO_pk + HO + AO_sk" },
                        e.term(Symmetric, so)
                            .term(PublicKeyOp, a)
                            .term(Hash, 1.0)
                            .term(SecretKeyOp, 1.0),
                    ),
                    Mechanism::Pk => pred(
                        "SO + HO + AO_sk",
                        e.term(Symmetric, so).term(Hash, 1.0).term(SecretKeyOp, 1.0),
                    ),
                    Mechanism::Zkp => pred(
                        if sealed { "SO + (2k+1)·n·1.5·MO" } else { "(2k+1)·n·1.5·MO" },
                        e.term(Symmetric, so).term(Modular, replicas * n * 1.5),
                    ),
                    Mechanism::Oth if paper => pred(
                        if sealed { "SO + (2k+1)·HO" } else { "(2k+1)·HO" },
                        e.term(Symmetric, so).term(Hash, replicas),
                    ),
                    Mechanism::Oth => pred(
                        if sealed { "SO + 2(2k+1)·HO" } else { "2(2k+1)·HO" },
                        e.term(Symmetric, so).term(Hash, 2.0 * replicas),
                    ),
                }
            }
            (Role::Peer, _, Operation::Get) => pred("0", e),
            // First access pins the requester; there is nothing to verify.
            (Role::Peer, Phase::Initial, _) => pred("0", e),
            (Role::Peer, Phase::Subsequent, _) => match scheme.mechanism() {
                Mechanism::Pk => pred("(2k+1)·(AO_pk + HO)", e.term(PublicKeyOp, 1.0).term(Hash, 1.0).scaled(replicas)),
                Mechanism::Zkp => pred("(2k+1)·n·1.5·MO", e.term(Modular, n * 1.5).scaled(replicas)),
                Mechanism::Oth => pred("(2k+1)·HO", e.term(Hash, 1.0).scaled(replicas)),
            },
        }
    }
}
