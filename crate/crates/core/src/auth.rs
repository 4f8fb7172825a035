//! The three user authentication mechanisms: signed counters (PK),
//! Feige-Fiat-Shamir identification (ZKP) and one-time hashes (OTH).
//!
//! Provers mutate only user-owned [`UserCredentials`]; verifiers take a
//! peer-owned [`AuthState`] by reference and return the successor state on
//! acceptance, leaving the caller to commit it.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::Zero;
use rand::{Rng, RngCore};
use thiserror::Error;

use crate::crypto::{
    hash, hmac_sha256, mac, sha256, verify, Digest, KeyPair, OpCounter, PublicKey, Signature, ZkGroup, DIGEST_LEN,
    PUBLIC_KEY_LEN, SIGNATURE_LEN,
};
use crate::encoding::{tag, Canonical, CanonicalBytes, DecodeError, Reader, RecordWriter};
use crate::types::{Action, Index, Position, SimTime, DataPayload, REPLICA_SEPARATOR};

pub const SALT_LEN: usize = 16;
/// Replay window width in counters.
pub const WINDOW_SIZE: u32 = 32;
/// Stored window bytes: base counter plus bitmap.
pub const WINDOW_STORED_LEN: usize = 8;
/// How long a peer keeps an issued challenge open.
pub const ZKP_SESSION_TIMEOUT_MS: u64 = 30_000;
pub const MAX_ZKP_ROUNDS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mechanism {
    Pk,
    Zkp,
    Oth,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Pk, Mechanism::Zkp, Mechanism::Oth];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Pk => "pk",
            Mechanism::Zkp => "zkp",
            Mechanism::Oth => "oth",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pk" => Ok(Mechanism::Pk),
            "zkp" => Ok(Mechanism::Zkp),
            "oth" => Ok(Mechanism::Oth),
            other => Err(format!("unknown mechanism {other:?} (expected pk, zkp or oth)")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Salt(pub [u8; SALT_LEN]);

impl fmt::Debug for Salt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Salt({:02x}{:02x}…)", self.0[0], self.0[1])
    }
}

impl Salt {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut salt = [0u8; SALT_LEN];
        rng.fill_bytes(&mut salt);
        Salt(salt)
    }
}

/// Identity material pinned in an ACL item.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuthIdentity {
    Pk { public_key: PublicKey },
    /// `v = s² mod N`.
    Zkp { v: BigUint },
    /// `hash = H(s_i ‖ salt)` as enrolled.
    Oth { hash: Digest, salt: Salt },
}

impl AuthIdentity {
    pub fn mechanism(&self) -> Mechanism {
        match self {
            AuthIdentity::Pk { .. } => Mechanism::Pk,
            AuthIdentity::Zkp { .. } => Mechanism::Zkp,
            AuthIdentity::Oth { .. } => Mechanism::Oth,
        }
    }

    /// Raw identity bytes, with residues counted at their minimal width.
    pub fn raw_len(&self) -> usize {
        match self {
            AuthIdentity::Pk { .. } => PUBLIC_KEY_LEN,
            AuthIdentity::Zkp { v } => v.to_bytes_be().len(),
            AuthIdentity::Oth { .. } => DIGEST_LEN + SALT_LEN,
        }
    }
}

fn residue_to_bytes(x: &BigUint) -> Vec<u8> {
    if x.is_zero() {
        Vec::new()
    } else {
        x.to_bytes_be()
    }
}

fn residue_from_bytes(bytes: &[u8]) -> Result<BigUint, DecodeError> {
    if bytes.first() == Some(&0) {
        return Err(DecodeError::Invalid("residue has a leading zero byte"));
    }
    Ok(BigUint::from_bytes_be(bytes))
}

impl Canonical for AuthIdentity {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            AuthIdentity::Pk { public_key } => {
                let mut w = RecordWriter::begin(out, tag::IDENTITY_PK, 1);
                w.bytes(&public_key.0);
                w.finish();
            }
            AuthIdentity::Zkp { v } => {
                let mut w = RecordWriter::begin(out, tag::IDENTITY_ZKP, 1);
                w.bytes(&residue_to_bytes(v));
                w.finish();
            }
            AuthIdentity::Oth { hash, salt } => {
                let mut w = RecordWriter::begin(out, tag::IDENTITY_OTH, 2);
                w.bytes(hash.as_bytes()).bytes(&salt.0);
                w.finish();
            }
        }
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let expected = "auth identity";
        match reader.peek_tag()? {
            tag::IDENTITY_PK => {
                let mut r = reader.record(&[tag::IDENTITY_PK], expected, 1)?;
                let public_key = PublicKey(r.array()?);
                r.finish()?;
                Ok(AuthIdentity::Pk { public_key })
            }
            tag::IDENTITY_ZKP => {
                let mut r = reader.record(&[tag::IDENTITY_ZKP], expected, 1)?;
                let v = residue_from_bytes(r.bytes()?)?;
                r.finish()?;
                Ok(AuthIdentity::Zkp { v })
            }
            _ => {
                let mut r = reader.record(&[tag::IDENTITY_OTH], expected, 2)?;
                let hash = Digest(r.array()?);
                let salt = Salt(r.array()?);
                r.finish()?;
                Ok(AuthIdentity::Oth { hash, salt })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Proofs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkProof {
    pub public_key: PublicKey,
    pub ctr: u32,
    /// Signature over `H(payload ‖ u32_be(ctr))`.
    pub signature: Signature,
}

/// Stage one of an identification: `v` and commitments `x_j = r_j² mod N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZkpCommit {
    pub v: BigUint,
    pub commitments: Vec<BigUint>,
}

/// Stage three: responses `y_j = r_j · s^{c_j} mod N` for an issued session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZkpResponse {
    pub v: BigUint,
    pub session_id: u64,
    pub responses: Vec<BigUint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OthProof {
    /// The current one-time secret `s_i`.
    pub secret: Digest,
    /// `H(s'_i ‖ salt)` for the successor secret.
    pub next_hash: Digest,
}

/// The `auth` parameter of a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthProof {
    /// First access: the identity to pin, with nothing to verify against.
    Enroll(AuthIdentity),
    Pk(PkProof),
    ZkpCommit(ZkpCommit),
    ZkpResponse(ZkpResponse),
    Oth(OthProof),
}

impl Canonical for AuthProof {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            AuthProof::Enroll(identity) => {
                let mut w = RecordWriter::begin(out, tag::PROOF_ENROLL, 1);
                w.nested(identity);
                w.finish();
            }
            AuthProof::Pk(p) => {
                let mut w = RecordWriter::begin(out, tag::PROOF_PK, 3);
                w.bytes(&p.public_key.0).u32(p.ctr).bytes(&p.signature.0);
                w.finish();
            }
            AuthProof::ZkpCommit(c) => {
                let xs: Vec<Vec<u8>> = c.commitments.iter().map(residue_to_bytes).collect();
                let mut w = RecordWriter::begin(out, tag::PROOF_ZKP_COMMIT, 2);
                w.bytes(&residue_to_bytes(&c.v)).byte_list(xs.iter().map(Vec::as_slice));
                w.finish();
            }
            AuthProof::ZkpResponse(z) => {
                let ys: Vec<Vec<u8>> = z.responses.iter().map(residue_to_bytes).collect();
                let mut w = RecordWriter::begin(out, tag::PROOF_ZKP_RESPONSE, 3);
                w.bytes(&residue_to_bytes(&z.v))
                    .u64(z.session_id)
                    .byte_list(ys.iter().map(Vec::as_slice));
                w.finish();
            }
            AuthProof::Oth(o) => {
                let mut w = RecordWriter::begin(out, tag::PROOF_OTH, 2);
                w.bytes(o.secret.as_bytes()).bytes(o.next_hash.as_bytes());
                w.finish();
            }
        }
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let expected = "auth proof";
        let residues = |items: Vec<&[u8]>| items.into_iter().map(residue_from_bytes).collect::<Result<Vec<_>, _>>();
        match reader.peek_tag()? {
            tag::PROOF_ENROLL => {
                let mut r = reader.record(&[tag::PROOF_ENROLL], expected, 1)?;
                let identity = r.nested()?;
                r.finish()?;
                Ok(AuthProof::Enroll(identity))
            }
            tag::PROOF_PK => {
                let mut r = reader.record(&[tag::PROOF_PK], expected, 3)?;
                let public_key = PublicKey(r.array()?);
                let ctr = r.u32()?;
                let signature = Signature(r.array::<SIGNATURE_LEN>()?);
                r.finish()?;
                Ok(AuthProof::Pk(PkProof {
                    public_key,
                    ctr,
                    signature,
                }))
            }
            tag::PROOF_ZKP_COMMIT => {
                let mut r = reader.record(&[tag::PROOF_ZKP_COMMIT], expected, 2)?;
                let v = residue_from_bytes(r.bytes()?)?;
                let commitments = residues(r.byte_list()?)?;
                r.finish()?;
                Ok(AuthProof::ZkpCommit(ZkpCommit { v, commitments }))
            }
            tag::PROOF_ZKP_RESPONSE => {
                let mut r = reader.record(&[tag::PROOF_ZKP_RESPONSE], expected, 3)?;
                let v = residue_from_bytes(r.bytes()?)?;
                let session_id = r.u64()?;
                let responses = residues(r.byte_list()?)?;
                r.finish()?;
                Ok(AuthProof::ZkpResponse(ZkpResponse {
                    v,
                    session_id,
                    responses,
                }))
            }
            _ => {
                let mut r = reader.record(&[tag::PROOF_OTH], expected, 2)?;
                let secret = Digest(r.array()?);
                let next_hash = Digest(r.array()?);
                r.finish()?;
                Ok(AuthProof::Oth(OthProof { secret, next_hash }))
            }
        }
    }
}

/// Why a verifier rejected a proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AuthFailure {
    #[error("identity is not in the ACL")]
    UnknownIdentity,
    #[error("proof key differs from the pinned key")]
    KeyMismatch,
    #[error("signature does not verify")]
    BadSignature,
    #[error("counter already used or outside the window")]
    Replayed,
    #[error("no challenge is pending for this session")]
    NoPendingChallenge,
    #[error("challenge session expired")]
    Expired,
    #[error("responses do not verify")]
    BadResponse,
    #[error("one-time hash does not match")]
    HashMismatch,
    #[error("malformed proof")]
    Malformed,
    #[error("proof type cannot authenticate this request")]
    WrongProofType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("signature counter exhausted")]
    CounterExhausted,
    #[error("no one-time secret for replica {0}")]
    NoSuchReplica(u32),
    #[error("no zero-knowledge group is published")]
    NoGroup,
}

// ---------------------------------------------------------------------------
// Peer-side verification state
// ---------------------------------------------------------------------------

/// Sliding anti-replay window over `[base, base + 31]`.
///
/// Counters below `base` are rejected; accepting a counter above the window
/// slides `base` to `highest − 31`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ReplayWindow {
    base: u32,
    bitmap: u32,
}

impl ReplayWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn bitmap(&self) -> u32 {
        self.bitmap
    }

    /// True if `ctr` would be accepted.
    pub fn check(&self, ctr: u32) -> bool {
        if ctr < self.base {
            return false;
        }
        let offset = ctr - self.base;
        offset >= WINDOW_SIZE || self.bitmap & (1 << offset) == 0
    }

    /// Marks `ctr` if fresh; returns whether it was.
    pub fn accept(&mut self, ctr: u32) -> bool {
        if !self.check(ctr) {
            return false;
        }
        let mut offset = ctr - self.base;
        if offset >= WINDOW_SIZE {
            let shift = offset - (WINDOW_SIZE - 1);
            self.bitmap = if shift >= WINDOW_SIZE { 0 } else { self.bitmap >> shift };
            self.base += shift;
            offset = WINDOW_SIZE - 1;
        }
        self.bitmap |= 1 << offset;
        true
    }
}

/// Challenge bits `c_1..c_n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChallengeBits(pub Vec<bool>);

impl ChallengeBits {
    pub fn random(rng: &mut impl RngCore, n: usize) -> Self {
        ChallengeBits((0..n).map(|_| rng.gen::<bool>()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&c| c).count()
    }

    /// Bits packed little-endian within each byte.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.0.len().div_ceil(8)];
        for (j, &c) in self.0.iter().enumerate() {
            if c {
                out[j / 8] |= 1 << (j % 8);
            }
        }
        out
    }

    pub fn from_packed(n: usize, packed: &[u8]) -> Result<Self, DecodeError> {
        if packed.len() != n.div_ceil(8) {
            return Err(DecodeError::Invalid("challenge length"));
        }
        let bits: Vec<bool> = (0..n).map(|j| packed[j / 8] & (1 << (j % 8)) != 0).collect();
        let round_trip = ChallengeBits(bits);
        if round_trip.to_packed() != packed {
            return Err(DecodeError::Invalid("challenge padding bits set"));
        }
        Ok(round_trip)
    }
}

/// Which mutating operation a stage-one identification request announces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntentOp {
    Put,
    Set,
}

/// Payload-free description of an operation awaiting authentication. The
/// declared action lets the peer check rights before issuing challenges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Intent {
    pub op: IntentOp,
    pub action: Action,
}

impl Intent {
    pub fn put() -> Self {
        Intent {
            op: IntentOp::Put,
            action: Action::WriteData,
        }
    }

    pub fn set(action: Action) -> Self {
        Intent { op: IntentOp::Set, action }
    }
}

fn action_code(action: Action) -> u8 {
    match action {
        Action::ReadData => 0,
        Action::WriteData => 1,
        Action::ChangeRW => 2,
        Action::ChangeAdmin => 3,
    }
}

fn action_from_code(code: u8) -> Result<Action, DecodeError> {
    Action::ALL
        .get(code as usize)
        .copied()
        .ok_or(DecodeError::Invalid("unknown action code"))
}

impl Canonical for Intent {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let op = match self.op {
            IntentOp::Put => 0,
            IntentOp::Set => 1,
        };
        let mut w = RecordWriter::begin(out, tag::INTENT, 2);
        w.u8(op).u8(action_code(self.action));
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::INTENT], "intent", 2)?;
        let op = match r.u8()? {
            0 => IntentOp::Put,
            1 => IntentOp::Set,
            _ => return Err(DecodeError::Invalid("unknown intent op")),
        };
        let action = action_from_code(r.u8()?)?;
        r.finish()?;
        Ok(Intent { op, action })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PendingChallenge {
    pub session_id: u64,
    pub challenge: ChallengeBits,
    pub commitments: Vec<BigUint>,
    pub intent: Intent,
    pub deadline: SimTime,
}

/// Per-peer, per-(position, identity) verification state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AuthState {
    Pk(ReplayWindow),
    Zkp { pending: Option<PendingChallenge> },
    Oth { current_hash: Digest, salt: Salt },
}

impl AuthState {
    /// State for a freshly pinned identity.
    pub fn initial(identity: &AuthIdentity) -> Self {
        match identity {
            AuthIdentity::Pk { .. } => AuthState::Pk(ReplayWindow::new()),
            AuthIdentity::Zkp { .. } => AuthState::Zkp { pending: None },
            AuthIdentity::Oth { hash, salt } => AuthState::Oth {
                current_hash: *hash,
                salt: *salt,
            },
        }
    }

    /// Raw bytes of persistent state (a pending challenge is transient).
    pub fn raw_storage_len(&self) -> usize {
        match self {
            AuthState::Pk(_) => WINDOW_STORED_LEN,
            AuthState::Zkp { .. } => 0,
            AuthState::Oth { .. } => DIGEST_LEN,
        }
    }
}

impl Canonical for AuthState {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            AuthState::Pk(window) => {
                let mut w = RecordWriter::begin(out, tag::STATE_PK, 2);
                w.u32(window.base).u32(window.bitmap);
                w.finish();
            }
            AuthState::Zkp { pending } => {
                let mut w = RecordWriter::begin(out, tag::STATE_ZKP, 1);
                w.option_nested(pending.as_ref());
                w.finish();
            }
            AuthState::Oth { current_hash, salt } => {
                let mut w = RecordWriter::begin(out, tag::STATE_OTH, 2);
                w.bytes(current_hash.as_bytes()).bytes(&salt.0);
                w.finish();
            }
        }
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let expected = "auth state";
        match reader.peek_tag()? {
            tag::STATE_PK => {
                let mut r = reader.record(&[tag::STATE_PK], expected, 2)?;
                let base = r.u32()?;
                let bitmap = r.u32()?;
                r.finish()?;
                Ok(AuthState::Pk(ReplayWindow { base, bitmap }))
            }
            tag::STATE_ZKP => {
                let mut r = reader.record(&[tag::STATE_ZKP], expected, 1)?;
                let pending = r.option_nested()?;
                r.finish()?;
                Ok(AuthState::Zkp { pending })
            }
            _ => {
                let mut r = reader.record(&[tag::STATE_OTH], expected, 2)?;
                let current_hash = Digest(r.array()?);
                let salt = Salt(r.array()?);
                r.finish()?;
                Ok(AuthState::Oth { current_hash, salt })
            }
        }
    }
}

impl Canonical for PendingChallenge {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let xs: Vec<Vec<u8>> = self.commitments.iter().map(residue_to_bytes).collect();
        let mut w = RecordWriter::begin(out, tag::PENDING_CHALLENGE, 6);
        w.u64(self.session_id)
            .u32(self.challenge.len() as u32)
            .bytes(&self.challenge.to_packed())
            .byte_list(xs.iter().map(Vec::as_slice))
            .nested(&self.intent)
            .u64(self.deadline.0);
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::PENDING_CHALLENGE], "pending challenge", 6)?;
        let session_id = r.u64()?;
        let n = r.u32()? as usize;
        let challenge = ChallengeBits::from_packed(n, r.bytes()?)?;
        let commitments = r
            .byte_list()?
            .into_iter()
            .map(residue_from_bytes)
            .collect::<Result<Vec<_>, _>>()?;
        let intent = r.nested()?;
        let deadline = SimTime(r.u64()?);
        r.finish()?;
        Ok(PendingChallenge {
            session_id,
            challenge,
            commitments,
            intent,
            deadline,
        })
    }
}

// ---------------------------------------------------------------------------
// Signed payloads
// ---------------------------------------------------------------------------

/// Signed payload of a put: the data field as a record.
pub fn put_payload(data: &[u8]) -> CanonicalBytes {
    DataPayload(data).canonical()
}

/// Signed payload of an authenticated get: `"GET" ‖ position digest`.
pub fn get_payload(position: &Position) -> CanonicalBytes {
    CanonicalBytes::record(tag::GET_REQUEST, 2, |w| {
        w.bytes(b"GET").bytes(position.digest.as_bytes());
    })
}

// ---------------------------------------------------------------------------
// User-side credentials
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PkCredentials {
    pub keypair: KeyPair,
    /// Last counter used.
    pub ctr: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZkpCredentials {
    pub secret: BigUint,
    pub v: BigUint,
    pub residue_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OthCredentials {
    pub master: Digest,
    pub salt: Salt,
    /// Current secret for replica `i` at slot `i − 1`.
    pub current: Vec<Digest>,
}

#[derive(Debug, Clone)]
pub enum UserCredentials {
    Pk(PkCredentials),
    Zkp(ZkpCredentials),
    Oth(OthCredentials),
}

impl UserCredentials {
    pub fn mechanism(&self) -> Mechanism {
        match self {
            UserCredentials::Pk(_) => Mechanism::Pk,
            UserCredentials::Zkp(_) => Mechanism::Zkp,
            UserCredentials::Oth(_) => Mechanism::Oth,
        }
    }

    /// Bytes of per-index credential material. The OTH master secret is
    /// shared across indexes and not included.
    pub fn storage_len(&self) -> usize {
        match self {
            UserCredentials::Pk(_) => KeyPair::STORED_LEN + 4,
            UserCredentials::Zkp(z) => z.residue_len,
            UserCredentials::Oth(o) => SALT_LEN + o.current.len() * DIGEST_LEN,
        }
    }
}

// ---------------------------------------------------------------------------
// PK
// ---------------------------------------------------------------------------

pub fn pk_enroll(counter: &mut OpCounter, seed: [u8; 32]) -> (PkCredentials, AuthIdentity) {
    let keypair = KeyPair::generate(counter, seed);
    let identity = AuthIdentity::Pk {
        public_key: keypair.public_key(),
    };
    (PkCredentials { keypair, ctr: 0 }, identity)
}

/// `payload ‖ u32_be(ctr)`.
pub fn pk_signed_message(payload: &CanonicalBytes, ctr: u32) -> Vec<u8> {
    let mut msg = Vec::with_capacity(payload.len() + 4);
    msg.extend_from_slice(payload.as_bytes());
    msg.extend_from_slice(&ctr.to_be_bytes());
    msg
}

/// Advances the counter and signs `payload` under it. One proof serves every
/// replica of a logical operation.
pub fn pk_make_proof(
    creds: &mut PkCredentials,
    counter: &mut OpCounter,
    payload: &CanonicalBytes,
) -> Result<PkProof, AuthError> {
    let ctr = creds.ctr.checked_add(1).ok_or(AuthError::CounterExhausted)?;
    creds.ctr = ctr;
    Ok(pk_sign_with_ctr(creds, counter, payload, ctr))
}

/// Signs under an already-reserved counter.
pub fn pk_sign_with_ctr(creds: &PkCredentials, counter: &mut OpCounter, payload: &CanonicalBytes, ctr: u32) -> PkProof {
    let signature = creds.keypair.sign(counter, &pk_signed_message(payload, ctr));
    PkProof {
        public_key: creds.keypair.public_key(),
        ctr,
        signature,
    }
}

pub fn pk_verify(
    pinned: &PublicKey,
    window: &ReplayWindow,
    proof: &PkProof,
    payload: &CanonicalBytes,
    counter: &mut OpCounter,
) -> Result<ReplayWindow, AuthFailure> {
    if &proof.public_key != pinned {
        return Err(AuthFailure::KeyMismatch);
    }
    if !window.check(proof.ctr) {
        return Err(AuthFailure::Replayed);
    }
    if !verify(counter, pinned, &pk_signed_message(payload, proof.ctr), &proof.signature) {
        return Err(AuthFailure::BadSignature);
    }
    let mut next = *window;
    next.accept(proof.ctr);
    Ok(next)
}

// ---------------------------------------------------------------------------
// ZKP
// ---------------------------------------------------------------------------

/// Fresh secret `s` coprime to `N` and its square `v`. One MO.
pub fn zkp_enroll(group: &ZkGroup, rng: &mut impl RngCore, counter: &mut OpCounter) -> (ZkpCredentials, AuthIdentity) {
    let secret = group.random_unit(rng);
    let v = group.square(counter, &secret);
    let identity = AuthIdentity::Zkp { v: v.clone() };
    (
        ZkpCredentials {
            secret,
            v,
            residue_len: group.residue_len(),
        },
        identity,
    )
}

/// Prover nonces `r_j` kept between commitment and response.
#[derive(Debug, Clone)]
pub struct ProverRound {
    nonces: Vec<BigUint>,
}

/// Commitments for `n` parallel rounds. `n` MO.
pub fn zkp_commit(
    group: &ZkGroup,
    creds: &ZkpCredentials,
    n: usize,
    rng: &mut impl RngCore,
    counter: &mut OpCounter,
) -> (ZkpCommit, ProverRound) {
    let nonces: Vec<BigUint> = (0..n).map(|_| group.random_unit(rng)).collect();
    let commitments = nonces.iter().map(|r| group.square(counter, r)).collect();
    (
        ZkpCommit {
            v: creds.v.clone(),
            commitments,
        },
        ProverRound { nonces },
    )
}

/// Responses `y_j = r_j · s^{c_j}`. One MO per set challenge bit.
pub fn zkp_respond(
    group: &ZkGroup,
    creds: &ZkpCredentials,
    round: &ProverRound,
    challenge: &ChallengeBits,
    counter: &mut OpCounter,
) -> Result<Vec<BigUint>, AuthFailure> {
    if challenge.len() != round.nonces.len() {
        return Err(AuthFailure::Malformed);
    }
    Ok(round
        .nonces
        .iter()
        .zip(&challenge.0)
        .map(|(r, &c)| if c { group.mul(counter, r, &creds.secret) } else { r.clone() })
        .collect())
}

/// Accepts iff `y_j² ≡ x_j · v^{c_j} (mod N)` for every round.
/// One MO per square and one per set challenge bit.
pub fn zkp_check(
    group: &ZkGroup,
    v: &BigUint,
    commitments: &[BigUint],
    challenge: &ChallengeBits,
    responses: &[BigUint],
    counter: &mut OpCounter,
) -> bool {
    let n = challenge.len();
    if n == 0 || commitments.len() != n || responses.len() != n || !group.contains(v) {
        return false;
    }
    for ((x, y), &c) in commitments.iter().zip(responses).zip(&challenge.0) {
        if y.is_zero() || !group.contains(y) || !group.contains(x) {
            return false;
        }
        let lhs = group.square(counter, y);
        let rhs = if c { group.mul(counter, x, v) } else { x.clone() };
        if lhs != rhs {
            return false;
        }
    }
    true
}

/// Full three-stage identification between an honest prover and a verifier.
#[allow(clippy::too_many_arguments)]
pub fn zkp_round_trip(
    group: &ZkGroup,
    creds: &ZkpCredentials,
    identity_v: &BigUint,
    n: usize,
    prover_rng: &mut impl RngCore,
    challenge_source: &mut impl RngCore,
    prover_ops: &mut OpCounter,
    verifier_ops: &mut OpCounter,
) -> bool {
    let (commit, round) = zkp_commit(group, creds, n, prover_rng, prover_ops);
    let challenge = ChallengeBits::random(challenge_source, n);
    match zkp_respond(group, creds, &round, &challenge, prover_ops) {
        Ok(responses) => zkp_check(group, identity_v, &commit.commitments, &challenge, &responses, verifier_ops),
        Err(_) => false,
    }
}

/// A prover without `s` that commits to a guessed challenge vector:
/// `x_j = r_j²` where it guesses 0 and `x_j = r_j² · v⁻¹` where it guesses 1,
/// then always answers `y_j = r_j`. It passes iff every guess is right.
#[derive(Debug, Clone)]
pub struct CheatingProver {
    nonces: Vec<BigUint>,
}

impl CheatingProver {
    pub fn commit(
        group: &ZkGroup,
        v: &BigUint,
        v_inverse: &BigUint,
        guess: &ChallengeBits,
        rng: &mut impl RngCore,
        counter: &mut OpCounter,
    ) -> (ZkpCommit, CheatingProver) {
        let nonces: Vec<BigUint> = (0..guess.len()).map(|_| group.random_unit(rng)).collect();
        let commitments = nonces
            .iter()
            .zip(&guess.0)
            .map(|(r, &g)| {
                let sq = group.square(counter, r);
                if g {
                    group.mul(counter, &sq, v_inverse)
                } else {
                    sq
                }
            })
            .collect();
        (
            ZkpCommit {
                v: v.clone(),
                commitments,
            },
            CheatingProver { nonces },
        )
    }

    pub fn respond(&self) -> Vec<BigUint> {
        self.nonces.clone()
    }
}

// ---------------------------------------------------------------------------
// OTH
// ---------------------------------------------------------------------------

/// `s_i = HMAC_s(index ‖ 0x00 ‖ u32_be(i))`. Not counted.
pub fn oth_initial_secret(master: &Digest, index: &Index, replica_no: u32) -> Digest {
    hmac_sha256(master.as_bytes(), &[index.as_bytes(), &[REPLICA_SEPARATOR], &replica_no.to_be_bytes()])
}

/// Enrollment identity for one replica, recomputed without counting.
pub fn oth_identity(master: &Digest, index: &Index, salt: &Salt, replica_no: u32) -> AuthIdentity {
    let secret = oth_initial_secret(master, index, replica_no);
    AuthIdentity::Oth {
        hash: sha256(&[secret.as_bytes(), &salt.0]),
        salt: *salt,
    }
}

/// Derives `2k+1` individual secrets and their salted hashes.
/// Counts one MAC and one hash per replica, both as HO.
pub fn oth_enroll(
    master: &Digest,
    index: &Index,
    salt: Salt,
    k: usize,
    counter: &mut OpCounter,
) -> (OthCredentials, Vec<AuthIdentity>) {
    let replicas = crate::types::replica_count(k) as u32;
    let mut current = Vec::with_capacity(replicas as usize);
    let mut identities = Vec::with_capacity(replicas as usize);
    for i in 1..=replicas {
        let secret = mac(counter, master.as_bytes(), &[index.as_bytes(), &[REPLICA_SEPARATOR], &i.to_be_bytes()]);
        identities.push(AuthIdentity::Oth {
            hash: hash(counter, &[secret.as_bytes(), &salt.0]),
            salt,
        });
        current.push(secret);
    }
    (
        OthCredentials {
            master: *master,
            salt,
            current,
        },
        identities,
    )
}

/// Reveals `s_i`, commits to `s'_i = HMAC_s(s_i)` and replaces `s_i` with it.
pub fn oth_make_proof(
    creds: &mut OthCredentials,
    replica_no: u32,
    counter: &mut OpCounter,
) -> Result<OthProof, AuthError> {
    let slot = (replica_no as usize)
        .checked_sub(1)
        .filter(|&s| s < creds.current.len())
        .ok_or(AuthError::NoSuchReplica(replica_no))?;
    let secret = creds.current[slot];
    let successor = mac(counter, creds.master.as_bytes(), &[secret.as_bytes()]);
    let next_hash = hash(counter, &[successor.as_bytes(), &creds.salt.0]);
    creds.current[slot] = successor;
    Ok(OthProof { secret, next_hash })
}

/// Accepts iff `H(s_i ‖ salt)` equals the stored hash; the successor state
/// stores the proof's `next_hash`. One HO.
pub fn oth_verify(
    current_hash: &Digest,
    salt: &Salt,
    proof: &OthProof,
    counter: &mut OpCounter,
) -> Result<AuthState, AuthFailure> {
    if &hash(counter, &[proof.secret.as_bytes(), &salt.0]) != current_hash {
        return Err(AuthFailure::HashMismatch);
    }
    Ok(AuthState::Oth {
        current_hash: proof.next_hash,
        salt: *salt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::OpClass;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn group() -> ZkGroup {
        ZkGroup::generate([11; 32])
    }

    /// Reference window: the set of accepted counters and the highest one.
    #[derive(Default)]
    struct ModelWindow {
        seen: BTreeSet<u32>,
        highest: Option<u32>,
    }

    impl ModelWindow {
        fn accept(&mut self, ctr: u32) -> bool {
            let floor = self.highest.map_or(0, |h| h.saturating_sub(WINDOW_SIZE - 1));
            if ctr < floor || self.seen.contains(&ctr) {
                return false;
            }
            self.seen.insert(ctr);
            self.highest = Some(self.highest.map_or(ctr, |h| h.max(ctr)));
            true
        }
    }

    #[test]
    fn window_transitions_match_reference_model() {
        let mut r = rng(1);
        for _ in 0..200 {
            let mut window = ReplayWindow::new();
            let mut model = ModelWindow::default();
            let mut ctr = 0u32;
            for _ in 0..200 {
                // mostly forward, sometimes far jumps, often replays and stale counters
                let candidate = match r.gen_range(0..6) {
                    0 => ctr.saturating_add(r.gen_range(30..80)),
                    1 | 2 => ctr.saturating_sub(r.gen_range(0..40)),
                    _ => ctr.saturating_add(r.gen_range(0..4)),
                };
                assert_eq!(window.accept(candidate), model.accept(candidate), "ctr {candidate}");
                ctr = ctr.max(candidate);
            }
        }
    }

    #[test]
    fn window_edges() {
        let mut w = ReplayWindow::new();
        for c in 1..=50 {
            assert!(w.accept(c));
        }
        assert_eq!(w.base(), 50 - 31);
        assert!(!w.check(w.base() - 1));
        assert!(!w.check(50));
        let far = w.base() + 40;
        assert!(w.accept(far));
        assert_eq!(w.base(), far - 31);
        assert!(!w.check(50));
    }

    fn pk_fixture() -> (PkCredentials, PublicKey, OpCounter) {
        let mut ops = OpCounter::new();
        let (creds, identity) = pk_enroll(&mut ops, [5; 32]);
        let AuthIdentity::Pk { public_key } = identity else { unreachable!() };
        (creds, public_key, ops)
    }

    #[test]
    fn pk_complete_and_rejects_replay() {
        let (mut creds, key, mut ops) = pk_fixture();
        let payload = put_payload(b"data");
        let proof = pk_make_proof(&mut creds, &mut ops, &payload).unwrap();
        let window = pk_verify(&key, &ReplayWindow::new(), &proof, &payload, &mut ops).unwrap();
        assert_eq!(pk_verify(&key, &window, &proof, &payload, &mut ops), Err(AuthFailure::Replayed));
    }

    #[test]
    fn pk_counters_consecutive() {
        let (mut creds, _, mut ops) = pk_fixture();
        let payload = put_payload(b"data");
        let a = pk_make_proof(&mut creds, &mut ops, &payload).unwrap();
        let b = pk_make_proof(&mut creds, &mut ops, &payload).unwrap();
        assert_eq!(b.ctr, a.ctr + 1);
    }

    #[test]
    fn pk_rejects_flipped_data_bits() {
        let (mut creds, key, mut ops) = pk_fixture();
        let data = [0xa5u8; 64];
        let proof = pk_make_proof(&mut creds, &mut ops, &put_payload(&data)).unwrap();
        let mut r = rng(2);
        for _ in 0..64 {
            let mut flipped = data;
            let bit = r.gen_range(0..data.len() * 8);
            flipped[bit / 8] ^= 1 << (bit % 8);
            let result = pk_verify(&key, &ReplayWindow::new(), &proof, &put_payload(&flipped), &mut ops);
            assert_eq!(result, Err(AuthFailure::BadSignature));
        }
        let mut forged = proof.clone();
        forged.ctr += 1;
        assert_eq!(
            pk_verify(&key, &ReplayWindow::new(), &forged, &put_payload(&data), &mut ops),
            Err(AuthFailure::BadSignature)
        );
    }

    #[test]
    fn pk_rejects_foreign_key() {
        let (mut creds, _, mut ops) = pk_fixture();
        let (_, other) = pk_enroll(&mut ops, [6; 32]);
        let AuthIdentity::Pk { public_key: other } = other else { unreachable!() };
        let payload = put_payload(b"x");
        let proof = pk_make_proof(&mut creds, &mut ops, &payload).unwrap();
        assert_eq!(
            pk_verify(&other, &ReplayWindow::new(), &proof, &payload, &mut ops),
            Err(AuthFailure::KeyMismatch)
        );
    }

    #[test]
    fn pk_counter_exhaustion() {
        let (mut creds, _, mut ops) = pk_fixture();
        creds.ctr = u32::MAX;
        assert_eq!(
            pk_make_proof(&mut creds, &mut ops, &put_payload(b"x")).unwrap_err(),
            AuthError::CounterExhausted
        );
    }

    #[test]
    fn zkp_toy_enrollment() {
        let toy = ZkGroup::from_modulus(BigUint::from(77u32)).unwrap();
        let mut ops = OpCounter::new();
        assert_eq!(toy.square(&mut ops, &BigUint::from(10u32)), BigUint::from(23u32));
        let (creds, identity) = zkp_enroll(&toy, &mut rng(3), &mut ops);
        assert_eq!(identity, AuthIdentity::Zkp { v: toy.square(&mut ops, &creds.secret) });
    }

    #[test]
    fn zkp_enrollments_differ_across_seeds() {
        let g = group();
        let mut ops = OpCounter::new();
        let vs: BTreeSet<BigUint> = (0..100).map(|s| zkp_enroll(&g, &mut rng(s), &mut ops).0.v).collect();
        assert_eq!(vs.len(), 100);
    }

    #[test]
    fn zkp_honest_prover_accepted() {
        let g = group();
        let mut ops = OpCounter::new();
        let (creds, _) = zkp_enroll(&g, &mut rng(4), &mut ops);
        let (mut p, mut c) = (rng(5), rng(6));
        for n in [1, 3, 20] {
            let (mut prover, mut verifier) = (OpCounter::new(), OpCounter::new());
            assert!(zkp_round_trip(&g, &creds, &creds.v, n, &mut p, &mut c, &mut prover, &mut verifier));
        }
    }

    #[test]
    fn zkp_mo_counts_track_challenge_weight() {
        let g = group();
        let mut ops = OpCounter::new();
        let (creds, _) = zkp_enroll(&g, &mut rng(7), &mut ops);
        let mut r = rng(8);
        let (commit, round) = zkp_commit(&g, &creds, 20, &mut r, &mut ops);
        let challenge = ChallengeBits::random(&mut r, 20);
        let responses = zkp_respond(&g, &creds, &round, &challenge, &mut ops).unwrap();
        let mut verifier = OpCounter::new();
        assert!(zkp_check(&g, &creds.v, &commit.commitments, &challenge, &responses, &mut verifier));
        assert_eq!(verifier.get(OpClass::Modular), 20 + challenge.ones() as u64);
        assert!((20..=40).contains(&verifier.get(OpClass::Modular)));
    }

    #[test]
    fn zkp_rejects_zero_response_and_wrong_lengths() {
        let g = group();
        let mut ops = OpCounter::new();
        let (creds, _) = zkp_enroll(&g, &mut rng(9), &mut ops);
        let mut r = rng(10);
        let (commit, round) = zkp_commit(&g, &creds, 4, &mut r, &mut ops);
        let challenge = ChallengeBits(vec![false; 4]);
        let mut responses = zkp_respond(&g, &creds, &round, &challenge, &mut ops).unwrap();
        assert!(zkp_check(&g, &creds.v, &commit.commitments, &challenge, &responses, &mut ops));
        responses[2] = BigUint::zero();
        assert!(!zkp_check(&g, &creds.v, &commit.commitments, &challenge, &responses, &mut ops));
        assert!(!zkp_check(&g, &creds.v, &commit.commitments, &challenge, &responses[..3], &mut ops));
    }

    #[test]
    fn cheating_prover_passes_only_on_correct_guess() {
        let g = group();
        let mut ops = OpCounter::new();
        let (creds, _) = zkp_enroll(&g, &mut rng(11), &mut ops);
        let v_inv = g.inverse(&mut ops, &creds.v).unwrap();
        let mut r = rng(12);
        let guess = ChallengeBits(vec![true, false, true]);
        let (commit, cheat) = CheatingProver::commit(&g, &creds.v, &v_inv, &guess, &mut r, &mut ops);
        assert!(zkp_check(&g, &creds.v, &commit.commitments, &guess, &cheat.respond(), &mut ops));
        for wrong in [vec![false, false, true], vec![true, true, true], vec![true, false, false]] {
            let wrong = ChallengeBits(wrong);
            assert!(!zkp_check(&g, &creds.v, &commit.commitments, &wrong, &cheat.respond(), &mut ops));
        }
    }

    #[test]
    fn oth_secret_matches_direct_mac() {
        use hmac::{Hmac, Mac};
        use sha2::Sha256;
        let master = Digest([42; 32]);
        let index = Index::try_from("calendar").unwrap();
        let mut ops = OpCounter::new();
        let (creds, identities) = oth_enroll(&master, &index, Salt([1; 16]), 2, &mut ops);
        let mut m = Hmac::<Sha256>::new_from_slice(&[42; 32]).unwrap();
        m.update(b"calendar\x00\x00\x00\x00\x03");
        let expected: [u8; 32] = m.finalize().into_bytes().into();
        assert_eq!(creds.current[2].0, expected);
        assert_eq!(identities.len(), 5);
        assert_eq!(ops.get(OpClass::Hash), 10);
        assert_eq!(identities[2], oth_identity(&master, &index, &Salt([1; 16]), 3));
    }

    #[test]
    fn oth_k0_single_secret() {
        let mut ops = OpCounter::new();
        let (creds, ids) = oth_enroll(&Digest([1; 32]), &Index::try_from("i").unwrap(), Salt([0; 16]), 0, &mut ops);
        assert_eq!(creds.current.len(), 1);
        assert_eq!(ids.len(), 1);
    }

    #[test]
    fn oth_indexes_have_disjoint_secrets() {
        let mut ops = OpCounter::new();
        let master = Digest([8; 32]);
        let (a, _) = oth_enroll(&master, &Index::try_from("a").unwrap(), Salt([1; 16]), 3, &mut ops);
        let (b, _) = oth_enroll(&master, &Index::try_from("b").unwrap(), Salt([2; 16]), 3, &mut ops);
        for x in &a.current {
            for y in &b.current {
                assert_ne!(x, y);
            }
        }
    }

    fn oth_state(identity: &AuthIdentity) -> (Digest, Salt) {
        match AuthState::initial(identity) {
            AuthState::Oth { current_hash, salt } => (current_hash, salt),
            _ => unreachable!(),
        }
    }

    #[test]
    fn oth_proof_single_use_and_chain() {
        let mut ops = OpCounter::new();
        let (mut creds, ids) =
            oth_enroll(&Digest([3; 32]), &Index::try_from("x").unwrap(), Salt([4; 16]), 1, &mut ops);
        let (mut current, salt) = oth_state(&ids[0]);

        // reference chain: s^(t+1) = HMAC_s(s^(t)), expected stored hash H(s^(t) ‖ salt)
        let mut model_secret = creds.current[0];
        for _ in 0..5 {
            let proof = oth_make_proof(&mut creds, 1, &mut ops).unwrap();
            assert_eq!(proof.secret, model_secret);
            let before = ops;
            let AuthState::Oth { current_hash, .. } = oth_verify(&current, &salt, &proof, &mut ops).unwrap() else {
                unreachable!()
            };
            assert_eq!((ops - before).get(OpClass::Hash), 1);
            assert_eq!(oth_verify(&current_hash, &salt, &proof, &mut ops), Err(AuthFailure::HashMismatch));
            model_secret = hmac_sha256(&[3; 32], &[model_secret.as_bytes()]);
            assert_eq!(current_hash, sha256(&[model_secret.as_bytes(), &salt.0]));
            current = current_hash;
        }
    }

    #[test]
    fn oth_replica_secrets_independent() {
        let mut ops = OpCounter::new();
        let (mut creds, ids) =
            oth_enroll(&Digest([3; 32]), &Index::try_from("x").unwrap(), Salt([4; 16]), 1, &mut ops);
        let proof = oth_make_proof(&mut creds, 1, &mut ops).unwrap();
        let (h2, salt) = oth_state(&ids[1]);
        assert!(oth_verify(&h2, &salt, &proof, &mut ops).is_err());
        let zeroed = OthProof {
            secret: Digest([0; 32]),
            next_hash: proof.next_hash,
        };
        let (h1, _) = oth_state(&ids[0]);
        assert!(oth_verify(&h1, &salt, &zeroed, &mut ops).is_err());
        assert_eq!(oth_make_proof(&mut creds, 4, &mut ops), Err(AuthError::NoSuchReplica(4)));
    }

    #[test]
    fn challenge_packing() {
        let bits = ChallengeBits(vec![true, false, true, true, false, false, false, false, true]);
        let packed = bits.to_packed();
        assert_eq!(packed, vec![0b0000_1101, 0b0000_0001]);
        assert_eq!(ChallengeBits::from_packed(9, &packed).unwrap(), bits);
        assert!(ChallengeBits::from_packed(9, &[0b0000_1101, 0b0000_0011]).is_err());
    }

    #[test]
    fn identities_differ_across_indexes_for_one_user() {
        let mut ops = OpCounter::new();
        let mut r = rng(20);
        let g = group();
        let master = Digest([9; 32]);
        let a = Index::try_from("a").unwrap();
        let b = Index::try_from("b").unwrap();
        let (_, pk_a) = pk_enroll(&mut ops, crate::crypto::seed_bytes(&mut r));
        let (_, pk_b) = pk_enroll(&mut ops, crate::crypto::seed_bytes(&mut r));
        let (_, zk_a) = zkp_enroll(&g, &mut r, &mut ops);
        let (_, zk_b) = zkp_enroll(&g, &mut r, &mut ops);
        let (_, oth_a) = oth_enroll(&master, &a, Salt::random(&mut r), 1, &mut ops);
        let (_, oth_b) = oth_enroll(&master, &b, Salt::random(&mut r), 1, &mut ops);
        assert_ne!(pk_a.canonical(), pk_b.canonical());
        assert_ne!(zk_a.canonical(), zk_b.canonical());
        for x in &oth_a {
            for y in &oth_b {
                assert_ne!(x.canonical(), y.canonical());
            }
        }
    }
}
