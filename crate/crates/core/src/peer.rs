//! Responsible-peer state machine: local store keyed by position,
//! controlled replies for put and set, uncontrolled get, ownership by first
//! access.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::auth::{
    get_payload, oth_verify, pk_verify, put_payload, zkp_check, AuthFailure, AuthIdentity, AuthProof, AuthState,
    ChallengeBits, Intent, IntentOp, PendingChallenge, ZkpCommit, ZkpResponse, ZKP_SESSION_TIMEOUT_MS,
};
use crate::crypto::{OpCounter, WrappedKey, ZkGroup};
use crate::encoding::{tag, Canonical, CanonicalBytes, DecodeError, Reader, RecordWriter};
use crate::types::{rights_allows, AclItem, Action, DhtValue, Position, Rights, SimTime};

/// What one ACL change does to its identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeKind {
    /// Add the identity or replace its rights.
    Grant(Rights),
    Remove,
    /// Leave rights alone and replace the wrapped key.
    Rekey,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AclChange {
    pub identity: AuthIdentity,
    pub wrapped_key: Option<WrappedKey>,
    pub kind: ChangeKind,
}

impl AclChange {
    pub fn grant(identity: AuthIdentity, rights: Rights) -> Self {
        AclChange {
            identity,
            wrapped_key: None,
            kind: ChangeKind::Grant(rights),
        }
    }

    pub fn remove(identity: AuthIdentity) -> Self {
        AclChange {
            identity,
            wrapped_key: None,
            kind: ChangeKind::Remove,
        }
    }

    pub fn rekey(identity: AuthIdentity, key: WrappedKey) -> Self {
        AclChange {
            identity,
            wrapped_key: Some(key),
            kind: ChangeKind::Rekey,
        }
    }

    pub fn with_key(mut self, key: WrappedKey) -> Self {
        self.wrapped_key = Some(key);
        self
    }
}

/// Ordered list of ACL changes carried by a set. Applied in order, all or
/// nothing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct AclDelta(pub Vec<AclChange>);

impl AclDelta {
    /// Strongest action any change in the delta can need, for ZKP intents.
    pub fn required_action(&self) -> Action {
        let touches_admin = self
            .0
            .iter()
            .any(|c| matches!(c.kind, ChangeKind::Grant(Rights::Admin | Rights::Owner)));
        if touches_admin {
            Action::ChangeAdmin
        } else {
            Action::ChangeRW
        }
    }
}

impl Canonical for AclChange {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let kind = match self.kind {
            ChangeKind::Grant(r) => r.code(),
            ChangeKind::Remove => b'-',
            ChangeKind::Rekey => b'=',
        };
        let mut w = RecordWriter::begin(out, tag::ACL_CHANGE, 3);
        w.nested(&self.identity)
            .option_bytes(self.wrapped_key.as_ref().map(|k| k.0.as_slice()))
            .u8(kind);
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::ACL_CHANGE], "acl change", 3)?;
        let identity = r.nested()?;
        let wrapped_key = r.option_bytes()?.map(|b| WrappedKey(b.to_vec()));
        let kind = match r.u8()? {
            b'-' => ChangeKind::Remove,
            b'=' => ChangeKind::Rekey,
            code => ChangeKind::Grant(Rights::from_code(code).ok_or(DecodeError::Invalid("unknown change kind"))?),
        };
        r.finish()?;
        Ok(AclChange {
            identity,
            wrapped_key,
            kind,
        })
    }
}

impl Canonical for AclDelta {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let mut w = RecordWriter::begin(out, tag::ACL_DELTA, 1);
        w.list(&self.0);
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::ACL_DELTA], "acl delta", 1)?;
        let changes = r.list()?;
        r.finish()?;
        Ok(AclDelta(changes))
    }
}

/// Signed payload of a set: the canonical delta.
pub fn set_payload(delta: &AclDelta) -> CanonicalBytes {
    delta.canonical()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Put {
        position: Position,
        data: Vec<u8>,
        auth: AuthProof,
    },
    Get {
        position: Position,
        auth: Option<AuthProof>,
    },
    Set {
        position: Position,
        delta: AclDelta,
        auth: AuthProof,
    },
    /// First stage of a ZKP-guarded put or set.
    ZkpBegin {
        position: Position,
        intent: Intent,
        commit: ZkpCommit,
    },
}

impl Request {
    pub fn position(&self) -> &Position {
        match self {
            Request::Put { position, .. }
            | Request::Get { position, .. }
            | Request::Set { position, .. }
            | Request::ZkpBegin { position, .. } => position,
        }
    }

    pub fn auth(&self) -> Option<&AuthProof> {
        match self {
            Request::Put { auth, .. } | Request::Set { auth, .. } => Some(auth),
            Request::Get { auth, .. } => auth.as_ref(),
            Request::ZkpBegin { .. } => None,
        }
    }

    /// Encoded size of the authentication material alone.
    pub fn auth_len(&self) -> usize {
        match self {
            Request::ZkpBegin { commit, .. } => AuthProof::ZkpCommit(commit.clone()).encoded_len(),
            other => other.auth().map_or(0, Canonical::encoded_len),
        }
    }
}

impl Canonical for Request {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Request::Put { position, data, auth } => {
                let mut w = RecordWriter::begin(out, tag::REQUEST_PUT, 3);
                w.nested(position).bytes(data).nested(auth);
                w.finish();
            }
            Request::Get { position, auth } => {
                let mut w = RecordWriter::begin(out, tag::REQUEST_GET, 2);
                w.nested(position).option_nested(auth.as_ref());
                w.finish();
            }
            Request::Set { position, delta, auth } => {
                let mut w = RecordWriter::begin(out, tag::REQUEST_SET, 3);
                w.nested(position).nested(delta).nested(auth);
                w.finish();
            }
            Request::ZkpBegin {
                position,
                intent,
                commit,
            } => {
                let mut w = RecordWriter::begin(out, tag::REQUEST_ZKP_BEGIN, 3);
                w.nested(position)
                    .nested(intent)
                    .nested(&AuthProof::ZkpCommit(commit.clone()));
                w.finish();
            }
        }
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let expected = "request";
        match reader.peek_tag()? {
            tag::REQUEST_PUT => {
                let mut r = reader.record(&[tag::REQUEST_PUT], expected, 3)?;
                let position = r.nested()?;
                let data = r.bytes()?.to_vec();
                let auth = r.nested()?;
                r.finish()?;
                Ok(Request::Put { position, data, auth })
            }
            tag::REQUEST_GET => {
                let mut r = reader.record(&[tag::REQUEST_GET], expected, 2)?;
                let position = r.nested()?;
                let auth = r.option_nested()?;
                r.finish()?;
                Ok(Request::Get { position, auth })
            }
            tag::REQUEST_SET => {
                let mut r = reader.record(&[tag::REQUEST_SET], expected, 3)?;
                let position = r.nested()?;
                let delta = r.nested()?;
                let auth = r.nested()?;
                r.finish()?;
                Ok(Request::Set { position, delta, auth })
            }
            _ => {
                let mut r = reader.record(&[tag::REQUEST_ZKP_BEGIN], expected, 3)?;
                let position = r.nested()?;
                let intent = r.nested()?;
                let AuthProof::ZkpCommit(commit) = r.nested()? else {
                    return Err(DecodeError::Invalid("begin must carry commitments"));
                };
                r.finish()?;
                Ok(Request::ZkpBegin {
                    position,
                    intent,
                    commit,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeerDecision {
    Stored,
    AclUpdated,
    ValueReturned(Box<DhtValue>),
    RejectedUnauthenticated,
    RejectedUnauthorized,
    RejectedNoSuchEntry,
    ChallengeIssued { session_id: u64, challenge: ChallengeBits },
}

impl PeerDecision {
    pub fn is_success(&self) -> bool {
        matches!(
            self,
            PeerDecision::Stored | PeerDecision::AclUpdated | PeerDecision::ValueReturned(_)
        )
    }

    pub fn value(&self) -> Option<&DhtValue> {
        match self {
            PeerDecision::ValueReturned(v) => Some(v),
            _ => None,
        }
    }

    fn code(&self) -> u8 {
        match self {
            PeerDecision::Stored => 0,
            PeerDecision::AclUpdated => 1,
            PeerDecision::ValueReturned(_) => 2,
            PeerDecision::RejectedUnauthenticated => 3,
            PeerDecision::RejectedUnauthorized => 4,
            PeerDecision::RejectedNoSuchEntry => 5,
            PeerDecision::ChallengeIssued { .. } => 6,
        }
    }
}

impl Canonical for PeerDecision {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let mut w = RecordWriter::begin(out, tag::DECISION, 2);
        w.u8(self.code());
        match self {
            PeerDecision::ValueReturned(v) => {
                w.nested(v.as_ref());
            }
            PeerDecision::ChallengeIssued { session_id, challenge } => {
                let mut body = session_id.to_be_bytes().to_vec();
                body.extend_from_slice(&(challenge.len() as u32).to_be_bytes());
                body.extend_from_slice(&challenge.to_packed());
                w.bytes(&body);
            }
            _ => {
                w.bytes(&[]);
            }
        }
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::DECISION], "peer decision", 2)?;
        let decision = match r.u8()? {
            0 | 1 | 3 | 4 | 5 if !r.bytes()?.is_empty() => return Err(DecodeError::Invalid("unexpected body")),
            0 => PeerDecision::Stored,
            1 => PeerDecision::AclUpdated,
            2 => PeerDecision::ValueReturned(Box::new(r.nested()?)),
            3 => PeerDecision::RejectedUnauthenticated,
            4 => PeerDecision::RejectedUnauthorized,
            5 => PeerDecision::RejectedNoSuchEntry,
            6 => {
                let body = r.bytes()?;
                if body.len() < 12 {
                    return Err(DecodeError::UnexpectedEnd);
                }
                let session_id = u64::from_be_bytes(body[..8].try_into().expect("8 bytes"));
                let n = u32::from_be_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
                let challenge = ChallengeBits::from_packed(n, &body[12..])?;
                PeerDecision::ChallengeIssued { session_id, challenge }
            }
            _ => return Err(DecodeError::Invalid("unknown decision code")),
        };
        r.finish()?;
        Ok(decision)
    }
}

/// One stored record plus verification state for each identity in its ACL.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StoredEntry {
    pub position: Position,
    pub value: DhtValue,
    pub auth_states: BTreeMap<AuthIdentity, AuthState>,
}

impl StoredEntry {
    fn created(position: Position, value: DhtValue) -> Self {
        let auth_states = value
            .acl()
            .iter()
            .map(|item| (item.identity.clone(), AuthState::initial(&item.identity)))
            .collect();
        StoredEntry {
            position,
            value,
            auth_states,
        }
    }

    /// Raw bytes this peer keeps for one ACL item and its verification state.
    pub fn item_storage_len(&self, identity: &AuthIdentity) -> Option<usize> {
        let item = self.value.item(identity)?;
        let state = self.auth_states.get(identity).map_or(0, AuthState::raw_storage_len);
        Some(item.raw_storage_len() + state)
    }
}

impl Canonical for StoredEntry {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let mut w = RecordWriter::begin(out, tag::STORED_ENTRY, 4);
        w.nested(&self.position)
            .nested(&self.value)
            .list(self.auth_states.keys())
            .list(self.auth_states.values());
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::STORED_ENTRY], "stored entry", 4)?;
        let position = r.nested()?;
        let value = r.nested()?;
        let ids: Vec<AuthIdentity> = r.list()?;
        let states: Vec<AuthState> = r.list()?;
        r.finish()?;
        if ids.len() != states.len() {
            return Err(DecodeError::Invalid("state count differs from identity count"));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DecodeError::NotSorted);
        }
        Ok(StoredEntry {
            position,
            value,
            auth_states: ids.into_iter().zip(states).collect(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PeerStore {
    entries: BTreeMap<Position, StoredEntry>,
}

impl PeerStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, position: &Position) -> Option<&StoredEntry> {
        self.entries.get(position)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &StoredEntry> {
        self.entries.values()
    }

    /// Direct mutable access, used by simulated adversaries.
    pub fn entry_mut(&mut self, position: &Position) -> Option<&mut StoredEntry> {
        self.entries.get_mut(position)
    }

    /// Canonical bytes of the complete store, for snapshot comparison.
    pub fn snapshot(&self) -> CanonicalBytes {
        self.canonical()
    }
}

impl Canonical for PeerStore {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let mut w = RecordWriter::begin(out, tag::PEER_STORE, 1);
        w.list(self.entries.values());
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::PEER_STORE], "peer store", 1)?;
        let list: Vec<StoredEntry> = r.list()?;
        r.finish()?;
        if list.windows(2).any(|w| w[0].position >= w[1].position) {
            return Err(DecodeError::NotSorted);
        }
        Ok(PeerStore {
            entries: list.into_iter().map(|e| (e.position, e)).collect(),
        })
    }
}

/// Per-request context supplied by the network.
#[derive(Debug, Clone, Copy)]
pub struct PeerEnv<'a> {
    pub group: Option<&'a ZkGroup>,
    pub now: SimTime,
    /// Parallel identification rounds demanded of ZKP provers.
    pub zkp_rounds: usize,
}

/// Result of authenticating a request against an existing entry: who the
/// requester is, their rights, and the verification state to commit if the
/// request goes through.
struct Authenticated {
    identity: AuthIdentity,
    rights: Rights,
    next_state: AuthState,
}

pub struct ResponsiblePeer {
    store: PeerStore,
    ops: OpCounter,
    rng: ChaCha20Rng,
}

impl ResponsiblePeer {
    pub fn new(seed: [u8; 32]) -> Self {
        ResponsiblePeer {
            store: PeerStore::new(),
            ops: OpCounter::new(),
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    pub fn store(&self) -> &PeerStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut PeerStore {
        &mut self.store
    }

    pub fn ops(&self) -> &OpCounter {
        &self.ops
    }

    pub fn handle(&mut self, env: &PeerEnv<'_>, request: &Request) -> PeerDecision {
        match request {
            Request::Put { position, data, auth } => self.handle_put(env, position, data, auth),
            Request::Get { position, auth } => self.handle_get(position, auth.as_ref()),
            Request::Set { position, delta, auth } => self.handle_set(env, position, delta, auth),
            Request::ZkpBegin {
                position,
                intent,
                commit,
            } => self.handle_zkp_begin(env, position, *intent, commit),
        }
    }

    pub fn handle_put(&mut self, env: &PeerEnv<'_>, position: &Position, data: &[u8], auth: &AuthProof) -> PeerDecision {
        let Some(entry) = self.store.entries.get(position) else {
            let Some((identity, state)) = first_access_identity(auth) else {
                return PeerDecision::RejectedUnauthenticated;
            };
            let mut entry = StoredEntry::created(*position, DhtValue::new(identity.clone(), data.to_vec()));
            entry.auth_states.insert(identity, state);
            self.store.entries.insert(*position, entry);
            return PeerDecision::Stored;
        };
        let payload = put_payload(data);
        let auth = match authenticate(&mut self.ops, env, entry, auth, &payload, IntentOp::Put) {
            Ok(a) => a,
            Err(decision) => {
                self.clear_pending_on_failure(position, auth);
                return decision;
            }
        };
        if !rights_allows(auth.rights, Action::WriteData) {
            self.clear_pending_on_failure(position, &AuthProof::Enroll(auth.identity));
            return PeerDecision::RejectedUnauthorized;
        }
        let entry = self.store.entries.get_mut(position).expect("entry checked above");
        entry.value.set_data(data.to_vec());
        entry.auth_states.insert(auth.identity, auth.next_state);
        PeerDecision::Stored
    }

    pub fn handle_get(&mut self, position: &Position, auth: Option<&AuthProof>) -> PeerDecision {
        let Some(entry) = self.store.entries.get(position) else {
            return PeerDecision::RejectedNoSuchEntry;
        };
        let Some(AuthProof::Pk(proof)) = auth else {
            return PeerDecision::ValueReturned(Box::new(entry.value.clone()));
        };
        let identity = AuthIdentity::Pk {
            public_key: proof.public_key,
        };
        let (Some(item), Some(AuthState::Pk(window))) = (entry.value.item(&identity), entry.auth_states.get(&identity))
        else {
            return PeerDecision::ValueReturned(Box::new(entry.value.clone()));
        };
        let payload = get_payload(position);
        match pk_verify(&proof.public_key, window, proof, &payload, &mut self.ops) {
            Ok(next) => {
                let mut narrowed = vec![item.clone()];
                if item.rights != Rights::Owner {
                    narrowed.push(entry.value.owner().clone());
                }
                let value = DhtValue::from_parts(narrowed, entry.value.data().to_vec()).expect("subset of a valid ACL");
                let entry = self.store.entries.get_mut(position).expect("entry checked above");
                entry.auth_states.insert(identity, AuthState::Pk(next));
                PeerDecision::ValueReturned(Box::new(value))
            }
            Err(_) => PeerDecision::ValueReturned(Box::new(entry.value.clone())),
        }
    }

    pub fn handle_set(
        &mut self,
        env: &PeerEnv<'_>,
        position: &Position,
        delta: &AclDelta,
        auth: &AuthProof,
    ) -> PeerDecision {
        let Some(entry) = self.store.entries.get(position) else {
            let Some((identity, state)) = first_access_identity(auth) else {
                return PeerDecision::RejectedUnauthenticated;
            };
            let base = DhtValue::new(identity.clone(), Vec::new());
            let Ok(value) = apply_delta(&base, Rights::Owner, delta) else {
                return PeerDecision::RejectedUnauthorized;
            };
            let mut entry = StoredEntry::created(*position, value);
            entry.auth_states.insert(identity, state);
            self.store.entries.insert(*position, entry);
            return PeerDecision::AclUpdated;
        };
        let payload = set_payload(delta);
        let auth = match authenticate(&mut self.ops, env, entry, auth, &payload, IntentOp::Set) {
            Ok(a) => a,
            Err(decision) => {
                self.clear_pending_on_failure(position, auth);
                return decision;
            }
        };
        let value = match apply_delta(&entry.value, auth.rights, delta) {
            Ok(value) => value,
            Err(Forbidden) => {
                self.clear_pending_on_failure(position, &AuthProof::Enroll(auth.identity));
                return PeerDecision::RejectedUnauthorized;
            }
        };
        let entry = self.store.entries.get_mut(position).expect("entry checked above");
        let mut states = BTreeMap::new();
        for item in value.acl() {
            let state = if item.identity == auth.identity {
                auth.next_state.clone()
            } else {
                entry
                    .auth_states
                    .remove(&item.identity)
                    .unwrap_or_else(|| AuthState::initial(&item.identity))
            };
            states.insert(item.identity.clone(), state);
        }
        entry.value = value;
        entry.auth_states = states;
        PeerDecision::AclUpdated
    }

    pub fn handle_zkp_begin(
        &mut self,
        env: &PeerEnv<'_>,
        position: &Position,
        intent: Intent,
        commit: &ZkpCommit,
    ) -> PeerDecision {
        let Some(entry) = self.store.entries.get_mut(position) else {
            return PeerDecision::RejectedNoSuchEntry;
        };
        let identity = AuthIdentity::Zkp { v: commit.v.clone() };
        // Unknown identities and insufficient rights are refused before any
        // challenge is spent.
        let Some(rights) = entry.value.rights_of(&identity) else {
            return PeerDecision::RejectedUnauthenticated;
        };
        if commit.commitments.len() != env.zkp_rounds || env.zkp_rounds == 0 {
            return PeerDecision::RejectedUnauthenticated;
        }
        if !rights_allows(rights, intent.action) {
            return PeerDecision::RejectedUnauthorized;
        }
        let session_id = self.rng.gen::<u64>();
        let challenge = ChallengeBits::random(&mut self.rng, env.zkp_rounds);
        let pending = PendingChallenge {
            session_id,
            challenge: challenge.clone(),
            commitments: commit.commitments.clone(),
            intent,
            deadline: env.now.plus_millis(ZKP_SESSION_TIMEOUT_MS),
        };
        entry.auth_states.insert(identity, AuthState::Zkp { pending: Some(pending) });
        PeerDecision::ChallengeIssued { session_id, challenge }
    }

    /// A ZKP session is consumed by its stage-three message whatever the
    /// outcome, so the stored state returns to its pre-challenge form.
    fn clear_pending_on_failure(&mut self, position: &Position, auth: &AuthProof) {
        let identity = match auth {
            AuthProof::ZkpResponse(ZkpResponse { v, .. }) => AuthIdentity::Zkp { v: v.clone() },
            AuthProof::Enroll(id @ AuthIdentity::Zkp { .. }) => id.clone(),
            _ => return,
        };
        if let Some(entry) = self.store.entries.get_mut(position) {
            if let Some(state @ AuthState::Zkp { .. }) = entry.auth_states.get_mut(&identity) {
                *state = AuthState::Zkp { pending: None };
            }
        }
    }
}

/// Identity pinned by a first access. PK requests may arrive signed; the
/// signature is not checked since there is nothing to check it against.
fn first_access_identity(auth: &AuthProof) -> Option<(AuthIdentity, AuthState)> {
    match auth {
        AuthProof::Enroll(identity) => Some((identity.clone(), AuthState::initial(identity))),
        AuthProof::Pk(proof) => {
            let identity = AuthIdentity::Pk {
                public_key: proof.public_key,
            };
            let AuthState::Pk(mut window) = AuthState::initial(&identity) else {
                unreachable!()
            };
            window.accept(proof.ctr);
            Some((identity, AuthState::Pk(window)))
        }
        _ => None,
    }
}

fn authenticate(
    ops: &mut OpCounter,
    env: &PeerEnv<'_>,
    entry: &StoredEntry,
    auth: &AuthProof,
    payload: &CanonicalBytes,
    op: IntentOp,
) -> Result<Authenticated, PeerDecision> {
    let unauthenticated = |_: AuthFailure| PeerDecision::RejectedUnauthenticated;
    match auth {
        AuthProof::Pk(proof) => {
            let identity = AuthIdentity::Pk {
                public_key: proof.public_key,
            };
            let rights = entry.value.rights_of(&identity).ok_or(PeerDecision::RejectedUnauthenticated)?;
            let Some(AuthState::Pk(window)) = entry.auth_states.get(&identity) else {
                return Err(PeerDecision::RejectedUnauthenticated);
            };
            let next = pk_verify(&proof.public_key, window, proof, payload, ops).map_err(unauthenticated)?;
            Ok(Authenticated {
                identity,
                rights,
                next_state: AuthState::Pk(next),
            })
        }
        AuthProof::Oth(proof) => {
            // The proof does not name its identity; try the owner first, then
            // each other OTH item until one stored hash matches.
            let owner = entry.value.owner();
            let others = entry.value.acl().iter().filter(|i| i.identity != owner.identity);
            for item in std::iter::once(owner).chain(others) {
                let Some(AuthState::Oth { current_hash, salt }) = entry.auth_states.get(&item.identity) else {
                    continue;
                };
                if let Ok(next_state) = oth_verify(current_hash, salt, proof, ops) {
                    return Ok(Authenticated {
                        identity: item.identity.clone(),
                        rights: item.rights,
                        next_state,
                    });
                }
            }
            Err(PeerDecision::RejectedUnauthenticated)
        }
        AuthProof::ZkpResponse(response) => {
            let group = env.group.ok_or(PeerDecision::RejectedUnauthenticated)?;
            let identity = AuthIdentity::Zkp { v: response.v.clone() };
            let rights = entry.value.rights_of(&identity).ok_or(PeerDecision::RejectedUnauthenticated)?;
            let Some(AuthState::Zkp { pending: Some(pending) }) = entry.auth_states.get(&identity) else {
                return Err(PeerDecision::RejectedUnauthenticated);
            };
            if pending.session_id != response.session_id || pending.intent.op != op || env.now > pending.deadline {
                return Err(PeerDecision::RejectedUnauthenticated);
            }
            if !zkp_check(
                group,
                &response.v,
                &pending.commitments,
                &pending.challenge,
                &response.responses,
                ops,
            ) {
                return Err(PeerDecision::RejectedUnauthenticated);
            }
            Ok(Authenticated {
                identity,
                rights,
                next_state: AuthState::Zkp { pending: None },
            })
        }
        // Enrollment is only meaningful on empty entries; stage-one
        // commitments travel in their own request.
        AuthProof::Enroll(_) | AuthProof::ZkpCommit(_) => Err(PeerDecision::RejectedUnauthenticated),
    }
}

/// A delta change the requester may not make.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Forbidden;

/// Applies `delta` on behalf of a requester holding `held`, or fails on the
/// first change the requester may not make.
pub fn apply_delta(value: &DhtValue, held: Rights, delta: &AclDelta) -> Result<DhtValue, Forbidden> {
    let owner = value.owner().identity.clone();
    let mut acl: BTreeMap<AuthIdentity, AclItem> =
        value.acl().iter().map(|i| (i.identity.clone(), i.clone())).collect();
    for change in &delta.0 {
        let current = acl.get(&change.identity).map(|i| i.rights);
        let needed = match change.kind {
            ChangeKind::Grant(Rights::Owner) => return Err(Forbidden),
            _ if change.identity == owner && change.kind != ChangeKind::Rekey => return Err(Forbidden),
            ChangeKind::Grant(Rights::Admin) => Action::ChangeAdmin,
            ChangeKind::Grant(_) | ChangeKind::Remove if current == Some(Rights::Admin) => Action::ChangeAdmin,
            ChangeKind::Rekey if current.is_none() => return Err(Forbidden),
            _ => Action::ChangeRW,
        };
        if !rights_allows(held, needed) {
            return Err(Forbidden);
        }
        match change.kind {
            ChangeKind::Grant(rights) => {
                let previous_key = acl.get(&change.identity).and_then(|i| i.wrapped_key.clone());
                let item = AclItem {
                    identity: change.identity.clone(),
                    wrapped_key: change.wrapped_key.clone().or(previous_key),
                    rights,
                };
                acl.insert(change.identity.clone(), item);
            }
            ChangeKind::Remove => {
                acl.remove(&change.identity);
            }
            ChangeKind::Rekey => {
                let item = acl.get_mut(&change.identity).expect("checked above");
                item.wrapped_key = change.wrapped_key.clone();
            }
        }
    }
    DhtValue::from_parts(acl.into_values().collect(), value.data().to_vec()).map_err(|_| Forbidden)
}
