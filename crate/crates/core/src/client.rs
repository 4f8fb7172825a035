//! User side: fan-out to `2k+1` positions through distinct API peers,
//! majority voting, the encrypted read path, delegation and revocation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::auth::{
    oth_enroll, oth_make_proof, pk_enroll, pk_make_proof, put_payload, zkp_commit, zkp_enroll, zkp_respond, AuthError,
    AuthIdentity, AuthProof, Intent, Mechanism, OthCredentials, PkCredentials, Salt, UserCredentials, ZkpCredentials,
    ZkpResponse,
};
use crate::crypto::{
    derived_rng, open, seal, seed_bytes, unwrap_key, wrap_key, DataKey, Digest, OpCounter, PublicKey, WrappedKey,
    DIGEST_LEN, NONCE_LEN,
};
use crate::peer::{set_payload, AclChange, AclDelta, ChangeKind, PeerDecision, Request};
use crate::simnet::{Network, PeerNo};
use crate::types::{derive_positions, replica_count, AclItem, Index, Position, Rights};

/// Leading byte of stored data.
const ENVELOPE_PLAIN: u8 = 0x00;
const ENVELOPE_SEALED: u8 = 0x01;

/// One entry per replica, in replica order; `None` when no reply arrived.
pub type Replies = Vec<Option<PeerDecision>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("need {needed} distinct API peers, have {available}")]
    NotEnoughApiPeers { needed: usize, available: usize },
    #[error("no value was returned by more than k replicas")]
    NoMajority,
    #[error("the majority value is encrypted and no usable data key is held")]
    NoReadAccess,
    #[error("stored data is not a valid envelope")]
    CorruptEnvelope,
    #[error("operation needs credentials for this index")]
    NoCredentials,
    #[error(transparent)]
    Auth(#[from] AuthError),
}

/// Outcome of a majority vote over data fields.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VoteResult {
    pub winner: Option<Vec<u8>>,
    pub tally: BTreeMap<Vec<u8>, usize>,
    pub responders: usize,
}

/// Tallies returned data fields; the winner is the value seen at least
/// `k+1` times. Absent replies count as responders only.
pub fn majority_vote(replies: &[Option<&[u8]>], k: usize) -> VoteResult {
    let mut tally: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    for data in replies.iter().flatten() {
        *tally.entry(data.to_vec()).or_default() += 1;
    }
    let winner = tally.iter().find(|(_, &count)| count > k).map(|(v, _)| v.clone());
    VoteResult {
        winner,
        tally,
        responders: replies.len(),
    }
}

/// What a data owner needs to add someone to an ACL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grantee {
    /// One identity, or one per replica for OTH.
    pub identities: Vec<AuthIdentity>,
    /// Present for PK users; lets the owner wrap the data key in-band.
    pub public_key: Option<PublicKey>,
}

impl Grantee {
    pub fn identity_for(&self, replica_no: u32) -> &AuthIdentity {
        if self.identities.len() == 1 {
            &self.identities[0]
        } else {
            &self.identities[replica_no as usize - 1]
        }
    }
}

/// One requested ACL change, expanded per replica when sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delegation {
    pub grantee: Grantee,
    pub kind: ChangeKind,
}

impl Delegation {
    pub fn grant(grantee: Grantee, rights: Rights) -> Self {
        Delegation {
            grantee,
            kind: ChangeKind::Grant(rights),
        }
    }

    pub fn remove(grantee: Grantee) -> Self {
        Delegation {
            grantee,
            kind: ChangeKind::Remove,
        }
    }

    pub fn rekey(grantee: Grantee) -> Self {
        Delegation {
            grantee,
            kind: ChangeKind::Rekey,
        }
    }
}

/// Result of a read-revocation: the put and set replies and the new key,
/// which ZKP and OTH readers receive out of band.
#[derive(Debug, Clone)]
pub struct RevokeOutcome {
    pub put: Replies,
    pub set: Replies,
    pub new_key: DataKey,
}

#[derive(Debug, Clone)]
struct IndexState {
    creds: UserCredentials,
    positions: Vec<Position>,
    /// True once this session's identity is (or should be) pinned at the
    /// responsible peers, so requests authenticate instead of enrolling.
    established: bool,
    identities: Vec<AuthIdentity>,
}

#[derive(Debug)]
pub struct ClientSession {
    seed: u64,
    k: usize,
    mechanism: Mechanism,
    api_peers: Vec<PeerNo>,
    oth_master: Digest,
    indexes: BTreeMap<Index, IndexState>,
    known_keys: BTreeMap<Index, DataKey>,
    routes: BTreeMap<Index, Vec<PeerNo>>,
    rng: ChaCha20Rng,
    ops: OpCounter,
}

/// Most recent fan-out of a get, kept for ACL inspection.
#[derive(Debug, Clone, Default)]
pub struct Fetched {
    pub replies: Replies,
    pub vote: VoteResult,
    pub absent: usize,
}

impl Fetched {
    /// Values whose data field equals the winner, in replica order.
    pub fn consistent_values(&self) -> impl Iterator<Item = &crate::types::DhtValue> {
        let winner = self.vote.winner.clone();
        self.replies
            .iter()
            .flatten()
            .filter_map(PeerDecision::value)
            .filter(move |v| Some(v.data()) == winner.as_deref())
    }

    /// ACL items reported identically by more than `k` replicas.
    pub fn majority_items(&self, k: usize) -> Vec<AclItem> {
        let mut counts: BTreeMap<Vec<u8>, (usize, AclItem)> = BTreeMap::new();
        for value in self.replies.iter().flatten().filter_map(PeerDecision::value) {
            for item in value.acl() {
                let key = crate::encoding::Canonical::canonical(&item.identity).into_vec();
                let slot = counts.entry(key).or_insert((0, item.clone()));
                slot.0 += 1;
            }
        }
        counts.into_values().filter(|(c, _)| *c > k).map(|(_, item)| item).collect()
    }
}

impl ClientSession {
    /// A session using `api_peers` as entry points; fails before any
    /// message is sent if fewer than `2k+1` distinct peers are given.
    pub fn new(seed: u64, k: usize, mechanism: Mechanism, api_peers: Vec<PeerNo>) -> Result<Self, ClientError> {
        let distinct: BTreeSet<PeerNo> = api_peers.iter().copied().collect();
        let needed = replica_count(k);
        if distinct.len() < needed {
            return Err(ClientError::NotEnoughApiPeers {
                needed,
                available: distinct.len(),
            });
        }
        let mut rng = derived_rng(b"krac/client", &[&seed.to_be_bytes()]);
        let oth_master = Digest(seed_bytes(&mut rng));
        Ok(ClientSession {
            seed,
            k,
            mechanism,
            api_peers: distinct.into_iter().collect(),
            oth_master,
            indexes: BTreeMap::new(),
            known_keys: BTreeMap::new(),
            routes: BTreeMap::new(),
            rng,
            ops: OpCounter::new(),
        })
    }

    /// A session that may use every peer of `net` as an API peer.
    pub fn attach(net: &Network, seed: u64, k: usize, mechanism: Mechanism) -> Result<Self, ClientError> {
        Self::new(seed, k, mechanism, (0..net.len()).collect())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn ops(&self) -> &OpCounter {
        &self.ops
    }

    pub fn known_key(&self, index: &Index) -> Option<&DataKey> {
        self.known_keys.get(index)
    }

    /// Out-of-band key delivery.
    pub fn import_key(&mut self, index: &Index, key: DataKey) {
        self.known_keys.insert(index.clone(), key);
    }

    pub fn export_key(&self, index: &Index) -> Option<DataKey> {
        self.known_keys.get(index).copied()
    }

    pub fn credentials(&self, index: &Index) -> Option<&UserCredentials> {
        self.indexes.get(index).map(|s| &s.creds)
    }

    /// Identities this session uses for `index`, one per replica for OTH.
    pub fn identities(&self, index: &Index) -> Option<&[AuthIdentity]> {
        self.indexes.get(index).map(|s| s.identities.as_slice())
    }

    /// Per-index bytes held: credential material plus the cached positions.
    pub fn storage_bytes(&self, index: &Index) -> Option<usize> {
        self.indexes
            .get(index)
            .map(|s| s.creds.storage_len() + s.positions.len() * DIGEST_LEN)
    }

    /// The OTH master secret, held once for all indexes.
    pub fn master_storage_bytes(&self) -> usize {
        match self.mechanism {
            Mechanism::Oth => DIGEST_LEN,
            _ => 0,
        }
    }

    /// The `2k+1` distinct API peers used for `index`, chosen once per index
    /// from the session seed.
    pub fn route(&mut self, index: &Index) -> Vec<PeerNo> {
        if let Some(route) = self.routes.get(index) {
            return route.clone();
        }
        let mut rng = derived_rng(b"krac/route", &[&self.seed.to_be_bytes(), index.as_bytes()]);
        let picks = sample(&mut rng, self.api_peers.len(), replica_count(self.k));
        let route: Vec<PeerNo> = picks.into_iter().map(|i| self.api_peers[i]).collect();
        self.routes.insert(index.clone(), route.clone());
        route
    }

    fn new_credentials(&mut self, net: &Network, index: &Index) -> IndexState {
        let positions = derive_positions(index, self.k);
        let (creds, identities) = match self.mechanism {
            Mechanism::Pk => {
                let seed = seed_bytes(&mut self.rng);
                let (creds, id) = pk_enroll(&mut self.ops, seed);
                (UserCredentials::Pk(creds), vec![id])
            }
            Mechanism::Zkp => {
                let group = net.group();
                let (creds, id) = zkp_enroll(&group, &mut self.rng, &mut self.ops);
                (UserCredentials::Zkp(creds), vec![id])
            }
            Mechanism::Oth => {
                let salt = Salt::random(&mut self.rng);
                let (creds, ids) = oth_enroll(&self.oth_master, index, salt, self.k, &mut self.ops);
                (UserCredentials::Oth(creds), ids)
            }
        };
        IndexState {
            creds,
            positions,
            established: false,
            identities,
        }
    }

    fn state(&mut self, net: &Network, index: &Index) -> &mut IndexState {
        if !self.indexes.contains_key(index) {
            let state = self.new_credentials(net, index);
            self.indexes.insert(index.clone(), state);
        }
        self.indexes.get_mut(index).expect("inserted above")
    }

    /// Creates credentials for `index` without sending anything, marking
    /// them as pinned elsewhere (by an owner's set). Returns what the owner
    /// needs to grant access.
    pub fn grantee(&mut self, net: &Network, index: &Index) -> Grantee {
        self.state(net, index).established = true;
        self.own_grantee(index).expect("state created above")
    }

    /// Writes `plaintext` to every replica. With `read_protected` the data
    /// is sealed under the index's data key, created on first use.
    pub fn put(
        &mut self,
        net: &mut Network,
        index: &Index,
        plaintext: &[u8],
        read_protected: bool,
    ) -> Result<Replies, ClientError> {
        let route = self.route(index);
        net.begin_op("put");
        let data = if read_protected {
            let key = match self.known_keys.get(index) {
                Some(key) => *key,
                None => {
                    let key = DataKey::random(&mut self.rng);
                    self.known_keys.insert(index.clone(), key);
                    key
                }
            };
            let mut nonce = [0u8; NONCE_LEN];
            self.rng.fill_bytes(&mut nonce);
            let mut envelope = vec![ENVELOPE_SEALED];
            envelope.extend_from_slice(&seal(&mut self.ops, &key, nonce, plaintext));
            envelope
        } else {
            let mut envelope = vec![ENVELOPE_PLAIN];
            envelope.extend_from_slice(plaintext);
            envelope
        };
        let payload = put_payload(&data);
        let build = |position: Position, auth: AuthProof| Request::Put {
            position,
            data: data.clone(),
            auth,
        };
        self.send_mutation(net, index, &route, Intent::put(), &[payload], build)
    }

    /// Applies `changes` to every replica's ACL. Grants and rekeys for PK
    /// grantees carry the data key wrapped once per grantee; the key is
    /// created here if the index has none yet.
    pub fn set(&mut self, net: &mut Network, index: &Index, changes: &[Delegation]) -> Result<Replies, ClientError> {
        let route = self.route(index);
        net.begin_op("set");
        let wants_key = changes
            .iter()
            .any(|c| c.kind != ChangeKind::Remove && c.grantee.public_key.is_some());
        let key = match self.known_keys.get(index) {
            Some(key) => Some(*key),
            None if wants_key => {
                let key = DataKey::random(&mut self.rng);
                self.known_keys.insert(index.clone(), key);
                Some(key)
            }
            None => None,
        };
        let mut wrapped: Vec<Option<WrappedKey>> = Vec::with_capacity(changes.len());
        for change in changes {
            let wrap = match (change.kind, change.grantee.public_key, key) {
                (ChangeKind::Remove, _, _) | (_, None, _) | (_, _, None) => None,
                (_, Some(pk), Some(key)) => {
                    let ephemeral = seed_bytes(&mut self.rng);
                    Some(wrap_key(&mut self.ops, &pk, &key, ephemeral).map_err(|_| ClientError::NoReadAccess)?)
                }
            };
            wrapped.push(wrap);
        }
        let replicas = replica_count(self.k) as u32;
        let deltas: Vec<AclDelta> = (1..=replicas)
            .map(|i| {
                AclDelta(
                    changes
                        .iter()
                        .zip(&wrapped)
                        .map(|(c, w)| AclChange {
                            identity: c.grantee.identity_for(i).clone(),
                            wrapped_key: w.clone(),
                            kind: c.kind,
                        })
                        .collect(),
                )
            })
            .collect();
        let intent = Intent::set(deltas[0].required_action());
        let payloads: Vec<_> = deltas.iter().map(set_payload).collect();
        let build = |position: Position, auth: AuthProof| Request::Set {
            position,
            delta: deltas[position.replica_no as usize - 1].clone(),
            auth,
        };
        self.send_mutation(net, index, &route, intent, &payloads, build)
    }

    /// This session's own identities for `index`, as a delegation target.
    pub fn own_grantee(&self, index: &Index) -> Option<Grantee> {
        let state = self.indexes.get(index)?;
        let public_key = match &state.creds {
            UserCredentials::Pk(c) => Some(c.keypair.public_key()),
            _ => None,
        };
        Some(Grantee {
            identities: state.identities.clone(),
            public_key,
        })
    }

    /// First put of read-protected data followed by the ACL-bearing set.
    /// PK owners also wrap the data key for themselves.
    /// The two operations are recorded separately in the ledger.
    pub fn publish(
        &mut self,
        net: &mut Network,
        index: &Index,
        plaintext: &[u8],
        readers: &[(Grantee, Rights)],
    ) -> Result<(Replies, Replies), ClientError> {
        let put = self.put(net, index, plaintext, true)?;
        let mut changes: Vec<Delegation> = readers
            .iter()
            .map(|(g, r)| Delegation::grant(g.clone(), *r))
            .collect();
        if let Some(me) = self.own_grantee(index).filter(|g| g.public_key.is_some()) {
            changes.push(Delegation::rekey(me));
        }
        let set = self.set(net, index, &changes)?;
        Ok((put, set))
    }

    /// Shared fan-out for put and set. Credentials advance before anything
    /// is sent; OTH secrets for replicas that did not accept roll back.
    fn send_mutation(
        &mut self,
        net: &mut Network,
        index: &Index,
        route: &[PeerNo],
        intent: Intent,
        payloads: &[crate::encoding::CanonicalBytes],
        build: impl Fn(Position, AuthProof) -> Request,
    ) -> Result<Replies, ClientError> {
        let group = matches!(self.mechanism, Mechanism::Zkp).then(|| net.group());
        let n = net.config().zkp_rounds;
        let state = {
            let _ = self.state(net, index);
            self.indexes.get_mut(index).expect("created")
        };
        let positions = state.positions.clone();

        if !state.established {
            state.established = true;
            let batch: Vec<(PeerNo, Request)> = positions
                .iter()
                .zip(route)
                .map(|(p, &api)| {
                    let id = if state.identities.len() == 1 {
                        state.identities[0].clone()
                    } else {
                        state.identities[p.replica_no as usize - 1].clone()
                    };
                    (api, build(*p, AuthProof::Enroll(id)))
                })
                .collect();
            return Ok(net.deliver_all(&batch));
        }

        match &mut state.creds {
            UserCredentials::Pk(creds) => {
                let proofs = sign_distinct(creds, &mut self.ops, payloads)?;
                let batch: Vec<(PeerNo, Request)> = positions
                    .iter()
                    .zip(route)
                    .map(|(p, &api)| {
                        let proof = &proofs[(p.replica_no as usize - 1) % proofs.len()];
                        (api, build(*p, AuthProof::Pk(proof.clone())))
                    })
                    .collect();
                Ok(net.deliver_all(&batch))
            }
            UserCredentials::Oth(creds) => {
                let previous = creds.current.clone();
                let mut batch = Vec::with_capacity(positions.len());
                for (p, &api) in positions.iter().zip(route) {
                    let proof = oth_make_proof(creds, p.replica_no, &mut self.ops)?;
                    batch.push((api, build(*p, AuthProof::Oth(proof))));
                }
                let replies = net.deliver_all(&batch);
                for (slot, reply) in replies.iter().enumerate() {
                    if !reply.as_ref().is_some_and(PeerDecision::is_success) {
                        creds.current[slot] = previous[slot];
                    }
                }
                Ok(replies)
            }
            UserCredentials::Zkp(creds) => {
                let group = group.expect("ZKP sessions publish a group");
                let mut rounds = Vec::with_capacity(positions.len());
                let mut begins = Vec::with_capacity(positions.len());
                for (p, &api) in positions.iter().zip(route) {
                    let (commit, round) = zkp_commit(&group, creds, n, &mut self.rng, &mut self.ops);
                    rounds.push(round);
                    begins.push((
                        api,
                        Request::ZkpBegin {
                            position: *p,
                            intent,
                            commit,
                        },
                    ));
                }
                let challenges = net.deliver_all(&begins);
                let mut replies: Replies = vec![None; positions.len()];
                let mut finals = Vec::new();
                let mut slots = Vec::new();
                for (slot, reply) in challenges.into_iter().enumerate() {
                    match reply {
                        Some(PeerDecision::ChallengeIssued { session_id, challenge }) => {
                            let responses = zkp_respond(&group, creds, &rounds[slot], &challenge, &mut self.ops)
                                .map_err(|_| ClientError::NoCredentials)?;
                            let auth = AuthProof::ZkpResponse(ZkpResponse {
                                v: creds.v.clone(),
                                session_id,
                                responses,
                            });
                            finals.push((route[slot], build(positions[slot], auth)));
                            slots.push(slot);
                        }
                        other => replies[slot] = other,
                    }
                }
                for (slot, reply) in slots.into_iter().zip(net.deliver_all(&finals)) {
                    replies[slot] = reply;
                }
                Ok(replies)
            }
        }
    }

    /// Queries all replicas and votes on the data fields.
    pub fn fetch(&mut self, net: &mut Network, index: &Index) -> Fetched {
        let route = self.route(index);
        net.begin_op("get");
        let batch: Vec<(PeerNo, Request)> = derive_positions(index, self.k)
            .into_iter()
            .zip(route)
            .map(|(position, api)| (api, Request::Get { position, auth: None }))
            .collect();
        let replies = net.deliver_all(&batch);
        let mut absent = 0;
        let mut votes: Vec<Option<&[u8]>> = Vec::new();
        for reply in &replies {
            match reply {
                Some(PeerDecision::ValueReturned(v)) => votes.push(Some(v.data())),
                Some(PeerDecision::RejectedNoSuchEntry) => {
                    absent += 1;
                    votes.push(None);
                }
                Some(_) => votes.push(None),
                None => {}
            }
        }
        let vote = majority_vote(&votes, self.k);
        Fetched { replies, vote, absent }
    }

    /// Reads the index: the majority plaintext, or `None` when the index
    /// holds nothing.
    pub fn get(&mut self, net: &mut Network, index: &Index) -> Result<Option<Vec<u8>>, ClientError> {
        let fetched = self.fetch(net, index);
        self.read(index, &fetched)
    }

    fn read(&mut self, index: &Index, fetched: &Fetched) -> Result<Option<Vec<u8>>, ClientError> {
        let Some(winner) = fetched.vote.winner.as_deref() else {
            if fetched.absent > self.k || fetched.vote.tally.is_empty() {
                return Ok(None);
            }
            return Err(ClientError::NoMajority);
        };
        match winner.split_first() {
            Some((&ENVELOPE_PLAIN, plain)) => Ok(Some(plain.to_vec())),
            Some((&ENVELOPE_SEALED, sealed)) => self.decrypt(index, fetched, sealed).map(Some),
            _ => Err(ClientError::CorruptEnvelope),
        }
    }

    fn decrypt(&mut self, index: &Index, fetched: &Fetched, sealed: &[u8]) -> Result<Vec<u8>, ClientError> {
        if let Some(IndexState {
            creds: UserCredentials::Pk(creds),
            identities,
            ..
        }) = self.indexes.get(index)
        {
            let mine = &identities[0];
            for value in fetched.consistent_values() {
                let Some(wrapped) = value.item(mine).and_then(|i| i.wrapped_key.as_ref()) else {
                    continue;
                };
                let Ok(key) = unwrap_key(&mut self.ops, &creds.keypair, wrapped) else {
                    continue;
                };
                if let Ok(plain) = open(&mut self.ops, &key, sealed) {
                    return Ok(plain);
                }
            }
        }
        if let Some(key) = self.known_keys.get(index) {
            if let Ok(plain) = open(&mut self.ops, key, sealed) {
                return Ok(plain);
            }
        }
        Err(ClientError::NoReadAccess)
    }

    /// Re-encrypts under a fresh key, then removes `revoked` and re-wraps
    /// the new key for the PK readers the majority ACL still lists.
    pub fn revoke_read(
        &mut self,
        net: &mut Network,
        index: &Index,
        revoked: &Grantee,
    ) -> Result<RevokeOutcome, ClientError> {
        let fetched = self.fetch(net, index);
        let plaintext = self.read(index, &fetched)?.ok_or(ClientError::NoReadAccess)?;
        let revoked_ids: BTreeSet<&AuthIdentity> = revoked.identities.iter().collect();
        let remaining: Vec<Grantee> = fetched
            .majority_items(self.k)
            .into_iter()
            .filter(|item| item.wrapped_key.is_some() && !revoked_ids.contains(&item.identity))
            .filter_map(|item| match item.identity {
                AuthIdentity::Pk { public_key } => Some(Grantee {
                    identities: vec![item.identity.clone()],
                    public_key: Some(public_key),
                }),
                _ => None,
            })
            .collect();

        let new_key = DataKey::random(&mut self.rng);
        self.known_keys.insert(index.clone(), new_key);
        let put = self.put(net, index, &plaintext, true)?;
        let mut changes = vec![Delegation::remove(revoked.clone())];
        changes.extend(remaining.into_iter().map(Delegation::rekey));
        let set = self.set(net, index, &changes)?;
        Ok(RevokeOutcome { put, set, new_key })
    }
}

/// One signature per distinct payload, in payload order; identical payloads
/// share a proof.
fn sign_distinct(
    creds: &mut PkCredentials,
    ops: &mut OpCounter,
    payloads: &[crate::encoding::CanonicalBytes],
) -> Result<Vec<crate::auth::PkProof>, ClientError> {
    if payloads.iter().all(|p| p == &payloads[0]) {
        return Ok(vec![pk_make_proof(creds, ops, &payloads[0])?]);
    }
    payloads
        .iter()
        .map(|p| pk_make_proof(creds, ops, p).map_err(ClientError::from))
        .collect()
}

impl ClientSession {
    /// Direct access to ZKP credentials, for tests that build proofs by hand.
    pub fn zkp_credentials(&self, index: &Index) -> Option<&ZkpCredentials> {
        match self.indexes.get(index).map(|s| &s.creds) {
            Some(UserCredentials::Zkp(c)) => Some(c),
            _ => None,
        }
    }

    pub fn oth_credentials(&self, index: &Index) -> Option<&OthCredentials> {
        match self.indexes.get(index).map(|s| &s.creds) {
            Some(UserCredentials::Oth(c)) => Some(c),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::Behavior;

    fn setup(mechanism: Mechanism, k: usize) -> (Network, ClientSession, Index) {
        let net = Network::spawn(60, 11).unwrap();
        let session = ClientSession::attach(&net, 1, k, mechanism).unwrap();
        (net, session, Index::try_from("notes").unwrap())
    }

    #[test]
    fn vote_examples() {
        let (a, b, c): (&[u8], &[u8], &[u8]) = (b"A", b"B", b"C");
        assert_eq!(majority_vote(&[Some(a), Some(a), Some(b)], 1).winner.as_deref(), Some(a));
        assert_eq!(majority_vote(&[Some(a), Some(b), Some(c)], 1).winner, None);
        let five = [Some(a), Some(b), Some(a), Some(b), Some(a)];
        assert_eq!(majority_vote(&five, 2).winner.as_deref(), Some(a));
        let none = majority_vote(&[None, None, None], 1);
        assert!(none.winner.is_none() && none.tally.is_empty());
        assert_eq!(none.responders, 3);
        assert_eq!(majority_vote(&[Some(a)], 0).winner.as_deref(), Some(a));
    }

    #[test]
    fn too_few_api_peers() {
        let err = ClientSession::new(1, 2, Mechanism::Pk, vec![0, 1, 2, 3, 3]).unwrap_err();
        assert_eq!(err, ClientError::NotEnoughApiPeers { needed: 5, available: 4 });
    }

    #[test]
    fn route_is_distinct_and_stable() {
        let (_, mut s, index) = setup(Mechanism::Pk, 3);
        let r = s.route(&index);
        assert_eq!(r.len(), 7);
        assert_eq!(r.iter().collect::<BTreeSet<_>>().len(), 7);
        assert_eq!(s.route(&index), r);
    }

    #[test]
    fn put_get_every_mechanism() {
        for mechanism in Mechanism::ALL {
            let (mut net, mut s, index) = setup(mechanism, 1);
            let replies = s.put(&mut net, &index, b"first", false).unwrap();
            assert!(replies.iter().all(|r| r == &Some(PeerDecision::Stored)), "{mechanism}");
            let replies = s.put(&mut net, &index, b"second", true).unwrap();
            assert!(replies.iter().all(|r| r == &Some(PeerDecision::Stored)), "{mechanism} {replies:?}");
            assert_eq!(s.get(&mut net, &index).unwrap().as_deref(), Some(&b"second"[..]), "{mechanism}");
        }
    }

    #[test]
    fn get_on_empty_index_is_none() {
        let (mut net, mut s, index) = setup(Mechanism::Pk, 2);
        assert_eq!(s.get(&mut net, &index).unwrap(), None);
    }

    #[test]
    fn one_denying_peer_is_tolerated() {
        let (mut net, mut s, index) = setup(Mechanism::Oth, 1);
        let target = net.responsible(&derive_positions(&index, 1)[1]);
        net.subvert(target, Behavior::Deny).unwrap();
        s.put(&mut net, &index, b"v1", false).unwrap();
        let replies = s.put(&mut net, &index, b"v2", false).unwrap();
        assert_eq!(replies.iter().filter(|r| r.is_some()).count(), 2);
        assert_eq!(s.get(&mut net, &index).unwrap().as_deref(), Some(&b"v2"[..]));
        // the rolled-back secret still matches once the peer is honest again
        net.subvert(target, Behavior::ReplayCaptured).unwrap();
        let replies = s.put(&mut net, &index, b"v3", false).unwrap();
        assert_eq!(replies[0], Some(PeerDecision::Stored));
        assert_eq!(replies[2], Some(PeerDecision::Stored));
    }

    #[test]
    fn pk_delegated_reader_decrypts() {
        let (mut net, mut owner, index) = setup(Mechanism::Pk, 1);
        let mut reader = ClientSession::attach(&net, 2, 1, Mechanism::Pk).unwrap();
        let grantee = reader.grantee(&net, &index);
        owner.publish(&mut net, &index, b"secret", &[(grantee, Rights::Read)]).unwrap();
        assert_eq!(reader.get(&mut net, &index).unwrap().as_deref(), Some(&b"secret"[..]));
        let mut stranger = ClientSession::attach(&net, 3, 1, Mechanism::Pk).unwrap();
        stranger.grantee(&net, &index);
        assert_eq!(stranger.get(&mut net, &index), Err(ClientError::NoReadAccess));
    }

    #[test]
    fn tampered_wrapped_key_falls_back_to_next_replica() {
        let (mut net, mut owner, index) = setup(Mechanism::Pk, 1);
        let mut reader = ClientSession::attach(&net, 2, 1, Mechanism::Pk).unwrap();
        let grantee = reader.grantee(&net, &index);
        owner.publish(&mut net, &index, b"secret", &[(grantee, Rights::Read)]).unwrap();
        for p in derive_positions(&index, 1).iter().take(1) {
            let peer = net.responsible(p);
            net.subvert(peer, Behavior::TamperAcl).unwrap();
        }
        assert_eq!(reader.get(&mut net, &index).unwrap().as_deref(), Some(&b"secret"[..]));
    }

    #[test]
    fn non_admin_set_is_refused() {
        let (mut net, mut owner, index) = setup(Mechanism::Pk, 1);
        let mut writer = ClientSession::attach(&net, 2, 1, Mechanism::Pk).unwrap();
        let mut third = ClientSession::attach(&net, 3, 1, Mechanism::Pk).unwrap();
        let w = writer.grantee(&net, &index);
        let t = third.grantee(&net, &index);
        owner.put(&mut net, &index, b"v", false).unwrap();
        owner.set(&mut net, &index, &[Delegation::grant(w, Rights::Write)]).unwrap();
        let replies = writer.set(&mut net, &index, &[Delegation::grant(t, Rights::Read)]).unwrap();
        let refused = replies
            .iter()
            .filter(|r| r == &&Some(PeerDecision::RejectedUnauthorized))
            .count();
        assert!(refused >= 2);
    }

    #[test]
    fn set_on_empty_index_establishes_ownership() {
        for mechanism in Mechanism::ALL {
            let (mut net, mut owner, index) = setup(mechanism, 1);
            let replies = owner.set(&mut net, &index, &[]).unwrap();
            assert!(replies.iter().all(|r| r == &Some(PeerDecision::AclUpdated)));
            let ids = owner.identities(&index).unwrap().to_vec();
            for p in derive_positions(&index, 1) {
                let entry = net.peer(net.responsible(&p)).store().get(&p).unwrap().clone();
                let expected = if ids.len() == 1 { &ids[0] } else { &ids[p.replica_no as usize - 1] };
                assert_eq!(&entry.value.owner().identity, expected);
            }
        }
    }

    #[test]
    fn revoke_read_pk() {
        let (mut net, mut owner, index) = setup(Mechanism::Pk, 1);
        let mut alice = ClientSession::attach(&net, 2, 1, Mechanism::Pk).unwrap();
        let mut bob = ClientSession::attach(&net, 3, 1, Mechanism::Pk).unwrap();
        let a = alice.grantee(&net, &index);
        let b = bob.grantee(&net, &index);
        owner
            .publish(&mut net, &index, b"secret", &[(a, Rights::Read), (b.clone(), Rights::Read)])
            .unwrap();
        assert!(bob.get(&mut net, &index).unwrap().is_some());
        owner.revoke_read(&mut net, &index, &b).unwrap();
        assert_eq!(bob.get(&mut net, &index), Err(ClientError::NoReadAccess));
        assert_eq!(alice.get(&mut net, &index).unwrap().as_deref(), Some(&b"secret"[..]));
    }

    #[test]
    fn revoke_read_out_of_band() {
        for mechanism in [Mechanism::Zkp, Mechanism::Oth] {
            let (mut net, mut owner, index) = setup(mechanism, 1);
            let mut alice = ClientSession::attach(&net, 2, 1, mechanism).unwrap();
            let mut bob = ClientSession::attach(&net, 3, 1, mechanism).unwrap();
            let a = alice.grantee(&net, &index);
            let b = bob.grantee(&net, &index);
            owner
                .publish(&mut net, &index, b"secret", &[(a, Rights::Read), (b.clone(), Rights::Read)])
                .unwrap();
            let key = owner.export_key(&index).unwrap();
            alice.import_key(&index, key);
            bob.import_key(&index, key);
            assert!(bob.get(&mut net, &index).unwrap().is_some());
            let outcome = owner.revoke_read(&mut net, &index, &b).unwrap();
            alice.import_key(&index, outcome.new_key);
            assert_eq!(bob.get(&mut net, &index), Err(ClientError::NoReadAccess), "{mechanism}");
            assert_eq!(alice.get(&mut net, &index).unwrap().as_deref(), Some(&b"secret"[..]));
        }
    }

    #[test]
    fn read_protected_bytes_hide_plaintext() {
        let (mut net, mut owner, index) = setup(Mechanism::Pk, 1);
        let plaintext = b"a fairly distinctive plaintext string";
        owner.put(&mut net, &index, plaintext, true).unwrap();
        for p in derive_positions(&index, 1) {
            let stored = net.peer(net.responsible(&p)).store().snapshot().into_vec();
            assert!(!stored.windows(plaintext.len()).any(|w| w == plaintext));
        }
    }
}
