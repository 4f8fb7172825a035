//! Deterministic in-process network: peers on a hash ring, direct delivery
//! to the responsible peer with traffic accounting, and endpoint adversaries.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::auth::{AuthIdentity, AuthProof, ZkpResponse};
use crate::crypto::{sha256, Digest, OpCounter, PublicKey, ZkGroup};
use crate::encoding::Canonical;
use crate::peer::{PeerDecision, PeerEnv, Request, ResponsiblePeer};
use crate::types::{AclItem, DhtValue, Position, Rights, SimTime};

pub type PeerNo = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Messages per request/reply exchange. Must be even: a denied request
    /// costs half.
    pub y: u32,
    pub zkp_rounds: usize,
    pub exchange_latency_ms: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            y: 2,
            zkp_rounds: 20,
            exchange_latency_ms: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("a network needs at least one peer")]
    NoPeers,
    #[error("routing cost y must be even and positive, got {0}")]
    OddRoutingCost(u32),
    #[error("peer {0} does not exist")]
    NoSuchPeer(PeerNo),
}

/// What a subverted endpoint does with the requests it receives.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Behavior {
    /// Discard the request; no reply.
    Deny,
    /// Answer gets with these data bytes; writes are processed honestly.
    ForgeValue(Vec<u8>),
    /// Answer gets with a doctored ACL: corrupted wrapped keys and the
    /// attacker in place of the owner.
    TamperAcl,
    /// Behave honestly while recording every request for later replay.
    ReplayCaptured,
    /// Enroll this identity instead of the requester on first access.
    ClaimOwnership(AuthIdentity),
}

impl Behavior {
    pub fn name(&self) -> &'static str {
        match self {
            Behavior::Deny => "deny",
            Behavior::ForgeValue(_) => "forge",
            Behavior::TamperAcl => "tamper-acl",
            Behavior::ReplayCaptured => "replay",
            Behavior::ClaimOwnership(_) => "claim-ownership",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identity the adversary uses when it needs one.
pub fn attacker_identity() -> AuthIdentity {
    AuthIdentity::Pk {
        public_key: PublicKey(sha256(&[b"krac/attacker"]).0),
    }
}

/// Traffic attributed to one logical operation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct OpTraffic {
    pub label: String,
    pub messages: u64,
    pub bytes: u64,
    /// Encoded authentication material carried by requests.
    pub auth_bytes: u64,
    pub exchanges: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TrafficLedger {
    ops: Vec<OpTraffic>,
    /// Message size in bytes → number of messages of that size.
    histogram: BTreeMap<usize, u64>,
}

impl TrafficLedger {
    pub fn ops(&self) -> &[OpTraffic] {
        &self.ops
    }

    pub fn last(&self) -> Option<&OpTraffic> {
        self.ops.last()
    }

    pub fn histogram(&self) -> &BTreeMap<usize, u64> {
        &self.histogram
    }

    pub fn total_messages(&self) -> u64 {
        self.ops.iter().map(|o| o.messages).sum()
    }

    /// Sum over all operations with this label.
    pub fn by_label(&self, label: &str) -> OpTraffic {
        let mut total = OpTraffic {
            label: label.to_string(),
            ..OpTraffic::default()
        };
        for op in self.ops.iter().filter(|o| o.label == label) {
            total.messages += op.messages;
            total.bytes += op.bytes;
            total.auth_bytes += op.auth_bytes;
            total.exchanges += op.exchanges;
        }
        total
    }

    fn current(&mut self) -> &mut OpTraffic {
        if self.ops.is_empty() {
            self.begin("unattributed");
        }
        self.ops.last_mut().expect("non-empty")
    }

    fn begin(&mut self, label: &str) {
        self.ops.push(OpTraffic {
            label: label.to_string(),
            ..OpTraffic::default()
        });
    }

    fn record(&mut self, half_y: u64, request_len: usize, auth_len: usize, reply_len: Option<usize>) {
        *self.histogram.entry(request_len).or_default() += 1;
        if let Some(len) = reply_len {
            *self.histogram.entry(len).or_default() += 1;
        }
        let op = self.current();
        op.exchanges += 1;
        op.messages += if reply_len.is_some() { 2 * half_y } else { half_y };
        op.bytes += (request_len + reply_len.unwrap_or(0)) as u64;
        op.auth_bytes += auth_len as u64;
    }
}

/// A request observed by a subverted peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub by: PeerNo,
    pub request: Request,
}

pub struct Network {
    seed: u64,
    config: NetConfig,
    ids: Vec<Digest>,
    /// Sorted `(id, peer_no)`.
    ring: Vec<(Digest, PeerNo)>,
    peers: Vec<ResponsiblePeer>,
    adversary: BTreeMap<PeerNo, Behavior>,
    captured: Vec<Captured>,
    ledger: TrafficLedger,
    clock: SimTime,
    rng: ChaCha20Rng,
    group: OnceLock<Arc<ZkGroup>>,
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("seed", &self.seed)
            .field("peers", &self.peers.len())
            .field("subverted", &self.adversary.len())
            .finish()
    }
}

pub fn peer_id(seed: u64, peer_no: u32) -> Digest {
    sha256(&[&seed.to_be_bytes(), &peer_no.to_be_bytes()])
}

impl Network {
    pub fn spawn(num_peers: usize, seed: u64) -> Result<Self, NetError> {
        Self::spawn_with(num_peers, seed, NetConfig::default())
    }

    pub fn spawn_with(num_peers: usize, seed: u64, config: NetConfig) -> Result<Self, NetError> {
        if num_peers == 0 {
            return Err(NetError::NoPeers);
        }
        if config.y == 0 || !config.y.is_multiple_of(2) {
            return Err(NetError::OddRoutingCost(config.y));
        }
        let ids: Vec<Digest> = (0..num_peers as u32).map(|i| peer_id(seed, i)).collect();
        let mut ring: Vec<(Digest, PeerNo)> = ids.iter().copied().zip(0..).collect();
        ring.sort();
        let peers = ids
            .iter()
            .map(|id| ResponsiblePeer::new(sha256(&[b"krac/peer-rng", id.as_bytes()]).0))
            .collect();
        Ok(Network {
            seed,
            config,
            ids,
            ring,
            peers,
            adversary: BTreeMap::new(),
            captured: Vec::new(),
            ledger: TrafficLedger::default(),
            clock: SimTime(0),
            rng: ChaCha20Rng::from_seed(sha256(&[b"krac/net-rng", &seed.to_be_bytes()]).0),
            group: OnceLock::new(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    pub fn ids(&self) -> &[Digest] {
        &self.ids
    }

    pub fn ring(&self) -> &[(Digest, PeerNo)] {
        &self.ring
    }

    /// Published ZKP modulus, generated from the network seed on first use.
    pub fn group(&self) -> Arc<ZkGroup> {
        self.group
            .get_or_init(|| Arc::new(ZkGroup::generate(sha256(&[b"krac/zk-group", &self.seed.to_be_bytes()]).0)))
            .clone()
    }

    /// Installs an already generated modulus, if none is published yet.
    pub fn publish_group(&self, group: Arc<ZkGroup>) {
        let _ = self.group.set(group);
    }

    /// Clockwise successor of the position's digest.
    pub fn responsible(&self, position: &Position) -> PeerNo {
        let at = self.ring.partition_point(|(id, _)| id < &position.digest);
        self.ring[at % self.ring.len()].1
    }

    pub fn peer(&self, peer: PeerNo) -> &ResponsiblePeer {
        &self.peers[peer]
    }

    pub fn subvert(&mut self, peer: PeerNo, behavior: Behavior) -> Result<(), NetError> {
        if peer >= self.peers.len() {
            return Err(NetError::NoSuchPeer(peer));
        }
        self.adversary.insert(peer, behavior);
        Ok(())
    }

    pub fn behavior(&self, peer: PeerNo) -> Option<&Behavior> {
        self.adversary.get(&peer)
    }

    pub fn subverted(&self) -> &BTreeMap<PeerNo, Behavior> {
        &self.adversary
    }

    pub fn captured(&self) -> &[Captured] {
        &self.captured
    }

    pub fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    /// Starts attributing traffic to a new logical operation.
    pub fn begin_op(&mut self, label: &str) {
        self.ledger.begin(label);
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn advance_clock(&mut self, ms: u64) {
        self.clock = self.clock.plus_millis(ms);
    }

    /// Sum of every peer's operation counter.
    pub fn peer_ops(&self) -> OpCounter {
        let mut total = OpCounter::new();
        for p in &self.peers {
            total += *p.ops();
        }
        total
    }

    /// Canonical snapshot of every peer store, in peer order.
    pub fn store_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.peers {
            out.extend_from_slice(p.store().snapshot().as_bytes());
        }
        out
    }

    pub fn store_digest(&self) -> Digest {
        sha256(&[&self.store_bytes()])
    }

    /// Delivers one request through `api_peer` to the position's responsible
    /// peer. API peers forward honestly; only the endpoint may deviate.
    pub fn deliver(&mut self, api_peer: PeerNo, request: &Request) -> Option<PeerDecision> {
        debug_assert!(api_peer < self.peers.len());
        let to = self.responsible(request.position());
        let reply = self.process(to, request);
        let request_len = request.encoded_len();
        let reply_len = reply.as_ref().map(Canonical::encoded_len);
        self.ledger
            .record(u64::from(self.config.y / 2), request_len, request.auth_len(), reply_len);
        self.clock = self.clock.plus_millis(self.config.exchange_latency_ms);
        reply
    }

    /// Delivers a fan-out in a seeded interleaving; replies come back in
    /// request order.
    pub fn deliver_all(&mut self, batch: &[(PeerNo, Request)]) -> Vec<Option<PeerDecision>> {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.shuffle(&mut self.rng);
        let mut replies = vec![None; batch.len()];
        for i in order {
            replies[i] = self.deliver(batch[i].0, &batch[i].1);
        }
        replies
    }

    fn process(&mut self, to: PeerNo, request: &Request) -> Option<PeerDecision> {
        let needs_group =
            matches!(request, Request::ZkpBegin { .. }) || matches!(request.auth(), Some(AuthProof::ZkpResponse(_)));
        let group = if needs_group { Some(self.group()) } else { self.group.get().cloned() };
        let env = PeerEnv {
            group: group.as_deref(),
            now: self.clock,
            zkp_rounds: self.config.zkp_rounds,
        };
        let behavior = self.adversary.get(&to).cloned();
        let peer = &mut self.peers[to];
        match behavior {
            None => Some(peer.handle(&env, request)),
            Some(Behavior::Deny) => None,
            Some(Behavior::ReplayCaptured) => {
                self.captured.push(Captured {
                    by: to,
                    request: request.clone(),
                });
                Some(peer.handle(&env, request))
            }
            Some(Behavior::ForgeValue(forged)) => {
                let reply = peer.handle(&env, request);
                match request {
                    Request::Get { .. } => {
                        let value = match reply {
                            PeerDecision::ValueReturned(v) => {
                                let (acl, _) = v.into_parts();
                                DhtValue::from_parts(acl, forged).expect("ACL unchanged")
                            }
                            _ => DhtValue::new(attacker_identity(), forged),
                        };
                        Some(PeerDecision::ValueReturned(Box::new(value)))
                    }
                    _ => Some(reply),
                }
            }
            Some(Behavior::TamperAcl) => {
                let reply = peer.handle(&env, request);
                match reply {
                    PeerDecision::ValueReturned(v) => Some(PeerDecision::ValueReturned(Box::new(tamper_acl(&v)))),
                    other => Some(other),
                }
            }
            Some(Behavior::ClaimOwnership(identity)) => {
                let empty = peer.store().get(request.position()).is_none();
                let substituted = match request {
                    Request::Put { position, data, .. } if empty => Request::Put {
                        position: *position,
                        data: data.clone(),
                        auth: AuthProof::Enroll(identity),
                    },
                    Request::Set { position, delta, .. } if empty => Request::Set {
                        position: *position,
                        delta: delta.clone(),
                        auth: AuthProof::Enroll(identity),
                    },
                    _ => request.clone(),
                };
                Some(peer.handle(&env, &substituted))
            }
        }
    }

    /// Re-sends a captured request, retargeted at `target`, from a subverted
    /// peer. ZKP responses are replayed against a fresh session opened with
    /// the captured commitments.
    pub fn replay_attack(&mut self, captured: &Captured, target: Position) -> Option<PeerDecision> {
        self.begin_op("replay");
        let retarget = |request: &Request, session: Option<u64>| -> Request {
            match request.clone() {
                Request::Put { data, auth, .. } => Request::Put {
                    position: target,
                    data,
                    auth: with_session(auth, session),
                },
                Request::Get { auth, .. } => Request::Get { position: target, auth },
                Request::Set { delta, auth, .. } => Request::Set {
                    position: target,
                    delta,
                    auth: with_session(auth, session),
                },
                Request::ZkpBegin { intent, commit, .. } => Request::ZkpBegin {
                    position: target,
                    intent,
                    commit,
                },
            }
        };
        let mut session = None;
        if let Some(AuthProof::ZkpResponse(response)) = captured.request.auth() {
            // commitments from the session these responses answered
            let upto = self.captured.iter().rposition(|c| c == captured).unwrap_or(self.captured.len());
            let begin = self.captured[..upto].iter().rev().find(|c| match &c.request {
                Request::ZkpBegin { position, commit, .. } => {
                    commit.v == response.v && position == captured.request.position()
                }
                _ => false,
            });
            if let Some(begin) = begin.cloned() {
                match self.deliver(captured.by, &retarget(&begin.request, None)) {
                    Some(PeerDecision::ChallengeIssued { session_id, .. }) => session = Some(session_id),
                    other => return other,
                }
            }
        }
        let request = retarget(&captured.request, session);
        self.deliver(captured.by, &request)
    }
}

fn with_session(auth: AuthProof, session: Option<u64>) -> AuthProof {
    match (auth, session) {
        (AuthProof::ZkpResponse(r), Some(session_id)) => AuthProof::ZkpResponse(ZkpResponse { session_id, ..r }),
        (other, _) => other,
    }
}

/// Doctored copy of a value: every wrapped key has a flipped byte and the
/// owner item names the attacker.
pub fn tamper_acl(value: &DhtValue) -> DhtValue {
    let attacker = attacker_identity();
    let mut acl: Vec<AclItem> = value
        .acl()
        .iter()
        .filter(|item| item.identity != attacker)
        .map(|item| {
            let mut item = item.clone();
            if let Some(key) = item.wrapped_key.as_mut() {
                if let Some(last) = key.0.last_mut() {
                    *last ^= 0x01;
                }
            }
            if item.rights == Rights::Owner {
                item.identity = attacker.clone();
            }
            item
        })
        .collect();
    acl.dedup_by(|a, b| a.identity == b.identity);
    DhtValue::from_parts(acl, value.data().to_vec()).expect("one owner, distinct identities")
}
