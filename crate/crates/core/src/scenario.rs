//! Seeded adversarial scenarios over a simulated network.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::auth::Mechanism;
use crate::client::{ClientError, ClientSession, Delegation};
use crate::crypto::derived_rng;
use crate::peer::PeerDecision;
use crate::simnet::{attacker_identity, Behavior, NetConfig, Network, PeerNo};
use crate::types::{derive_positions, Index, Rights};

pub const FORGED: &[u8] = b"forged by the adversary";

/// Behavior names accepted on the command line and in scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BehaviorKind {
    Deny,
    ForgeValue,
    TamperAcl,
    ReplayCaptured,
    ClaimOwnership,
}

impl BehaviorKind {
    pub const RESILIENCE: [BehaviorKind; 4] = [
        BehaviorKind::Deny,
        BehaviorKind::ForgeValue,
        BehaviorKind::ReplayCaptured,
        BehaviorKind::TamperAcl,
    ];

    /// The concrete behavior; forging adversaries all agree on [`FORGED`].
    pub fn instantiate(self) -> Behavior {
        match self {
            BehaviorKind::Deny => Behavior::Deny,
            BehaviorKind::ForgeValue => Behavior::ForgeValue(forged_envelope()),
            BehaviorKind::TamperAcl => Behavior::TamperAcl,
            BehaviorKind::ReplayCaptured => Behavior::ReplayCaptured,
            BehaviorKind::ClaimOwnership => Behavior::ClaimOwnership(attacker_identity()),
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.instantiate().name())
    }
}

impl FromStr for BehaviorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "deny" => Ok(BehaviorKind::Deny),
            "forge" | "forgevalue" | "forge-value" => Ok(BehaviorKind::ForgeValue),
            "tamper" | "tamperacl" | "tamper-acl" => Ok(BehaviorKind::TamperAcl),
            "replay" | "replaycaptured" | "replay-captured" => Ok(BehaviorKind::ReplayCaptured),
            "claim" | "claimownership" | "claim-ownership" => Ok(BehaviorKind::ClaimOwnership),
            other => Err(format!("unknown behavior {other:?}")),
        }
    }
}

/// Plain data envelope around [`FORGED`], so a forged majority reads back
/// as that text.
pub fn forged_envelope() -> Vec<u8> {
    let mut v = vec![0x00];
    v.extend_from_slice(FORGED);
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioParams {
    pub mechanism: Mechanism,
    pub k: usize,
    pub peers: usize,
    /// Number of subverted peers.
    pub adversaries: usize,
    pub behaviors: Vec<BehaviorKind>,
    pub config: NetConfig,
}

impl ScenarioParams {
    pub fn resilience(mechanism: Mechanism) -> Self {
        ScenarioParams {
            mechanism,
            k: 3,
            peers: 64,
            adversaries: 3,
            behaviors: BehaviorKind::RESILIENCE.to_vec(),
            config: NetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioOutcome {
    pub seed: u64,
    /// The reader and the owner both read back the honest plaintext.
    pub honest: bool,
    pub reader_result: Result<Option<Vec<u8>>, ClientError>,
    pub owner_result: Result<Option<Vec<u8>>, ClientError>,
    pub subverted: BTreeMap<PeerNo, BehaviorKind>,
    /// Replicas of the index whose responsible peer is subverted.
    pub controlled_replicas: usize,
    pub replays: usize,
    pub replays_accepted: usize,
}

/// Picks subverted peers for `index`: responsible peers first, in seeded
/// order, never letting the adversary hold more than `max_replicas`
/// replicas; remaining picks come from the rest of the network.
pub fn place_adversaries(
    net: &Network,
    index: &Index,
    k: usize,
    count: usize,
    max_replicas: usize,
    rng: &mut impl Rng,
) -> Vec<PeerNo> {
    let mut held: BTreeMap<PeerNo, usize> = BTreeMap::new();
    for p in derive_positions(index, k) {
        *held.entry(net.responsible(&p)).or_default() += 1;
    }
    let mut responsible: Vec<PeerNo> = held.keys().copied().collect();
    responsible.shuffle(rng);
    let mut chosen = Vec::new();
    let mut replicas = 0;
    for peer in responsible {
        if chosen.len() == count {
            break;
        }
        if replicas + held[&peer] <= max_replicas {
            replicas += held[&peer];
            chosen.push(peer);
        }
    }
    let mut others: Vec<PeerNo> = (0..net.len()).filter(|p| !held.contains_key(p)).collect();
    others.shuffle(rng);
    chosen.extend(others.into_iter().take(count - chosen.len().min(count)));
    chosen.truncate(count);
    chosen
}

fn protected(results: &[Result<Option<Vec<u8>>, ClientError>], expected: &[u8]) -> bool {
    results.iter().all(|r| r.as_ref().ok().and_then(|o| o.as_deref()) == Some(expected))
}

/// Replays every captured authenticated request against every position of
/// `index`; returns (attempts, acceptances).
pub fn replay_everything(net: &mut Network, index: &Index, k: usize) -> (usize, usize) {
    let captured: Vec<_> = net
        .captured()
        .iter()
        .filter(|c| c.request.auth().is_some())
        .cloned()
        .collect();
    let targets = derive_positions(index, k);
    let mut attempts = 0;
    let mut accepted = 0;
    for c in &captured {
        for target in &targets {
            attempts += 1;
            if net.replay_attack(c, *target).as_ref().is_some_and(PeerDecision::is_success) {
                accepted += 1;
            }
        }
    }
    (attempts, accepted)
}

/// Owner publishes read-protected data and delegates read access; then
/// overwrites it while adversaries act; reader and owner then read back.
pub fn run_resilience(params: &ScenarioParams, seed: u64) -> ScenarioOutcome {
    let mut rng = derived_rng(b"krac/scenario", &[&seed.to_be_bytes()]);
    let mut net = Network::spawn_with(params.peers, seed, params.config).expect("valid network parameters");
    let index = Index::new(format!("scenario-{seed}").into_bytes()).expect("short index");
    let k = params.k;

    let adversaries = place_adversaries(&net, &index, k, params.adversaries, k, &mut rng);
    let mut subverted = BTreeMap::new();
    for &peer in &adversaries {
        let kind = *params.behaviors.choose(&mut rng).expect("behaviors non-empty");
        net.subvert(peer, kind.instantiate()).expect("peer exists");
        subverted.insert(peer, kind);
    }
    let controlled_replicas = derive_positions(&index, k)
        .iter()
        .filter(|p| subverted.contains_key(&net.responsible(p)))
        .count();

    let mut owner = ClientSession::attach(&net, seed.wrapping_mul(2) + 1, k, params.mechanism).expect("enough peers");
    let mut reader = ClientSession::attach(&net, seed.wrapping_mul(2) + 2, k, params.mechanism).expect("enough peers");
    let grantee = reader.grantee(&net, &index);

    let first = format!("first value {seed}").into_bytes();
    let second = format!("second value {seed}").into_bytes();
    let _ = owner.put(&mut net, &index, &first, true);
    let _ = owner.set(&mut net, &index, &[Delegation::grant(grantee, Rights::Read)]);
    let _ = owner.put(&mut net, &index, &second, true);
    if params.mechanism != Mechanism::Pk {
        if let Some(key) = owner.export_key(&index) {
            reader.import_key(&index, key);
        }
    }
    let (replays, replays_accepted) = replay_everything(&mut net, &index, k);

    let reader_result = reader.get(&mut net, &index);
    let owner_result = owner.get(&mut net, &index);
    let honest = protected(&[reader_result.clone(), owner_result.clone()], &second);
    ScenarioOutcome {
        seed,
        honest,
        reader_result,
        owner_result,
        subverted,
        controlled_replicas,
        replays,
        replays_accepted,
    }
}

/// `k+1` coordinated forgers on the responsible set of one index. Returns
/// whether the client read the forged value.
pub fn run_targeted_boundary(mechanism: Mechanism, k: usize, peers: usize, seed: u64) -> bool {
    let mut rng = derived_rng(b"krac/boundary", &[&seed.to_be_bytes()]);
    let mut net = Network::spawn(peers, seed).expect("valid network parameters");
    let index = Index::new(format!("boundary-{seed}").into_bytes()).expect("short index");
    let forgers = place_adversaries(&net, &index, k, k + 1, usize::MAX, &mut rng);
    for &peer in &forgers {
        net.subvert(peer, BehaviorKind::ForgeValue.instantiate()).expect("peer exists");
    }
    let mut owner = ClientSession::attach(&net, seed + 1, k, mechanism).expect("enough peers");
    let _ = owner.put(&mut net, &index, b"honest value", false);
    matches!(owner.get(&mut net, &index), Ok(Some(v)) if v == FORGED)
}

/// `k+1` coordinated forgers placed uniformly at random. Returns whether the
/// client read the forged value.
pub fn run_random_boundary(mechanism: Mechanism, k: usize, peers: usize, seed: u64) -> bool {
    let mut rng = derived_rng(b"krac/random-boundary", &[&seed.to_be_bytes()]);
    let mut net = Network::spawn(peers, seed).expect("valid network parameters");
    let index = Index::new(format!("degrade-{seed}").into_bytes()).expect("short index");
    let chosen = rand::seq::index::sample(&mut rng, peers, (k + 1).min(peers));
    for peer in chosen {
        net.subvert(peer, BehaviorKind::ForgeValue.instantiate()).expect("peer exists");
    }
    let mut owner = ClientSession::attach(&net, seed + 1, k, mechanism).expect("enough peers");
    let _ = owner.put(&mut net, &index, b"honest value", false);
    matches!(owner.get(&mut net, &index), Ok(Some(v)) if v == FORGED)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayReport {
    pub attempts: usize,
    pub accepted: usize,
}

/// One capturing peer on the first replica watches `writes` authenticated
/// puts; every captured proof is then replayed at every replica.
pub fn run_replay_resistance(mechanism: Mechanism, k: usize, writes: usize, seed: u64) -> ReplayReport {
    let mut net = Network::spawn(64, seed).expect("valid network parameters");
    let index = Index::new(format!("replay-{seed}").into_bytes()).expect("short index");
    let first = derive_positions(&index, k)[0];
    let mut owner = ClientSession::attach(&net, seed + 1, k, mechanism).expect("enough peers");
    let _ = owner.put(&mut net, &index, b"v0", false);
    net.subvert(net.responsible(&first), Behavior::ReplayCaptured).expect("peer exists");
    for i in 0..writes {
        let _ = owner.put(&mut net, &index, format!("v{}", i + 1).as_bytes(), false);
    }
    let (attempts, accepted) = replay_everything(&mut net, &index, k);
    ReplayReport { attempts, accepted }
}

/// Distinct responsible peers among the `2k+1` replicas of a fresh index.
pub fn distinct_responsible(peers: usize, k: usize, seed: u64) -> usize {
    let net = Network::spawn(peers, seed).expect("valid network parameters");
    let index = Index::new(format!("spread-{seed}").into_bytes()).expect("short index");
    derive_positions(&index, k)
        .iter()
        .map(|p| net.responsible(p))
        .collect::<BTreeSet<_>>()
        .len()
}
