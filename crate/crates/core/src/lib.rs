//! k-resilient access control for distributed hash tables.
//!
//! Every index is stored at `2k+1` hash-derived positions. Responsible peers
//! enforce write and ACL changes against per-user authenticators (signed
//! counters, zero-knowledge identification or one-time hashes); reads are
//! open and protected by encryption. Clients accept a value only when more
//! than `k` replicas agree on it.

pub mod auth;
pub mod client;
pub mod crypto;
pub mod encoding;
pub mod peer;
pub mod scenario;
pub mod simnet;
pub mod trials;
pub mod types;

pub use auth::{AuthIdentity, AuthProof, AuthState, Mechanism};
pub use client::{majority_vote, ClientError, ClientSession, Delegation, Grantee, VoteResult};
pub use crypto::{OpClass, OpCounter};
pub use encoding::{Canonical, CanonicalBytes};
pub use peer::{AclChange, AclDelta, ChangeKind, PeerDecision, PeerStore, Request};
pub use simnet::{Behavior, NetConfig, Network, TrafficLedger};
pub use types::{derive_positions, rights_allows, Action, AclItem, DhtValue, Index, Position, Rights};
