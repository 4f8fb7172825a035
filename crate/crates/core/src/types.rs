//! Domain types: indexes, replica positions, the rights lattice, ACLs and stored values.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::auth::AuthIdentity;
use crate::crypto::{sha256, Digest, WrappedKey, DIGEST_LEN};
use crate::encoding::{tag, Canonical, CanonicalBytes, DecodeError, Reader, RecordWriter};

pub const MAX_INDEX_LEN: usize = 1024;
/// Separator between index bytes and replica number in position and secret derivation.
pub const REPLICA_SEPARATOR: u8 = 0x00;
/// Size of one stored position (a digest) in bytes.
pub const POSITION_LEN: usize = DIGEST_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("index must be non-empty")]
    EmptyIndex,
    #[error("index longer than {MAX_INDEX_LEN} bytes")]
    IndexTooLong,
    #[error("ACL must contain exactly one owner, found {0}")]
    OwnerCount(usize),
    #[error("ACL contains the same identity twice")]
    DuplicateIdentity,
}

/// Application-level key.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Index(Vec<u8>);

impl Index {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, TypeError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(TypeError::EmptyIndex);
        }
        if bytes.len() > MAX_INDEX_LEN {
            return Err(TypeError::IndexTooLong);
        }
        Ok(Index(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) => write!(f, "Index({s:?})"),
            Err(_) => write!(f, "Index({} bytes)", self.0.len()),
        }
    }
}

impl TryFrom<&str> for Index {
    type Error = TypeError;

    fn try_from(s: &str) -> Result<Self, TypeError> {
        Index::new(s.as_bytes())
    }
}

/// One storage location of an index: `H(index ‖ 0x00 ‖ u32_be(replica_no))`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Position {
    pub digest: Digest,
    pub replica_no: u32,
}

/// Simulated time in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub fn plus_millis(self, ms: u64) -> SimTime {
        SimTime(self.0.saturating_add(ms))
    }
}

/// Number of replicas for resilience `k`.
pub fn replica_count(k: usize) -> usize {
    2 * k + 1
}

pub fn position_digest(index: &Index, replica_no: u32) -> Digest {
    sha256(&[index.as_bytes(), &[REPLICA_SEPARATOR], &replica_no.to_be_bytes()])
}

/// The `2k+1` positions of `index`, replica numbers `1..=2k+1`.
pub fn derive_positions(index: &Index, k: usize) -> Vec<Position> {
    (1..=replica_count(k) as u32)
        .map(|replica_no| Position {
            digest: position_digest(index, replica_no),
            replica_no,
        })
        .collect()
}

/// Access rights, ordered `Owner > Admin > {Write, Read}` with Write and Read incomparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rights {
    Owner,
    Admin,
    Write,
    Read,
}

/// What a requester wants to do with an entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    ReadData,
    WriteData,
    /// Grant or revoke read and write rights.
    ChangeRW,
    /// Grant or revoke the admin right.
    ChangeAdmin,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::ReadData, Action::WriteData, Action::ChangeRW, Action::ChangeAdmin];
}

impl Rights {
    pub const ALL: [Rights; 4] = [Rights::Owner, Rights::Admin, Rights::Write, Rights::Read];

    fn rank(self) -> u8 {
        match self {
            Rights::Owner => 2,
            Rights::Admin => 1,
            Rights::Write | Rights::Read => 0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Rights::Owner => b'o',
            Rights::Admin => b'a',
            Rights::Write => b'w',
            Rights::Read => b'r',
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            b'o' => Some(Rights::Owner),
            b'a' => Some(Rights::Admin),
            b'w' => Some(Rights::Write),
            b'r' => Some(Rights::Read),
            _ => None,
        }
    }

    pub fn allows(self, action: Action) -> bool {
        rights_allows(self, action)
    }
}

impl PartialOrd for Rights {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self == other {
            return Some(Ordering::Equal);
        }
        match self.rank().cmp(&other.rank()) {
            // Write and Read share the bottom rank but are distinct.
            Ordering::Equal => None,
            ord => Some(ord),
        }
    }
}

impl fmt::Display for Rights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code() as char)
    }
}

pub fn rights_allows(held: Rights, action: Action) -> bool {
    match (held, action) {
        (Rights::Owner, _) => true,
        (Rights::Admin, Action::ChangeAdmin) => false,
        (Rights::Admin, _) => true,
        (Rights::Write, Action::WriteData) => true,
        (Rights::Read, Action::ReadData) => true,
        _ => false,
    }
}

/// One user's entry in an ACL.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AclItem {
    pub identity: AuthIdentity,
    pub wrapped_key: Option<WrappedKey>,
    pub rights: Rights,
}

impl AclItem {
    pub fn new(identity: AuthIdentity, rights: Rights) -> Self {
        AclItem {
            identity,
            wrapped_key: None,
            rights,
        }
    }

    pub fn with_key(mut self, key: WrappedKey) -> Self {
        self.wrapped_key = Some(key);
        self
    }

    /// Raw field bytes a peer keeps for this item, excluding encoding framing.
    pub fn raw_storage_len(&self) -> usize {
        self.identity.raw_len() + self.wrapped_key.as_ref().map_or(0, |k| k.0.len()) + 1
    }
}

impl Canonical for AclItem {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let mut w = RecordWriter::begin(out, tag::ACL_ITEM, 3);
        w.nested(&self.identity)
            .option_bytes(self.wrapped_key.as_ref().map(|k| k.0.as_slice()))
            .u8(self.rights.code());
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::ACL_ITEM], "acl item", 3)?;
        let identity = r.nested()?;
        let wrapped_key = r.option_bytes()?.map(|b| WrappedKey(b.to_vec()));
        let rights = Rights::from_code(r.u8()?).ok_or(DecodeError::Invalid("unknown rights code"))?;
        r.finish()?;
        Ok(AclItem {
            identity,
            wrapped_key,
            rights,
        })
    }
}

/// A stored record: ACL plus opaque data.
///
/// The ACL is kept sorted by the canonical bytes of each item's identity,
/// holds pairwise-distinct identities and exactly one owner.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DhtValue {
    acl: Vec<AclItem>,
    data: Vec<u8>,
}

fn sort_acl(acl: &mut [AclItem]) {
    acl.sort_by_cached_key(|item| item.identity.canonical());
}

impl DhtValue {
    /// Minimal value: a single owner item.
    pub fn new(owner: AuthIdentity, data: Vec<u8>) -> Self {
        DhtValue {
            acl: vec![AclItem::new(owner, Rights::Owner)],
            data,
        }
    }

    pub fn from_parts(mut acl: Vec<AclItem>, data: Vec<u8>) -> Result<Self, TypeError> {
        sort_acl(&mut acl);
        validate_acl(&acl)?;
        Ok(DhtValue { acl, data })
    }

    pub fn acl(&self) -> &[AclItem] {
        &self.acl
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<AclItem>, Vec<u8>) {
        (self.acl, self.data)
    }

    pub fn set_data(&mut self, data: Vec<u8>) {
        self.data = data;
    }

    pub fn owner(&self) -> &AclItem {
        self.acl
            .iter()
            .find(|item| item.rights == Rights::Owner)
            .expect("DhtValue always has an owner")
    }

    pub fn item(&self, identity: &AuthIdentity) -> Option<&AclItem> {
        self.acl.iter().find(|item| &item.identity == identity)
    }

    pub fn rights_of(&self, identity: &AuthIdentity) -> Option<Rights> {
        self.item(identity).map(|item| item.rights)
    }
}

fn validate_acl(acl: &[AclItem]) -> Result<(), TypeError> {
    let owners = acl.iter().filter(|i| i.rights == Rights::Owner).count();
    if owners != 1 {
        return Err(TypeError::OwnerCount(owners));
    }
    if acl.windows(2).any(|w| w[0].identity == w[1].identity) {
        return Err(TypeError::DuplicateIdentity);
    }
    Ok(())
}

impl Canonical for DhtValue {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let mut w = RecordWriter::begin(out, tag::DHT_VALUE, 2);
        w.list(&self.acl).bytes(&self.data);
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::DHT_VALUE], "dht value", 2)?;
        let acl: Vec<AclItem> = r.list()?;
        let data = r.bytes()?.to_vec();
        r.finish()?;
        let keys: Vec<CanonicalBytes> = acl.iter().map(|i| i.identity.canonical()).collect();
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DecodeError::NotSorted);
        }
        validate_acl(&acl).map_err(|_| DecodeError::Invalid("ACL invariant violated"))?;
        Ok(DhtValue { acl, data })
    }
}

impl Canonical for Index {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let mut w = RecordWriter::begin(out, tag::INDEX, 1);
        w.bytes(&self.0);
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::INDEX], "index", 1)?;
        let bytes = r.bytes()?.to_vec();
        r.finish()?;
        Index::new(bytes).map_err(|_| DecodeError::Invalid("index length"))
    }
}

impl Canonical for Position {
    fn encode_into(&self, out: &mut Vec<u8>) {
        let mut w = RecordWriter::begin(out, tag::POSITION, 2);
        w.bytes(self.digest.as_bytes()).u32(self.replica_no);
        w.finish();
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut r = reader.record(&[tag::POSITION], "position", 2)?;
        let digest = Digest(r.array()?);
        let replica_no = r.u32()?;
        r.finish()?;
        if replica_no == 0 {
            return Err(DecodeError::Invalid("replica numbers start at 1"));
        }
        Ok(Position { digest, replica_no })
    }
}

/// Data bytes wrapped as a record; the signed payload of a put.
pub struct DataPayload<'a>(pub &'a [u8]);

impl DataPayload<'_> {
    pub fn canonical(&self) -> CanonicalBytes {
        CanonicalBytes::record(tag::DATA, 1, |w| {
            w.bytes(self.0);
        })
    }
}
