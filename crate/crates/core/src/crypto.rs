//! Cryptographic primitives behind narrow contracts, plus operation counting.
//!
//! Every primitive that costs something in the overhead model takes an
//! [`OpCounter`] and bumps exactly one class per invocation (signing and
//! verifying also hash their input and bump [`OpClass::Hash`]).

use std::fmt;
use std::ops::{Index as OpsIndex, Sub};

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce};
use curve25519_dalek::constants::X25519_BASEPOINT;
use curve25519_dalek::edwards::CompressedEdwardsY;
use curve25519_dalek::montgomery::MontgomeryPoint;
use curve25519_dalek::scalar::Scalar;
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hmac::{Hmac, Mac};
use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SECRET_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const DATA_KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const AEAD_TAG_LEN: usize = 16;
/// Ephemeral point ‖ AEAD(data key).
pub const WRAPPED_KEY_LEN: usize = 32 + DATA_KEY_LEN + AEAD_TAG_LEN;
/// Minimum modulus size for the zero-knowledge group.
pub const MIN_MODULUS_BITS: u64 = 665;
/// Bits per prime factor of a generated modulus; two top bits set gives a 672-bit product.
pub const PRIME_BITS: u64 = 336;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("invalid public key")]
    InvalidPublicKey,
    #[error("ciphertext failed authentication")]
    Decryption,
    #[error("malformed ciphertext")]
    Malformed,
    #[error("modulus must be odd and composite")]
    BadModulus,
}

/// 256-bit hash or MAC output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}…", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Operation classes of the computational overhead model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpClass {
    /// Asymmetric operation with a public key (verify, wrap).
    PublicKeyOp,
    /// Asymmetric operation with a secret key (sign, unwrap).
    SecretKeyOp,
    /// Symmetric encryption or decryption.
    Symmetric,
    /// Hash or MAC evaluation.
    Hash,
    /// Modular multiplication or squaring.
    Modular,
    /// Key generation.
    KeyGen,
}

impl OpClass {
    pub const ALL: [OpClass; 6] = [
        OpClass::KeyGen,
        OpClass::Symmetric,
        OpClass::Hash,
        OpClass::Modular,
        OpClass::PublicKeyOp,
        OpClass::SecretKeyOp,
    ];

    /// Short symbol used in reports.
    pub fn symbol(self) -> &'static str {
        match self {
            OpClass::PublicKeyOp => "AO_pk",
            OpClass::SecretKeyOp => "AO_sk",
            OpClass::Symmetric => "SO",
            OpClass::Hash => "HO",
            OpClass::Modular => "MO",
            OpClass::KeyGen => "KG",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Per-class operation counts. Monotone until [`OpCounter::reset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct OpCounter {
    counts: [u64; 6],
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bump(&mut self, class: OpClass) {
        self.counts[class.slot()] += 1;
    }

    pub fn get(&self, class: OpClass) -> u64 {
        self.counts[class.slot()]
    }

    pub fn reset(&mut self) {
        self.counts = [0; 6];
    }

    pub fn is_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

impl OpsIndex<OpClass> for OpCounter {
    type Output = u64;

    fn index(&self, class: OpClass) -> &u64 {
        &self.counts[class.slot()]
    }
}

impl Sub for OpCounter {
    type Output = OpCounter;

    /// Delta between a later snapshot and an earlier one.
    fn sub(self, earlier: OpCounter) -> OpCounter {
        let mut counts = [0; 6];
        for (slot, c) in counts.iter_mut().enumerate() {
            *c = self.counts[slot] - earlier.counts[slot];
        }
        OpCounter { counts }
    }
}

impl std::ops::AddAssign for OpCounter {
    fn add_assign(&mut self, other: OpCounter) {
        for (slot, c) in self.counts.iter_mut().enumerate() {
            *c += other.counts[slot];
        }
    }
}

impl fmt::Display for OpCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for class in OpClass::ALL {
            let n = self.get(class);
            if n == 0 {
                continue;
            }
            if !first {
                f.write_str(" + ")?;
            }
            write!(f, "{n} {}", class.symbol())?;
            first = false;
        }
        if first {
            f.write_str("0")?;
        }
        Ok(())
    }
}

/// Runs `op` and charges one operation of `class`.
pub fn counted<T>(counter: &mut OpCounter, class: OpClass, op: impl FnOnce() -> T) -> T {
    counter.bump(class);
    op()
}

/// SHA-256 over the concatenation of `parts`. Not counted.
pub fn sha256(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

/// HMAC-SHA-256 keyed with `key` over the concatenation of `parts`. Not counted.
pub fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> Digest {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    for part in parts {
        mac.update(part);
    }
    Digest(mac.finalize().into_bytes().into())
}

pub fn hash(counter: &mut OpCounter, parts: &[&[u8]]) -> Digest {
    counted(counter, OpClass::Hash, || sha256(parts))
}

pub fn mac(counter: &mut OpCounter, key: &[u8], parts: &[&[u8]]) -> Digest {
    counted(counter, OpClass::Hash, || hmac_sha256(key, parts))
}

/// Draws 32 seed bytes from a deterministic generator.
pub fn seed_bytes(rng: &mut impl RngCore) -> [u8; 32] {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    seed
}

/// Deterministic generator derived from a labelled byte string.
pub fn derived_rng(label: &[u8], material: &[&[u8]]) -> ChaCha20Rng {
    let mut parts: Vec<&[u8]> = vec![label];
    parts.extend_from_slice(material);
    ChaCha20Rng::from_seed(sha256(&parts).0)
}

// ---------------------------------------------------------------------------
// Signatures and key wrapping (Ed25519 / X25519-based envelope)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", Digest(self.0).to_hex().get(..12).unwrap_or(""))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({:02x}{:02x}…)", self.0[0], self.0[1])
    }
}

/// A signing keypair. The same key also receives wrapped data keys via its
/// Montgomery form, so one public key serves both purposes.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public_key()).finish()
    }
}

impl KeyPair {
    /// Deterministic keygen from a 32-byte seed. Counts one KG.
    pub fn generate(counter: &mut OpCounter, seed: [u8; SECRET_KEY_LEN]) -> Self {
        counted(counter, OpClass::KeyGen, || KeyPair {
            signing: SigningKey::from_bytes(&seed),
        })
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn secret_bytes(&self) -> [u8; SECRET_KEY_LEN] {
        self.signing.to_bytes()
    }

    /// Bytes a user keeps for this keypair: secret seed plus public key.
    pub const STORED_LEN: usize = SECRET_KEY_LEN + PUBLIC_KEY_LEN;

    /// Signs `message` (hashed first). Counts HO + AO_sk.
    pub fn sign(&self, counter: &mut OpCounter, message: &[u8]) -> Signature {
        let digest = hash(counter, &[message]);
        counted(counter, OpClass::SecretKeyOp, || {
            Signature(self.signing.sign(digest.as_bytes()).to_bytes())
        })
    }
}

/// Verifies a signature produced by [`KeyPair::sign`]. Counts HO + AO_pk.
pub fn verify(counter: &mut OpCounter, public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let digest = hash(counter, &[message]);
    counted(counter, OpClass::PublicKeyOp, || {
        let Ok(key) = VerifyingKey::from_bytes(&public_key.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        key.verify(digest.as_bytes(), &sig).is_ok()
    })
}

/// Symmetric data-encryption key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataKey(pub [u8; DATA_KEY_LEN]);

impl fmt::Debug for DataKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DataKey(..)")
    }
}

impl DataKey {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut key = [0u8; DATA_KEY_LEN];
        rng.fill_bytes(&mut key);
        DataKey(key)
    }
}

/// A data key encrypted to one recipient's public key.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WrappedKey(pub Vec<u8>);

impl fmt::Debug for WrappedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WrappedKey({} bytes)", self.0.len())
    }
}

fn wrap_kek(shared: &MontgomeryPoint, ephemeral: &MontgomeryPoint, recipient: &MontgomeryPoint) -> Aes128Gcm {
    let okm = sha256(&[b"krac/key-wrap/v1", shared.as_bytes(), ephemeral.as_bytes(), recipient.as_bytes()]);
    Aes128Gcm::new_from_slice(&okm.0[..DATA_KEY_LEN]).expect("16-byte key")
}

fn montgomery_of(public_key: &PublicKey) -> Result<MontgomeryPoint, CryptoError> {
    CompressedEdwardsY(public_key.0)
        .decompress()
        .map(|p| p.to_montgomery())
        .ok_or(CryptoError::InvalidPublicKey)
}

/// Encrypts `data_key` to `recipient`. Counts one AO_pk.
///
/// The key-encryption key is fresh per call (new ephemeral), so a fixed zero
/// nonce is safe.
pub fn wrap_key(
    counter: &mut OpCounter,
    recipient: &PublicKey,
    data_key: &DataKey,
    ephemeral_seed: [u8; 32],
) -> Result<WrappedKey, CryptoError> {
    counted(counter, OpClass::PublicKeyOp, || {
        let recipient = montgomery_of(recipient)?;
        let ephemeral = Scalar::from_bytes_mod_order(ephemeral_seed);
        let ephemeral_pub = X25519_BASEPOINT * ephemeral;
        let shared = recipient * ephemeral;
        let kek = wrap_kek(&shared, &ephemeral_pub, &recipient);
        let ct = kek
            .encrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), data_key.0.as_slice())
            .map_err(|_| CryptoError::Malformed)?;
        let mut out = Vec::with_capacity(WRAPPED_KEY_LEN);
        out.extend_from_slice(ephemeral_pub.as_bytes());
        out.extend_from_slice(&ct);
        Ok(WrappedKey(out))
    })
}

/// Recovers a data key wrapped to `keypair`. Counts one AO_sk.
pub fn unwrap_key(counter: &mut OpCounter, keypair: &KeyPair, wrapped: &WrappedKey) -> Result<DataKey, CryptoError> {
    counted(counter, OpClass::SecretKeyOp, || {
        if wrapped.0.len() != WRAPPED_KEY_LEN {
            return Err(CryptoError::Malformed);
        }
        let (eph, ct) = wrapped.0.split_at(32);
        let ephemeral_pub = MontgomeryPoint(eph.try_into().unwrap());
        let own = keypair.signing.verifying_key().to_montgomery();
        let shared = ephemeral_pub * keypair.signing.to_scalar();
        let kek = wrap_kek(&shared, &ephemeral_pub, &own);
        let key = kek
            .decrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), ct)
            .map_err(|_| CryptoError::Decryption)?;
        Ok(DataKey(key.try_into().map_err(|_| CryptoError::Malformed)?))
    })
}

/// AES-128-GCM with the nonce prepended to the ciphertext. Counts one SO.
pub fn seal(counter: &mut OpCounter, key: &DataKey, nonce: [u8; NONCE_LEN], plaintext: &[u8]) -> Vec<u8> {
    counted(counter, OpClass::Symmetric, || {
        let cipher = Aes128Gcm::new_from_slice(&key.0).expect("16-byte key");
        let ct = cipher
            .encrypt(Nonce::from_slice(&nonce), plaintext)
            .expect("AES-GCM encryption cannot fail for in-memory buffers");
        let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&ct);
        out
    })
}

/// Inverse of [`seal`]. Counts one SO.
pub fn open(counter: &mut OpCounter, key: &DataKey, sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
    counted(counter, OpClass::Symmetric, || {
        if sealed.len() < NONCE_LEN + AEAD_TAG_LEN {
            return Err(CryptoError::Malformed);
        }
        let (nonce, ct) = sealed.split_at(NONCE_LEN);
        let cipher = Aes128Gcm::new_from_slice(&key.0).expect("16-byte key");
        cipher
            .decrypt(Nonce::from_slice(nonce), ct)
            .map_err(|_| CryptoError::Decryption)
    })
}

// ---------------------------------------------------------------------------
// Feige-Fiat-Shamir group
// ---------------------------------------------------------------------------

/// Multiplicative group modulo a composite `N = p·q`. The factors are not kept.
#[derive(Clone, PartialEq, Eq)]
pub struct ZkGroup {
    modulus: BigUint,
    width: usize,
}

impl fmt::Debug for ZkGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ZkGroup({} bits)", self.modulus.bits())
    }
}

impl ZkGroup {
    /// Uses a given modulus; must be odd and composite (toy moduli allowed).
    pub fn from_modulus(modulus: BigUint) -> Result<Self, CryptoError> {
        let mut rng = derived_rng(b"krac/zk/check", &[&modulus.to_bytes_be()]);
        if modulus.is_even() || modulus < BigUint::from(9u32) || is_probable_prime(&modulus, &mut rng) {
            return Err(CryptoError::BadModulus);
        }
        let width = modulus.bits().div_ceil(8) as usize;
        Ok(ZkGroup { modulus, width })
    }

    /// Generates `N = p·q` from two fresh 336-bit primes and discards them.
    pub fn generate(seed: [u8; 32]) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let p = random_prime(&mut rng, PRIME_BITS);
        let q = loop {
            let q = random_prime(&mut rng, PRIME_BITS);
            if q != p {
                break q;
            }
        };
        let modulus = p * q;
        debug_assert!(modulus.bits() >= MIN_MODULUS_BITS);
        let width = modulus.bits().div_ceil(8) as usize;
        ZkGroup { modulus, width }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    /// Fixed byte width of one residue.
    pub fn residue_len(&self) -> usize {
        self.width
    }

    pub fn contains(&self, x: &BigUint) -> bool {
        x < &self.modulus
    }

    /// `x² mod N`. Counts one MO.
    pub fn square(&self, counter: &mut OpCounter, x: &BigUint) -> BigUint {
        counted(counter, OpClass::Modular, || (x * x) % &self.modulus)
    }

    /// `a·b mod N`. Counts one MO.
    pub fn mul(&self, counter: &mut OpCounter, a: &BigUint, b: &BigUint) -> BigUint {
        counted(counter, OpClass::Modular, || (a * b) % &self.modulus)
    }

    /// Modular inverse. Counts one MO.
    pub fn inverse(&self, counter: &mut OpCounter, x: &BigUint) -> Option<BigUint> {
        counted(counter, OpClass::Modular, || x.modinv(&self.modulus))
    }

    /// Uniform unit in `[2, N-1]`, coprime to `N`.
    pub fn random_unit(&self, rng: &mut impl RngCore) -> BigUint {
        let two = BigUint::from(2u32);
        loop {
            let x = rng.gen_biguint_range(&two, &self.modulus);
            if x.gcd(&self.modulus).is_one() {
                return x;
            }
        }
    }

    /// Big-endian, left-padded to [`ZkGroup::residue_len`].
    pub fn residue_bytes(&self, x: &BigUint) -> Vec<u8> {
        let raw = x.to_bytes_be();
        let mut out = vec![0u8; self.width.saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }
}

/// `x² mod N`, counting one MO.
pub fn zk_square(group: &ZkGroup, counter: &mut OpCounter, x: &BigUint) -> BigUint {
    group.square(counter, x)
}

const SMALL_PRIMES: [u32; 30] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103,
    107, 109, 113, 127,
];

fn random_prime(rng: &mut ChaCha20Rng, bits: u64) -> BigUint {
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, rng) {
            return candidate;
        }
    }
}

/// Trial division then 32 Miller-Rabin rounds with random bases.
pub fn is_probable_prime(n: &BigUint, rng: &mut impl RngCore) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if n == &two {
        return true;
    }
    if n.is_even() {
        return false;
    }
    for p in SMALL_PRIMES {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let shift = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> shift;
    'witness: for _ in 0..32 {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..shift {
            x = (&x * &x) % n;
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
