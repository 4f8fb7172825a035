//! Completeness, exact counting and round trips of every mechanism over
//! many random credentials.

use krac_core::auth::{
    oth_enroll, oth_make_proof, oth_verify, pk_enroll, pk_make_proof, pk_verify, put_payload, zkp_check, zkp_commit,
    zkp_enroll, zkp_respond, AuthState, ChallengeBits, ReplayWindow, Salt,
};
use krac_core::crypto::{
    open, seal, seed_bytes, unwrap_key, verify, wrap_key, DataKey, Digest, KeyPair, ZkGroup, NONCE_LEN,
};
use krac_core::{AuthIdentity, Index, OpClass, OpCounter};
use num_bigint::{BigUint, RandBigInt};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const RUNS: usize = 1_000;

type Counted<'a> = Box<dyn Fn(&mut OpCounter) + 'a>;

fn rng(label: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(label)
}

fn group() -> ZkGroup {
    ZkGroup::generate([42; 32])
}

#[test]
fn honest_credentials_always_verify() {
    let mut rng = rng(1);
    let g = group();
    for i in 0..RUNS {
        let data = format!("payload {i}").into_bytes();
        let payload = put_payload(&data);

        let (mut creds, identity) = pk_enroll(&mut OpCounter::new(), seed_bytes(&mut rng));
        let AuthIdentity::Pk { public_key } = identity else { unreachable!() };
        let proof = pk_make_proof(&mut creds, &mut OpCounter::new(), &payload).unwrap();
        assert!(pk_verify(&public_key, &ReplayWindow::new(), &proof, &payload, &mut OpCounter::new()).is_ok());

        let (zc, zid) = zkp_enroll(&g, &mut rng, &mut OpCounter::new());
        let AuthIdentity::Zkp { v } = zid else { unreachable!() };
        let (commit, round) = zkp_commit(&g, &zc, 20, &mut rng, &mut OpCounter::new());
        let challenge = ChallengeBits::random(&mut rng, 20);
        let responses = zkp_respond(&g, &zc, &round, &challenge, &mut OpCounter::new()).unwrap();
        assert!(zkp_check(&g, &v, &commit.commitments, &challenge, &responses, &mut OpCounter::new()));

        let master = Digest(seed_bytes(&mut rng));
        let salt = Salt::random(&mut rng);
        let index = Index::new(data).unwrap();
        let k = rng.gen_range(0..4);
        let (mut oc, ids) = oth_enroll(&master, &index, salt, k, &mut OpCounter::new());
        for (slot, id) in ids.iter().enumerate() {
            let AuthIdentity::Oth { hash, salt } = id else { unreachable!() };
            let proof = oth_make_proof(&mut oc, slot as u32 + 1, &mut OpCounter::new()).unwrap();
            let next = oth_verify(hash, salt, &proof, &mut OpCounter::new()).unwrap();
            let AuthState::Oth { current_hash, .. } = next else { unreachable!() };
            let again = oth_make_proof(&mut oc, slot as u32 + 1, &mut OpCounter::new()).unwrap();
            assert!(oth_verify(&current_hash, salt, &again, &mut OpCounter::new()).is_ok());
            assert!(oth_verify(&current_hash, salt, &proof, &mut OpCounter::new()).is_err());
        }
    }
}

/// Counter delta of `op` run once, and of it run twice from the same start.
fn once_and_twice(op: impl Fn(&mut OpCounter)) -> (OpCounter, OpCounter) {
    let mut one = OpCounter::new();
    op(&mut one);
    let mut two = OpCounter::new();
    op(&mut two);
    op(&mut two);
    (one, two)
}

fn doubled(one: &OpCounter, two: &OpCounter) -> bool {
    OpClass::ALL.iter().all(|&c| two.get(c) == 2 * one.get(c)) && !one.is_zero()
}

#[test]
fn counting_doubles_with_repetition() {
    let g = group();
    let payload = put_payload(b"count me");
    let (creds, identity) = pk_enroll(&mut OpCounter::new(), [3; 32]);
    let AuthIdentity::Pk { public_key } = identity else { unreachable!() };
    let proof = pk_make_proof(&mut creds.clone(), &mut OpCounter::new(), &payload).unwrap();
    let (zc, zid) = zkp_enroll(&g, &mut rng(2), &mut OpCounter::new());
    let AuthIdentity::Zkp { v } = zid else { unreachable!() };
    let challenge = ChallengeBits::random(&mut rng(3), 16);
    let index = Index::try_from("counted").unwrap();
    let master = Digest([9; 32]);
    let salt = Salt([1; 16]);

    let cases: Vec<(&str, Counted)> = vec![
        ("pk enroll", Box::new(|c| drop(pk_enroll(c, [3; 32])))),
        ("pk prove", Box::new(|c| drop(pk_make_proof(&mut creds.clone(), c, &payload)))),
        (
            "pk verify",
            Box::new(|c| assert!(pk_verify(&public_key, &ReplayWindow::new(), &proof, &payload, c).is_ok())),
        ),
        ("zkp enroll", Box::new(|c| drop(zkp_enroll(&g, &mut rng(2), c)))),
        (
            "zkp prove and check",
            Box::new(|c| {
                let (commit, round) = zkp_commit(&g, &zc, 16, &mut rng(4), c);
                let responses = zkp_respond(&g, &zc, &round, &challenge, c).unwrap();
                assert!(zkp_check(&g, &v, &commit.commitments, &challenge, &responses, c));
            }),
        ),
        ("oth enroll", Box::new(|c| drop(oth_enroll(&master, &index, salt, 3, c)))),
        (
            "oth prove and verify",
            Box::new(|c| {
                let (mut oc, ids) = oth_enroll(&master, &index, salt, 0, &mut OpCounter::new());
                let AuthIdentity::Oth { hash, salt } = &ids[0] else { unreachable!() };
                let proof = oth_make_proof(&mut oc, 1, c).unwrap();
                oth_verify(hash, salt, &proof, c).unwrap();
            }),
        ),
    ];
    for (name, op) in cases {
        let (one, two) = once_and_twice(op);
        assert!(doubled(&one, &two), "{name}: once {one}, twice {two}");
    }
}

#[test]
fn zkp_verifier_mean_is_one_and_a_half_n() {
    let g = group();
    let n = 20;
    let mut rng = rng(5);
    let (zc, zid) = zkp_enroll(&g, &mut rng, &mut OpCounter::new());
    let AuthIdentity::Zkp { v } = zid else { unreachable!() };
    let mut total = 0;
    for _ in 0..RUNS {
        let (commit, round) = zkp_commit(&g, &zc, n, &mut rng, &mut OpCounter::new());
        let challenge = ChallengeBits::random(&mut rng, n);
        let responses = zkp_respond(&g, &zc, &round, &challenge, &mut OpCounter::new()).unwrap();
        let mut verifier = OpCounter::new();
        assert!(zkp_check(&g, &v, &commit.commitments, &challenge, &responses, &mut verifier));
        assert_eq!(verifier.get(OpClass::Modular), (n + challenge.ones()) as u64);
        total += verifier.get(OpClass::Modular);
    }
    let mean = total as f64 / RUNS as f64;
    let n = n as f64;
    assert!((1.45 * n..=1.55 * n).contains(&mean), "mean {mean}");
}

#[test]
fn primitive_round_trips() {
    let mut rng = rng(6);
    let g = group();
    for _ in 0..RUNS {
        let mut c = OpCounter::new();
        let kp = KeyPair::generate(&mut c, seed_bytes(&mut rng));
        let mut msg = vec![0u8; rng.gen_range(0..64)];
        rng.fill_bytes(&mut msg);
        let sig = kp.sign(&mut c, &msg);
        assert!(verify(&mut c, &kp.public_key(), &msg, &sig));
        msg.push(1);
        assert!(!verify(&mut c, &kp.public_key(), &msg, &sig));

        let key = DataKey::random(&mut rng);
        let wrapped = wrap_key(&mut c, &kp.public_key(), &key, seed_bytes(&mut rng)).unwrap();
        assert_eq!(unwrap_key(&mut c, &kp, &wrapped).unwrap(), key);

        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let sealed = seal(&mut c, &key, nonce, &msg);
        assert_eq!(open(&mut c, &key, &sealed).unwrap(), msg);

        let x = rng.gen_biguint_below(g.modulus());
        let mut expected = BigUint::default();
        for (i, bit) in (0..x.bits()).map(|i| (i, x.bit(i))) {
            if bit {
                expected += &x << i;
            }
        }
        assert_eq!(g.square(&mut c, &x), expected % g.modulus());
    }
}
