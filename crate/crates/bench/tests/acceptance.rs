//! One PASS/FAIL line per acceptance criterion; exits non-zero on any FAIL.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use krac_bench::experiment::storage_sweep;
use krac_bench::formulas::{FormulaSet, Profile, Scheme};
use krac_bench::report::{Format, OverheadReport};
use krac_bench::script::run_experiment;
use krac_bench::Params;
use krac_core::auth::{zkp_check, zkp_commit, zkp_enroll, zkp_respond, ChallengeBits, CheatingProver};
use krac_core::crypto::{derived_rng, ZkGroup};
use krac_core::scenario::{
    run_random_boundary, run_replay_resistance, run_resilience, run_targeted_boundary, ScenarioParams,
};
use krac_core::trials::run_trials;
use krac_core::{
    rights_allows, Action, AuthIdentity, ClientError, ClientSession, Delegation, Index, Mechanism, NetConfig, Network,
    OpClass, OpCounter, Rights,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, fail: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(fail())
    }
}

fn resilience() -> Outcome {
    let start = Instant::now();
    let mut summary = Vec::new();
    for mechanism in Mechanism::ALL {
        let params = ScenarioParams::resilience(mechanism);
        let outcomes = run_trials(0, 200, |seed| run_resilience(&params, seed));
        let honest = outcomes.iter().filter(|o| o.honest).count();
        if let Some(bad) = outcomes.iter().find(|o| !o.honest) {
            return Err(format!("{mechanism}: {honest}/200, first failure {bad:?}"));
        }
        let max_held = outcomes.iter().map(|o| o.controlled_replicas).max().unwrap_or(0);
        summary.push(format!("{mechanism} 200/200 (adversary held up to {max_held} replicas)"));
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(elapsed < 60.0, || format!("took {elapsed:.1} s"))?;
    Ok(format!("{} in {elapsed:.1} s", summary.join(", ")))
}

fn boundary() -> Outcome {
    let k = 3;
    let mut notes = Vec::new();
    for mechanism in Mechanism::ALL {
        let forged = (0..20).filter(|&s| run_targeted_boundary(mechanism, k, 64, s)).count();
        check(forged == 20, || format!("{mechanism}: targeted forgery won {forged}/20"))?;
        let wins = run_trials(0, 500, |s| run_random_boundary(mechanism, k, 1000, s))
            .into_iter()
            .filter(|&w| w)
            .count();
        let rate = wins as f64 / 500.0;
        check(rate < 0.05, || format!("{mechanism}: random forged-majority rate {rate}"))?;
        notes.push(format!("{mechanism} targeted 20/20, random {wins}/500"));
    }
    Ok(notes.join(", "))
}

fn message_script(mechanism: Mechanism, k: u64) -> String {
    let m = mechanism.name();
    format!(
        "SPAWN peers=128 k={k}\nUSER o {m}\nUSER r {m}\n\
         PUT o d first\nSET o d grant r read\nPUT o d second\nSET o d grant r write\nGET r d\n"
    )
}

fn messages() -> Outcome {
    let y = 2;
    let mut checked = 0;
    for k in [0u64, 1, 3, 20] {
        let params = Params { k, y, ..Params::default() };
        for mechanism in Mechanism::ALL {
            let run = run_experiment(&message_script(mechanism, k), &params, 1).map_err(|e| e.to_string())?;
            let mut seen = BTreeMap::new();
            for row in run.report.select(&[("metric", "messages")]) {
                let factor = if mechanism == Mechanism::Zkp && row.phase == "subsequent" && row.operation != "get" {
                    2
                } else {
                    1
                };
                let expected = ((2 * k + 1) * factor * y) as f64;
                let measured = row.measured.unwrap_or(f64::NAN);
                check(measured == expected && row.predicted == expected, || {
                    format!("{mechanism} k={k} {} {}: measured {measured}, predicted {}, formula {expected}", row.phase, row.operation, row.predicted)
                })?;
                *seen.entry((row.operation.clone(), row.phase.clone())).or_insert(0) += 1;
                checked += 1;
            }
            for op in ["put", "set"] {
                check(seen.contains_key(&(op.to_string(), "subsequent".to_string())), || {
                    format!("{mechanism} k={k}: no subsequent {op} row")
                })?;
            }
        }
    }
    Ok(format!("{checked} message rows exact for k in {{0,1,3,20}}"))
}

fn zkp_soundness() -> Outcome {
    let group = ZkGroup::generate([3; 32]);
    let mut rng = derived_rng(b"acceptance/zkp", &[]);
    let (creds, identity) = zkp_enroll(&group, &mut rng, &mut OpCounter::new());
    let AuthIdentity::Zkp { v } = identity else { unreachable!() };
    let v_inverse = group.inverse(&mut OpCounter::new(), &v).ok_or("v not invertible")?;

    let trials = 100_000;
    let n = 3;
    let mut accepted = 0;
    for _ in 0..trials {
        let guess = ChallengeBits::random(&mut rng, n);
        let (commit, prover) = CheatingProver::commit(&group, &v, &v_inverse, &guess, &mut rng, &mut OpCounter::new());
        let challenge = ChallengeBits::random(&mut rng, n);
        if zkp_check(&group, &v, &commit.commitments, &challenge, &prover.respond(), &mut OpCounter::new()) {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / trials as f64;
    check((rate - 0.125).abs() <= 0.01, || format!("cheater accepted at {rate}"))?;

    let honest = (0..1000)
        .filter(|_| {
            let (commit, round) = zkp_commit(&group, &creds, 20, &mut rng, &mut OpCounter::new());
            let challenge = ChallengeBits::random(&mut rng, 20);
            let responses = zkp_respond(&group, &creds, &round, &challenge, &mut OpCounter::new()).unwrap();
            zkp_check(&group, &v, &commit.commitments, &challenge, &responses, &mut OpCounter::new())
        })
        .count();
    check(honest == 1000, || format!("honest prover accepted {honest}/1000"))?;
    Ok(format!("cheater n=3 accepted at {rate:.4}; honest n=20 1000/1000"))
}

fn replay() -> Outcome {
    let mut notes = Vec::new();
    for mechanism in Mechanism::ALL {
        let (mut attempts, mut accepted) = (0, 0);
        let mut seed = 0;
        while attempts < 1000 {
            let r = run_replay_resistance(mechanism, 2, 50, seed);
            check(r.attempts > 0, || format!("{mechanism}: nothing captured"))?;
            attempts += r.attempts;
            accepted += r.accepted;
            seed += 1;
        }
        check(accepted == 0, || format!("{mechanism}: {accepted}/{attempts} replays accepted"))?;
        notes.push(format!("{mechanism} 0/{attempts}"));
    }
    Ok(notes.join(", "))
}

fn rights() -> Outcome {
    use Action::*;
    let table = [
        (Rights::Owner, [true, true, true, true]),
        (Rights::Admin, [true, true, true, false]),
        (Rights::Write, [false, true, false, false]),
        (Rights::Read, [true, false, false, false]),
    ];
    for (held, row) in table {
        for (act, want) in [ReadData, WriteData, ChangeRW, ChangeAdmin].into_iter().zip(row) {
            check(rights_allows(held, act) == want, || format!("{held} {act:?} should be {want}"))?;
        }
    }

    let k = 2;
    for mechanism in Mechanism::ALL {
        let mut net = Network::spawn(40, 6).map_err(|e| e.to_string())?;
        let index = Index::try_from("atomic").unwrap();
        let mut owner = ClientSession::attach(&net, 1, k, mechanism).unwrap();
        let mut admin = ClientSession::attach(&net, 2, k, mechanism).unwrap();
        let mut reader = ClientSession::attach(&net, 3, k, mechanism).unwrap();
        let mut other = ClientSession::attach(&net, 4, k, mechanism).unwrap();
        let a = admin.grantee(&net, &index);
        let r = reader.grantee(&net, &index);
        let o = other.grantee(&net, &index);
        owner.put(&mut net, &index, b"v", false).map_err(|e| e.to_string())?;
        owner.set(&mut net, &index, &[Delegation::grant(a, Rights::Admin)]).map_err(|e| e.to_string())?;
        let before = net.store_bytes();
        let changes = [Delegation::grant(r, Rights::Read), Delegation::grant(o, Rights::Admin)];
        let replies = admin.set(&mut net, &index, &changes).map_err(|e| e.to_string())?;
        let accepted = replies.iter().flatten().filter(|d| d.is_success()).count();
        check(accepted == 0, || format!("{mechanism}: admin granted admin at {accepted} replicas"))?;
        check(net.store_bytes() == before, || format!("{mechanism}: rejected set changed a store"))?;
    }
    Ok("16/16 truth table entries; rejected admin grant leaves every store byte-identical".into())
}

fn revocation() -> Outcome {
    let k = 2;
    let mut notes = Vec::new();
    for mechanism in Mechanism::ALL {
        let mut net = Network::spawn(48, 12).map_err(|e| e.to_string())?;
        let index = Index::try_from("revocation").unwrap();
        let mut owner = ClientSession::attach(&net, 1, k, mechanism).unwrap();
        let mut gone = ClientSession::attach(&net, 2, k, mechanism).unwrap();
        let mut stays = ClientSession::attach(&net, 3, k, mechanism).unwrap();
        let g = gone.grantee(&net, &index);
        let s = stays.grantee(&net, &index);
        owner
            .publish(&mut net, &index, b"before", &[(g.clone(), Rights::Read), (s, Rights::Read)])
            .map_err(|e| e.to_string())?;
        owner.put(&mut net, &index, b"current", true).map_err(|e| e.to_string())?;
        if mechanism != Mechanism::Pk {
            let key = owner.export_key(&index).ok_or("owner has no key")?;
            gone.import_key(&index, key);
            stays.import_key(&index, key);
        }
        check(gone.get(&mut net, &index) == Ok(Some(b"current".to_vec())), || format!("{mechanism}: reader cannot read before revocation"))?;

        // Standalone reference costs.
        let ops_before = net.ledger().ops().len();
        owner.put(&mut net, &index, b"current", true).map_err(|e| e.to_string())?;
        owner.set(&mut net, &index, &[]).map_err(|e| e.to_string())?;
        let reference: Vec<u64> = net.ledger().ops()[ops_before..].iter().map(|o| o.messages).collect();

        let start = net.ledger().ops().len();
        let outcome = owner.revoke_read(&mut net, &index, &g).map_err(|e| e.to_string())?;
        let ops: Vec<_> = net.ledger().ops()[start..].to_vec();
        let labels: Vec<&str> = ops.iter().map(|o| o.label.as_str()).collect();
        check(labels == ["get", "put", "set"], || format!("{mechanism}: ledger ops {labels:?}"))?;
        let mutation: Vec<u64> = ops[1..].iter().map(|o| o.messages).collect();
        check(mutation == reference, || format!("{mechanism}: revocation put+set {mutation:?} vs standalone {reference:?}"))?;
        let expected_pair = if mechanism == Mechanism::Zkp { 2 * 2 * (2 * k as u64 + 1) * 2 } else { 2 * (2 * k as u64 + 1) * 2 };
        check(mutation.iter().sum::<u64>() == expected_pair, || format!("{mechanism}: put+set {} messages", mutation.iter().sum::<u64>()))?;

        if mechanism != Mechanism::Pk {
            stays.import_key(&index, outcome.new_key);
        }
        check(gone.get(&mut net, &index) == Err(ClientError::NoReadAccess), || format!("{mechanism}: revoked reader still reads"))?;
        check(stays.get(&mut net, &index) == Ok(Some(b"current".to_vec())), || format!("{mechanism}: remaining reader cannot read"))?;
        notes.push(format!("{mechanism} put+set = {} messages (+{} for the preceding read)", expected_pair, ops[0].messages));
    }
    Ok(notes.join(", "))
}

fn op_counts() -> Outcome {
    // PK: subsequent put and the set that carries `a` wrapped keys.
    let k = 3;
    let a = 4;
    let mut net = Network::spawn(64, 2).map_err(|e| e.to_string())?;
    let index = Index::try_from("ops").unwrap();
    let mut owner = ClientSession::attach(&net, 1, k, Mechanism::Pk).unwrap();
    let grantees: Vec<_> = (0..a)
        .map(|i| ClientSession::attach(&net, 10 + i, k, Mechanism::Pk).unwrap().grantee(&net, &index))
        .collect();
    owner.put(&mut net, &index, b"v0", true).map_err(|e| e.to_string())?;
    owner.set(&mut net, &index, &[]).map_err(|e| e.to_string())?;
    let before = *owner.ops();
    owner.put(&mut net, &index, b"v1", true).map_err(|e| e.to_string())?;
    let put = *owner.ops() - before;
    let want = [(OpClass::Symmetric, 1), (OpClass::Hash, 1), (OpClass::SecretKeyOp, 1)];
    for c in OpClass::ALL {
        let expected = want.iter().find(|(w, _)| *w == c).map_or(0, |(_, n)| *n);
        check(put.get(c) == expected, || format!("pk put {}: {} (all: {put})", c.symbol(), put.get(c)))?;
    }
    let before = *owner.ops();
    let changes: Vec<_> = grantees.into_iter().map(|g| Delegation::grant(g, Rights::Read)).collect();
    owner.set(&mut net, &index, &changes).map_err(|e| e.to_string())?;
    let set = *owner.ops() - before;
    check(set.get(OpClass::PublicKeyOp) == a, || format!("pk set AO_pk {} for a={a}", set.get(OpClass::PublicKeyOp)))?;

    // ZKP: peer verification cost over many random challenges.
    let n = 20;
    let config = NetConfig { zkp_rounds: n, ..NetConfig::default() };
    let mut net = Network::spawn_with(16, 3, config).map_err(|e| e.to_string())?;
    let mut owner = ClientSession::attach(&net, 1, 0, Mechanism::Zkp).unwrap();
    let index = Index::try_from("zkp-ops").unwrap();
    owner.put(&mut net, &index, b"v0", false).map_err(|e| e.to_string())?;
    let runs = 1000;
    let before = net.peer_ops();
    for i in 0..runs {
        owner.put(&mut net, &index, format!("v{i}").as_bytes(), false).map_err(|e| e.to_string())?;
    }
    let mo = (net.peer_ops() - before).get(OpClass::Modular) as f64 / runs as f64;
    let nf = n as f64;
    check((1.35 * nf..=1.65 * nf).contains(&mo), || format!("zkp peer MO mean {mo}"))?;

    // OTH: exactly one hash per replica.
    let mut net = Network::spawn(64, 4).map_err(|e| e.to_string())?;
    let mut owner = ClientSession::attach(&net, 1, k, Mechanism::Oth).unwrap();
    let index = Index::try_from("oth-ops").unwrap();
    owner.put(&mut net, &index, b"v0", false).map_err(|e| e.to_string())?;
    for i in 0..20 {
        let before = net.peer_ops();
        owner.put(&mut net, &index, format!("v{i}").as_bytes(), false).map_err(|e| e.to_string())?;
        let d = net.peer_ops() - before;
        check(d.get(OpClass::Hash) == 2 * k as u64 + 1 && d.total() == d.get(OpClass::Hash), || format!("oth peer ops {d}"))?;
    }
    Ok(format!("pk put {put}, set AO_pk = {a}; zkp peer MO mean {mo:.2} (n={n}); oth peer HO = 2k+1"))
}

fn storage() -> Outcome {
    let ks = [1u64, 2, 4, 8, 16];
    let formulas = FormulaSet::new(Profile::Artifact);
    let mut slopes = BTreeMap::new();
    for mechanism in Mechanism::ALL {
        let points = storage_sweep(mechanism, &ks, 1).map_err(|e| e.to_string())?;
        let (k0, s0) = points[0];
        let (k1, s1) = points[1];
        let slope = (s1 - s0) / (k1 - k0);
        let intercept = s0 - slope * k0;
        for &(k, s) in &points {
            check(s == intercept + slope * k, || format!("{mechanism}: {s} at k={k} is off the line {intercept} + {slope}k"))?;
        }
        let scheme = Scheme::implemented(mechanism);
        let predicted = formulas.user_storage(scheme).map_err(|e| e.to_string())?.value;
        let plain = krac_bench::formulas::position_len(Profile::Artifact);
        check(
            predicted.slope == slope && predicted.intercept + plain == intercept,
            || format!("{mechanism}: measured {intercept} + {slope}k, profile {:?}", predicted),
        )?;
        slopes.insert(mechanism, (intercept, slope));
    }
    let oth = slopes[&Mechanism::Oth].1;
    check(oth > slopes[&Mechanism::Pk].1 && oth > slopes[&Mechanism::Zkp].1, || format!("slopes {slopes:?}"))?;
    let text: Vec<String> = slopes.iter().map(|(m, (i, s))| format!("{m} {i} + {s}k")).collect();
    Ok(text.join(", "))
}

fn reprint() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_krac"))
        .args(["predict", "--profile", "paper", "--format", "csv"])
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let report = OverheadReport::parse(&text, Format::Csv).map_err(|e| e.to_string())?;
    let wanted = [
        ("pk-rsa", "auth_bytes", 554),
        ("pk-ecc", "auth_bytes", 147),
        ("oth", "auth_bytes", 64),
        ("pk-rsa", "peer_item_storage", 679),
        ("pk-ecc", "peer_item_storage", 273),
        ("zkp", "peer_item_storage", 84),
        ("oth", "peer_item_storage", 49),
    ];
    for (mechanism, metric, value) in wanted {
        let filter = [("mechanism", mechanism), ("metric", metric)];
        let row = report
            .select(&filter)
            .next()
            .ok_or_else(|| format!("no {mechanism} {metric} row"))?;
        check(row.predicted == value as f64, || format!("{mechanism} {metric}: {}", row.predicted))?;
        let verbatim = format!("{mechanism},20,20,10,2,{metric},");
        let line = text.lines().find(|l| l.starts_with(&verbatim)).unwrap_or_default();
        check(line.contains(&format!(",,{value},")), || format!("{mechanism} {metric} printed as {line:?}"))?;
    }
    Ok("554/147/64 and 679/273/84/49 reprinted".into())
}

fn determinism() -> Outcome {
    let script = "SPAWN peers=80 k=2 n=8\nUSER o zkp\nUSER r zkp\nUSER p pk\nUSER q oth\n\
                  SUBVERT random 2 deny,forge,replay,tamper\n\
                  PUT o d first protected\nSET o d grant r read\nPUT o d second protected\nSHARE o d r\nGET r d\n\
                  PUT p e x\nSET p e grant q write\nPUT q f y\nREPLAY d\n";
    let params = Params { k: 2, n: 8, ..Params::default() };
    let a = run_experiment(script, &params, 77).map_err(|e| e.to_string())?;
    let b = run_experiment(script, &params, 77).map_err(|e| e.to_string())?;
    let c = run_experiment(script, &params, 78).map_err(|e| e.to_string())?;
    let render = |r: &krac_bench::ScriptRun| r.report.render(Format::Csv).unwrap();
    check(render(&a) == render(&b), || "reports differ".into())?;
    check(a.store_digest == b.store_digest && a.store_digest.is_some(), || "final stores differ".into())?;
    check(a.store_digest != c.store_digest, || "seed has no effect".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for i in 0..2 {
        let path = dir.path().join(format!("bench{i}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_krac"))
            .args(["bench", "--k", "2", "--n", "8", "--acl-size", "3", "--peers", "40", "--adversary", "2"])
            .args(["--behavior", "deny,forge", "--seed", "9", "--trials", "2", "--format", "json"])
            .arg("--out")
            .arg(&path)
            .status()
            .map_err(|e| e.to_string())?;
        check(status.success(), || "krac bench failed".into())?;
        files.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    check(files[0] == files[1], || "bench outputs differ".into())?;
    Ok(format!(
        "report and store {} identical across runs; bench JSON {} bytes identical",
        &a.store_digest.unwrap()[..12],
        files[0].len()
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("resilience at the bound", resilience),
        ("boundary demonstration", boundary),
        ("message counts", messages),
        ("zkp soundness", zkp_soundness),
        ("replay resistance", replay),
        ("rights lattice and set atomicity", rights),
        ("revocation", revocation),
        ("op-count model", op_counts),
        ("storage linearity", storage),
        ("published-constant reprint", reprint),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
