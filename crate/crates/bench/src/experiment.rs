//! The standard overhead workload, trial aggregation and prediction tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use krac_core::scenario::BehaviorKind;
use krac_core::trials::run_trials;
use krac_core::{Mechanism, OpClass};

use crate::formulas::{FormulaError, FormulaSet, Operation, Params, Phase, Profile, Role, Scheme};
use crate::report::{OverheadReport, Row, Status};
use crate::script::{run_experiment, ScriptError, ScriptRun};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub mechanisms: Vec<Mechanism>,
    pub params: Params,
    pub peers: usize,
    pub adversaries: usize,
    pub behaviors: Vec<BehaviorKind>,
    pub seed: u64,
    pub trials: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            mechanisms: Mechanism::ALL.to_vec(),
            params: Params::default(),
            peers: 128,
            adversaries: 0,
            behaviors: vec![BehaviorKind::Deny],
            seed: 1,
            trials: 1,
        }
    }
}

/// Script for one mechanism: an initial put, an ACL set with `a` items,
/// a second put and set, a reader's get, and an initial set on a second
/// index by a fresh user.
pub fn workload_script(mechanism: Mechanism, params: &Params, peers: usize, adversaries: usize, behaviors: &[BehaviorKind]) -> String {
    let mech = mechanism.name();
    let readers: Vec<String> = (1..params.a.max(1)).map(|i| format!("reader{i}")).collect();
    let mut s = String::new();
    let _ = writeln!(s, "SPAWN peers={peers} k={} n={} y={}", params.k, params.n, params.y);
    let _ = writeln!(s, "USER owner {mech}");
    for r in &readers {
        let _ = writeln!(s, "USER {r} {mech}");
    }
    if adversaries > 0 {
        let list: Vec<String> = behaviors.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "SUBVERT random {adversaries} {}", list.join(","));
    }
    let grants: String = readers.iter().map(|r| format!(" grant {r} read")).collect();
    let acl = format!("{grants} rekey owner");
    let _ = writeln!(s, "PUT owner data first protected");
    let _ = writeln!(s, "SET owner data{acl}");
    let _ = writeln!(s, "PUT owner data second protected");
    let _ = writeln!(s, "SET owner data{acl}");
    let reader = readers.first().map_or("owner", String::as_str);
    if mechanism != Mechanism::Pk && reader != "owner" {
        let _ = writeln!(s, "SHARE owner data {reader}");
    }
    let _ = writeln!(s, "GET {reader} data");
    if !readers.is_empty() {
        let _ = writeln!(s, "USER solo {mech}");
        let _ = writeln!(s, "SET solo other{grants}");
    }
    s
}

type RowKey = (String, String, String, String, String, u64, Status);

fn row_key(r: &Row) -> RowKey {
    (
        r.mechanism.clone(),
        r.metric.clone(),
        r.operation.clone(),
        r.phase.clone(),
        r.role.clone(),
        r.a,
        r.status,
    )
}

/// Averages the measured side of like rows, keeping first-seen order.
pub fn aggregate(runs: &[OverheadReport]) -> OverheadReport {
    let mut order = Vec::new();
    let mut groups: BTreeMap<_, (Row, f64, u64)> = BTreeMap::new();
    for row in runs.iter().flat_map(|r| &r.rows) {
        let key = row_key(row);
        let slot = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (row.clone(), 0.0, 0)
        });
        if let Some(m) = row.measured {
            slot.1 += m;
            slot.2 += 1;
        }
    }
    let rows = order
        .into_iter()
        .map(|key| {
            let (mut row, sum, count) = groups.remove(&key).expect("grouped");
            row.measured = (count > 0).then(|| sum / count as f64);
            row.delta = row.measured.map(|m| m - row.predicted);
            row
        })
        .collect();
    OverheadReport { rows }
}

/// Runs the workload for every configured mechanism over `trials`
/// consecutive seeds (in parallel when enabled) and averages the rows.
/// PK runs are followed by analytical RSA rows.
pub fn run_bench(config: &BenchConfig) -> Result<OverheadReport, ScriptError> {
    let mut report = OverheadReport::new();
    for &mechanism in &config.mechanisms {
        let script = workload_script(
            mechanism,
            &config.params,
            config.peers,
            config.adversaries,
            &config.behaviors,
        );
        let runs: Vec<Result<ScriptRun, ScriptError>> =
            run_trials(config.seed, config.trials, |seed| run_experiment(&script, &config.params, seed));
        let runs: Vec<OverheadReport> = runs.into_iter().map(|r| r.map(|r| r.report)).collect::<Result<_, _>>()?;
        report.extend(aggregate(&runs));
        if mechanism == Mechanism::Pk {
            let analytic = prediction_rows(Profile::Paper, Scheme::PkRsa, &config.params)
                .expect("paper profile covers RSA");
            report.extend(analytic.with_status(Status::Analytical));
        }
    }
    Ok(report)
}

impl OverheadReport {
    fn with_status(mut self, status: Status) -> Self {
        for r in &mut self.rows {
            r.status = status;
        }
        self
    }
}

#[allow(clippy::too_many_arguments)]
fn predicted(scheme: Scheme, p: &Params, metric: String, op: Option<Operation>, phase: Option<Phase>, role: Role, formula: &str, value: f64, status: Status) -> Row {
    Row {
        mechanism: scheme.name().to_string(),
        k: p.k,
        n: p.n,
        a: p.a,
        y: p.y,
        metric,
        operation: op.map_or(String::new(), |o| o.name().to_string()),
        phase: phase.map_or(String::new(), |ph| ph.name().to_string()),
        role: role.name().to_string(),
        formula: formula.to_string(),
        measured: None,
        predicted: value,
        delta: None,
        status,
    }
}

/// Every prediction for `scheme` under `profile`, without measurements.
pub fn prediction_rows(profile: Profile, scheme: Scheme, p: &Params) -> Result<OverheadReport, FormulaError> {
    let f = FormulaSet::new(profile);
    let mut rows = Vec::new();
    for phase in [Phase::Initial, Phase::Subsequent] {
        for op in [Operation::Put, Operation::Set, Operation::Get] {
            let m = f.messages(scheme, op, phase, p)?;
            rows.push(predicted(scheme, p, "messages".into(), Some(op), Some(phase), Role::User, m.formula, m.value as f64, Status::Exact));
            let d = f.message_overhead(scheme, op, phase, p)?;
            rows.push(predicted(scheme, p, "message_overhead".into(), Some(op), Some(phase), Role::User, d.formula, d.value as f64, Status::Exact));
        }
    }
    let s = f.auth_bytes(scheme, p)?;
    let bound = if profile == Profile::Artifact && scheme == Scheme::Zkp { Status::Bound } else { Status::Exact };
    rows.push(predicted(scheme, p, "auth_bytes".into(), None, None, Role::User, s.formula, s.value as f64, bound));
    let u = f.user_storage(scheme)?;
    rows.push(predicted(scheme, p, "user_storage".into(), None, None, Role::User, u.formula, u.value.at(p.k) as f64, Status::Exact));
    let once = f.user_storage_once(scheme)?;
    rows.push(predicted(scheme, p, "user_storage_once".into(), None, None, Role::User, once.formula, once.value as f64, Status::Exact));
    let peer = f.peer_item_storage(scheme)?;
    rows.push(predicted(scheme, p, "peer_item_storage".into(), None, None, Role::Peer, peer.formula, peer.value as f64, bound));
    for role in [Role::User, Role::Peer] {
        for phase in [Phase::Initial, Phase::Subsequent] {
            for op in [Operation::Get, Operation::Put, Operation::Set] {
                let expr = match f.ops(scheme, op, phase, role, p) {
                    Ok(e) => e,
                    Err(FormulaError::NotModelled { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let classes: Vec<OpClass> = OpClass::ALL.into_iter().filter(|c| expr.value.get(*c) != 0.0).collect();
                if classes.is_empty() {
                    rows.push(predicted(scheme, p, "ops".into(), Some(op), Some(phase), role, expr.formula, 0.0, Status::Exact));
                }
                for class in classes {
                    let status = if class == OpClass::Modular && phase == Phase::Subsequent {
                        Status::Mean
                    } else {
                        Status::Exact
                    };
                    rows.push(predicted(
                        scheme,
                        p,
                        format!("ops.{}", class.symbol()),
                        Some(op),
                        Some(phase),
                        role,
                        expr.formula,
                        expr.value.get(class),
                        status,
                    ));
                }
            }
        }
    }
    Ok(OverheadReport { rows })
}

/// Prediction tables for every scheme the profile covers.
pub fn predict_all(profile: Profile, p: &Params) -> Result<OverheadReport, FormulaError> {
    let mut report = OverheadReport::new();
    for &scheme in Scheme::ALL {
        match prediction_rows(profile, scheme, p) {
            Ok(r) => report.extend(r),
            Err(FormulaError::AnalyticalOnly(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// Measured per-index user storage (total bytes, including the one
/// position a plain user keeps) after a first put, for each `k`.
pub fn storage_sweep(mechanism: Mechanism, ks: &[u64], seed: u64) -> Result<Vec<(u64, u64)>, ScriptError> {
    ks.iter()
        .map(|&k| {
            let params = Params { k, a: 0, ..Params::default() };
            let peers = (2 * k as usize + 1).max(8) * 2;
            let script = format!("SPAWN peers={peers}\nUSER u {}\nPUT u data v protected\n", mechanism.name());
            let run = run_experiment(&script, &params, seed)?;
            let measured = run
                .report
                .select(&[("metric", "user_storage")])
                .find_map(|r| r.measured)
                .expect("put reports storage");
            Ok((k, measured as u64 + crate::formulas::position_len(Profile::Artifact)))
        })
        .collect()
}
