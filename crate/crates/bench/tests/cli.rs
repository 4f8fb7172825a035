use std::process::Command;

use krac_bench::report::{Format, OverheadReport, COLUMNS};

fn krac(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_krac")).args(args).output().unwrap()
}

#[test]
fn bench_csv_has_documented_header_and_no_violations() {
    let out = krac(&["bench", "--mechanism", "oth", "--k", "1", "--acl-size", "2", "--peers", "24"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
    let report = OverheadReport::parse(&text, Format::Csv).unwrap();
    assert!(report.violations().is_empty(), "{:#?}", report.violations());
    assert!(report.rows.iter().all(|r| r.mechanism == "oth"));
}

#[test]
fn emitted_files_are_repeatable_and_json_parses_generically() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = (0..2).map(|i| dir.path().join(format!("p{i}.json"))).collect();
    for p in &paths {
        let out = krac(&["predict", "--profile", "artifact", "--k", "3", "--format", "json", "--out", p.to_str().unwrap()]);
        assert!(out.status.success());
        assert!(out.stdout.is_empty());
    }
    let a = std::fs::read_to_string(&paths[0]).unwrap();
    assert_eq!(a, std::fs::read_to_string(&paths[1]).unwrap());
    let generic: serde_json::Value = serde_json::from_str(&a).unwrap();
    let typed = OverheadReport::parse(&a, Format::Json).unwrap();
    assert_eq!(generic.as_array().unwrap().len(), typed.rows.len());
    assert_eq!(serde_json::to_value(&typed).unwrap(), generic);
    assert!(!a.contains("pk-rsa"));
}

#[test]
fn run_exit_code_follows_assertions() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.krac");
    std::fs::write(
        &good,
        "SPAWN peers=16 k=1\nUSER a oth\nPUT a x \"hello there\"\nGET a x\nASSERT GOT a \"hello there\"\nASSERT MESSAGES 6\n",
    )
    .unwrap();
    let out = krac(&["run", good.to_str().unwrap(), "--k", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("store ")));

    let bad = dir.path().join("bad.krac");
    std::fs::write(&bad, "SPAWN peers=16 k=1\nUSER a pk\nGET a x\nASSERT GOT a something\n").unwrap();
    let out = krac(&["run", bad.to_str().unwrap(), "--k", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL line 4"));

    let broken = dir.path().join("broken.krac");
    std::fs::write(&broken, "FROB\n").unwrap();
    assert_eq!(krac(&["run", broken.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bundled_script_passes() {
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/scripts/sharing.krac");
    let out = krac(&["run", script, "--k", "2"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(!text.contains("FAIL"));
}
