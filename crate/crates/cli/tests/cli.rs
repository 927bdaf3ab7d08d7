use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/example.csv")
}

fn vecmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecmatch")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = vecmatch(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect();
    (header, rows)
}

fn match_design(dir: &Path, design: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(format!("match_{design}"));
    let data = example();
    let mut args = vec!["match", "--data", s(&data), "--design", design, "--seed", "11", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn vm_cohort_satisfies_the_matched_set_invariants() {
    let tmp = tempfile::tempdir().unwrap();
    let out = match_design(tmp.path(), "vm", &["--reference", "a", "--k", "5", "--epsilon", "0.25"]);
    let (_, data) = read_rows(&out.join("data.csv"));
    let arm_of: HashMap<String, String> = data.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    let (header, sets) = read_rows(&out.join("cohort.csv"));
    assert_eq!(header[1], "a");
    assert_eq!(header.len(), 4);
    assert!(!sets.is_empty());
    let mut refs: Vec<&String> = sets.iter().map(|r| &r[1]).collect();
    for set in &sets {
        for (label, id) in header[1..].iter().zip(&set[1..]) {
            assert_eq!(&arm_of[id], label, "unit {id} sits in the wrong column");
        }
    }
    let n = refs.len();
    refs.sort();
    refs.dedup();
    assert_eq!(refs.len(), n, "a reference unit appears in two sets");
    let n_ref = data.iter().filter(|r| r[1] == "a").count();
    assert!(n <= n_ref);
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["n_trip"].as_u64().unwrap() as usize, n);
    assert!((diag["pct_matched"].as_f64().unwrap() - n as f64 / n_ref as f64).abs() < 1e-12);
    ok(&["balance", "--data", s(&out.join("data.csv")), "--cohort", s(&out.join("cohort.csv")), "--seed", "1", "--out", s(&tmp.path().join("b"))]);
}

#[test]
fn every_artifact_is_accepted_downstream() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let full = example();
    for (design, file, flag, extra) in [
        ("vm", "cohort.csv", "--cohort", vec![]),
        ("crm", "cohort.csv", "--cohort", vec![]),
        ("sbc", "cohort.csv", "--cohort", vec!["--pair", "b,c"]),
        ("kmc", "subclasses.csv", "--subclasses", vec![]),
        ("ipw", "weights.csv", "--weights", vec![]),
    ] {
        let out = match_design(dir, design, &extra);
        let data = out.join("data.csv");
        let artifact = out.join(file);
        ok(&["balance", "--data", s(&data), flag, s(&artifact), "--sd-data", s(&full), "--seed", "1", "--out", s(&dir.join(format!("bal_{design}")))]);
        if flag != "--subclasses" {
            ok(&["estimate", "--data", s(&data), flag, s(&artifact), "--seed", "1", "--out", s(&dir.join(format!("est_{design}")))]);
        }
    }
    let trimmed = dir.join("trim");
    ok(&["trim", "--data", s(&full), "--seed", "1", "--out", s(&trimmed)]);
    ok(&["match", "--data", s(&trimmed.join("trimmed.csv")), "--design", "vm", "--no-trim", "--seed", "2", "--out", s(&dir.join("retrim"))]);
    ok(&["gps", "--data", s(&trimmed.join("trimmed.csv")), "--seed", "1", "--out", s(&dir.join("gps"))]);
    let (header, rows) = read_rows(&dir.join("gps/gps.csv"));
    assert_eq!(header.len(), 5);
    for r in rows {
        let total: f64 = r[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}

#[test]
fn manifests_record_input_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = match_design(tmp.path(), "crm", &[]);
    let entries: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries.iter().filter(|n| n.to_str().unwrap().starts_with("manifest")).count(), 1);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let digest = hex::encode(Sha256::digest(fs::read(example()).unwrap()));
    assert_eq!(manifest["inputs"][0]["sha256"], serde_json::Value::String(digest));
    assert_eq!(manifest["command"], "match");
    assert_eq!(manifest["seeds"]["master"], 11);
    assert_eq!(manifest["config"]["design"], "crm");
}

#[test]
fn rerunning_with_the_same_seed_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = match_design(tmp.path(), "vm", &[]);
    let first = fs::read(a.join("cohort.csv")).unwrap();
    let b = match_design(tmp.path(), "vm", &[]);
    assert_eq!(first, fs::read(b.join("cohort.csv")).unwrap());
}

#[test]
fn missing_outcome_exits_one_and_names_the_column() {
    let tmp = tempfile::tempdir().unwrap();
    let out = match_design(tmp.path(), "vm", &[]);
    let out_str = s(&out).to_owned();
    let out = vecmatch(&[
        "estimate",
        "--data",
        s(&example()),
        "--outcome-col",
        "response",
        "--cohort",
        &format!("{out_str}/cohort.csv"),
        "--seed",
        "1",
        "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("'response'"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = s(&example()).to_owned();
    let out = s(tmp.path()).to_owned();
    assert_eq!(vecmatch(&["match", "--data", &data, "--design", "vm", "--seed", "1", "--bogus"]).status.code(), Some(1));
    assert_eq!(vecmatch(&["match", "--data", &data, "--design", "vm", "--out", &out]).status.code(), Some(1));
    assert_eq!(vecmatch(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(vecmatch(&["--help"]).status.code(), Some(0));
    assert_eq!(vecmatch(&["--version"]).status.code(), Some(0));
    let bad_ref = vecmatch(&["match", "--data", &data, "--design", "vm", "--reference", "zz", "--seed", "1", "--out", &out]);
    assert_eq!(bad_ref.status.code(), Some(1));

    // separated arms and no ridge: three Newton steps cannot converge
    let sep = tmp.path().join("separated.csv");
    let mut text = String::from("treatment,x\n");
    for i in 0..30 {
        text += &format!("{},{}\n", ["a", "b", "c"][i / 10], i);
    }
    fs::write(&sep, text).unwrap();
    let r = vecmatch(&["gps", "--data", s(&sep), "--ridge", "0", "--max-iter", "3", "--seed", "1", "--out", &out]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn simulate_then_anova() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        "[run]\nreps = 2\ndesigns = [\"vm\", \"ipw\"]\n\n[grid]\nn = [80]\ngamma = [1]\ndist = [\"normal\", \"t7\"]\n\
         bias = [0.25, 1.0]\ntau = [0.0]\nsigma2 = [1.0]\nsigma3 = [1.0]\np = [3]\n",
    )
    .unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--seed", "5", "--jobs", "2", "--out", s(&sim)]);
    let (header, rows) = read_rows(&sim.join("metrics.csv"));
    assert_eq!(rows.len(), 8);
    assert!(header.contains(&"mean_max2sb".to_owned()));
    let (_, raw) = read_rows(&sim.join("raw.csv"));
    assert_eq!(raw.len(), 16);

    let an = tmp.path().join("anova");
    ok(&["anova", "--metrics", s(&sim.join("metrics.csv")), "--design", "vm", "--seed", "1", "--out", s(&an)]);
    let (header, rows) = read_rows(&an.join("anova.csv"));
    assert_eq!(header, ["rank", "term", "df", "sum_sq", "mean_sq"]);
    let terms: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    for t in ["dist", "bias", "dist:bias", "Residuals"] {
        assert!(terms.contains(&t), "{terms:?}");
    }
}

#[test]
fn malformed_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[run]\nrepetitions = 3\n").unwrap();
    let r = vecmatch(&["simulate", "--config", s(&cfg), "--seed", "1", "--out", s(tmp.path())]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("repetitions"));
}
