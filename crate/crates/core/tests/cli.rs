mod common;

use std::path::Path;

use common::*;
use faceaudit::embs::write_embs;
use faceaudit::report::sha256_file;
use faceaudit::EmbeddingSet;

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&read(p)).unwrap()
}

#[test]
fn dist_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let set = save(&clustered_set(40, 4, 16, 0.5, 1), dir.path(), "tiny.embs");
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let o = faceaudit(args!["dist", "--set", set, "-n", "1000", "--seed", "1", "--out", out, "--quiet"], &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read(&a), read(&b));
    let v = json(&a);
    for key in ["genuine", "impostor", "eer", "fmr100", "fmr1000", "fdr", "duplicate_fraction", "histograms"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["genuine"]["n"], 1000);
    assert!(dir.path().join("a.csv").exists());
}

#[test]
fn missing_required_flag_prints_usage() {
    let o = faceaudit(args!["dist", "-n", "10"], &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--set") && err.contains("Usage"));
    assert!(o.stdout.is_empty());
}

#[test]
fn help_lists_defaults() {
    let o = faceaudit(args!["--help"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8_lossy(&o.stdout);
    for needle in ["1000000", "ten-fold", "top-5", "0.4", "100", "FACEAUDIT_WORKERS"] {
        assert!(out.contains(needle), "help lacks {needle}");
    }
}

#[test]
fn ingest_normalizes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("raw.embs");
    let j = dir.path().join("raw.json");
    write_embs(&m, 2, 2, [[3.0f32, 4.0].as_slice(), [0.0, 5.0].as_slice()]).unwrap();
    std::fs::write(&j, r#"[{"sample_id":"a","identity":"A","group":null},{"sample_id":"b","identity":"A"}]"#).unwrap();
    let before = (sha256_file(&m).unwrap(), sha256_file(&j).unwrap());
    let out = dir.path().join("set.embs");
    let o = faceaudit(args!["ingest", "--matrix", m, "--manifest", j, "--out", out, "-q"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["n_samples"], 2);
    assert_eq!(report["defects"], serde_json::json!([]));
    let set = EmbeddingSet::load(&out).unwrap();
    assert_eq!(set.row(0), &[0.6, 0.8]);
    assert_eq!(set.row(1), &[0.0, 1.0]);
    assert_eq!(before, (sha256_file(&m).unwrap(), sha256_file(&j).unwrap()));
}

#[test]
fn ingest_defect_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("raw.embs");
    let j = dir.path().join("raw.json");
    write_embs(&m, 2, 2, [[3.0f32, 4.0].as_slice(), [0.0, 0.0].as_slice()]).unwrap();
    std::fs::write(&j, r#"[{"sample_id":"a","identity":"A"},{"sample_id":"zero","identity":"A"}]"#).unwrap();
    let out = dir.path().join("set.embs");
    let o = faceaudit(args!["ingest", "--matrix", m, "--manifest", j, "--out", out], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zero"));
    assert!(!out.exists());
}

#[test]
fn missing_input_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = faceaudit(args!["dist", "--set", dir.path().join("absent.embs"), "--out", out], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn validation_error_exits_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let set = save(&random_set(20, 8, 1), dir.path(), "s.embs");
    let out = dir.path().join("r.json");
    // Every identity is a singleton: no mated pairs exist.
    let o = faceaudit(args!["dist", "--set", set, "-n", "10", "--out", out], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn pairs_topk_verify_bias_bench_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let fx = audit_fixture(dir.path(), 200, 300);
    let d = |name: &str| dir.path().join(name);

    let o = faceaudit(args!["pairs", "--set", fx.synthetic, "--kind", "mated", "-n", "50", "--seed", "3", "--out", d("p.csv")], &[]);
    assert!(o.status.success());
    let text = read(&d("p.csv"));
    assert!(text.starts_with("sample_id_a,sample_id_b\n"));
    assert_eq!(text.lines().count(), 51);

    let o = faceaudit(args!["topk", "--query", fx.synthetic, "--target", fx.reference, "-k", "3", "--out", d("t.json"), "-q"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&d("t.json"))["results"].as_array().unwrap().len(), 1000);

    let o = faceaudit(args!["verify", "--set", fx.synthetic, "--pairs", fx.pairs, "-k", "10", "--out", d("v.json")], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&d("v.json"))["per_fold_accuracy"].as_array().unwrap().len(), 10);

    let o = faceaudit(args!["bias", "--set", fx.synthetic, "--groups", fx.groups, "--out", d("b.json")], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b = json(&d("b.json"));
    assert_eq!(b["per_group"].as_object().unwrap().len(), 4);
    assert!(b["gap"]["best_group"].is_string());

    let o = faceaudit(args!["bench-assess", "--matrix", fx.matrix, "--synthetic", "synthetic", "--out", d("r.json")], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&d("r.json"))["correlations"].as_array().unwrap().len(), 2);

    let o = faceaudit(
        args!["consistency", "--set", fx.synthetic, "--pairs", fx.pairs, "--segments", "3", "--fraction", "0.5", "--seed", "4", "--out", d("c.json")],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&d("c.json"))["segments"].as_array().unwrap().len(), 3);
}

#[test]
fn leakage_command_with_progress() {
    let dir = tempfile::tempdir().unwrap();
    let syn = save(&clustered_set(20, 3, 16, 0.4, 5), dir.path(), "syn.embs");
    let reference = save(&random_set(500, 16, 6), dir.path(), "ref.embs");
    let out = dir.path().join("leak.json");
    let o = faceaudit(
        args!["leakage", "--synthetic", syn, "--reference", reference, "--chunk-rows", "128", "--out", out],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("128/500") && err.contains("500/500"));
    let v = json(&out);
    assert_eq!(v["per_query_max"].as_array().unwrap().len(), 60);
    assert_eq!(v["top_pairs"].as_array().unwrap().len(), 5);
    assert!(dir.path().join("leak.csv").exists());
}

#[test]
fn audit_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fx = audit_fixture(dir.path(), 100, 200);
    let out = dir.path().join("out");
    let o = faceaudit(
        args![
            "audit", "--synthetic", fx.synthetic, "--reference", fx.reference, "--pairs", fx.pairs,
            "--groups", fx.groups, "--matrix", fx.matrix, "--benchmark", "synthetic",
            "-n", "2000", "--seed", "9", "--out-dir", out, "-q"
        ],
        &[("SOURCE_DATE_EPOCH", "0")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["audit.biometric.csv", "audit.biometric.svg", "audit.json", "audit.leakage.csv", "audit.leakage.svg"]
    );
    let v = json(&out.join("audit.json"));
    assert_eq!(v["schema"], "faceaudit/1");
    assert_eq!(v["timestamp"], "1970-01-01T00:00:00Z");
    for s in ["biometric", "leakage", "verification", "bias", "reliability"] {
        assert!(v["sections"].get(s).is_some(), "missing section {s}");
    }
    for input in v["inputs"].as_array().unwrap() {
        let digest = input["sha256"].as_str().unwrap();
        assert_eq!(digest.len(), 64);
        assert_eq!(digest, sha256_file(input["path"].as_str().unwrap()).unwrap());
    }

    let again = dir.path().join("again");
    let o = faceaudit(args!["report", "--input", out.join("audit.json"), "--out-dir", again, "-q"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&out.join("audit.json")), read(&again.join("audit.json")));
    assert_eq!(read(&out.join("audit.biometric.svg")), read(&again.join("audit.biometric.svg")));
}

#[test]
fn audit_section_selection() {
    let dir = tempfile::tempdir().unwrap();
    let fx = audit_fixture(dir.path(), 60, 50);
    let out = dir.path().join("out");
    let o = faceaudit(
        args!["audit", "--synthetic", fx.synthetic, "--sections", "biometric", "-n", "500", "--formats", "json", "--out-dir", out, "-q"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out.join("audit.json"));
    assert_eq!(v["sections"].as_object().unwrap().len(), 1);

    let o = faceaudit(
        args!["audit", "--synthetic", fx.synthetic, "--sections", "leakage", "--out-dir", dir.path().join("x")],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let o = faceaudit(
        args!["audit", "--synthetic", fx.synthetic, "--sections", "nonsense", "--out-dir", dir.path().join("x")],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn negative_threshold_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let syn = save(&clustered_set(10, 2, 8, 0.4, 5), dir.path(), "syn.embs");
    let reference = save(&random_set(40, 8, 6), dir.path(), "ref.embs");
    let out = dir.path().join("leak.json");
    let o = faceaudit(
        args!["leakage", "--synthetic", syn, "--reference", reference, "--threshold", "-0.5", "--out", out, "-q"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out)["summary"]["threshold"], -0.5);
}
