use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn sg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structguard"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn sg_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_structguard"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn small_corpus(dir: &Path) {
    let o = sg(&["gen", "--n", "400", "--out-dir", "c"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn canonicalize_fenced_stdin() {
    let text = "Here you go:\n```json\n{\"camera\": \"Canon EOS R5\", \"iso\": \"ISO 400\", \"aperture\": \"F2.8\",}\n```";
    let o = sg_stdin(&["canonicalize"], text);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(
        out.trim(),
        r#"{"CAMERA":"Canon EOS R5","LENS":null,"ISO":"400","APERTURE":"f/2.8","SHUTTER_SPEED":null,"FOCAL_LENGTH":null}"#
    );
}

#[test]
fn canonicalize_garbage_yields_all_null() {
    let o = sg_stdin(&["canonicalize", "--trace"], "no json here");
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["fields"].as_object().unwrap().values().all(|x| x.is_null()));
}

#[test]
fn usage_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(sg(&["bogus"], d.path()).status.code(), Some(1));
    assert_eq!(sg(&["run", "--corpus", "c"], d.path()).status.code(), Some(1));
    assert_eq!(sg(&["--help"], d.path()).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(sg(&["score", "--corpus", "missing"], d.path()).status.code(), Some(2));
    small_corpus(d.path());
    std::fs::write(d.path().join("bad.json"), "{").unwrap();
    let o = sg(&["tune", "--corpus", "c", "--verifier", "bad.json", "--out", "p.json"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn protocol_violations_exit_3() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    for split in ["dev", "test"] {
        let o = sg(&["train-verifier", "--corpus", "c", "--split", split, "--out", "v.json"], d.path());
        assert_eq!(o.status.code(), Some(3), "{split}");
    }
    let o = sg(&["score", "--corpus", "c", "--split", "train"], d.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gen_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_corpus(a.path());
    small_corpus(b.path());
    for f in ["gold.jsonl", "outputs.jsonl", "schema.json", "profiles.json", "provenance.json"] {
        let x = std::fs::read(a.path().join("c").join(f)).unwrap();
        let y = std::fs::read(b.path().join("c").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let other = sg(&["gen", "--seed", "7", "--n", "400", "--out-dir", "c7"], a.path());
    assert!(other.status.success());
    assert_ne!(
        std::fs::read(a.path().join("c/gold.jsonl")).unwrap(),
        std::fs::read(a.path().join("c7/gold.jsonl")).unwrap()
    );
}

#[test]
fn three_step_flow_and_single_query() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    small_corpus(p);
    assert!(sg(&["train-verifier", "--corpus", "c", "--exclude", "phi3-like", "--out", "v.json"], p).status.success());
    assert!(sg(&["tune", "--corpus", "c", "--verifier", "v.json", "--grid-step", "0.1", "--out", "p.json"], p).status.success());
    let o = sg(&["run", "--corpus", "c", "--verifier", "v.json", "--policy", "p.json", "--out-dir", "r"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("safe override"));
    assert_eq!(std::fs::read_to_string(p.join("r/report.txt")).unwrap(), text);
    let rendered = sg(&["report", "--input", "r/report.json"], p);
    assert_eq!(String::from_utf8(rendered.stdout).unwrap(), text);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("r/report.json")).unwrap()).unwrap();
    assert_eq!(report["attestation"]["consumed"]["final_scoring"], serde_json::json!(["test"]));
    assert!(!report["config"]["verifier"]["train_models"]
        .as_array()
        .unwrap()
        .contains(&serde_json::json!("phi3-like")));

    std::fs::write(p.join("a.txt"), "```json\n{\"CAMERA\": \"Nikon Z6\", \"ISO\": \"800\"}\n```").unwrap();
    std::fs::write(p.join("b.txt"), "{\"CAMERA\": \"Sony A7 IV\", \"ISO\": \"100\"}").unwrap();
    let policy: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("p.json")).unwrap()).unwrap();
    let base = policy["policy"]["base_model"].as_str().unwrap().to_string();
    let cand_a = format!("{base}=a.txt");
    let o = sg(
        &[
            "run", "--query", "shot on a Nikon Z6 at ISO 800", "--candidate", &cand_a, "--candidate", "other=b.txt",
            "--verifier", "v.json", "--policy", "p.json",
        ],
        p,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["decisions"].as_array().unwrap().len(), 6);
    assert_ne!(v["record"]["CAMERA"], "Sony A7 IV");
}

#[test]
fn score_and_taxonomy_tables() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    let o = sg(&["score", "--corpus", "c", "--json"], d.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["models"].as_object().unwrap().len(), 6);
    for m in v["models"].as_object().unwrap().values() {
        assert!(m["css"].as_f64().unwrap() >= m["ros"].as_f64().unwrap());
    }
    let o = sg(&["taxonomy", "--input", "c/outputs.jsonl", "--json"], d.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["gemma2b-like"]["shares"]["fenced_json"].as_f64().unwrap() > 0.2);
}
