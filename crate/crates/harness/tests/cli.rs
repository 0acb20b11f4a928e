use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collab-harness")).args(args).output().expect("binary runs")
}

fn first_json(out: &Output) -> serde_json::Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().next().expect("a report line")).expect("json report")
}

#[test]
fn fuzz_reports_convergence() {
    let out = run(&["fuzz", "--replicas", "3", "--ops", "300", "--seed", "4", "--dup", "0.1", "--merge-every", "100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = first_json(&out);
    assert_eq!(r["converged"], true);
    assert_eq!(r["ops_executed"], 300);
}

#[test]
fn fuzz_exits_nonzero_with_witness_on_seeded_bug() {
    let out =
        run(&["fuzz", "--replicas", "8", "--ops", "1000", "--seed", "1", "--faulty", "0", "--checkpoint-every", "10"]);
    assert!(!out.status.success());
    let r = first_json(&out);
    assert_eq!(r["failure"]["kind"], "divergence");
    assert_eq!(r["failure"]["seed"], 1);
}

#[test]
fn bad_arguments_fail() {
    assert!(!run(&["fuzz", "--only", "nonsense"]).status.success());
    assert!(!run(&["fuzz", "--latency", "9:1"]).status.success());
    assert!(!run(&["scenario", "no-such-scenario"]).status.success());
}

#[test]
fn all_scenarios_pass() {
    let out = run(&["scenario", "all"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 5);
}

#[test]
fn trace_gen_then_bench() {
    let dir = std::env::temp_dir().join(format!("collab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let trace = dir.join("typing.tsv");
    assert!(run(&["trace", "gen", "--chars", "500", "--out", trace.to_str().unwrap()]).status.success());
    let out = run(&["bench", "--trace", trace.to_str().unwrap(), "--replicas", "2", "--batch-ms", "1000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = first_json(&out);
    assert_eq!(m["raw_text_bytes"], 500);
    assert_eq!(m["converged"], true);

    let triples = dir.join("edits.json");
    std::fs::write(&triples, r#"[[0,0,"hello"],[5,0," world"],[0,1,""]]"#).unwrap();
    let converted = dir.join("edits.tsv");
    assert!(run(&["trace", "convert", "--in", triples.to_str().unwrap(), "--out", converted.to_str().unwrap()])
        .status
        .success());
    let m = first_json(&run(&["bench", "--trace", converted.to_str().unwrap()]));
    assert_eq!(m["raw_text_bytes"], 10);
}

#[test]
fn save_then_load_round_trips() {
    let dir = std::env::temp_dir().join(format!("collab-save-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("doc.bin");
    let saved = first_json(&run(&["save", "--out", file.to_str().unwrap(), "--ops", "150", "--seed", "5"]));
    let loaded = first_json(&run(&["load", "--in", file.to_str().unwrap()]));
    assert_eq!(saved["digest"], loaded["digest"]);
    std::fs::write(&file, b"garbage").unwrap();
    assert!(!run(&["load", "--in", file.to_str().unwrap()]).status.success());
}
