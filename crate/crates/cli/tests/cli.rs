use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pktact(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pktact"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PKTACT_SALT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = pktact(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_synth(dir: &Path) {
    ok(
        &[
            "synth",
            "--seed",
            "3",
            "--tcp-flows",
            "12",
            "--udp-flows",
            "4",
            "--icmp-flows",
            "2",
            "--out",
            "s",
        ],
        dir,
    );
}

#[test]
fn synth_lift_compile_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_synth(d);
    assert!(d.join("s/trace.pcap").exists());
    let truth = json(&d.join("s/truth.json"));
    assert_eq!(truth["flows"], 18);
    assert!(d.join("s/run.manifest.json").exists());

    ok(&["lift", "s/trace.pcap", "--out", "a.jsonl"], d);
    let m = json(&d.join("a.jsonl.manifest.json"));
    assert_eq!(m["subcommand"], "lift");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    ok(
        &[
            "compile", "a.jsonl", "--out", "o.pcap", "--salt", "11", "--report", "rep.json",
        ],
        d,
    );
    assert_eq!(json(&d.join("rep.json"))["packets"], truth["packets"]);
    ok(
        &[
            "validate",
            "o.pcap",
            "--actions",
            "a.jsonl",
            "--require-private",
            "--out",
            "v.json",
        ],
        d,
    );
    assert_eq!(
        json(&d.join("v.json"))["violations"]
            .as_array()
            .unwrap()
            .len(),
        0
    );
}

#[test]
fn salt_from_environment_matches_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_synth(d);
    ok(&["lift", "s/trace.pcap", "--out", "a.jsonl"], d);
    ok(
        &["compile", "a.jsonl", "--out", "flag.pcap", "--salt", "42"],
        d,
    );
    let out = Command::new(env!("CARGO_BIN_EXE_pktact"))
        .args(["compile", "a.jsonl", "--out", "env.pcap"])
        .current_dir(d)
        .env("PKTACT_SALT", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    ok(
        &["compile", "a.jsonl", "--out", "other.pcap", "--salt", "43"],
        d,
    );
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("flag.pcap"), read("env.pcap"));
    assert_ne!(read("flag.pcap"), read("other.pcap"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(pktact(&["lift", "missing.pcap"], d).status.code(), Some(1));
    std::fs::write(d.join("junk.pcap"), b"not a capture").unwrap();
    assert_eq!(
        pktact(&["lift", "junk.pcap", "--out", "x.jsonl"], d)
            .status
            .code(),
        Some(1)
    );

    small_synth(d);
    // The generator uses documentation and shared address space, not 10/8.
    let out = pktact(
        &[
            "validate",
            "s/trace.pcap",
            "--require-private",
            "--out",
            "v.json",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_compile_aborts_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_synth(d);
    ok(&["lift", "s/trace.pcap", "--out", "a.jsonl"], d);
    let text = std::fs::read_to_string(d.join("a.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // Give the first data-less ack a payload, which the compiler must coerce.
    let idx = lines
        .iter()
        .position(|l| l.contains("\"tcp_ctrl\":\"ack\""))
        .unwrap();
    let mut v: Value = serde_json::from_str(&lines[idx]).unwrap();
    v["l4_payload_len_d"] = serde_json::json!([0, 0, 0, 9]);
    lines[idx] = v.to_string();
    std::fs::write(d.join("b.jsonl"), lines.join("\n") + "\n").unwrap();

    ok(
        &[
            "compile",
            "b.jsonl",
            "--out",
            "lenient.pcap",
            "--report",
            "r.json",
        ],
        d,
    );
    assert!(!json(&d.join("r.json"))["coercions"]
        .as_object()
        .unwrap()
        .is_empty());
    let out = pktact(
        &["compile", "b.jsonl", "--out", "strict.pcap", "--strict"],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn roundtrip_report_is_exact_on_synthetic_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_synth(d);
    ok(
        &[
            "roundtrip",
            "s/trace.pcap",
            "--salt",
            "5",
            "--report",
            "r.json",
        ],
        d,
    );
    let r = json(&d.join("r.json"));
    assert_eq!(r["action_exact_match"], 1.0);
    let agg = &r["metrics"]["aggregate"]["metrics"];
    for k in [
        "count_err",
        "proto_tv",
        "iat_tv",
        "flow_dur_tv",
        "pkt_size_tv",
        "transition_distance",
    ] {
        assert_eq!(agg[k], 0.0, "{k}");
    }
}

#[test]
fn shard_then_metrics_with_pairs_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_synth(d);
    ok(
        &[
            "--jobs",
            "2",
            "shard",
            "s/trace.pcap",
            "--budget",
            "150",
            "--out",
            "ref",
            "--splits",
            "0.6,0.2,0.2",
        ],
        d,
    );
    let plan = json(&d.join("ref/plan.json"));
    let shards = plan["shards"].as_array().unwrap();
    assert!(shards.len() >= 3);
    assert_eq!(plan["splits"]["train"]["start"], 0);

    std::fs::create_dir(d.join("dec")).unwrap();
    let mut pairs = Vec::new();
    for (i, s) in shards.iter().enumerate() {
        let f = s["file"].as_str().unwrap();
        let acts = format!("a{i}.jsonl");
        ok(&["lift", &format!("ref/{f}"), "--out", &acts], d);
        let out = format!("dec/out_{i}.pcap");
        ok(&["compile", &acts, "--out", &out, "--salt", "77"], d);
        pairs.push(serde_json::json!({"shard_id": format!("s{i}"), "ref": f, "dec": format!("out_{i}.pcap")}));
    }
    std::fs::write(
        d.join("pairs.json"),
        serde_json::json!({ "pairs": pairs }).to_string(),
    )
    .unwrap();
    ok(
        &[
            "--jobs",
            "3",
            "metrics",
            "--ref",
            "ref",
            "--dec",
            "dec",
            "--pairs",
            "pairs.json",
            "--out",
            "m.json",
            "--csv",
            "m.csv",
        ],
        d,
    );
    let m = json(&d.join("m.json"));
    assert_eq!(m["per_shard"].as_array().unwrap().len(), shards.len());
    assert_eq!(m["aggregate"]["metrics"]["coverage"], 1.0);
    let csv = std::fs::read_to_string(d.join("m.csv")).unwrap();
    assert_eq!(csv.lines().count(), shards.len() + 2);

    // Without the pairing manifest the names do not line up.
    let out = pktact(
        &[
            "metrics", "--ref", "ref", "--dec", "dec", "--out", "bad.json",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
}
