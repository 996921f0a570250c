use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde_json::Value;

struct Shard {
    child: Child,
    addr: String,
}

impl Drop for Shard {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Starts shardd on an ephemeral port and waits for its listening line.
fn shardd(id: u32, shards: u32, extra: &[&str]) -> Shard {
    let mut child = Command::new(env!("CARGO_BIN_EXE_shardd"))
        .args(["--listen", "127.0.0.1:0", "--shard-id", &id.to_string(), "--shards", &shards.to_string()])
        .args(extra)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stderr).lines().map_while(Result::ok) {
            let v: Value = serde_json::from_str(&line).expect("log lines are JSON");
            if let Some(addr) = v["msg"].as_str().and_then(|m| m.strip_prefix("listening on ")) {
                let _ = tx.send(addr.to_string());
            }
        }
    });
    let addr = rx.recv_timeout(Duration::from_secs(20)).expect("shardd did not start");
    Shard { child, addr }
}

fn cli(endpoints: &str, key_file: &std::path::Path, extra: &[&str], script: &str) -> Vec<Value> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_glass-cli"))
        .args(["--endpoints", endpoints, "--key-file", key_file.to_str().unwrap()])
        .args(extra)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(script.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn shell_audit_and_bench_against_two_shards() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("shard0");
    let s0 = shardd(0, 2, &["--data-dir", data.to_str().unwrap(), "--persist-interval-ms", "5"]);
    let s1 = shardd(1, 2, &[]);
    let endpoints = format!("{},{}", s0.addr, s1.addr);
    let key = dir.path().join("client.key");

    let out = cli(
        &endpoints,
        &key,
        &["--delay-ms", "0", "--shards", "2"],
        "begin\nput alpha 1\nput beta 2\nput gamma 3\ncommit\nverify\nget alpha\nbegin\nput alpha 4\ncommit\nhistory alpha\ndigest\nbogus\n",
    );
    assert!(out[0]["tid"].is_string());
    assert!(out[4]["promised_blocks"].is_object(), "{:?}", out[4]);
    assert_eq!(out[5]["verified"], true);
    assert_eq!(out[6]["value"], "1");
    let versions = out[10]["versions"].as_array().unwrap();
    assert_eq!(versions[0]["value"], "4");
    assert_eq!(versions[1]["value"], "1");
    assert_eq!(out[11]["digests"].as_object().unwrap().len(), 2);
    assert!(out[12]["error"].is_string());
    // The key file is reused, so the client id stays the same.
    assert!(key.exists());

    let checkpoint = dir.path().join("audit.json");
    let audit = Command::new(env!("CARGO_BIN_EXE_glass-audit"))
        .args(["--shard", &s0.addr, "--interval-s", "0", "--rounds", "2"])
        .args(["--checkpoint", checkpoint.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(audit.status.success(), "{}", String::from_utf8_lossy(&audit.stderr));
    assert!(audit.stdout.is_empty(), "honest shard produced evidence");
    let state: Value = serde_json::from_slice(&std::fs::read(&checkpoint).unwrap()).unwrap();
    assert!(state["digest"]["block_no"].as_u64().unwrap() >= 1);

    let report = dir.path().join("report.json");
    let bench = Command::new(env!("CARGO_BIN_EXE_glass-bench"))
        .args(["--workload", "y", "--clients", "2", "--delay-ms", "20", "--duration", "0.5", "--keys", "500"])
        .args(["--endpoints", &endpoints, "--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(bench.status.success(), "{}", String::from_utf8_lossy(&bench.stderr));
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["schema"], "glassdb-bench/1");
    assert!(r["committed"].as_u64().unwrap() > 0);
    assert_eq!(r["integrity_incidents"], 0);
    assert_eq!(r["verified"], r["committed"]);

    // A restarted shard recovers its ledger from the data directory.
    let before = cli(&endpoints, &key, &["--delay-ms", "0"], "digest 0\n")[0]["digests"]["0"].clone();
    drop(s0);
    let s0 = shardd(0, 2, &["--data-dir", data.to_str().unwrap()]);
    let endpoints = format!("{},{}", s0.addr, s1.addr);
    let after = cli(&endpoints, &key, &["--delay-ms", "0"], "digest 0\n")[0]["digests"]["0"].clone();
    assert_eq!(before, after);
}

#[test]
fn shardd_reads_toml_config_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("shard.toml");
    std::fs::write(&cfg, "listen = \"127.0.0.1:1\"\nshard_id = 0\nshards = 1\npersist_interval_ms = 50\n").unwrap();
    let s = shardd(0, 1, &["--config", cfg.to_str().unwrap()]);
    assert!(!s.addr.ends_with(":1"));
    let bad = Command::new(env!("CARGO_BIN_EXE_shardd"))
        .args(["--shard-id", "3", "--shards", "2"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
