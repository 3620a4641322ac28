// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Drives the `fastpay` binary against a committee of `run-shard` processes.

use std::net::{Ipv4Addr, TcpListener, UdpSocket};
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;

const FASTPAY: &str = env!("CARGO_BIN_EXE_fastpay");

fn fastpay(args: &[&str]) -> Output {
    Command::new(FASTPAY).args(args).output().expect("run fastpay")
}

fn ok_json(args: &[&str]) -> Value {
    let mut all = vec!["--format", "json"];
    all.extend_from_slice(args);
    let output = fastpay(&all);
    assert!(
        output.status.success(),
        "fastpay {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("json output")
}

fn port_is_free(port: u16) -> bool {
    UdpSocket::bind((Ipv4Addr::LOCALHOST, port)).is_ok() && TcpListener::bind((Ipv4Addr::LOCALHOST, port)).is_ok()
}

/// A base port followed by `count` ports that are free right now.
fn free_port_range(count: u16) -> u16 {
    let mut rng = rand::thread_rng();
    loop {
        let base = rng.gen_range(20_000..60_000);
        if (base..base + count).all(port_is_free) {
            return base;
        }
    }
}

struct Committee {
    dir: tempfile::TempDir,
    children: Vec<Child>,
    states: Vec<PathBuf>,
}

impl Committee {
    fn start(faults: usize, shards: u32) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let size = 3 * faults + 1;
        let base = free_port_range((size as u32 * shards) as u16);
        let committee = dir.path().join("committee.json");
        let keys = dir.path().join("keys");
        ok_json(&[
            "committee",
            "--faults",
            &faults.to_string(),
            "--shards",
            &shards.to_string(),
            "--base-port",
            &base.to_string(),
            "--out",
            committee.to_str().unwrap(),
            "--keys-dir",
            keys.to_str().unwrap(),
        ]);
        let mut children = Vec::new();
        let mut states = Vec::new();
        for i in 0..size {
            for shard in 0..shards {
                let state = dir.path().join(format!("auth{i:02}-{shard}.json"));
                let child = Command::new(FASTPAY)
                    .args(["run-shard", "--committee"])
                    .arg(&committee)
                    .arg("--key")
                    .arg(keys.join(format!("auth{i:02}.json")))
                    .args(["--shard", &shard.to_string(), "--stop-on-stdin-eof", "--state-out"])
                    .arg(&state)
                    .stdin(Stdio::piped())
                    .spawn()
                    .unwrap();
                children.push(child);
                states.push(state);
            }
        }
        let committee = Committee { dir, children, states };
        committee.wait_until_ready();
        committee
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }

    fn committee(&self) -> String {
        self.path("committee.json")
    }

    fn wait_until_ready(&self) {
        let deadline = Instant::now() + Duration::from_secs(20);
        let probe = "00".repeat(32);
        loop {
            let rows = ok_json(&[
                "query-authority",
                "--committee",
                &self.committee(),
                "--account",
                &probe,
                "--timeout-ms",
                "200",
            ]);
            let ready = rows
                .as_array()
                .unwrap()
                .iter()
                .all(|r| !r["error"].as_str().unwrap_or("").contains("unreachable"));
            if ready {
                return;
            }
            assert!(Instant::now() < deadline, "shards never came up: {rows}");
            std::thread::sleep(Duration::from_millis(100));
        }
    }

    /// Stops every shard and returns the paths of their final states.
    fn stop(mut self) -> (tempfile::TempDir, Vec<PathBuf>) {
        for child in &mut self.children {
            drop(child.stdin.take());
        }
        for child in &mut self.children {
            assert!(child.wait().unwrap().success());
        }
        (self.dir, self.states)
    }
}

fn keygen(path: &str) -> String {
    ok_json(&["keygen", "--out", path])["address"]
        .as_str()
        .unwrap()
        .to_string()
}

fn balance(committee: &Committee, wallet: &str) -> i64 {
    ok_json(&[
        "balance",
        "--wallet",
        wallet,
        "--committee",
        &committee.committee(),
        "--primary",
        &committee.path("primary.json"),
    ])["balance"]
        .as_i64()
        .unwrap()
}

#[test]
fn usage_errors_exit_with_status_2() {
    assert_eq!(fastpay(&["transfer"]).status.code(), Some(2));
    assert_eq!(fastpay(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn protocol_errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let output = fastpay(&["audit", "--primary", missing.to_str().unwrap(), "--state", "x"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).starts_with("error:"));
}

#[test]
fn keygen_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let wallet = dir.path().join("w.json");
    let wallet = wallet.to_str().unwrap();
    let address = keygen(wallet);
    assert_eq!(address.len(), 64);
    assert!(!fastpay(&["keygen", "--out", wallet]).status.success());
}

#[test]
fn fund_transfer_redeem_conserves_value() {
    let committee = Committee::start(1, 2);
    let alice = committee.path("alice.json");
    let bob = committee.path("bob.json");
    let alice_address = keygen(&alice);
    let bob_address = keygen(&bob);
    let primary = committee.path("primary.json");

    let funded = ok_json(&[
        "fund",
        "--primary",
        &primary,
        "--to",
        &alice_address,
        "--amount",
        "10",
        "--committee",
        &committee.committee(),
    ]);
    assert_eq!(funded["authorities_notified"], 4);
    assert_eq!(balance(&committee, &alice), 10);

    let certificate = committee.path("payment.json");
    let sent = ok_json(&[
        "transfer",
        "--wallet",
        &alice,
        "--committee",
        &committee.committee(),
        "--primary",
        &primary,
        "--to",
        &bob_address,
        "--amount",
        "4",
        "--certificate-out",
        &certificate,
    ]);
    assert_eq!(sent["sequence"], 0);
    assert_eq!(balance(&committee, &alice), 6);

    ok_json(&[
        "receive",
        "--wallet",
        &bob,
        "--committee",
        &committee.committee(),
        "--certificate",
        &certificate,
    ]);
    assert_eq!(balance(&committee, &bob), 4);

    let redeemed = ok_json(&[
        "redeem",
        "--primary",
        &primary,
        "--wallet",
        &bob,
        "--committee",
        &committee.committee(),
        "--amount",
        "3",
    ]);
    assert_eq!(redeemed["amount"], 3);
    assert_eq!(redeemed["primary_balance"], 3);
    assert_eq!(redeemed["recipient"], bob_address.as_str());

    // A confirmation only needs a quorum; syncing reaches the rest.
    ok_json(&["sync", "--wallet", &bob, "--committee", &committee.committee()]);
    let rows = ok_json(&[
        "query-authority",
        "--committee",
        &committee.committee(),
        "--account",
        &bob_address,
    ]);
    for row in rows.as_array().unwrap() {
        assert_eq!(row["balance"], 1, "{row}");
        assert_eq!(row["next_sequence"], 1, "{row}");
    }

    let payouts = 3;
    let remaining = balance(&committee, &alice) + balance(&committee, &bob);
    assert_eq!(payouts + remaining, 10);

    let (_dir, states) = committee.stop();
    let mut args = vec!["audit".to_string(), "--primary".into(), primary.clone()];
    for state in &states {
        args.push("--state".into());
        args.push(state.to_str().unwrap().into());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let report = ok_json(&args);
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);
    assert_eq!(report["authorities_checked"], 8);
}

#[test]
fn redeeming_a_certificate_twice_is_refused() {
    let committee = Committee::start(0, 1);
    let alice = committee.path("alice.json");
    let alice_address = keygen(&alice);
    let primary = committee.path("primary.json");
    ok_json(&[
        "fund",
        "--primary",
        &primary,
        "--to",
        &alice_address,
        "--amount",
        "5",
        "--committee",
        &committee.committee(),
    ]);
    let certificate = committee.path("out.json");
    ok_json(&[
        "transfer",
        "--wallet",
        &alice,
        "--committee",
        &committee.committee(),
        "--primary",
        &primary,
        "--to",
        &alice_address,
        "--to-primary",
        "--amount",
        "5",
        "--certificate-out",
        &certificate,
    ]);
    let first = ok_json(&["redeem", "--primary", &primary, "--certificate", &certificate]);
    assert_eq!(first["amount"], 5);
    let before = std::fs::read(&primary).unwrap();
    let second = fastpay(&["redeem", "--primary", &primary, "--certificate", &certificate]);
    assert!(!second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("redeemed"));
    assert_eq!(std::fs::read(&primary).unwrap(), before);
    committee.stop();
}
