// SPDX-License-Identifier: Apache-2.0

mod common;

use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use common::*;
use relay_agent::{Journal, ServiceClient};
use relay_core::TransferPhase;
use relay_harness::{start_shaper, NetworkProfile};
use relay_service::{spawn_server, ServiceConfig, StorageService};
use serde_json::Value;

fn json(stdout: &[u8]) -> Value {
    serde_json::from_slice(stdout).unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(stdout)))
}

fn stage(root: &std::path::Path, rel: &str, data: &[u8]) -> std::path::PathBuf {
    let path = root.join(rel);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&path, data).unwrap();
    path
}

fn agent_args(staging: &std::path::Path, url: &str, cred: &std::path::Path) -> Vec<String> {
    [
        "agent", "run", "--staging", staging.to_str().unwrap(), "--server", url, "--credential", cred.to_str().unwrap(),
        "--stability-window", "0ms", "--scan-interval", "50ms",
    ]
    .map(String::from)
    .to_vec()
}

#[test]
fn every_subcommand_has_help() {
    for args in [
        &["--help"][..],
        &["agent", "--help"],
        &["agent", "run", "--help"],
        &["serve", "--help"],
        &["bench", "--help"],
        &["stats", "--help"],
        &["config", "--help"],
        &["config", "show", "--help"],
    ] {
        let out = relayctl().args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{args:?}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-credential.json");
    let out = relayctl()
        .args(["agent", "run", "--staging"])
        .arg(dir.path())
        .args(["--server", "http://127.0.0.1:9"])
        .arg("--credential")
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));

    let out = relayctl().args(["bench", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = relayctl().args(["agent", "run", "--staging", "x", "--chunk-size", "3 parsecs"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = relayctl().args(["bench", "--profile", "no-such-profile"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn serve_refuses_second_instance_and_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    provision(dir.path(), &data);
    let mut first = serve(&data, &[]);

    let out = relayctl().args(["serve", "--listen", "127.0.0.1:0", "--data-root"]).arg(&data).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    let port = first.url.trim_start_matches("http://").to_string();
    let out = relayctl()
        .args(["serve", "--listen", &port, "--data-root"])
        .arg(dir.path().join("other"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot listen"));

    sigterm(&first.child);
    let status = wait_timeout(&mut first.child, Duration::from_secs(10)).expect("serve stops on SIGTERM");
    assert_eq!(status.code(), Some(0));
}

#[tokio::test]
async fn quota_flag_reaches_the_service() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    provision(dir.path(), &data);
    let server = serve(&data, &["--quota", "10KiB"]);
    let client = ServiceClient::new(&server.url, credential()).unwrap();
    let small = relay_core::manifest::build_manifest_from_reader(&[1u8; 8 << 10][..], "alice", "ok", relay_core::Category::Experimental, 4096).unwrap();
    let large = relay_core::manifest::build_manifest_from_reader(&[2u8; 12 << 10][..], "bob", "big", relay_core::Category::Experimental, 4096).unwrap();
    client.init_upload(&small).await.unwrap();
    let err = client.init_upload(&large).await.unwrap_err();
    assert!(err.to_string().to_lowercase().contains("quota"), "{err}");
}

#[tokio::test]
async fn agent_uploads_and_stats_see_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cred = provision(dir.path(), &data);
    let server = serve(&data, &[]);
    let staging = dir.path().join("stage");
    let a = payload(300_000, 1);
    let b = payload(5, 2);
    stage(&staging, "alice/experimental/run1.bin", &a);
    stage(&staging, "bob/theoretical/notes.txt", &b);
    stage(&staging, "mallory/x.bin", b"unregistered");

    let mut agent = relayctl()
        .args(agent_args(&staging, &server.url, &cred))
        .args(["--chunk-size", "64KiB"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let archived = staging.join(".archived");
    assert!(wait_for(Duration::from_secs(30), || !staging.join("alice/experimental/run1.bin").exists()
        && !staging.join("bob/theoretical/notes.txt").exists()));
    assert!(archived.join("alice/experimental").read_dir().unwrap().count() == 1);
    assert!(staging.join("mallory/x.bin").exists());

    sigterm(&agent);
    let status = wait_timeout(&mut agent, Duration::from_secs(10)).expect("agent stops on SIGTERM");
    assert_eq!(status.code(), Some(0));
    let summary = json(&agent.wait_with_output().unwrap().stdout);
    assert_eq!(summary["committed"], 2);
    assert!(staging.join(".relay-journal").exists());

    let client = ServiceClient::new(&server.url, credential()).unwrap();
    assert_eq!(client.get_object("alice", "experimental/run1.bin").await.unwrap(), a);
    assert_eq!(client.get_object("bob", "theoretical/notes.txt").await.unwrap(), b);

    let out = relayctl().args(["stats", "--server", &server.url]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out.stdout);
    assert_eq!(report["file_count_total"], 2);
    assert_eq!(report["total_volume"], 300_005);
    assert_eq!(report["volume_by_category"]["theoretical"], 5);
    assert_eq!(report["user_count"], 2);

    let out = relayctl().args(["stats", "--cumulative-by", "month", "--data-root"]).arg(&data).output().unwrap();
    let series = json(&out.stdout);
    assert_eq!(series.as_array().unwrap().len(), 1);
    assert_eq!(series[0]["report"]["total_volume"], 300_005);
    let remote = json(&relayctl().args(["stats", "--cumulative-by", "month", "--server", &server.url]).output().unwrap().stdout);
    assert_eq!(series, remote);
}

#[test]
fn sigterm_mid_upload_leaves_exact_progress_then_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cred_path = dir.path().join("device.json");
    write_json(&cred_path, &credential());
    let rt = tokio::runtime::Runtime::new().unwrap();
    let service = Arc::new(StorageService::open(ServiceConfig::new(dir.path().join("data"), vec![credential()])).unwrap());
    let server = rt.block_on(spawn_server(service.clone(), "127.0.0.1:0".parse().unwrap())).unwrap();
    let shaper = start_shaper(&NetworkProfile::direct("slow", 1.0, Some(2.0)), server.addr).unwrap();

    let staging = dir.path().join("stage");
    let data = payload(2 << 20, 3);
    stage(&staging, "alice/big.bin", &data);
    let args = agent_args(&staging, &shaper.url(), &cred_path);

    let mut agent = relayctl().args(&args).args(["--chunk-size", "128KiB"]).stdout(Stdio::null()).spawn().unwrap();
    assert!(wait_for(Duration::from_secs(30), || shaper.stats().bytes_upstream.load(std::sync::atomic::Ordering::Relaxed) > 700_000));
    sigterm(&agent);
    assert_eq!(wait_timeout(&mut agent, Duration::from_secs(10)).unwrap().code(), Some(0));

    let (journal, _) = Journal::open(&staging.join(".relay-journal")).unwrap();
    let entry = journal.latest_for_path("alice", "big.bin").unwrap();
    assert_eq!(entry.phase, TransferPhase::Uploading);
    let acked = entry.acked_chunks.len();
    assert!(acked > 0 && acked < 16, "{acked} chunks acked");
    drop(journal);
    assert!(service.objects().is_empty());

    // let bytes still sitting in socket buffers drain through the shaper
    let upstream = || shaper.stats().bytes_upstream.load(std::sync::atomic::Ordering::Relaxed);
    let mut before = upstream();
    while {
        std::thread::sleep(Duration::from_millis(300));
        let now = upstream();
        std::mem::replace(&mut before, now) != now
    } {}
    let mut agent = relayctl().args(&args).args(["--chunk-size", "128KiB"]).stdout(Stdio::null()).spawn().unwrap();
    assert!(wait_for(Duration::from_secs(30), || service.objects().len() == 1));
    sigterm(&agent);
    assert_eq!(wait_timeout(&mut agent, Duration::from_secs(10)).unwrap().code(), Some(0));
    let resent = upstream() - before;
    // journaled chunks are not sent again; at most one unjournaled ack per stream
    assert!(resent < ((16 - acked + 4) * (128 << 10)) as u64, "resent {resent} bytes, {acked} acked");
    let principal = relay_service::Principal {
        device_id: credential().device_id,
        registered_users: vec!["alice".into()],
    };
    assert_eq!(service.get_object(&principal, "alice", "big.bin").unwrap(), data);
}

#[test]
fn config_show_layers_flag_env_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("relay.toml");
    std::fs::write(&file, "server_url = \"http://from-file:1\"\ncredential_path = \"/file/cred.json\"\ndata_root = \"/file/data\"\n").unwrap();
    let out = relayctl()
        .env("RELAY_CONFIG", &file)
        .env("RELAY_SERVER_URL", "http://from-env:2")
        .env("RELAY_CREDENTIAL_FILE", "/env/cred.json")
        .args(["config", "show", "--credential", "/flag/cred.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let cfg = json(&out.stdout);
    assert_eq!(cfg["credential_path"]["value"], "/flag/cred.json");
    assert_eq!(cfg["credential_path"]["source"], "flag");
    assert_eq!(cfg["server_url"]["value"], "http://from-env:2");
    assert_eq!(cfg["server_url"]["source"], "env");
    assert_eq!(cfg["data_root"]["value"], "/file/data");
    assert_eq!(cfg["data_root"]["source"], "file");
    assert_eq!(cfg["log_level"]["value"], "warn");

    std::fs::write(&file, "no_such_key = 1\n").unwrap();
    let out = relayctl().args(["config", "show", "--config"]).arg(&file).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_dump_profiles_is_the_catalog() {
    let out = relayctl().args(["bench", "--dump-profiles"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let cat: Vec<NetworkProfile> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cat, relay_harness::builtin_catalog());
}

#[test]
fn bench_reports_and_cleans_up() {
    let dir = tempfile::tempdir().unwrap();
    let tmp = dir.path().join("tmp");
    std::fs::create_dir(&tmp).unwrap();
    let csv = dir.path().join("runs.csv");
    let out = relayctl()
        .env("TMPDIR", &tmp)
        .args(["bench", "--profile", "arim-jupyter-direct", "--files", "2", "--size", "256KiB", "--chunk-size", "64KiB", "--reps", "3", "--csv"])
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out.stdout);
    assert_eq!(report["reports"].as_array().unwrap().len(), 1);
    assert_eq!(report["reports"][0]["run_samples"].as_array().unwrap().len(), 3);
    assert!(report["reports"][0]["median_throughput_MBps"].as_f64().unwrap() > 0.0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
    assert_eq!(tmp.read_dir().unwrap().count(), 0, "bench left files behind");
}

#[test]
fn broken_ordering_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = dir.path().join("catalog.json");
    std::fs::write(
        &catalog,
        r#"[{"name":"arim-jupyter-direct","base_rtt_ms":0.5,"bandwidth_cap_MBps":2,"route":"direct"},
            {"name":"fugaku-west","base_rtt_ms":0.5,"bandwidth_cap_MBps":40,"route":"direct"}]"#,
    )
    .unwrap();
    let out = relayctl()
        .args(["bench", "--all-profiles", "--files", "1", "--size", "512KiB", "--chunk-size", "64KiB", "--reps", "1", "--assert-ordering", "--catalog"])
        .arg(&catalog)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out.stdout);
    assert_eq!(report["ordering_violations"][0]["faster"], "arim-jupyter-direct");
}

#[test]
fn stats_on_empty_missing_and_corrupt_ledgers() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.ledger");
    std::fs::write(&empty, "").unwrap();
    let out = relayctl().args(["stats", "--ledger"]).arg(&empty).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out.stdout);
    assert_eq!(report["total_volume"], 0);
    assert_eq!(report["file_count_total"], 0);
    assert_eq!(report["user_count"], 0);

    let out = relayctl().args(["stats", "--ledger"]).arg(dir.path().join("absent")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let corrupt = dir.path().join("corrupt.ledger");
    std::fs::write(&corrupt, "{not json\n{\"also\": \"bad\"}\n").unwrap();
    let out = relayctl().args(["stats", "--ledger"]).arg(&corrupt).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
