mod common;

use std::process::{Command, Output};

use common::broker;
use meterlab::instrument::render_display;
use meterlab::serial_link::{scan_stream, ScanEvent};

const BIN: &str = env!("CARGO_BIN_EXE_meterlab");

async fn run(args: Vec<String>) -> Output {
    tokio::task::spawn_blocking(move || Command::new(BIN).args(args).output().unwrap())
        .await
        .unwrap()
}

fn args(s: &[&str]) -> Vec<String> {
    s.iter().map(|a| a.to_string()).collect()
}

#[tokio::test]
async fn dmm_sim_writes_frames() {
    let out = run(args(&[
        "dmm-sim",
        "--stimulus",
        "dc:5",
        "--dial",
        "dcv-20v",
        "--count",
        "4",
        "--burst",
    ]))
    .await;
    assert!(out.status.success());
    assert_eq!(out.stdout.len(), 4 * 14);
    let shown: Vec<String> = scan_stream(&out.stdout)
        .into_iter()
        .map(|e| match e {
            ScanEvent::Reading { reading, .. } => render_display(&reading),
            ScanEvent::Diagnostic(d) => panic!("{d:?}"),
        })
        .collect();
    assert_eq!(shown, vec!["5.00 V"; 4]);
}

#[tokio::test]
async fn dmm_sim_faults_and_file_sink() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.bin");
    let out = run(args(&[
        "dmm-sim",
        "--stimulus",
        "resistor:1000",
        "--dial",
        "6",
        "--count",
        "5",
        "--rate",
        "200",
        "--fault",
        "flip@3",
        "--out",
        path.to_str().unwrap(),
    ]))
    .await;
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let events = scan_stream(&std::fs::read(&path).unwrap());
    let readings = events
        .iter()
        .filter(|e| matches!(e, ScanEvent::Reading { .. }))
        .count();
    assert_eq!((readings, events.len()), (4, 5));
}

#[tokio::test]
async fn dmm_sim_rejects_bad_input() {
    for bad in [
        args(&["dmm-sim", "--stimulus", "coil:1", "--dial", "dcv-2v"]),
        args(&["dmm-sim", "--stimulus", "dc:1", "--dial", "dcv-3v"]),
        args(&[
            "dmm-sim",
            "--stimulus",
            "dc:1",
            "--dial",
            "1",
            "--fault",
            "melt@2",
        ]),
    ] {
        assert!(!run(bad).await.status.success());
    }
}

#[tokio::test]
async fn learner_runs_a_script() {
    let b = broker().await;
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("s.txt");
    std::fs::write(&script, "@0 dial ohm-2m\n@20 chat hello\n@40 power 0\n").unwrap();
    let out = run(args(&[
        "learner",
        "--broker",
        &b.tcp_addr().to_string(),
        "--user",
        "3",
        "--group",
        "4",
        "--script",
        script.to_str().unwrap(),
        "--settle-ms",
        "200",
    ]))
    .await;
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("seq=2 chat from=3 \"hello\""), "{stdout}");
    assert!(
        stdout.contains("final seq=3 dial=ohm-2m power=false"),
        "{stdout}"
    );
    let snap = b.registry().snapshot(4).unwrap();
    assert_eq!(snap.state.dial.to_string(), "ohm-2m");
}

#[tokio::test]
async fn bench_cli_writes_csv() {
    let b = broker().await;
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let out = run(args(&[
        "bench",
        "--broker",
        &b.tcp_addr().to_string(),
        "--learners",
        "6",
        "--group-size",
        "3",
        "--commands",
        "3",
        "--pace-ms",
        "10",
        "--out",
        csv.to_str().unwrap(),
    ]))
    .await;
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("loss=0"), "{stdout}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "phase,n_learners,group,mean_ms,median_ms,p95_ms,samples"
    );
    // 2 phases x (2 groups + aggregate)
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[2].starts_with("1,3,2,,,,0"));
}

#[tokio::test]
async fn broker_cli_starts_and_warns_on_bad_records() {
    let port = |_: u8| {
        std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port()
    };
    let (tcp, ws) = (port(0), port(1));
    let mut child = Command::new(BIN)
        .args(args(&[
            "broker",
            "--bind",
            "127.0.0.1",
            "--tcp-port",
            &tcp.to_string(),
            "--ws-port",
            &ws.to_string(),
            "--records",
            "/nonexistent/dir/r.jsonl",
            "--liveness-timeout-ms",
            "1000",
        ]))
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut connected = false;
    for _ in 0..50 {
        if std::net::TcpStream::connect(("127.0.0.1", tcp)).is_ok() {
            connected = true;
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    child.kill().unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(connected);
    assert!(String::from_utf8_lossy(&out.stderr).contains("STORAGE_FAILURE"));
}
