use std::io::Write;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use meterlab::bench::{export_csv, run_experiment, ExperimentConfig};
use meterlab::broker::{Broker, BrokerConfig, DEFAULT_TCP_PORT, DEFAULT_WS_PORT};
use meterlab::client::{parse_script, run_script, ClientEvent, ConnectOptions, Session};
use meterlab::instrument::{render_display, CircuitStimulus, DialPosition};
use meterlab::serial_link::{Fault, SourceSimulator};

#[derive(Parser)]
#[command(
    name = "meterlab",
    version,
    about = "Group-synchronized virtual multimeter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the broker (binary TCP plus JSON over WebSocket).
    Broker(BrokerArgs),
    /// Headless scripted learner.
    Learner(LearnerArgs),
    /// Emit simulated panel frames.
    DmmSim(DmmSimArgs),
    /// Response-time scaling experiment.
    Bench(BenchArgs),
}

#[derive(Args)]
struct BrokerArgs {
    #[arg(long, default_value_t = DEFAULT_TCP_PORT)]
    tcp_port: u16,
    #[arg(long, default_value_t = DEFAULT_WS_PORT)]
    ws_port: u16,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    liveness_timeout_ms: u64,
    #[arg(long, default_value_t = Ipv4Addr::UNSPECIFIED)]
    bind: Ipv4Addr,
}

#[derive(Args)]
struct LearnerArgs {
    /// host:port of the broker's TCP listener.
    #[arg(long)]
    broker: String,
    #[arg(long)]
    user: u32,
    #[arg(long)]
    group: u16,
    #[arg(long)]
    script: PathBuf,
    #[arg(long)]
    name: Option<String>,
    /// Keep listening this long after the last command.
    #[arg(long, default_value_t = 500)]
    settle_ms: u64,
}

#[derive(Args)]
struct DmmSimArgs {
    /// dc:<V>[,<r_series>,<r_probe>] | resistor:<ohms> | diode:<V>
    #[arg(long)]
    stimulus: CircuitStimulus,
    /// Range name (dcv-20v, ohm-2k, ...) or ordinal.
    #[arg(long)]
    dial: String,
    #[arg(long, default_value_t = 2.0)]
    rate: f64,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// flip@N, drop@N or dropK@N (1-based frame numbers).
    #[arg(long = "fault")]
    faults: Vec<String>,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write all frames at once instead of pacing at --rate.
    #[arg(long)]
    burst: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "127.0.0.1:7421")]
    broker: String,
    #[arg(long, default_value_t = 40)]
    learners: usize,
    #[arg(long, default_value_t = 3)]
    group_size: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    oversize_last: bool,
    #[arg(long, default_value_t = 20)]
    commands: usize,
    #[arg(long, default_value_t = 100)]
    pace_ms: u64,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

fn split_host_port(s: &str) -> Result<(String, u16), String> {
    let (host, port) = s
        .rsplit_once(':')
        .ok_or_else(|| format!("expected host:port, got {s:?}"))?;
    let port = port.parse().map_err(|_| format!("bad port in {s:?}"))?;
    Ok((host.to_string(), port))
}

fn parse_dial(s: &str) -> Option<DialPosition> {
    s.parse::<u8>()
        .ok()
        .and_then(DialPosition::from_ordinal)
        .or_else(|| DialPosition::from_name(s))
}

async fn broker(a: BrokerArgs) -> Result<(), String> {
    let config = BrokerConfig {
        tcp_addr: SocketAddr::from((a.bind, a.tcp_port)),
        ws_addr: Some(SocketAddr::from((a.bind, a.ws_port))),
        records: a.records,
        liveness_timeout: Duration::from_millis(a.liveness_timeout_ms),
    };
    let broker = Broker::start(config).await.map_err(|e| e.to_string())?;
    if let Some(f) = broker.storage_failure() {
        eprintln!("warning: {f}");
    }
    println!(
        "broker tcp={} ws={}",
        broker.tcp_addr(),
        broker.ws_url().unwrap_or_default()
    );
    tokio::signal::ctrl_c().await.map_err(|e| e.to_string())?;
    broker.shutdown().await;
    Ok(())
}

fn print_event(ev: &ClientEvent) {
    match ev {
        ClientEvent::StateChanged {
            seq, origin, state, ..
        } => println!(
            "seq={seq} control from={origin} dial={} power={} display={:?}",
            state.dial,
            state.power,
            state.display()
        ),
        ClientEvent::Reading {
            seq,
            origin,
            reading,
            ..
        } => println!("seq={seq} reading from={origin} {reading:?}"),
        ClientEvent::Chat {
            seq, origin, text, ..
        } => println!("seq={seq} chat from={origin} {text:?}"),
        ClientEvent::Roster { members } => {
            let ids: Vec<_> = members.iter().map(|m| m.id).collect();
            println!("roster {ids:?}");
        }
        ClientEvent::Error { kind, detail } => println!("error {kind}: {detail}"),
        ClientEvent::Pong { nonce, .. } => println!("pong {nonce}"),
        ClientEvent::ConnectionLost => println!("connection lost"),
    }
}

async fn learner(a: LearnerArgs) -> Result<(), String> {
    let (host, port) = split_host_port(&a.broker)?;
    let text =
        std::fs::read_to_string(&a.script).map_err(|e| format!("{}: {e}", a.script.display()))?;
    let lines = parse_script(&text).map_err(|e| e.to_string())?;
    let mut opts = ConnectOptions::new(host, port, a.user, a.group);
    if let Some(name) = a.name {
        opts = opts.name(name);
    }
    let mut session = Session::connect(opts).await.map_err(|e| e.to_string())?;
    println!("joined group {} state {}", a.group, session.display());
    let base = a.script.parent().map(PathBuf::from).unwrap_or_default();
    let outcome = run_script(&mut session, &lines, &base).await;
    outcome.map_err(|e| e.to_string())?;
    for ev in session
        .drain_until_idle(Duration::from_millis(a.settle_ms))
        .await
    {
        print_event(&ev);
    }
    println!(
        "final seq={} dial={} power={} display={:?}",
        session.last_seq(),
        session.state().dial,
        session.state().power,
        render_display(&session.state().panel())
    );
    session.leave().await.map_err(|e| e.to_string())?;
    Ok(())
}

async fn dmm_sim(a: DmmSimArgs) -> Result<(), String> {
    let dial = parse_dial(&a.dial).ok_or_else(|| format!("unknown dial position {:?}", a.dial))?;
    let mut sim = SourceSimulator::new(a.stimulus, dial, a.rate);
    for f in &a.faults {
        sim = sim.with_fault(Fault::parse(f).ok_or_else(|| format!("bad fault {f:?}"))?);
    }
    let mut sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| format!("{}: {e}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let io = |e: std::io::Error| e.to_string();
    if a.burst || a.rate <= 0.0 {
        sink.write_all(&sim.generate(a.count).map_err(|e| e.to_string())?)
            .map_err(io)?;
    } else {
        let mut next = tokio::time::Instant::now();
        for n in 1..=a.count {
            tokio::time::sleep_until(next).await;
            sink.write_all(&sim.frame_bytes(n).map_err(|e| e.to_string())?)
                .map_err(io)?;
            sink.flush().map_err(io)?;
            next += sim.interval();
        }
    }
    sink.flush().map_err(io)
}

async fn bench(a: BenchArgs) -> Result<(), String> {
    let (host, port) = split_host_port(&a.broker)?;
    let cfg = ExperimentConfig {
        broker_host: host,
        broker_port: port,
        total_learners: a.learners,
        group_size: a.group_size,
        oversize_last_group: a.oversize_last,
        commands_per_learner: a.commands,
        pace: Duration::from_millis(a.pace_ms),
        ..Default::default()
    };
    let report = run_experiment(&cfg).await.map_err(|e| e.to_string())?;
    export_csv(&report.stats, &a.out).map_err(|e| e.to_string())?;
    for (k, mean) in report.phase_means().iter().enumerate() {
        match mean {
            Some(m) => println!("phase {:>2}: mean {m:.3} ms", k + 1),
            None => println!("phase {:>2}: no samples", k + 1),
        }
    }
    println!(
        "sent={} delivered={}/{} loss={} spearman={}",
        report.sent,
        report.received_deliveries,
        report.expected_deliveries,
        report.loss(),
        report.trend().map_or("n/a".into(), |r| format!("{r:.3}"))
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Broker(a) => broker(a).await,
        Command::Learner(a) => learner(a).await,
        Command::DmmSim(a) => dmm_sim(a).await,
        Command::Bench(a) => bench(a).await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
