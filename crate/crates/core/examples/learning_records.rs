//! Group activity lands in an append-only JSON-lines file.
//!
//! ```text
//! cargo run -p meterlab --example learning_records
//! ```

use std::time::Duration;

use meterlab::broker::{read_records, Broker, BrokerConfig};
use meterlab::client::{ConnectOptions, Session};
use meterlab::protocol::ControlParameter;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::temp_dir().join(format!("meterlab-records-{}.jsonl", std::process::id()));
    let broker = Broker::start(BrokerConfig::loopback().with_records(&path)).await?;
    let port = broker.tcp_addr().port();

    let mut s = Session::connect(ConnectOptions::new("127.0.0.1", port, 7, 2).name("dee")).await?;
    s.send_control(ControlParameter::set_dial(6)).await?;
    s.send_chat("reading the 1k resistor").await?;
    s.drain_until_idle(Duration::from_millis(100)).await;
    s.leave().await?;
    broker.shutdown().await;

    print!("{}", std::fs::read_to_string(&path)?);
    for r in read_records(&path)? {
        println!(
            "{:?} by user {} in group {}: {}",
            r.kind, r.user, r.group, r.detail
        );
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
