//! One learner's bench meter feeds readings to the whole group.
//!
//! ```text
//! cargo run -p meterlab --example serial_into_group
//! ```

use std::time::Duration;

use meterlab::broker::{Broker, BrokerConfig};
use meterlab::client::{ClientEvent, ConnectOptions, Session};
use meterlab::instrument::{reading_panel, render_display, CircuitStimulus, DialPosition};
use meterlab::serial_link::{Fault, SourceSimulator};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let broker = Broker::start(BrokerConfig::loopback()).await?;
    let port = broker.tcp_addr().port();
    let mut owner = Session::connect(ConnectOptions::new("127.0.0.1", port, 1, 1)).await?;
    let mut peer = Session::connect(ConnectOptions::new("127.0.0.1", port, 2, 1)).await?;

    let stim: CircuitStimulus = "dc:9.2".parse()?;
    let frames = SourceSimulator::new(stim, DialPosition::DCV_20V, 4.0)
        .with_fault(Fault::parse("flip@2").unwrap())
        .generate(4)?;
    let report = owner.attach_serial(&frames).await?;
    println!(
        "published {} readings, {} diagnostics",
        report.published,
        report.diagnostics.len()
    );

    for ev in peer.drain_until_idle(Duration::from_millis(200)).await {
        if let ClientEvent::Reading {
            seq,
            origin,
            reading,
            ..
        } = ev
        {
            println!(
                "peer got #{seq} from {origin}: {}",
                render_display(&reading_panel(&reading)?)
            );
        }
    }
    println!("peer display now {:?}", peer.display());

    broker.shutdown().await;
    Ok(())
}
