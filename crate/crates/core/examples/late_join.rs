//! A learner joining mid-session receives the current meter state at once.
//!
//! ```text
//! cargo run -p meterlab --example late_join
//! ```

use std::time::Duration;

use meterlab::broker::{Broker, BrokerConfig};
use meterlab::client::{ConnectOptions, Session};
use meterlab::protocol::ControlParameter;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let broker = Broker::start(BrokerConfig::loopback()).await?;
    let port = broker.tcp_addr().port();

    let mut early = Session::connect(ConnectOptions::new("127.0.0.1", port, 10, 3)).await?;
    for dial in [1, 5, 9] {
        early.send_control(ControlParameter::set_dial(dial)).await?;
    }
    early.drain_until_idle(Duration::from_millis(100)).await;
    println!(
        "early learner: seq={} {:?}",
        early.last_seq(),
        early.display()
    );

    let late = Session::connect(ConnectOptions::new("127.0.0.1", port, 11, 3)).await?;
    println!(
        "late learner:  seq={} dial={} roster={:?}",
        late.last_seq(),
        late.state().dial,
        late.roster().iter().map(|m| m.id).collect::<Vec<_>>()
    );
    assert_eq!(late.state(), early.state());

    broker.shutdown().await;
    Ok(())
}
