//! Three learners share one meter through an in-process broker.
//!
//! ```text
//! cargo run -p meterlab --example group_session
//! ```

use std::time::Duration;

use meterlab::broker::{Broker, BrokerConfig};
use meterlab::client::{ClientEvent, ConnectOptions, Session};
use meterlab::protocol::ControlParameter;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let broker = Broker::start(BrokerConfig::loopback()).await?;
    let port = broker.tcp_addr().port();

    let mut learners = Vec::new();
    for (id, name) in [(1, "ana"), (2, "ben"), (3, "chi")] {
        let opts = ConnectOptions::new("127.0.0.1", port, id, 1).name(name);
        learners.push(Session::connect(opts).await?);
    }

    learners[0]
        .send_control(ControlParameter::set_dial(6))
        .await?;
    learners[1].send_chat("switching to ohms").await?;
    learners[2]
        .send_control(ControlParameter::set_dial(4))
        .await?;
    learners[1]
        .send_control(ControlParameter::set_dial(1))
        .await?;

    for s in learners.iter_mut() {
        for ev in s.drain_until_idle(Duration::from_millis(200)).await {
            if let ClientEvent::Chat {
                seq, origin, text, ..
            } = ev
            {
                println!("user {} got chat #{seq} from {origin}: {text}", s.user_id());
            }
        }
    }
    for s in &learners {
        println!(
            "user {} seq={} display={:?}",
            s.user_id(),
            s.last_seq(),
            s.display()
        );
    }
    let snap = broker.registry().snapshot(1).unwrap();
    println!("broker state: {:?}", snap.state);

    for s in learners.iter_mut() {
        s.leave().await?;
    }
    broker.shutdown().await;
    Ok(())
}
