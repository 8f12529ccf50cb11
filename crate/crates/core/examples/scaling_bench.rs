//! A shortened run of the response-time scaling experiment.
//!
//! ```text
//! cargo run -p meterlab --example scaling_bench --release
//! ```

use std::time::Duration;

use meterlab::bench::{run_experiment, stats_csv, ExperimentConfig};
use meterlab::broker::{Broker, BrokerConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let broker = Broker::start(BrokerConfig::loopback()).await?;
    let cfg = ExperimentConfig {
        broker_port: broker.tcp_addr().port(),
        total_learners: 12,
        commands_per_learner: 5,
        pace: Duration::from_millis(20),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).await?;
    for (k, mean) in report.phase_means().iter().enumerate() {
        println!("phase {}: {:?} ms", k + 1, mean);
    }
    println!("loss={} spearman={:?}", report.loss(), report.trend());
    print!("{}", stats_csv(&report.stats));
    broker.shutdown().await;
    Ok(())
}
