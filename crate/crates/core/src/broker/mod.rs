//! The embedded broker: group registry, transports and learning records.
//!
//! ```no_run
//! # async fn demo() -> std::io::Result<()> {
//! use meterlab::broker::{Broker, BrokerConfig};
//!
//! let broker = Broker::start(BrokerConfig::loopback()).await?;
//! println!("tcp {} ws {:?}", broker.tcp_addr(), broker.ws_addr());
//! broker.shutdown().await;
//! # Ok(())
//! # }
//! ```

pub mod records;
pub mod registry;
mod server;

pub use records::{read_records, LearningRecord, RecordKind, RecordLog, StorageFailure};
pub use registry::{BrokerError, ConnectionStatus, GroupSnapshot, Registry, SessionHandle};
pub use server::{Broker, BrokerConfig, DEFAULT_TCP_PORT, DEFAULT_WS_PORT, WS_PATH};
