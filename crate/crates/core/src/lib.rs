//! Group-synchronized virtual multimeter.
//!
//! A broker fans every control, chat and measurement message out to the
//! members of the sender's learning group and assigns per-group sequence
//! numbers, so that every member's virtual multimeter folds the same
//! parameters in the same order and shows the same reading.
//!
//! - [`protocol`]: message model, binary framing and JSON mapping
//! - [`instrument`]: the 3½-digit meter state machine and measurement math
//! - [`serial_link`]: emulated RS-232 panel frames, stream scanner, source simulator
//! - [`broker`]: group registry, TCP and WebSocket listeners, learning records
//! - [`client`]: learner session and scripted learner
//! - [`bench`]: response-time scaling experiment
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod bench;
pub mod broker;
pub mod client;
pub mod instrument;
pub mod protocol;
pub mod serial_link;
