//! Simulated panel frames with injected faults, then the resyncing scanner.
//!
//! ```text
//! cargo run -p meterlab --example serial_resync
//! ```

use meterlab::instrument::{render_display, CircuitStimulus, DialPosition};
use meterlab::serial_link::{scan_stream, Fault, ScanEvent, SourceSimulator};

fn main() {
    let sim = SourceSimulator::new(
        CircuitStimulus::Resistor { ohms: 1500.0 },
        DialPosition::OHM_2K,
        2.0,
    )
    .with_fault(Fault::parse("flip@3").unwrap())
    .with_fault(Fault::parse("drop5@6").unwrap());

    let bytes = sim.generate(8).expect("valid stimulus");
    println!("{} bytes for 8 frames", bytes.len());

    for ev in scan_stream(&bytes) {
        match ev {
            ScanEvent::Reading { offset, reading } => {
                println!("@{offset:>3} reading {}", render_display(&reading))
            }
            ScanEvent::Diagnostic(d) => println!(
                "@{:>3} {} ({} bytes skipped)",
                d.offset,
                d.kind.class(),
                d.skipped
            ),
        }
    }
}
