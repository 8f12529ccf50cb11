//! What the virtual meter shows for a few circuits.
//!
//! ```text
//! cargo run -p meterlab --example meter_readings
//! ```

use meterlab::instrument::{
    measure, render_display, CircuitStimulus, DialPosition, MultimeterState,
};

fn main() {
    let cases = [
        (
            "10 V behind 10M/10M",
            "dc:10,10e6,10e6",
            DialPosition::DCV_20V,
        ),
        ("ideal 1.5 V cell", "dc:1.5", DialPosition::DCV_2V),
        ("ideal 1.5 V cell", "dc:1.5", DialPosition::DCV_200MV),
        ("4.7 kΩ", "resistor:4700", DialPosition::OHM_20K),
        ("250 Ω", "resistor:250", DialPosition::OHM_200),
        ("silicon diode", "diode:0.62", DialPosition::DIODE),
    ];
    for (label, stim, dial) in cases {
        let stim: CircuitStimulus = stim.parse().expect("valid stimulus");
        let state = MultimeterState {
            dial,
            ..MultimeterState::default()
        };
        let reading = measure(&stim, &state).expect("valid state");
        println!(
            "{label:<22} on {dial:<10} -> {:>10}",
            render_display(&reading)
        );
    }

    let off = MultimeterState {
        power: false,
        ..MultimeterState::default()
    };
    println!("{:<22} -> {:?}", "powered off", off.display());
}
