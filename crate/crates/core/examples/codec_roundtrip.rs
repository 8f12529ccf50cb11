//! Encode one envelope both ways and decode it back.
//!
//! ```text
//! cargo run -p meterlab --example codec_roundtrip
//! ```

use meterlab::protocol::{
    decode_envelope, decode_json, encode_envelope, encode_json, Body, ControlParameter,
    MessageEnvelope,
};

fn main() {
    let env = MessageEnvelope::new(5, 2, Body::Control(ControlParameter::set_dial(3)));

    let frame = encode_envelope(&env).expect("encodable");
    let hex: Vec<String> = frame.iter().map(|b| format!("{b:02X}")).collect();
    println!("binary ({} bytes): {}", frame.len(), hex.join(" "));

    let json = encode_json(&env).expect("encodable");
    println!("json: {json}");

    assert_eq!(decode_envelope(&frame).unwrap(), env);
    assert_eq!(decode_json(&json).unwrap(), env);

    let mut broken = frame.clone();
    broken[4] = 0xFF;
    match decode_envelope(&broken) {
        Err(e) => println!("kind byte 0xFF -> {}: {e}", e.class()),
        Ok(_) => unreachable!(),
    }
}
