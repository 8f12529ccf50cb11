//! JSON mapping used on the WebSocket transport.
//!
//! `{"kind":<name>,"origin":n,"group":n,"seq":n,"body":{...}}` with the kind
//! as its enum name. Control codes are written by name when known and as a
//! bare integer otherwise, so the mapping stays a bijection with the binary
//! model.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::instrument::{DialPosition, LastReading, MeterMode, MultimeterState};

use super::{
    Body, ControlCode, ControlParameter, ErrorBody, ErrorCode, Member, MessageEnvelope,
    MessageKind, ProtocolError, ReadingPayload, RosterBlock,
};

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    kind: &'a str,
    origin: u32,
    group: u16,
    seq: u32,
    body: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn {
    #[allow(dead_code)]
    kind: String,
    origin: u32,
    group: u16,
    seq: u32,
    body: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NameJson {
    name: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextJson {
    text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NonceJson {
    nonce: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CodeJson {
    Name(String),
    Raw(u8),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlJson {
    instrument: u8,
    code: CodeJson,
    value: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReadingJson {
    mode: String,
    range: u8,
    overload: bool,
    value_micro: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberJson {
    id: u32,
    name: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateJson {
    dial: u8,
    power: bool,
    overload: bool,
    value_micro: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RosterJson {
    members: Vec<MemberJson>,
    state: StateJson,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ErrorJson {
    code: String,
    detail: String,
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("body structs always serialize")
}

fn control_json(p: &ControlParameter) -> Value {
    to_value(ControlJson {
        instrument: p.instrument,
        code: match p.code.name() {
            Some(n) => CodeJson::Name(n.to_string()),
            None => CodeJson::Raw(p.code.0),
        },
        value: p.value,
    })
}

fn reading_json(r: &ReadingPayload) -> Value {
    to_value(ReadingJson {
        mode: r.mode.name().to_string(),
        range: r.range_ordinal,
        overload: r.overload,
        value_micro: r.value_micro,
    })
}

fn state_json(s: &MultimeterState) -> StateJson {
    StateJson {
        dial: s.dial.ordinal(),
        power: s.power,
        overload: s.last_reading.overload,
        value_micro: s.last_reading.value_micro,
    }
}

fn roster_json(r: &RosterBlock) -> Value {
    to_value(RosterJson {
        members: r
            .members
            .iter()
            .map(|m| MemberJson {
                id: m.id,
                name: m.name.clone(),
            })
            .collect(),
        state: state_json(&r.state),
    })
}

pub fn encode_json(env: &MessageEnvelope) -> Result<String, ProtocolError> {
    env.check_limits()?;
    let body = match &env.body {
        Body::Join { name } => to_value(NameJson { name: name.clone() }),
        Body::JoinAck(r) | Body::Leave(r) | Body::RosterUpdate(r) => roster_json(r),
        Body::Control(p) | Body::RelayControl(p) => control_json(p),
        Body::Chat { text } | Body::RelayChat { text } => to_value(TextJson { text: text.clone() }),
        Body::Measurement(r) | Body::RelayMeasurement(r) => reading_json(r),
        Body::Ping { nonce } | Body::Pong { nonce } => to_value(NonceJson { nonce: *nonce }),
        Body::Error(e) => to_value(ErrorJson {
            code: e.code.name().to_string(),
            detail: e.detail.clone(),
        }),
    };
    let out = EnvelopeOut {
        kind: env.kind().name(),
        origin: env.origin,
        group: env.group,
        seq: env.seq,
        body,
    };
    Ok(serde_json::to_string(&out).expect("envelope always serializes"))
}

fn parse<T: DeserializeOwned>(v: Value) -> Result<T, ProtocolError> {
    serde_json::from_value(v).map_err(|e| ProtocolError::MalformedText(e.to_string()))
}

fn parse_control(v: Value) -> Result<ControlParameter, ProtocolError> {
    let c: ControlJson = parse(v)?;
    let code = match c.code {
        CodeJson::Name(n) => ControlCode::from_name(&n)
            .ok_or_else(|| ProtocolError::invalid("code", format!("unknown control code {n:?}")))?,
        // named codes must use their name
        CodeJson::Raw(b) if ControlCode(b).name().is_some() => {
            return Err(ProtocolError::invalid(
                "code",
                "known code given as integer",
            ))
        }
        CodeJson::Raw(b) => ControlCode(b),
    };
    Ok(ControlParameter {
        instrument: c.instrument,
        code,
        value: c.value,
    })
}

fn parse_reading(v: Value) -> Result<ReadingPayload, ProtocolError> {
    let r: ReadingJson = parse(v)?;
    let mode = MeterMode::from_name(&r.mode)
        .ok_or_else(|| ProtocolError::invalid("mode", format!("unknown mode {:?}", r.mode)))?;
    if r.overload && r.value_micro != 0 {
        return Err(ProtocolError::invalid(
            "value_micro",
            "must be 0 on overload",
        ));
    }
    Ok(ReadingPayload {
        mode,
        range_ordinal: r.range,
        overload: r.overload,
        value_micro: r.value_micro,
    })
}

fn parse_roster(v: Value) -> Result<RosterBlock, ProtocolError> {
    let r: RosterJson = parse(v)?;
    let dial = DialPosition::from_ordinal(r.state.dial)
        .ok_or_else(|| ProtocolError::invalid("dial", format!("ordinal {}", r.state.dial)))?;
    if r.state.overload && r.state.value_micro != 0 {
        return Err(ProtocolError::invalid(
            "value_micro",
            "must be 0 on overload",
        ));
    }
    Ok(RosterBlock {
        members: r
            .members
            .into_iter()
            .map(|m| Member {
                id: m.id,
                name: m.name,
            })
            .collect(),
        state: MultimeterState {
            dial,
            power: r.state.power,
            last_reading: LastReading {
                overload: r.state.overload,
                value_micro: r.state.value_micro,
            },
        },
    })
}

pub fn decode_json(text: &str) -> Result<MessageEnvelope, ProtocolError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::MalformedText(e.to_string()))?;
    let kind_name = value
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::MalformedText("missing string field `kind`".into()))?;
    let kind = MessageKind::from_name(kind_name)
        .ok_or_else(|| ProtocolError::UnknownKind(kind_name.to_string()))?;
    let env: EnvelopeIn = parse(value)?;
    let b = env.body;
    let body = match kind {
        MessageKind::Join => Body::Join {
            name: parse::<NameJson>(b)?.name,
        },
        MessageKind::JoinAck => Body::JoinAck(parse_roster(b)?),
        MessageKind::Leave => Body::Leave(parse_roster(b)?),
        MessageKind::RosterUpdate => Body::RosterUpdate(parse_roster(b)?),
        MessageKind::Control => Body::Control(parse_control(b)?),
        MessageKind::RelayControl => Body::RelayControl(parse_control(b)?),
        MessageKind::Chat => Body::Chat {
            text: parse::<TextJson>(b)?.text,
        },
        MessageKind::RelayChat => Body::RelayChat {
            text: parse::<TextJson>(b)?.text,
        },
        MessageKind::Measurement => Body::Measurement(parse_reading(b)?),
        MessageKind::RelayMeasurement => Body::RelayMeasurement(parse_reading(b)?),
        MessageKind::Ping => Body::Ping {
            nonce: parse::<NonceJson>(b)?.nonce,
        },
        MessageKind::Pong => Body::Pong {
            nonce: parse::<NonceJson>(b)?.nonce,
        },
        MessageKind::Error => {
            let e: ErrorJson = parse(b)?;
            let code = ErrorCode::from_name(&e.code).ok_or_else(|| {
                ProtocolError::invalid("error code", format!("unknown code {:?}", e.code))
            })?;
            Body::Error(ErrorBody {
                code,
                detail: e.detail,
            })
        }
    };
    let env = MessageEnvelope {
        origin: env.origin,
        group: env.group,
        seq: env.seq,
        body,
    };
    env.check_limits()?;
    Ok(env)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::protocol::{decode_envelope, encode_envelope, strategies};

    const GOLDEN_CONTROL: &str = r#"{"kind":"CONTROL","origin":5,"group":2,"seq":0,"body":{"instrument":0,"code":"SET_DIAL","value":3}}"#;

    #[test]
    fn golden_control() {
        let env = MessageEnvelope::new(5, 2, Body::Control(ControlParameter::set_dial(3)));
        assert_eq!(encode_json(&env).unwrap(), GOLDEN_CONTROL);
        assert_eq!(decode_json(GOLDEN_CONTROL).unwrap(), env);
    }

    #[test]
    fn golden_relay_measurement() {
        let env = MessageEnvelope {
            origin: 9,
            group: 1,
            seq: 12,
            body: Body::RelayMeasurement(ReadingPayload {
                mode: MeterMode::Ohm,
                range_ordinal: 6,
                overload: false,
                value_micro: 1_000_000_000,
            }),
        };
        let text = r#"{"kind":"RELAY_MEASUREMENT","origin":9,"group":1,"seq":12,"body":{"mode":"OHM","range":6,"overload":false,"value_micro":1000000000}}"#;
        assert_eq!(encode_json(&env).unwrap(), text);
        assert_eq!(decode_json(text).unwrap(), env);
    }

    #[test]
    fn unknown_kind() {
        assert_eq!(
            decode_json(r#"{"kind":"NOPE"}"#).unwrap_err().class(),
            "UNKNOWN_KIND"
        );
    }

    #[test]
    fn malformed_text() {
        for text in [
            "",
            "not json",
            "[1,2]",
            r#"{"kind":"PING","origin":1,"group":0,"seq":0}"#,
            r#"{"kind":"PING","origin":1,"group":0,"seq":0,"body":{"nonce":1},"x":1}"#,
            r#"{"kind":"PING","origin":-1,"group":0,"seq":0,"body":{"nonce":1}}"#,
            r#"{"kind":"PING","origin":1,"group":70000,"seq":0,"body":{"nonce":1}}"#,
            r#"{"kind":"CONTROL","origin":1,"group":0,"seq":0,"body":{"instrument":0,"code":"SET_DIAL","value":1.5}}"#,
        ] {
            assert_eq!(
                decode_json(text).unwrap_err().class(),
                "MALFORMED_TEXT",
                "{text}"
            );
        }
    }

    #[test]
    fn unknown_control_codes_are_integers() {
        let env = MessageEnvelope::new(
            1,
            1,
            Body::Control(ControlParameter {
                instrument: 0,
                code: ControlCode(7),
                value: -1,
            }),
        );
        let text = encode_json(&env).unwrap();
        assert!(text.contains(r#""code":7"#));
        assert_eq!(decode_json(&text).unwrap(), env);
        let aliased = r#"{"kind":"CONTROL","origin":1,"group":1,"seq":0,"body":{"instrument":0,"code":0,"value":1}}"#;
        assert_eq!(decode_json(aliased).unwrap_err().class(), "INVALID_FIELD");
    }

    #[test]
    fn oversized_chat_rejected() {
        let text = format!(
            r#"{{"kind":"CHAT","origin":1,"group":1,"seq":0,"body":{{"text":"{}"}}}}"#,
            "y".repeat(65_536)
        );
        assert_eq!(decode_json(&text).unwrap_err().class(), "TOO_LONG");
    }

    proptest! {
        #[test]
        fn json_round_trip(env in strategies::envelope()) {
            let text = encode_json(&env).unwrap();
            prop_assert_eq!(decode_json(&text).unwrap(), env);
        }

        #[test]
        fn binary_json_binary_identity(env in strategies::envelope()) {
            let frame = encode_envelope(&env).unwrap();
            let via_json = decode_json(&encode_json(&decode_envelope(&frame).unwrap()).unwrap()).unwrap();
            prop_assert_eq!(encode_envelope(&via_json).unwrap(), frame);
        }
    }
}
