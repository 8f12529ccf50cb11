use crate::instrument::{DialPosition, LastReading, MeterMode, MultimeterState};

use super::{
    Body, ControlCode, ControlParameter, ErrorBody, ErrorCode, Member, MessageEnvelope,
    MessageKind, ProtocolError, ReadingPayload, RosterBlock, HEADER_LEN, LEN_PREFIX, MAX_PAYLOAD,
};

/// Encode one envelope as `[len: u32 BE][kind][origin][group][seq][body]`.
pub fn encode_envelope(env: &MessageEnvelope) -> Result<Vec<u8>, ProtocolError> {
    env.check_limits()?;
    let mut out = Vec::with_capacity(LEN_PREFIX + HEADER_LEN + 16);
    out.extend_from_slice(&[0; LEN_PREFIX]);
    out.push(env.kind() as u8);
    out.extend_from_slice(&env.origin.to_be_bytes());
    out.extend_from_slice(&env.group.to_be_bytes());
    out.extend_from_slice(&env.seq.to_be_bytes());
    match &env.body {
        Body::Join { name } => put_short_str(&mut out, name),
        Body::JoinAck(r) | Body::Leave(r) | Body::RosterUpdate(r) => put_roster(&mut out, r),
        Body::Control(p) | Body::RelayControl(p) => {
            out.push(p.instrument);
            out.push(p.code.0);
            out.extend_from_slice(&p.value.to_be_bytes());
        }
        Body::Chat { text } | Body::RelayChat { text } => put_long_str(&mut out, text),
        Body::Measurement(r) | Body::RelayMeasurement(r) => {
            out.push(r.mode.wire());
            out.push(r.range_ordinal);
            out.push(r.overload as u8);
            out.extend_from_slice(&r.value_micro.to_be_bytes());
        }
        Body::Ping { nonce } | Body::Pong { nonce } => out.extend_from_slice(&nonce.to_be_bytes()),
        Body::Error(e) => {
            out.push(e.code as u8);
            put_long_str(&mut out, &e.detail);
        }
    }
    let payload_len = out.len() - LEN_PREFIX;
    debug_assert!(payload_len <= MAX_PAYLOAD);
    out[..LEN_PREFIX].copy_from_slice(&(payload_len as u32).to_be_bytes());
    Ok(out)
}

/// Decode one complete frame, length prefix included.
pub fn decode_envelope(frame: &[u8]) -> Result<MessageEnvelope, ProtocolError> {
    if frame.len() < LEN_PREFIX {
        return Err(ProtocolError::Truncated {
            needed: LEN_PREFIX,
            available: frame.len(),
        });
    }
    let len = u32::from_be_bytes(frame[..LEN_PREFIX].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    let payload = &frame[LEN_PREFIX..];
    if payload.len() < len {
        return Err(ProtocolError::Truncated {
            needed: len,
            available: payload.len(),
        });
    }
    if payload.len() > len {
        return Err(ProtocolError::TrailingBytes(payload.len() - len));
    }
    decode_payload(payload)
}

/// Decode a payload whose length prefix has already been consumed.
pub fn decode_payload(payload: &[u8]) -> Result<MessageEnvelope, ProtocolError> {
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let kind_byte = r.u8()?;
    let kind = MessageKind::from_u8(kind_byte)
        .ok_or_else(|| ProtocolError::UnknownKind(format!("0x{kind_byte:02X}")))?;
    let origin = r.u32()?;
    let group = r.u16()?;
    let seq = r.u32()?;
    let body = match kind {
        MessageKind::Join => Body::Join {
            name: r.short_str("name")?,
        },
        MessageKind::JoinAck => Body::JoinAck(r.roster()?),
        MessageKind::Leave => Body::Leave(r.roster()?),
        MessageKind::RosterUpdate => Body::RosterUpdate(r.roster()?),
        MessageKind::Control => Body::Control(r.control()?),
        MessageKind::RelayControl => Body::RelayControl(r.control()?),
        MessageKind::Chat => Body::Chat {
            text: r.long_str("text")?,
        },
        MessageKind::RelayChat => Body::RelayChat {
            text: r.long_str("text")?,
        },
        MessageKind::Measurement => Body::Measurement(r.reading()?),
        MessageKind::RelayMeasurement => Body::RelayMeasurement(r.reading()?),
        MessageKind::Ping => Body::Ping { nonce: r.u64()? },
        MessageKind::Pong => Body::Pong { nonce: r.u64()? },
        MessageKind::Error => {
            let code_byte = r.u8()?;
            let code = ErrorCode::from_u8(code_byte).ok_or_else(|| {
                ProtocolError::invalid("error code", format!("unknown code {code_byte}"))
            })?;
            Body::Error(ErrorBody {
                code,
                detail: r.long_str("detail")?,
            })
        }
    };
    let extra = payload.len() - r.pos;
    if extra > 0 {
        return Err(ProtocolError::TrailingBytes(extra));
    }
    Ok(MessageEnvelope {
        origin,
        group,
        seq,
        body,
    })
}

fn put_short_str(out: &mut Vec<u8>, s: &str) {
    out.push(s.len() as u8);
    out.extend_from_slice(s.as_bytes());
}

fn put_long_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_roster(out: &mut Vec<u8>, r: &RosterBlock) {
    out.push(r.members.len() as u8);
    for m in &r.members {
        out.extend_from_slice(&m.id.to_be_bytes());
        put_short_str(out, &m.name);
    }
    put_state(out, &r.state);
}

pub(super) fn put_state(out: &mut Vec<u8>, s: &MultimeterState) {
    out.push(s.dial.ordinal());
    out.push(s.power as u8);
    out.push(s.last_reading.overload as u8);
    out.extend_from_slice(&s.last_reading.value_micro.to_be_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(ProtocolError::Truncated {
                needed: self.pos + n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, ProtocolError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn flag(&mut self, field: &'static str) -> Result<bool, ProtocolError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(ProtocolError::invalid(field, format!("{b} is not 0 or 1"))),
        }
    }

    fn utf8(&mut self, field: &'static str, len: usize) -> Result<String, ProtocolError> {
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| ProtocolError::invalid(field, "not valid UTF-8"))
    }

    fn short_str(&mut self, field: &'static str) -> Result<String, ProtocolError> {
        let len = self.u8()? as usize;
        self.utf8(field, len)
    }

    fn long_str(&mut self, field: &'static str) -> Result<String, ProtocolError> {
        let len = self.u16()? as usize;
        self.utf8(field, len)
    }

    fn control(&mut self) -> Result<ControlParameter, ProtocolError> {
        Ok(ControlParameter {
            instrument: self.u8()?,
            code: ControlCode(self.u8()?),
            value: self.i64()?,
        })
    }

    fn reading(&mut self) -> Result<ReadingPayload, ProtocolError> {
        let mode_byte = self.u8()?;
        let mode = MeterMode::from_wire(mode_byte)
            .ok_or_else(|| ProtocolError::invalid("mode", format!("unknown mode {mode_byte}")))?;
        let range_ordinal = self.u8()?;
        let overload = self.flag("overload")?;
        let value_micro = self.i64()?;
        if overload && value_micro != 0 {
            return Err(ProtocolError::invalid(
                "value_micro",
                "must be 0 on overload",
            ));
        }
        Ok(ReadingPayload {
            mode,
            range_ordinal,
            overload,
            value_micro,
        })
    }

    fn state(&mut self) -> Result<MultimeterState, ProtocolError> {
        let dial_byte = self.u8()?;
        let dial = DialPosition::from_ordinal(dial_byte)
            .ok_or_else(|| ProtocolError::invalid("dial", format!("ordinal {dial_byte}")))?;
        let power = self.flag("power")?;
        let overload = self.flag("overload")?;
        let value_micro = self.i64()?;
        if overload && value_micro != 0 {
            return Err(ProtocolError::invalid(
                "last_value_micro",
                "must be 0 on overload",
            ));
        }
        Ok(MultimeterState {
            dial,
            power,
            last_reading: LastReading {
                overload,
                value_micro,
            },
        })
    }

    fn roster(&mut self) -> Result<RosterBlock, ProtocolError> {
        let count = self.u8()? as usize;
        let mut members = Vec::with_capacity(count);
        for _ in 0..count {
            let id = self.u32()?;
            let name = self.short_str("name")?;
            members.push(Member { id, name });
        }
        let state = self.state()?;
        Ok(RosterBlock { members, state })
    }
}
