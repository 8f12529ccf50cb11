//! Async framing over a byte stream.

use std::io;

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::{
    decode_payload, encode_envelope, MessageEnvelope, ProtocolError, LEN_PREFIX, MAX_PAYLOAD,
};

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Read one frame. `Ok(None)` on a clean end of stream at a frame boundary.
pub async fn read_envelope<R: AsyncRead + Unpin>(
    reader: &mut R,
) -> Result<Option<MessageEnvelope>, StreamError> {
    let mut prefix = [0u8; LEN_PREFIX];
    let mut filled = 0;
    while filled < LEN_PREFIX {
        let n = reader.read(&mut prefix[filled..]).await?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(ProtocolError::Truncated {
                needed: LEN_PREFIX,
                available: filled,
            }
            .into());
        }
        filled += n;
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::FrameTooLarge(len).into());
    }
    let mut payload = vec![0u8; len];
    if let Err(e) = reader.read_exact(&mut payload).await {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            return Err(ProtocolError::Truncated {
                needed: len,
                available: 0,
            }
            .into());
        }
        return Err(e.into());
    }
    Ok(Some(decode_payload(&payload)?))
}

pub async fn write_envelope<W: AsyncWrite + Unpin>(
    writer: &mut W,
    env: &MessageEnvelope,
) -> Result<(), StreamError> {
    let frame = encode_envelope(env)?;
    writer.write_all(&frame).await?;
    Ok(())
}
