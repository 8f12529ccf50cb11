//! Learner-side session over the binary TCP transport.
//!
//! Local controls are applied to a provisional display copy right away and
//! sent to the broker. The authoritative state only moves when the broker's
//! sequenced relays come back, so every member folds the same stream.

pub mod script;

use std::collections::VecDeque;
use std::io;
use std::time::Duration;

use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::instrument::{
    apply_control, apply_reading, render_display, validate_control, validate_reading,
    InstrumentError, MultimeterState,
};
use crate::protocol::stream::{read_envelope, write_envelope, StreamError};
use crate::protocol::{
    Body, ControlParameter, ErrorCode, GroupId, Member, MessageEnvelope, ReadingPayload,
    RosterBlock, UserId, MAX_TEXT_LEN,
};
use crate::serial_link::{Diagnostic, ScanEvent, Scanner};

pub use script::{parse_script, run_script, ScriptCommand, ScriptError, ScriptLine};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("CONNECT_TIMEOUT: no JOIN_ACK from {addr} within {timeout:?}")]
    ConnectTimeout { addr: String, timeout: Duration },
    #[error("UNREACHABLE: {addr}: {source}")]
    Unreachable {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("REFUSED({code}): {detail}")]
    Refused { code: ErrorCode, detail: String },
    #[error("NOT_CONNECTED")]
    NotConnected,
    #[error("INVALID_PARAMETER: {0}")]
    InvalidParameter(#[from] InstrumentError),
    #[error("TEXT_TOO_LONG: {0} bytes, maximum is 65535")]
    TextTooLong(usize),
    #[error("transport: {0}")]
    Transport(#[from] StreamError),
    #[error("unexpected reply to JOIN: {0}")]
    Handshake(String),
}

impl ClientError {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientError::ConnectTimeout { .. } => "CONNECT_TIMEOUT",
            ClientError::Unreachable { .. } => "UNREACHABLE",
            ClientError::Refused { .. } => "REFUSED",
            ClientError::NotConnected => "NOT_CONNECTED",
            ClientError::InvalidParameter(_) => "INVALID_PARAMETER",
            ClientError::TextTooLong(_) => "TEXT_TOO_LONG",
            ClientError::Transport(_) => "TRANSPORT",
            ClientError::Handshake(_) => "HANDSHAKE",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConnectOptions {
    pub host: String,
    pub port: u16,
    pub user_id: UserId,
    pub group: GroupId,
    pub name: String,
    /// Bound on TCP connect plus JOIN_ACK.
    pub timeout: Duration,
}

impl ConnectOptions {
    pub fn new(host: impl Into<String>, port: u16, user_id: UserId, group: GroupId) -> Self {
        ConnectOptions {
            host: host.into(),
            port,
            user_id,
            group,
            name: format!("learner-{user_id}"),
            timeout: Duration::from_secs(5),
        }
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientEvent {
    /// A relayed control moved the authoritative state.
    StateChanged {
        seq: u32,
        origin: UserId,
        state: MultimeterState,
        received_at: Instant,
    },
    Chat {
        seq: u32,
        origin: UserId,
        text: String,
        received_at: Instant,
    },
    Reading {
        seq: u32,
        origin: UserId,
        reading: ReadingPayload,
        received_at: Instant,
    },
    Roster {
        members: Vec<Member>,
    },
    /// Broker error frames, serial diagnostics and sequence gaps.
    Error {
        kind: String,
        detail: String,
    },
    Pong {
        nonce: u64,
        received_at: Instant,
    },
    /// Terminal: the transport is gone.
    ConnectionLost,
}

/// What one serial attach produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SerialReport {
    pub published: usize,
    pub blank: usize,
    pub diagnostics: Vec<Diagnostic>,
}

type Inbound = (Instant, Option<MessageEnvelope>);

pub struct Session {
    opts: ConnectOptions,
    writer: Option<OwnedWriteHalf>,
    inbox: mpsc::UnboundedReceiver<Inbound>,
    reader: JoinHandle<()>,
    state: MultimeterState,
    last_seq: u32,
    pending: VecDeque<ControlParameter>,
    roster: Vec<Member>,
    local: VecDeque<ClientEvent>,
    lost: bool,
}

impl Drop for Session {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

impl Session {
    /// Open the transport, JOIN, and wait for the JOIN_ACK.
    pub async fn connect(opts: ConnectOptions) -> Result<Session, ClientError> {
        let addr = opts.addr();
        let timeout = opts.timeout;
        match tokio::time::timeout(timeout, Self::handshake(opts)).await {
            Ok(r) => r,
            Err(_) => Err(ClientError::ConnectTimeout { addr, timeout }),
        }
    }

    async fn handshake(opts: ConnectOptions) -> Result<Session, ClientError> {
        let addr = opts.addr();
        let stream = TcpStream::connect(&addr)
            .await
            .map_err(|source| ClientError::Unreachable { addr, source })?;
        let _ = stream.set_nodelay(true);
        let (mut rd, mut wr) = stream.into_split();
        let join = MessageEnvelope::new(
            opts.user_id,
            opts.group,
            Body::Join {
                name: opts.name.clone(),
            },
        );
        write_envelope(&mut wr, &join).await?;
        let ack = loop {
            let env = read_envelope(&mut rd)
                .await?
                .ok_or_else(|| ClientError::Handshake("connection closed".into()))?;
            match env.body {
                Body::JoinAck(r) => break (env.seq, r),
                Body::Error(e) => {
                    return Err(ClientError::Refused {
                        code: e.code,
                        detail: e.detail,
                    })
                }
                Body::Pong { .. } => continue,
                other => return Err(ClientError::Handshake(other.kind().name().into())),
            }
        };
        let (seq, RosterBlock { members, state }) = ack;

        let (tx, inbox) = mpsc::unbounded_channel();
        let reader = tokio::spawn(async move {
            loop {
                match read_envelope(&mut rd).await {
                    Ok(Some(env)) => {
                        if tx.send((Instant::now(), Some(env))).is_err() {
                            return;
                        }
                    }
                    Ok(None) | Err(_) => {
                        let _ = tx.send((Instant::now(), None));
                        return;
                    }
                }
            }
        });
        Ok(Session {
            opts,
            writer: Some(wr),
            inbox,
            reader,
            state,
            last_seq: seq,
            pending: VecDeque::new(),
            roster: members,
            local: VecDeque::new(),
            lost: false,
        })
    }

    pub fn user_id(&self) -> UserId {
        self.opts.user_id
    }

    pub fn group(&self) -> GroupId {
        self.opts.group
    }

    pub fn options(&self) -> &ConnectOptions {
        &self.opts
    }

    /// Fold of the JOIN_ACK state and every relay applied so far.
    pub fn state(&self) -> MultimeterState {
        self.state
    }

    /// What the learner sees: the authoritative state with unconfirmed
    /// local controls applied on top.
    pub fn display_state(&self) -> MultimeterState {
        self.pending
            .iter()
            .fold(self.state, |s, p| apply_control(&s, p).unwrap_or(s))
    }

    pub fn display(&self) -> String {
        render_display(&self.display_state().panel())
    }

    pub fn last_seq(&self) -> u32 {
        self.last_seq
    }

    pub fn roster(&self) -> &[Member] {
        &self.roster
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn is_connected(&self) -> bool {
        self.writer.is_some() && !self.lost
    }

    async fn transmit(&mut self, body: Body) -> Result<(), ClientError> {
        if self.lost {
            return Err(ClientError::NotConnected);
        }
        let env = MessageEnvelope::new(self.opts.user_id, self.opts.group, body);
        let wr = self.writer.as_mut().ok_or(ClientError::NotConnected)?;
        if let Err(e) = write_envelope(wr, &env).await {
            self.writer = None;
            return Err(e.into());
        }
        Ok(())
    }

    pub async fn send_control(&mut self, p: ControlParameter) -> Result<(), ClientError> {
        if !self.is_connected() {
            return Err(ClientError::NotConnected);
        }
        validate_control(&p)?;
        self.pending.push_back(p);
        if let Err(e) = self.transmit(Body::Control(p)).await {
            self.pending.pop_back();
            return Err(e);
        }
        Ok(())
    }

    pub async fn send_chat(&mut self, text: impl Into<String>) -> Result<(), ClientError> {
        let text = text.into();
        if text.len() > MAX_TEXT_LEN {
            return Err(ClientError::TextTooLong(text.len()));
        }
        self.transmit(Body::Chat { text }).await
    }

    pub async fn send_measurement(&mut self, r: ReadingPayload) -> Result<(), ClientError> {
        if !self.is_connected() {
            return Err(ClientError::NotConnected);
        }
        validate_reading(&r)?;
        self.transmit(Body::Measurement(r)).await
    }

    pub async fn ping(&mut self, nonce: u64) -> Result<(), ClientError> {
        self.transmit(Body::Ping { nonce }).await
    }

    /// Scan a complete panel-frame stream and publish every reading it
    /// holds. Diagnostics stay local and show up as error events.
    pub async fn attach_serial(&mut self, bytes: &[u8]) -> Result<SerialReport, ClientError> {
        if !self.is_connected() {
            return Err(ClientError::NotConnected);
        }
        let mut scanner = Scanner::new();
        let mut report = SerialReport::default();
        let mut events = scanner.push(bytes);
        events.extend(scanner.finish());
        self.publish_scan(events, &mut report).await?;
        Ok(report)
    }

    /// Like [`Session::attach_serial`] but reads the stream incrementally,
    /// publishing each reading as soon as its frame is complete.
    pub async fn attach_serial_reader<R: AsyncRead + Unpin>(
        &mut self,
        mut source: R,
    ) -> Result<SerialReport, ClientError> {
        if !self.is_connected() {
            return Err(ClientError::NotConnected);
        }
        let mut scanner = Scanner::new();
        let mut report = SerialReport::default();
        let mut buf = [0u8; 256];
        loop {
            let n = source
                .read(&mut buf)
                .await
                .map_err(|e| ClientError::Transport(e.into()))?;
            if n == 0 {
                break;
            }
            let events = scanner.push(&buf[..n]);
            self.publish_scan(events, &mut report).await?;
        }
        let events = scanner.finish();
        self.publish_scan(events, &mut report).await?;
        Ok(report)
    }

    async fn publish_scan(
        &mut self,
        events: Vec<ScanEvent>,
        report: &mut SerialReport,
    ) -> Result<(), ClientError> {
        for ev in events {
            match ev {
                ScanEvent::Reading { reading, .. } => match reading.to_payload() {
                    Some(p) => {
                        self.send_measurement(p).await?;
                        report.published += 1;
                    }
                    None => report.blank += 1,
                },
                ScanEvent::Diagnostic(d) => {
                    self.local.push_back(ClientEvent::Error {
                        kind: d.kind.class().to_string(),
                        detail: format!(
                            "serial: {} bytes skipped at offset {} ({:?})",
                            d.skipped, d.offset, d.kind
                        ),
                    });
                    report.diagnostics.push(d);
                }
            }
        }
        Ok(())
    }

    /// Send LEAVE and close the transport.
    pub async fn leave(&mut self) -> Result<(), ClientError> {
        self.transmit(Body::Leave(RosterBlock::default())).await?;
        if let Some(mut wr) = self.writer.take() {
            let _ = wr.shutdown().await;
        }
        Ok(())
    }

    /// Everything received so far, in broker order. Never blocks.
    pub fn poll_events(&mut self) -> Vec<ClientEvent> {
        let mut out: Vec<ClientEvent> = self.local.drain(..).collect();
        while let Ok(item) = self.inbox.try_recv() {
            self.absorb(item, &mut out);
        }
        out
    }

    /// Wait for the next event. `None` once the connection is lost and
    /// everything has been drained. Cancel-safe.
    pub async fn next_event(&mut self) -> Option<ClientEvent> {
        loop {
            if let Some(ev) = self.local.pop_front() {
                return Some(ev);
            }
            let item = self.inbox.recv().await?;
            let mut out = Vec::with_capacity(2);
            self.absorb(item, &mut out);
            self.local.extend(out);
        }
    }

    /// Collect events until none arrive for `idle`.
    pub async fn drain_until_idle(&mut self, idle: Duration) -> Vec<ClientEvent> {
        let mut out = Vec::new();
        while let Ok(Some(ev)) = tokio::time::timeout(idle, self.next_event()).await {
            out.push(ev);
        }
        out
    }

    fn sequenced(&mut self, seq: u32, out: &mut Vec<ClientEvent>) {
        if seq != self.last_seq.wrapping_add(1) {
            out.push(ClientEvent::Error {
                kind: "SEQUENCE_GAP".into(),
                detail: format!("expected seq {}, got {seq}", self.last_seq.wrapping_add(1)),
            });
        }
        self.last_seq = seq;
    }

    fn absorb(&mut self, (received_at, env): Inbound, out: &mut Vec<ClientEvent>) {
        let Some(env) = env else {
            if !self.lost {
                self.lost = true;
                self.pending.clear();
                out.push(ClientEvent::ConnectionLost);
            }
            return;
        };
        let (seq, origin) = (env.seq, env.origin);
        match env.body {
            Body::RelayControl(p) => {
                self.sequenced(seq, out);
                if origin == self.opts.user_id && self.pending.front() == Some(&p) {
                    self.pending.pop_front();
                }
                match apply_control(&self.state, &p) {
                    Ok(s) => self.state = s,
                    Err(e) => out.push(ClientEvent::Error {
                        kind: "INVALID_PARAMETER".into(),
                        detail: e.to_string(),
                    }),
                }
                out.push(ClientEvent::StateChanged {
                    seq,
                    origin,
                    state: self.state,
                    received_at,
                });
            }
            Body::RelayMeasurement(reading) => {
                self.sequenced(seq, out);
                match apply_reading(&self.state, &reading) {
                    Ok(s) => self.state = s,
                    Err(e) => out.push(ClientEvent::Error {
                        kind: "INVALID_PARAMETER".into(),
                        detail: e.to_string(),
                    }),
                }
                out.push(ClientEvent::Reading {
                    seq,
                    origin,
                    reading,
                    received_at,
                });
            }
            Body::RelayChat { text } => {
                self.sequenced(seq, out);
                out.push(ClientEvent::Chat {
                    seq,
                    origin,
                    text,
                    received_at,
                });
            }
            Body::RosterUpdate(r) | Body::JoinAck(r) => {
                self.roster = r.members.clone();
                out.push(ClientEvent::Roster { members: r.members });
            }
            Body::Pong { nonce } => out.push(ClientEvent::Pong { nonce, received_at }),
            Body::Error(e) => out.push(ClientEvent::Error {
                kind: e.code.name().to_string(),
                detail: e.detail,
            }),
            other => out.push(ClientEvent::Error {
                kind: ErrorCode::UnexpectedKind.name().to_string(),
                detail: format!("unexpected {} from broker", other.kind().name()),
            }),
        }
    }
}
