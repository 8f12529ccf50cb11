use std::io;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncWriteExt, BufWriter};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch, Notify};
use tokio::task::{JoinHandle, JoinSet};
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tokio_tungstenite::tungstenite::http;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::WebSocketStream;

use crate::protocol::stream::{read_envelope, StreamError};
use crate::protocol::{
    decode_json, encode_envelope, encode_json, Body, ErrorBody, ErrorCode, GroupId,
    MessageEnvelope, ProtocolError,
};

use super::records::RecordLog;
use super::registry::{BrokerError, ConnectionStatus, Registry, SessionHandle};

pub const DEFAULT_TCP_PORT: u16 = 7421;
pub const DEFAULT_WS_PORT: u16 = 7422;
pub const WS_PATH: &str = "/ws";

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub tcp_addr: SocketAddr,
    /// `None` disables the WebSocket listener.
    pub ws_addr: Option<SocketAddr>,
    pub records: Option<PathBuf>,
    pub liveness_timeout: Duration,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            tcp_addr: (Ipv4Addr::UNSPECIFIED, DEFAULT_TCP_PORT).into(),
            ws_addr: Some((Ipv4Addr::UNSPECIFIED, DEFAULT_WS_PORT).into()),
            records: None,
            liveness_timeout: Duration::from_secs(10),
        }
    }
}

impl BrokerConfig {
    /// Both listeners on ephemeral loopback ports.
    pub fn loopback() -> Self {
        BrokerConfig {
            tcp_addr: (Ipv4Addr::LOCALHOST, 0).into(),
            ws_addr: Some((Ipv4Addr::LOCALHOST, 0).into()),
            ..Default::default()
        }
    }

    pub fn with_records(mut self, path: impl Into<PathBuf>) -> Self {
        self.records = Some(path.into());
        self
    }
}

/// A running broker. Dropping it without [`Broker::shutdown`] aborts the
/// listeners.
pub struct Broker {
    registry: Arc<Registry>,
    tcp_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    storage_failure: Option<String>,
    shutdown: watch::Sender<bool>,
    accept: Option<JoinHandle<()>>,
}

impl Broker {
    pub async fn start(config: BrokerConfig) -> io::Result<Broker> {
        let (records, storage_failure) = match &config.records {
            None => (RecordLog::disabled(), None),
            Some(path) => match RecordLog::open(path) {
                Ok(log) => (log, None),
                Err(e) => {
                    tracing::warn!("{e}; continuing without learning records");
                    (RecordLog::disabled(), Some(e.to_string()))
                }
            },
        };
        let registry = Arc::new(Registry::new(records));
        let tcp = TcpListener::bind(config.tcp_addr).await?;
        let ws = match config.ws_addr {
            Some(addr) => Some(TcpListener::bind(addr).await?),
            None => None,
        };
        let tcp_addr = tcp.local_addr()?;
        let ws_addr = ws.as_ref().map(|l| l.local_addr()).transpose()?;
        let (shutdown, shutdown_rx) = watch::channel(false);
        let accept = tokio::spawn(accept_loop(
            tcp,
            ws,
            registry.clone(),
            config.liveness_timeout,
            shutdown_rx,
        ));
        tracing::info!(%tcp_addr, ?ws_addr, "broker listening");
        Ok(Broker {
            registry,
            tcp_addr,
            ws_addr,
            storage_failure,
            shutdown,
            accept: Some(accept),
        })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// `ws://host:port/ws`, when the WebSocket listener is enabled.
    pub fn ws_url(&self) -> Option<String> {
        self.ws_addr.map(|a| format!("ws://{a}{WS_PATH}"))
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Set when the record log could not be opened at startup.
    pub fn storage_failure(&self) -> Option<&str> {
        self.storage_failure.as_deref()
    }

    pub fn flush_records(&self) {
        self.registry.records().flush();
    }

    /// Stop accepting, let every connection leave its group, then close the
    /// record log.
    pub async fn shutdown(mut self) {
        let _ = self.shutdown.send(true);
        if let Some(accept) = self.accept.take() {
            let _ = accept.await;
        }
        self.registry.records().close();
    }
}

impl Drop for Broker {
    fn drop(&mut self) {
        if let Some(accept) = self.accept.take() {
            accept.abort();
        }
    }
}

async fn accept_loop(
    tcp: TcpListener,
    ws: Option<TcpListener>,
    registry: Arc<Registry>,
    liveness: Duration,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut conns = JoinSet::new();
    loop {
        let (stream, peer, is_ws) = tokio::select! {
            r = tcp.accept() => match r {
                Ok((s, p)) => (s, p, false),
                Err(e) => { tracing::warn!(error = %e, "tcp accept failed"); continue; }
            },
            r = accept_opt(&ws) => match r {
                Ok((s, p)) => (s, p, true),
                Err(e) => { tracing::warn!(error = %e, "ws accept failed"); continue; }
            },
            Some(_) = conns.join_next(), if !conns.is_empty() => continue,
            _ = shutdown.changed() => break,
        };
        let _ = stream.set_nodelay(true);
        let registry = registry.clone();
        let shutdown = shutdown.clone();
        conns.spawn(async move {
            tracing::debug!(%peer, is_ws, "connection accepted");
            if is_ws {
                match accept_ws(stream).await {
                    Ok(ws) => serve_ws(ws, registry, liveness, shutdown).await,
                    Err(e) => tracing::debug!(%peer, error = %e, "websocket handshake failed"),
                }
            } else {
                serve_tcp(stream, registry, liveness, shutdown).await;
            }
        });
    }
    while conns.join_next().await.is_some() {}
}

async fn accept_opt(l: &Option<TcpListener>) -> io::Result<(TcpStream, SocketAddr)> {
    match l {
        Some(l) => l.accept().await,
        None => std::future::pending().await,
    }
}

async fn accept_ws(
    stream: TcpStream,
) -> Result<WebSocketStream<TcpStream>, tokio_tungstenite::tungstenite::Error> {
    let check = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        if req.uri().path() == WS_PATH {
            Ok(resp)
        } else {
            let mut not_found = ErrorResponse::new(Some(format!("only {WS_PATH} is served")));
            *not_found.status_mut() = http::StatusCode::NOT_FOUND;
            Err(not_found)
        }
    };
    tokio_tungstenite::accept_hdr_async(stream, check).await
}

enum Inbound {
    Message(MessageEnvelope),
    /// Decoded frame boundary intact, contents rejected.
    Bad(ProtocolError),
    /// The byte stream can no longer be trusted.
    Fatal(ProtocolError),
    Closed,
}

type Outbox = mpsc::UnboundedSender<Arc<MessageEnvelope>>;
type OutboxRx = mpsc::UnboundedReceiver<Arc<MessageEnvelope>>;

struct AbortOnDrop(JoinHandle<()>);

impl Drop for AbortOnDrop {
    fn drop(&mut self) {
        self.0.abort();
    }
}

async fn serve_tcp(
    stream: TcpStream,
    registry: Arc<Registry>,
    liveness: Duration,
    shutdown: watch::Receiver<bool>,
) {
    let (mut rd, wr) = stream.into_split();
    let (in_tx, in_rx) = mpsc::unbounded_channel();
    let reader = AbortOnDrop(tokio::spawn(async move {
        loop {
            let item = match read_envelope(&mut rd).await {
                Ok(Some(env)) => Inbound::Message(env),
                Ok(None) | Err(StreamError::Io(_)) => Inbound::Closed,
                Err(StreamError::Protocol(e)) if e.is_framing() => Inbound::Fatal(e),
                Err(StreamError::Protocol(e)) => Inbound::Bad(e),
            };
            let stop = matches!(item, Inbound::Closed | Inbound::Fatal(_));
            if in_tx.send(item).is_err() || stop {
                break;
            }
        }
    }));
    let (out_tx, out_rx) = mpsc::unbounded_channel();
    let write_failed = Arc::new(Notify::new());
    let writer = AbortOnDrop(tokio::spawn(tcp_writer(wr, out_rx, write_failed.clone())));
    Connection::new(registry, out_tx, liveness)
        .run(in_rx, write_failed, shutdown)
        .await;
    drop(reader);
    // let queued frames (error replies) drain before the socket closes
    let _ = tokio::time::timeout(Duration::from_millis(200), async {
        let mut w = writer;
        let _ = (&mut w.0).await;
    })
    .await;
}

async fn tcp_writer(wr: tokio::net::tcp::OwnedWriteHalf, mut rx: OutboxRx, failed: Arc<Notify>) {
    let mut out = BufWriter::new(wr);
    while let Some(env) = rx.recv().await {
        let mut batch = vec![env];
        while let Ok(more) = rx.try_recv() {
            batch.push(more);
        }
        let mut result = Ok(());
        for env in &batch {
            match encode_envelope(env) {
                Ok(frame) => {
                    result = out.write_all(&frame).await;
                    if result.is_err() {
                        break;
                    }
                }
                Err(e) => tracing::error!(error = %e, "unencodable outbound message dropped"),
            }
        }
        if result.is_ok() {
            result = out.flush().await;
        }
        if let Err(e) = result {
            tracing::debug!(error = %e, "write failed");
            failed.notify_one();
            return;
        }
    }
    let _ = out.shutdown().await;
}

async fn serve_ws(
    ws: WebSocketStream<TcpStream>,
    registry: Arc<Registry>,
    liveness: Duration,
    shutdown: watch::Receiver<bool>,
) {
    let (mut sink, mut source) = ws.split();
    let (in_tx, in_rx) = mpsc::unbounded_channel();
    let reader = AbortOnDrop(tokio::spawn(async move {
        loop {
            let item = match source.next().await {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => Inbound::Closed,
                Some(Ok(Message::Text(t))) => match decode_json(t.as_str()) {
                    Ok(env) => Inbound::Message(env),
                    Err(e) => Inbound::Bad(e),
                },
                Some(Ok(Message::Binary(_))) => Inbound::Bad(ProtocolError::MalformedText(
                    "binary websocket messages are not accepted; send JSON text".into(),
                )),
                Some(Ok(_)) => continue,
            };
            let stop = matches!(item, Inbound::Closed);
            if in_tx.send(item).is_err() || stop {
                break;
            }
        }
    }));
    let (out_tx, mut out_rx): (Outbox, OutboxRx) = mpsc::unbounded_channel();
    let write_failed = Arc::new(Notify::new());
    let failed = write_failed.clone();
    let writer = AbortOnDrop(tokio::spawn(async move {
        while let Some(env) = out_rx.recv().await {
            let text = match encode_json(&env) {
                Ok(t) => t,
                Err(e) => {
                    tracing::error!(error = %e, "unencodable outbound message dropped");
                    continue;
                }
            };
            if let Err(e) = sink.send(Message::text(text)).await {
                tracing::debug!(error = %e, "websocket write failed");
                failed.notify_one();
                return;
            }
        }
        let _ = sink.close().await;
    }));
    Connection::new(registry, out_tx, liveness)
        .run(in_rx, write_failed, shutdown)
        .await;
    drop(reader);
    let _ = tokio::time::timeout(Duration::from_millis(200), async {
        let mut w = writer;
        let _ = (&mut w.0).await;
    })
    .await;
}

/// Transport-independent per-connection protocol handling.
struct Connection {
    registry: Arc<Registry>,
    outbox: Outbox,
    session: Option<SessionHandle>,
    liveness: Duration,
}

impl Connection {
    fn new(registry: Arc<Registry>, outbox: Outbox, liveness: Duration) -> Self {
        Connection {
            registry,
            outbox,
            session: None,
            liveness,
        }
    }

    async fn run(
        mut self,
        mut inbound: mpsc::UnboundedReceiver<Inbound>,
        write_failed: Arc<Notify>,
        mut shutdown: watch::Receiver<bool>,
    ) {
        let mut deadline: Option<Instant> = None;
        loop {
            let sleep = async {
                match deadline {
                    Some(d) => tokio::time::sleep_until(d).await,
                    None => std::future::pending().await,
                }
            };
            tokio::select! {
                item = inbound.recv() => {
                    if deadline.is_some() {
                        deadline = Some(Instant::now() + self.liveness);
                    }
                    match item {
                        Some(Inbound::Message(env)) => {
                            if !self.handle(env) {
                                break;
                            }
                        }
                        Some(Inbound::Bad(e)) => self.reject(e),
                        Some(Inbound::Fatal(e)) => {
                            tracing::debug!(error = %e, "framing lost, closing connection");
                            break;
                        }
                        Some(Inbound::Closed) | None => break,
                    }
                }
                _ = write_failed.notified(), if deadline.is_none() => {
                    deadline = Some(Instant::now() + self.liveness);
                }
                _ = sleep => {
                    tracing::debug!("liveness timeout");
                    break;
                }
                _ = shutdown.changed() => break,
            }
        }
        self.depart();
    }

    fn group(&self) -> GroupId {
        self.session.as_ref().map(|s| s.group_id).unwrap_or(0)
    }

    fn send(&self, origin: u32, body: Body) {
        let _ = self
            .outbox
            .send(Arc::new(MessageEnvelope::new(origin, self.group(), body)));
    }

    fn error(&self, code: ErrorCode, detail: impl Into<String>) {
        self.send(
            0,
            Body::Error(ErrorBody {
                code,
                detail: detail.into(),
            }),
        );
    }

    fn reject(&self, e: ProtocolError) {
        let code = match &e {
            ProtocolError::TooLong { field: "name", .. } => ErrorCode::OversizedName,
            _ => ErrorCode::BadMessage,
        };
        self.error(code, format!("{}: {e}", e.class()));
    }

    fn joined(&self) -> Option<&SessionHandle> {
        self.session
            .as_ref()
            .filter(|s| s.status() == ConnectionStatus::Connected)
    }

    /// Returns false when the connection must close.
    fn handle(&mut self, env: MessageEnvelope) -> bool {
        match env.body {
            Body::Ping { nonce } => self.send(env.origin, Body::Pong { nonce }),
            Body::Join { name } => {
                if let Some(s) = self.joined() {
                    self.error(
                        ErrorCode::AlreadyJoined,
                        format!("already joined group {} as user {}", s.group_id, s.user_id),
                    );
                    return true;
                }
                match self
                    .registry
                    .join(env.origin, env.group, &name, self.outbox.clone())
                {
                    Ok(s) => self.session = Some(s),
                    Err(e @ BrokerError::DuplicateUser(_)) => {
                        self.error(e.code(), e.to_string());
                        return false;
                    }
                    Err(e) => self.error(e.code(), e.to_string()),
                }
            }
            Body::Leave(_) => match self.session.as_mut() {
                Some(s) if s.status() == ConnectionStatus::Connected => self.registry.leave(s),
                _ => self.error(ErrorCode::NotJoined, "LEAVE before JOIN"),
            },
            body @ (Body::Control(_) | Body::Chat { .. } | Body::Measurement(_)) => {
                let Some(s) = self.joined() else {
                    self.error(
                        ErrorCode::NotJoined,
                        format!("{} before JOIN", body.kind().name()),
                    );
                    return true;
                };
                if let Err(e) = self.registry.relay(s, body) {
                    self.error(e.code(), e.to_string());
                }
            }
            other => self.error(
                ErrorCode::UnexpectedKind,
                format!("{} is broker-to-client only", other.kind().name()),
            ),
        }
        true
    }

    fn depart(&mut self) {
        if let Some(s) = self.session.as_mut() {
            self.registry.leave(s);
        }
    }
}
