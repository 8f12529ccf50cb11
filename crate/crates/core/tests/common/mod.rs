#![allow(dead_code)]

use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use meterlab::broker::{Broker, BrokerConfig};
use meterlab::client::{ConnectOptions, Session};
use meterlab::protocol::stream::{read_envelope, write_envelope};
use meterlab::protocol::{decode_json, encode_json, Body, GroupId, MessageEnvelope, UserId};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

pub const WAIT: Duration = Duration::from_secs(5);

pub async fn broker() -> Broker {
    Broker::start(BrokerConfig::loopback()).await.unwrap()
}

pub async fn session(b: &Broker, user: UserId, group: GroupId) -> Session {
    Session::connect(ConnectOptions::new(
        "127.0.0.1",
        b.tcp_addr().port(),
        user,
        group,
    ))
    .await
    .unwrap()
}

/// A bare binary-protocol connection.
pub struct Raw(pub TcpStream);

impl Raw {
    pub async fn connect(b: &Broker) -> Raw {
        Raw(TcpStream::connect(b.tcp_addr()).await.unwrap())
    }

    pub async fn join(b: &Broker, user: UserId, group: GroupId) -> Raw {
        let mut r = Raw::connect(b).await;
        r.send(
            user,
            group,
            Body::Join {
                name: format!("raw{user}"),
            },
        )
        .await;
        let ack = r.recv().await.expect("join ack");
        assert!(matches!(ack.body, Body::JoinAck(_)), "{ack:?}");
        r
    }

    pub async fn send(&mut self, user: UserId, group: GroupId, body: Body) {
        write_envelope(&mut self.0, &MessageEnvelope::new(user, group, body))
            .await
            .unwrap();
    }

    pub async fn send_bytes(&mut self, bytes: &[u8]) {
        use tokio::io::AsyncWriteExt;
        self.0.write_all(bytes).await.unwrap();
    }

    /// Next envelope, `None` on close or after `WAIT`.
    pub async fn recv(&mut self) -> Option<MessageEnvelope> {
        tokio::time::timeout(WAIT, read_envelope(&mut self.0))
            .await
            .ok()?
            .ok()?
    }

    pub async fn recv_within(&mut self, d: Duration) -> Option<MessageEnvelope> {
        tokio::time::timeout(d, read_envelope(&mut self.0))
            .await
            .ok()?
            .ok()?
    }
}

pub type WsStream =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>;

pub struct Ws(pub WsStream);

impl Ws {
    pub async fn connect(b: &Broker) -> Ws {
        let (ws, _) = tokio_tungstenite::connect_async(b.ws_url().unwrap())
            .await
            .unwrap();
        Ws(ws)
    }

    pub async fn send_text(&mut self, text: &str) {
        self.0.send(Message::text(text.to_string())).await.unwrap();
    }

    pub async fn send(&mut self, user: UserId, group: GroupId, body: Body) {
        let json = encode_json(&MessageEnvelope::new(user, group, body)).unwrap();
        self.send_text(&json).await;
    }

    pub async fn recv_text(&mut self) -> Option<String> {
        loop {
            let msg = tokio::time::timeout(WAIT, self.0.next())
                .await
                .ok()??
                .ok()?;
            match msg {
                Message::Text(t) => return Some(t.as_str().to_string()),
                Message::Close(_) => return None,
                _ => continue,
            }
        }
    }

    pub async fn recv(&mut self) -> Option<MessageEnvelope> {
        Some(decode_json(&self.recv_text().await?).unwrap())
    }
}
