//! Wire protocol: one UTF-8 JSON message per LF-terminated line over TCP.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::mpsc;
use trilogy_core::broker::{BrokerDescriptor, Hit, ServiceSpec};
use trilogy_core::indexer::ConceptVector;

/// Longest accepted line, in bytes.
pub const MAX_LINE: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    Advertise,
    RouteRequest,
    RouteReply,
    ServiceRequest,
    ServiceQueued,
    ServiceResult,
    ServiceError,
    Notify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub sender: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<String>,
    #[serde(default = "empty_body")]
    pub body: Value,
}

fn empty_body() -> Value {
    Value::Object(Default::default())
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique message id.
pub fn next_id() -> String {
    format!("m{}-{}", std::process::id(), NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

impl Message {
    pub fn new(kind: MessageType, sender: impl Into<String>, body: impl Serialize) -> Self {
        Self {
            id: next_id(),
            kind,
            sender: sender.into(),
            reply_to: None,
            body: serde_json::to_value(body).expect("message bodies serialize"),
        }
    }

    pub fn reply(&self, kind: MessageType, sender: impl Into<String>, body: impl Serialize) -> Self {
        let mut m = Message::new(kind, sender, body);
        m.reply_to = Some(self.id.clone());
        m
    }

    pub fn body<T: DeserializeOwned>(&self) -> Result<T, ProtocolError> {
        serde_json::from_value(self.body.clone()).map_err(|e| ProtocolError::BadBody {
            kind: self.kind,
            reason: e.to_string(),
        })
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialize");
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Message, ProtocolError> {
        let m: Message = serde_json::from_str(line.trim_end()).map_err(|e| ProtocolError::BadJson(e.to_string()))?;
        if !m.body.is_object() {
            return Err(ProtocolError::BadBody {
                kind: m.kind,
                reason: "body must be an object".into(),
            });
        }
        Ok(m)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed message: {0}")]
    BadJson(String),
    #[error("malformed {kind:?} body: {reason}")]
    BadBody { kind: MessageType, reason: String },
    #[error("line exceeds {MAX_LINE} bytes")]
    LineTooLong,
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    Timeout,
    #[error("unexpected {0:?} reply")]
    Unexpected(MessageType),
}

// ---- typed bodies ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvertiseBody {
    pub descriptor: BrokerDescriptor,
    pub address: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    Topic,
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteRequestBody {
    pub kind: RouteKind,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub name: String,
    pub address: String,
    pub services: Vec<ServiceSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteReplyBody {
    pub resources: Vec<RouteEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRequestBody {
    pub service: String,
    pub inputs: Vec<String>,
    pub user: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedBody {
    /// 1 means next in line.
    pub position: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBody {
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    ResourceCrash,
    BadInput,
    Timeout,
}

impl std::fmt::Display for FailureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FailureClass::ResourceCrash => "resource_crash",
            FailureClass::BadInput => "bad_input",
            FailureClass::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub class: FailureClass,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    NewDocument,
    PeerQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotifyBody {
    pub user: String,
    pub event: EventKind,
    /// Document url or peer user name.
    pub trigger: String,
    pub similarity: f64,
}

/// Payload of the two search services.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPayload {
    pub resource: String,
    pub hits: Vec<Hit>,
}

/// Payload of `add-document`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddedPayload {
    pub resource: String,
    pub id: u64,
    pub url: String,
    pub vector: ConceptVector,
}

// ---- framing ----

pub struct LineReader<R> {
    inner: BufReader<R>,
    buf: Vec<u8>,
}

impl<R: AsyncRead + Unpin> LineReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner: BufReader::new(inner),
            buf: Vec::new(),
        }
    }

    /// Next message, or `None` at a clean end of stream. Blank lines are skipped.
    pub async fn next(&mut self) -> Result<Option<Message>, ProtocolError> {
        loop {
            self.buf.clear();
            let n = (&mut self.inner)
                .take(MAX_LINE as u64 + 1)
                .read_until(b'\n', &mut self.buf)
                .await?;
            if n == 0 {
                return Ok(None);
            }
            if self.buf.len() > MAX_LINE {
                return Err(ProtocolError::LineTooLong);
            }
            let line = std::str::from_utf8(&self.buf).map_err(|e| ProtocolError::BadJson(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            return Message::from_line(line).map(Some);
        }
    }
}

pub async fn write_message<W: AsyncWrite + Unpin>(w: &mut W, m: &Message) -> Result<(), ProtocolError> {
    w.write_all(m.to_line().as_bytes()).await?;
    w.flush().await?;
    Ok(())
}

/// A client connection: write requests, read replies in order.
pub struct Connection {
    reader: LineReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
}

impl Connection {
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<Connection, ProtocolError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (r, w) = stream.into_split();
        Ok(Connection {
            reader: LineReader::new(r),
            writer: w,
        })
    }

    pub async fn send(&mut self, m: &Message) -> Result<(), ProtocolError> {
        write_message(&mut self.writer, m).await
    }

    pub async fn recv(&mut self) -> Result<Message, ProtocolError> {
        self.reader.next().await?.ok_or(ProtocolError::Closed)
    }
}

/// Shuttles lines between one socket and the agent's inbox.
pub(crate) async fn serve_connection(
    stream: TcpStream,
    on_message: impl Fn(Message) -> bool,
    mut outbound: mpsc::UnboundedReceiver<Message>,
) {
    let _ = stream.set_nodelay(true);
    let (r, mut w) = stream.into_split();
    let writer = tokio::spawn(async move {
        while let Some(m) = outbound.recv().await {
            if let Err(e) = write_message(&mut w, &m).await {
                tracing::debug!(error = %e, "write failed");
                break;
            }
        }
    });
    let mut reader = LineReader::new(r);
    loop {
        match reader.next().await {
            Ok(Some(m)) => {
                if !on_message(m) {
                    break;
                }
            }
            Ok(None) => break,
            Err(e) => {
                tracing::debug!(error = %e, "dropping connection");
                break;
            }
        }
    }
    // Replies still owed go out before the socket closes; the writer stops
    // once every sender is gone.
    drop(on_message);
    let _ = writer.await;
}
