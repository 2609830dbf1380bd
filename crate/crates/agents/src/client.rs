//! One-shot client exchanges: advertise, route, call a service, submit a
//! document.

use std::time::Duration;

use serde_json::Value;
use trilogy_core::broker::ADD_DOCUMENT;
use trilogy_core::soif::{self, SoifRecord};

use crate::protocol::{
    AddedPayload, AdvertiseBody, Connection, ErrorBody, FailureClass, Message, MessageType, ProtocolError, QueuedBody,
    ResultBody, RouteEntry, RouteReplyBody, RouteRequestBody, ServiceRequestBody,
};

#[derive(Debug, thiserror::Error)]
pub enum CallError {
    #[error("cannot reach {addr}: {source}")]
    Network {
        addr: String,
        #[source]
        source: ProtocolError,
    },
    #[error("{class}: {reason}")]
    Service { class: FailureClass, reason: String },
    #[error("protocol error from {addr}: {source}")]
    Protocol {
        addr: String,
        #[source]
        source: ProtocolError,
    },
}

impl CallError {
    /// The failure reason as sent by the remote agent, if it sent one.
    pub fn reason(&self) -> Option<&str> {
        match self {
            CallError::Service { reason, .. } => Some(reason),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    /// Wire identity, e.g. `paa:alice`.
    pub sender: String,
    /// Bound on one whole exchange.
    pub timeout: Duration,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

impl Client {
    pub fn new(sender: impl Into<String>) -> Self {
        Self {
            sender: sender.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Sends `request` and returns the first final reply, passing queue
    /// updates to `on_queued`.
    async fn exchange(
        &self,
        addr: &str,
        request: Message,
        mut on_queued: impl FnMut(u32),
    ) -> Result<Message, CallError> {
        let network = |source| CallError::Network {
            addr: addr.to_string(),
            source,
        };
        let protocol = |source| CallError::Protocol {
            addr: addr.to_string(),
            source,
        };
        let run = async {
            let mut conn = Connection::connect(addr).await.map_err(network)?;
            conn.send(&request).await.map_err(network)?;
            loop {
                let reply = conn.recv().await.map_err(network)?;
                if reply.reply_to.as_deref() != Some(request.id.as_str()) {
                    continue;
                }
                match reply.kind {
                    MessageType::ServiceQueued => {
                        let q: QueuedBody = reply.body().map_err(protocol)?;
                        on_queued(q.position);
                    }
                    MessageType::ServiceError => {
                        let e: ErrorBody = reply.body().map_err(protocol)?;
                        return Err(CallError::Service {
                            class: e.class,
                            reason: e.reason,
                        });
                    }
                    _ => return Ok(reply),
                }
            }
        };
        match tokio::time::timeout(self.timeout, run).await {
            Ok(r) => r,
            Err(_) => Err(network(ProtocolError::Timeout)),
        }
    }

    pub async fn advertise(&self, mediator: &str, body: &AdvertiseBody) -> Result<(), CallError> {
        let m = Message::new(MessageType::Advertise, &self.sender, body);
        let reply = self.exchange(mediator, m, |_| {}).await?;
        expect(mediator, &reply, MessageType::ServiceResult)
    }

    pub async fn route(&self, mediator: &str, body: &RouteRequestBody) -> Result<Vec<RouteEntry>, CallError> {
        let m = Message::new(MessageType::RouteRequest, &self.sender, body);
        let reply = self.exchange(mediator, m, |_| {}).await?;
        expect(mediator, &reply, MessageType::RouteReply)?;
        let body: RouteReplyBody = reply.body().map_err(|source| CallError::Protocol {
            addr: mediator.to_string(),
            source,
        })?;
        Ok(body.resources)
    }

    /// Calls `service` and returns its payload.
    pub async fn call_service(
        &self,
        addr: &str,
        service: &str,
        inputs: Vec<String>,
        user: &str,
        on_queued: impl FnMut(u32),
    ) -> Result<Value, CallError> {
        let body = ServiceRequestBody {
            service: service.to_string(),
            inputs,
            user: user.to_string(),
        };
        let m = Message::new(MessageType::ServiceRequest, &self.sender, body);
        let reply = self.exchange(addr, m, on_queued).await?;
        expect(addr, &reply, MessageType::ServiceResult)?;
        let body: ResultBody = reply.body().map_err(|source| CallError::Protocol {
            addr: addr.to_string(),
            source,
        })?;
        Ok(body.payload)
    }

    /// Adds `record` to the broker behind `addr`.
    pub async fn submit(&self, addr: &str, record: &SoifRecord, user: &str) -> Result<AddedPayload, CallError> {
        let bytes = soif::serialize(std::slice::from_ref(record)).map_err(|e| CallError::Service {
            class: FailureClass::BadInput,
            reason: e.to_string(),
        })?;
        // Values are byte-counted, so a non-UTF-8 record cannot travel as JSON text.
        let text = String::from_utf8(bytes).map_err(|_| CallError::Service {
            class: FailureClass::BadInput,
            reason: "record is not valid UTF-8".into(),
        })?;
        let payload = self.call_service(addr, ADD_DOCUMENT, vec![text], user, |_| {}).await?;
        serde_json::from_value(payload).map_err(|e| CallError::Protocol {
            addr: addr.to_string(),
            source: ProtocolError::BadBody {
                kind: MessageType::ServiceResult,
                reason: e.to_string(),
            },
        })
    }
}

fn expect(addr: &str, reply: &Message, kind: MessageType) -> Result<(), CallError> {
    if reply.kind == kind {
        Ok(())
    } else {
        Err(CallError::Protocol {
            addr: addr.to_string(),
            source: ProtocolError::Unexpected(reply.kind),
        })
    }
}
