//! The mediator: a registry of advertised resources and topic/keyword
//! routing over the concept hierarchy.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use trilogy_core::broker::BrokerError;
use trilogy_core::ontology::Ontology;
use trilogy_core::text::{canonical_phrase, fold};

use crate::protocol::{
    serve_connection, AdvertiseBody, ErrorBody, FailureClass, Message, MessageType, ResultBody, RouteEntry, RouteKind,
    RouteReplyBody, RouteRequestBody,
};

#[derive(Debug, thiserror::Error)]
pub enum RegisterError {
    #[error("invalid descriptor: {0}")]
    Invalid(#[from] BrokerError),
    #[error("address must not be empty")]
    NoAddress,
    #[error("resource name {name:?} is already registered at {existing}")]
    Conflict { name: String, existing: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Registration {
    New,
    Replaced,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, AdvertiseBody>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an advertisement. A repeat from the same address replaces
    /// the earlier one; the same name from another address is a conflict.
    pub fn register(&mut self, advert: AdvertiseBody) -> Result<Registration, RegisterError> {
        if let Some(existing) = self.entries.get(&advert.descriptor.resource_name) {
            if existing.address != advert.address {
                return Err(RegisterError::Conflict {
                    name: advert.descriptor.resource_name.clone(),
                    existing: existing.address.clone(),
                });
            }
        }
        self.replace(advert)
    }

    /// Records an advertisement regardless of who held the name before.
    pub fn replace(&mut self, advert: AdvertiseBody) -> Result<Registration, RegisterError> {
        advert.descriptor.validate()?;
        if advert.address.trim().is_empty() {
            return Err(RegisterError::NoAddress);
        }
        let name = advert.descriptor.resource_name.clone();
        Ok(match self.entries.insert(name, advert) {
            Some(_) => Registration::Replaced,
            None => Registration::New,
        })
    }

    pub fn get(&self, name: &str) -> Option<&AdvertiseBody> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Resources serving a topic (any concept in its subtree) or a keyword
    /// (case-insensitive phrase equality), sorted by name.
    pub fn route(&self, request: &RouteRequestBody, ontology: &Ontology) -> Vec<RouteEntry> {
        let matches: Box<dyn Fn(&AdvertiseBody) -> bool> = match request.kind {
            RouteKind::Topic => {
                let wanted: BTreeSet<String> = match ontology.subtree(&request.value) {
                    Ok(set) => set.iter().map(|c| fold(c)).collect(),
                    Err(_) => BTreeSet::from([fold(request.value.trim())]),
                };
                Box::new(move |a| a.descriptor.topics.iter().any(|t| wanted.contains(&fold(t.trim()))))
            }
            RouteKind::Keyword => {
                let wanted = canonical_phrase(&request.value);
                if wanted.is_empty() {
                    return Vec::new();
                }
                Box::new(move |a| a.descriptor.keywords.iter().any(|k| canonical_phrase(k) == wanted))
            }
        };
        self.entries
            .values()
            .filter(|a| matches(a))
            .map(|a| RouteEntry {
                name: a.descriptor.resource_name.clone(),
                address: a.address.clone(),
                services: a.descriptor.services.clone(),
            })
            .collect()
    }
}

/// How long a conflicting holder gets to prove it is still alive.
pub const LIVENESS_TIMEOUT: Duration = Duration::from_millis(400);

async fn is_alive(addr: &str) -> bool {
    matches!(
        tokio::time::timeout(LIVENESS_TIMEOUT, TcpStream::connect(addr)).await,
        Ok(Ok(_))
    )
}

pub struct MediatorHandle {
    pub addr: SocketAddr,
    pub registry: Arc<Mutex<Registry>>,
    task: JoinHandle<()>,
    accept: JoinHandle<()>,
}

impl MediatorHandle {
    /// Stops serving and releases the listening socket.
    pub fn abort(&self) {
        self.accept.abort();
        self.task.abort();
    }
}

impl Drop for MediatorHandle {
    fn drop(&mut self) {
        self.abort();
    }
}

type Inbound = (Message, mpsc::UnboundedSender<Message>);

/// Serves the mediator protocol on `listener`.
pub fn spawn_mediator(listener: TcpListener, name: &str, ontology: Arc<Ontology>) -> std::io::Result<MediatorHandle> {
    let addr = listener.local_addr()?;
    let registry = Arc::new(Mutex::new(Registry::new()));
    let sender = format!("mediator:{name}");
    let (tx, mut rx) = mpsc::unbounded_channel::<Inbound>();
    let accept = tokio::spawn(async move {
        loop {
            match listener.accept().await {
                Ok((stream, _)) => {
                    let tx = tx.clone();
                    tokio::spawn(async move {
                        let (out_tx, out_rx) = mpsc::unbounded_channel();
                        serve_connection(stream, move |m| tx.send((m, out_tx.clone())).is_ok(), out_rx).await;
                    });
                }
                Err(e) => tracing::warn!(error = %e, "accept failed"),
            }
        }
    });
    let reg = Arc::clone(&registry);
    let task = tokio::spawn(async move {
        // One message at a time, in arrival order.
        while let Some((m, reply)) = rx.recv().await {
            let out = handle(&reg, &ontology, &sender, m).await;
            let _ = reply.send(out);
        }
    });
    Ok(MediatorHandle {
        addr,
        registry,
        task,
        accept,
    })
}

fn error(m: &Message, sender: &str, reason: String) -> Message {
    let body = ErrorBody {
        class: FailureClass::BadInput,
        reason,
    };
    m.reply(MessageType::ServiceError, sender, body)
}

async fn handle(registry: &Mutex<Registry>, ontology: &Ontology, sender: &str, m: Message) -> Message {
    let lock = || registry.lock().unwrap_or_else(|e| e.into_inner());
    match m.kind {
        MessageType::Advertise => {
            let advert: AdvertiseBody = match m.body() {
                Ok(a) => a,
                Err(e) => return error(&m, sender, e.to_string()),
            };
            let name = advert.descriptor.resource_name.clone();
            let first = lock().register(advert.clone());
            let outcome = match first {
                Err(RegisterError::Conflict { existing, .. }) if !is_alive(&existing).await => {
                    tracing::info!(%name, %existing, "previous holder unreachable, replacing");
                    lock().replace(advert)
                }
                other => other,
            };
            match outcome {
                Ok(kind) => {
                    tracing::info!(%name, ?kind, "registered");
                    let payload = serde_json::json!({ "registered": name });
                    m.reply(MessageType::ServiceResult, sender, ResultBody { payload })
                }
                Err(e) => {
                    tracing::warn!(%name, error = %e, "advertisement rejected");
                    error(&m, sender, e.to_string())
                }
            }
        }
        MessageType::RouteRequest => match m.body::<RouteRequestBody>() {
            Ok(req) => {
                let resources = lock().route(&req, ontology);
                m.reply(MessageType::RouteReply, sender, RouteReplyBody { resources })
            }
            Err(e) => error(&m, sender, e.to_string()),
        },
        other => error(&m, sender, format!("{other:?} is not handled by a mediator")),
    }
}
