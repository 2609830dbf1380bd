//! Resource agents: a generic wrapper that advertises a resource, schedules
//! requests against its concurrency limits and relays results or failures.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use trilogy_core::broker::{
    BrokerDescriptor, ServiceSpec, SharedStore, ADD_DOCUMENT, SEARCH_BY_KEYWORD, SEARCH_BY_TOPIC,
};
use trilogy_core::soif;

use crate::client::{CallError, Client};
use crate::protocol::{
    serve_connection, AddedPayload, AdvertiseBody, ErrorBody, FailureClass, Message, MessageType, QueuedBody,
    ResultBody, SearchPayload, ServiceRequestBody,
};
use crate::scheduler::{Admission, Scheduler};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceFailure {
    pub class: FailureClass,
    pub reason: String,
}

impl ResourceFailure {
    pub fn crash(reason: impl Into<String>) -> Self {
        Self {
            class: FailureClass::ResourceCrash,
            reason: reason.into(),
        }
    }

    pub fn bad_input(reason: impl Into<String>) -> Self {
        Self {
            class: FailureClass::BadInput,
            reason: reason.into(),
        }
    }
}

#[async_trait]
pub trait Resource: Send + Sync + 'static {
    fn descriptor(&self) -> BrokerDescriptor;

    /// Runs one service invocation. Arity has already been checked.
    async fn invoke(&self, service: &str, inputs: Vec<String>, user: &str) -> Result<Value, ResourceFailure>;
}

/// Splits a newline-separated service input into trimmed, non-empty items.
pub fn input_items(input: &str) -> Vec<String> {
    input
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// A topic broker exposed as a resource.
pub struct BrokerResource {
    store: Arc<SharedStore>,
    /// Where added records are written, if anywhere.
    data_dir: Option<PathBuf>,
    pub limit: usize,
}

pub const DEFAULT_LIMIT: usize = 1000;

impl BrokerResource {
    pub fn new(store: Arc<SharedStore>, data_dir: Option<PathBuf>) -> Self {
        Self {
            store,
            data_dir,
            limit: DEFAULT_LIMIT,
        }
    }

    pub fn store(&self) -> &Arc<SharedStore> {
        &self.store
    }
}

#[async_trait]
impl Resource for BrokerResource {
    fn descriptor(&self) -> BrokerDescriptor {
        self.store.snapshot().describe()
    }

    async fn invoke(&self, service: &str, inputs: Vec<String>, _user: &str) -> Result<Value, ResourceFailure> {
        let input = inputs.into_iter().next().unwrap_or_default();
        let snapshot = self.store.snapshot();
        let resource = snapshot.profile().resource_name.clone();
        let result = match service {
            SEARCH_BY_KEYWORD => snapshot.query_keywords(&input_items(&input), self.limit),
            SEARCH_BY_TOPIC => snapshot.query_concepts(&input_items(&input), self.limit),
            ADD_DOCUMENT => return self.add(&input, resource),
            other => return Err(ResourceFailure::bad_input(format!("unknown service {other:?}"))),
        };
        let hits = result.map_err(|e| ResourceFailure::bad_input(e.to_string()))?.hits;
        Ok(serde_json::to_value(SearchPayload { resource, hits }).expect("payload serializes"))
    }
}

impl BrokerResource {
    fn add(&self, input: &str, resource: String) -> Result<Value, ResourceFailure> {
        let records = soif::parse(input.as_bytes()).map_err(|e| ResourceFailure::bad_input(e.to_string()))?;
        let [record] = <[_; 1]>::try_from(records)
            .map_err(|v: Vec<_>| ResourceFailure::bad_input(format!("expected one record, got {}", v.len())))?;
        let added = self.store.write(|s| {
            let id = s.add_document(record)?;
            if let Some(dir) = &self.data_dir {
                s.save_record(dir, id)?;
            }
            let e = s.get(id).expect("just added");
            Ok::<_, trilogy_core::broker::BrokerError>((id, e.record.url.clone(), e.vector.clone()))
        });
        let (id, url, vector) = added.map_err(|e| ResourceFailure::bad_input(e.to_string()))?;
        tracing::info!(%url, id, "document added");
        let payload = AddedPayload {
            resource,
            id,
            url,
            vector,
        };
        Ok(serde_json::to_value(payload).expect("payload serializes"))
    }
}

pub const RUN_EXPERIMENT: &str = "run-experiment";

/// Concurrency observations from a [`MockExperiment`].
#[derive(Debug, Default)]
pub struct Instrumentation {
    current: AtomicUsize,
    peak: AtomicUsize,
    started: Mutex<Vec<String>>,
}

impl Instrumentation {
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    /// Inputs in the order their runs started.
    pub fn started(&self) -> Vec<String> {
        self.started.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// A stand-in experiment with one service that sleeps, then succeeds or
/// fails with a fixed reason.
pub struct MockExperiment {
    pub name: String,
    pub topics: Vec<String>,
    pub max_instances: u32,
    pub duration: Duration,
    pub fail_reason: Option<String>,
    pub instrumentation: Arc<Instrumentation>,
}

impl MockExperiment {
    pub fn new(name: impl Into<String>, max_instances: u32) -> Self {
        Self {
            name: name.into(),
            topics: Vec::new(),
            max_instances,
            duration: Duration::from_millis(20),
            fail_reason: None,
            instrumentation: Arc::default(),
        }
    }
}

#[async_trait]
impl Resource for MockExperiment {
    fn descriptor(&self) -> BrokerDescriptor {
        BrokerDescriptor {
            resource_name: self.name.clone(),
            topics: self.topics.clone(),
            keywords: Vec::new(),
            services: vec![ServiceSpec::new(RUN_EXPERIMENT, 1, self.max_instances)],
        }
    }

    async fn invoke(&self, _service: &str, inputs: Vec<String>, user: &str) -> Result<Value, ResourceFailure> {
        let input = inputs.into_iter().next().unwrap_or_default();
        let ins = &self.instrumentation;
        let now = ins.current.fetch_add(1, Ordering::SeqCst) + 1;
        ins.peak.fetch_max(now, Ordering::SeqCst);
        ins.started
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(input.clone());
        tokio::time::sleep(self.duration).await;
        ins.current.fetch_sub(1, Ordering::SeqCst);
        match &self.fail_reason {
            Some(reason) => Err(ResourceFailure::crash(reason.clone())),
            None => Ok(json!({ "experiment": self.name, "input": input, "user": user })),
        }
    }
}

// ---- the agent ----

type ConnId = u64;

enum Event {
    Connected(ConnId, mpsc::UnboundedSender<Message>),
    Received(ConnId, Message),
    Disconnected(ConnId),
    Finished {
        conn: ConnId,
        request: Message,
        service: String,
        outcome: Result<Value, ResourceFailure>,
    },
}

struct Pending {
    conn: ConnId,
    request: Message,
    body: ServiceRequestBody,
}

pub struct ResourceAgentHandle {
    pub addr: SocketAddr,
    task: JoinHandle<()>,
    accept: JoinHandle<()>,
}

impl ResourceAgentHandle {
    /// Stops serving and releases the listening socket.
    pub fn abort(&self) {
        self.accept.abort();
        self.task.abort();
    }
}

impl Drop for ResourceAgentHandle {
    fn drop(&mut self) {
        self.abort();
    }
}

/// Serves `resource` on `listener`. `sender` is the agent's wire name and
/// `timeout` bounds each invocation.
pub fn spawn_resource_agent(
    listener: TcpListener,
    resource: Arc<dyn Resource>,
    sender: String,
    timeout: Duration,
) -> std::io::Result<ResourceAgentHandle> {
    let addr = listener.local_addr()?;
    let (tx, rx) = mpsc::unbounded_channel();
    let accept_tx = tx.clone();
    let accept = tokio::spawn(accept_loop(listener, accept_tx));
    let task = tokio::spawn(run_agent(rx, tx, resource, sender, timeout));
    Ok(ResourceAgentHandle { addr, task, accept })
}

async fn accept_loop(listener: TcpListener, tx: mpsc::UnboundedSender<Event>) {
    let mut next: ConnId = 0;
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(error = %e, "accept failed");
                continue;
            }
        };
        next += 1;
        tracing::debug!(%peer, conn = next, "connection");
        tokio::spawn(connection(next, stream, tx.clone()));
    }
}

async fn connection(conn: ConnId, stream: TcpStream, tx: mpsc::UnboundedSender<Event>) {
    let (out_tx, out_rx) = mpsc::unbounded_channel();
    if tx.send(Event::Connected(conn, out_tx)).is_err() {
        return;
    }
    let inbox = tx.clone();
    serve_connection(stream, move |m| inbox.send(Event::Received(conn, m)).is_ok(), out_rx).await;
    let _ = tx.send(Event::Disconnected(conn));
}

struct Agent {
    resource: Arc<dyn Resource>,
    services: HashMap<String, ServiceSpec>,
    sender: String,
    timeout: Duration,
    scheduler: Scheduler<Pending>,
    outbound: HashMap<ConnId, mpsc::UnboundedSender<Message>>,
    seen: HashMap<ConnId, HashSet<String>>,
    /// Admitted requests per connection not yet answered.
    owed: HashMap<ConnId, usize>,
    /// Connections whose reader has ended.
    closing: HashSet<ConnId>,
    inbox: mpsc::UnboundedSender<Event>,
}

async fn run_agent(
    mut rx: mpsc::UnboundedReceiver<Event>,
    inbox: mpsc::UnboundedSender<Event>,
    resource: Arc<dyn Resource>,
    sender: String,
    timeout: Duration,
) {
    let descriptor = resource.descriptor();
    let mut scheduler = Scheduler::new();
    for s in &descriptor.services {
        scheduler.add_service(s.name.clone(), s.max_instances);
    }
    let mut agent = Agent {
        resource,
        services: descriptor.services.into_iter().map(|s| (s.name.clone(), s)).collect(),
        sender,
        timeout,
        scheduler,
        outbound: HashMap::new(),
        seen: HashMap::new(),
        owed: HashMap::new(),
        closing: HashSet::new(),
        inbox,
    };
    while let Some(event) = rx.recv().await {
        agent.handle(event);
    }
}

impl Agent {
    fn send(&self, conn: ConnId, m: Message) {
        if let Some(out) = self.outbound.get(&conn) {
            let _ = out.send(m);
        }
    }

    fn error(&self, conn: ConnId, request: &Message, class: FailureClass, reason: impl Into<String>) {
        let body = ErrorBody {
            class,
            reason: reason.into(),
        };
        self.send(conn, request.reply(MessageType::ServiceError, &self.sender, body));
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Connected(conn, out) => {
                self.outbound.insert(conn, out);
            }
            Event::Disconnected(conn) => {
                self.seen.remove(&conn);
                self.closing.insert(conn);
                self.release(conn);
            }
            Event::Received(conn, m) => {
                // At-least-once delivery: a repeated id is ignored.
                if !self.seen.entry(conn).or_default().insert(m.id.clone()) {
                    return;
                }
                self.on_message(conn, m);
            }
            Event::Finished {
                conn,
                request,
                service,
                outcome,
            } => {
                match outcome {
                    Ok(payload) => self.send(
                        conn,
                        request.reply(MessageType::ServiceResult, &self.sender, ResultBody { payload }),
                    ),
                    Err(f) => self.error(conn, &request, f.class, f.reason),
                }
                if let Some(n) = self.owed.get_mut(&conn) {
                    *n -= 1;
                }
                self.release(conn);
                if let Some(next) = self.scheduler.complete(&service) {
                    self.start(next);
                }
                self.announce_positions(&service);
            }
        }
    }

    fn on_message(&mut self, conn: ConnId, m: Message) {
        if m.kind != MessageType::ServiceRequest {
            let reason = format!("{:?} is not handled by a resource agent", m.kind);
            return self.error(conn, &m, FailureClass::BadInput, reason);
        }
        let body: ServiceRequestBody = match m.body() {
            Ok(b) => b,
            Err(e) => return self.error(conn, &m, FailureClass::BadInput, e.to_string()),
        };
        let Some(offered) = self.services.get(&body.service) else {
            let reason = format!("unknown service {:?}", body.service);
            return self.error(conn, &m, FailureClass::BadInput, reason);
        };
        if body.inputs.len() != offered.input_arity as usize {
            let reason = format!(
                "service {:?} takes {} input(s), got {}",
                body.service,
                offered.input_arity,
                body.inputs.len()
            );
            return self.error(conn, &m, FailureClass::BadInput, reason);
        }
        let service = body.service.clone();
        *self.owed.entry(conn).or_default() += 1;
        let pending = Pending { conn, request: m, body };
        match self.scheduler.submit(&service, pending) {
            Ok(Admission::Run(p)) => self.start(p),
            Ok(Admission::Queued(position)) => {
                let (_, p) = self.scheduler.waiting(&service).last().expect("just queued");
                let reply = p
                    .request
                    .reply(MessageType::ServiceQueued, &self.sender, QueuedBody { position });
                self.send(conn, reply);
            }
            Err(p) => {
                if let Some(n) = self.owed.get_mut(&conn) {
                    *n -= 1;
                }
                self.error(conn, &p.request, FailureClass::BadInput, "unknown service");
            }
        }
    }

    /// Drops a closed connection's writer once nothing more is owed to it.
    fn release(&mut self, conn: ConnId) {
        if self.closing.contains(&conn) && self.owed.get(&conn).copied().unwrap_or(0) == 0 {
            self.closing.remove(&conn);
            self.owed.remove(&conn);
            self.outbound.remove(&conn);
        }
    }

    fn start(&self, p: Pending) {
        let resource = Arc::clone(&self.resource);
        let inbox = self.inbox.clone();
        let timeout = self.timeout;
        tokio::spawn(async move {
            let Pending { conn, request, body } = p;
            let ServiceRequestBody { service, inputs, user } = body;
            let call = {
                let resource = Arc::clone(&resource);
                let service = service.clone();
                tokio::spawn(async move { resource.invoke(&service, inputs, &user).await })
            };
            let abort = call.abort_handle();
            let outcome = match tokio::time::timeout(timeout, call).await {
                Ok(Ok(result)) => result,
                Ok(Err(join)) => Err(ResourceFailure::crash(format!("resource crashed: {join}"))),
                Err(_) => {
                    abort.abort();
                    Err(ResourceFailure {
                        class: FailureClass::Timeout,
                        reason: format!("no result within {} ms", timeout.as_millis()),
                    })
                }
            };
            let _ = inbox.send(Event::Finished {
                conn,
                request,
                service,
                outcome,
            });
        });
    }

    fn announce_positions(&self, service: &str) {
        for (position, p) in self.scheduler.waiting(service) {
            let reply = p
                .request
                .reply(MessageType::ServiceQueued, &self.sender, QueuedBody { position });
            self.send(p.conn, reply);
        }
    }
}

/// Advertises to each mediator, retrying unreachable ones with a growing
/// pause. A rejection is final. Returns one outcome per mediator.
pub async fn advertise_all(
    client: &Client,
    mediators: &[String],
    advert: &AdvertiseBody,
    attempts: u32,
) -> Vec<(String, Result<(), CallError>)> {
    let mut out = Vec::new();
    for m in mediators {
        let mut delay = Duration::from_millis(100);
        let mut attempt = 1;
        let result = loop {
            match client.advertise(m, advert).await {
                Err(e @ CallError::Network { .. }) if attempt < attempts => {
                    tracing::debug!(mediator = %m, error = %e, attempt, "advertise retry");
                    tokio::time::sleep(delay).await;
                    delay = (delay * 2).min(Duration::from_secs(2));
                    attempt += 1;
                }
                other => break other,
            }
        };
        match &result {
            Ok(()) => tracing::info!(mediator = %m, "advertised"),
            Err(e) => tracing::warn!(mediator = %m, error = %e, "advertise failed"),
        }
        out.push((m.clone(), result));
    }
    out
}
