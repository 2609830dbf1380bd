//! The long-running `serve` commands.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context as _, Result};
use tokio::net::TcpListener;
use trilogy_agents::client::Client;
use trilogy_agents::mediator::spawn_mediator;
use trilogy_agents::protocol::AdvertiseBody;
use trilogy_agents::resource::{advertise_all, spawn_resource_agent, BrokerResource, MockExperiment, Resource};
use trilogy_core::broker::{BrokerStore, SharedStore};
use trilogy_core::indexer::{refresh, FileProbe};
use trilogy_core::ontology::Ontology;

use crate::context::{user_error, Ctx, OrUser};
use crate::output::{emit, report_line};
use crate::{AgentArgs, ResourceServeArgs};

const DEFAULT_LISTEN: &str = "127.0.0.1:0";
const ADVERTISE_ATTEMPTS: u32 = 20;

async fn bind(listen: Option<&str>) -> Result<TcpListener> {
    let addr = listen.unwrap_or(DEFAULT_LISTEN);
    TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))
}

/// Address peers should dial: a wildcard bind is advertised as loopback.
fn reachable(addr: SocketAddr) -> SocketAddr {
    if addr.ip().is_unspecified() {
        SocketAddr::from(([127, 0, 0, 1], addr.port()))
    } else {
        addr
    }
}

/// Announces readiness on stdout for supervisors and scripts.
fn announce(addr: SocketAddr) {
    emit(format!("listening {addr}"));
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn spawn_advertise(sender: String, mediators: Vec<String>, descriptor_source: Arc<dyn Resource>, address: SocketAddr) {
    if mediators.is_empty() {
        tracing::warn!("no mediators configured; this resource will not be routable");
        return;
    }
    tokio::spawn(async move {
        let advert = AdvertiseBody {
            descriptor: descriptor_source.descriptor(),
            address: address.to_string(),
        };
        for (m, outcome) in advertise_all(&Client::new(sender), &mediators, &advert, ADVERTISE_ATTEMPTS).await {
            if let Err(e) = outcome {
                eprintln!("warning: advertising to {m} failed: {e}");
            }
        }
    });
}

fn pick<T: Clone>(flag: Vec<T>, config: &[T]) -> Vec<T> {
    if flag.is_empty() {
        config.to_vec()
    } else {
        flag
    }
}

fn save(store: &SharedStore, dir: &Path) -> Result<()> {
    let snapshot = store.snapshot();
    snapshot.save(dir)?;
    tracing::info!(documents = snapshot.len(), "store saved");
    Ok(())
}

pub async fn broker(ctx: Ctx, args: AgentArgs, refresh_interval: Option<Duration>) -> Result<()> {
    let dir = ctx.require_data_dir()?.to_path_buf();
    let cfg = &ctx.config;
    let mut profile = ctx.broker_profile();
    if let Some(name) = &args.name {
        profile.resource_name = name.clone();
    } else if cfg.resource_name.is_none() {
        return Err(user_error(
            "broker needs a resource name (use --name or resource_name =)",
        ));
    }
    profile.topics = pick(args.topics, &cfg.topics);
    profile.keywords = pick(args.keywords, &cfg.keywords);
    profile.max_instances = args.max_instances.unwrap_or(cfg.max_instances);
    profile.validate().or_user()?;

    let ontology = ctx.ontology()?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let report = BrokerStore::load(&dir, profile.clone(), Arc::clone(&ontology))?;
    for issue in &report.issues {
        eprintln!("warning: skipped {}: {}", issue.file.display(), issue.reason);
    }
    tracing::info!(
        documents = report.store.len(),
        rebuilt = report.index_rebuilt,
        "store loaded"
    );
    let store = Arc::new(SharedStore::new(report.store));

    let resource: Arc<dyn Resource> = Arc::new(BrokerResource::new(Arc::clone(&store), Some(dir.clone())));
    let listener = bind(args.listen.as_deref().or(cfg.listen.as_deref())).await?;
    let sender = format!("broker:{}", profile.resource_name);
    let handle = spawn_resource_agent(
        listener,
        Arc::clone(&resource),
        sender.clone(),
        Duration::from_millis(args.timeout_ms),
    )?;
    let addr = reachable(handle.addr);
    announce(addr);
    spawn_advertise(sender, pick(args.mediators, &cfg.mediators), resource, addr);

    let interval = refresh_interval.unwrap_or(cfg.refresh_interval);
    if !interval.is_zero() {
        let (store, dir) = (Arc::clone(&store), dir.clone());
        tokio::spawn(periodic_refresh(store, dir, ontology, interval));
    }

    shutdown_signal().await;
    handle.abort();
    save(&store, &dir)
}

async fn periodic_refresh(store: Arc<SharedStore>, dir: std::path::PathBuf, ontology: Arc<Ontology>, every: Duration) {
    let mut ticker = tokio::time::interval(every);
    ticker.tick().await;
    loop {
        ticker.tick().await;
        let (store, dir, ontology) = (Arc::clone(&store), dir.clone(), Arc::clone(&ontology));
        let outcome = tokio::task::spawn_blocking(move || {
            let report = store.write(|s| refresh(s, ontology, &FileProbe));
            save(&store, &dir).map(|_| report)
        })
        .await;
        match outcome {
            Ok(Ok(report)) => tracing::info!("{}", report_line(&report)),
            Ok(Err(e)) => tracing::warn!(error = %e, "saving after refresh failed"),
            Err(e) => tracing::warn!(error = %e, "refresh task failed"),
        }
    }
}

pub async fn mediator(ctx: Ctx, listen: Option<String>, name: String) -> Result<()> {
    let ontology = ctx.ontology()?;
    let listener = bind(listen.as_deref().or(ctx.config.listen.as_deref())).await?;
    let handle = spawn_mediator(listener, &name, ontology)?;
    announce(reachable(handle.addr));
    shutdown_signal().await;
    handle.abort();
    Ok(())
}

pub async fn resource(ctx: Ctx, args: ResourceServeArgs) -> Result<()> {
    if !args.mock_experiment {
        return Err(user_error("only --mock-experiment resources are built in"));
    }
    let cfg = &ctx.config;
    let agent = args.agent;
    let name = agent
        .name
        .or_else(|| cfg.resource_name.clone())
        .unwrap_or_else(|| "experiment".into());
    let mut mock = MockExperiment::new(name.clone(), agent.max_instances.unwrap_or(cfg.max_instances).max(1));
    mock.topics = pick(agent.topics, &cfg.topics);
    mock.duration = Duration::from_millis(args.delay_ms);
    mock.fail_reason = args.fail_reason;
    let resource: Arc<dyn Resource> = Arc::new(mock);
    resource.descriptor().validate().or_user()?;

    let listener = bind(agent.listen.as_deref().or(cfg.listen.as_deref())).await?;
    let sender = format!("resource:{name}");
    let handle = spawn_resource_agent(
        listener,
        Arc::clone(&resource),
        sender.clone(),
        Duration::from_millis(agent.timeout_ms),
    )?;
    let addr = reachable(handle.addr);
    announce(addr);
    spawn_advertise(sender, pick(agent.mediators, &cfg.mediators), resource, addr);
    shutdown_signal().await;
    handle.abort();
    Ok(())
}
