//! One-shot commands: ingest, query, ontology editing, maintenance, inbox
//! and direct service requests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context as _, Result};
use trilogy_agents::client::{CallError, Client};
use trilogy_agents::paa::{proactive_scan, valid_user, Event, Paa, PaaError, ProfileStore};
use trilogy_agents::protocol::{AddedPayload, FailureClass, NotifyBody, RouteKind, RouteRequestBody};
use trilogy_core::broker::BrokerStore;
use trilogy_core::indexer::{refresh as run_refresh, FileProbe};
use trilogy_core::ingest::{build_record, to_soif, BibRecord, DocKind};
use trilogy_core::soif::{gather, SoifRecord};

use crate::context::{user_error, write_atomic, Ctx, OrUser, HIERARCHY_FILE, LINKS_FILE};
use crate::output::{added_line, concept_tree, emit, hit_json, hit_line, notify_line, report_line};
use crate::{InboxArgs, IngestCmd, IngestTarget, OntologyCmd, QueryArgs, ServiceArgs};

/// Profile errors caused by a bad user name are the caller's fault.
fn paa_err(e: PaaError) -> anyhow::Error {
    match e {
        PaaError::InvalidUser(_) | PaaError::NoMediator | PaaError::BadProfile { .. } => user_error(e.to_string()),
        other => anyhow::Error::new(other),
    }
}

fn check_user(user: &str) -> Result<()> {
    if valid_user(user) {
        Ok(())
    } else {
        Err(paa_err(PaaError::InvalidUser(user.to_string())))
    }
}

/// Files NOTIFY messages for users whose interests match a new document.
fn notify_new_document(ctx: &Ctx, added: &AddedPayload, by: &str) -> Result<()> {
    let Some(dir) = ctx.data_dir() else {
        return Ok(());
    };
    let profiles = ProfileStore::new(dir);
    let event = Event::NewDocument {
        url: added.url.clone(),
        vector: added.vector.clone(),
        by: Some(by.to_string()),
    };
    let sent = proactive_scan(
        &event,
        &profiles.all().map_err(paa_err)?,
        ctx.config.notify_threshold,
        &format!("paa:{by}"),
    );
    profiles.deliver(&sent).map_err(paa_err)
}

enum Sink<'a> {
    Broker { client: Client, addr: &'a str },
    Local { dir: PathBuf, store: BrokerStore },
}

impl<'a> Sink<'a> {
    fn open(ctx: &Ctx, target: &'a IngestTarget) -> Result<Self> {
        Ok(match &target.broker {
            Some(addr) => Sink::Broker {
                client: Client::new(format!("ingest:{}", target.user)),
                addr,
            },
            None => {
                let (dir, store) = ctx.open_store()?;
                Sink::Local { dir, store }
            }
        })
    }

    async fn add(&mut self, record: SoifRecord, user: &str) -> Result<AddedPayload> {
        match self {
            Sink::Broker { client, addr } => client.submit(addr, &record, user).await.map_err(call_err),
            Sink::Local { store, .. } => {
                let id = store.add_document(record).or_user()?;
                let e = store.get(id).expect("just added");
                Ok(AddedPayload {
                    resource: store.profile().resource_name.clone(),
                    id,
                    url: e.record.url.clone(),
                    vector: e.vector.clone(),
                })
            }
        }
    }

    fn finish(self) -> Result<()> {
        if let Sink::Local { dir, store } = self {
            store.save(&dir)?;
        }
        Ok(())
    }
}

/// Service rejections of the input are user errors; the rest are not.
fn call_err(e: CallError) -> anyhow::Error {
    match &e {
        CallError::Service {
            class: FailureClass::BadInput,
            reason,
        } => user_error(reason.clone()),
        CallError::Service { reason, .. } => anyhow::anyhow!("{reason}"),
        _ => anyhow::Error::new(e),
    }
}

fn parse_fields(fields: &[String]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for f in fields {
        let (name, value) = f
            .split_once('=')
            .ok_or_else(|| user_error(format!("--field {f:?} is not NAME=VALUE")))?;
        out.insert(name.trim().to_string(), value.to_string());
    }
    Ok(out)
}

fn hint_for_path(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("html" | "htm") => "html",
        Some("bib" | "json") => "bib",
        _ => "text",
    }
}

fn file_url(path: &Path) -> Result<String> {
    let abs = std::fs::canonicalize(path)
        .with_context(|| format!("reading {}", path.display()))
        .or_user()?;
    Ok(format!("file://{}", abs.display()))
}

pub async fn ingest(ctx: &Ctx, cmd: IngestCmd) -> Result<()> {
    match cmd {
        IngestCmd::Add { kind, fields, target } => {
            check_user(&target.user)?;
            let kind: DocKind = kind.parse().or_user()?;
            let record = build_record(kind, parse_fields(&fields)?).or_user()?;
            let mut sink = Sink::open(ctx, &target)?;
            let added = sink.add(to_soif(&record), &target.user).await?;
            sink.finish()?;
            emit(added_line(&added.resource, added.id, &added.url));
            notify_new_document(ctx, &added, &target.user)
        }
        IngestCmd::Batch { file, target } => {
            check_user(&target.user)?;
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))
                .or_user()?;
            let mut sink = Sink::open(ctx, &target)?;
            let mut failed = 0usize;
            let mut added = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let outcome = match BibRecord::from_json(line) {
                    Ok(record) => sink.add(to_soif(&record), &target.user).await,
                    Err(e) => Err(user_error(e.to_string())),
                };
                match outcome {
                    Ok(a) => {
                        emit(added_line(&a.resource, a.id, &a.url));
                        added.push(a);
                    }
                    Err(e) => {
                        failed += 1;
                        eprintln!("{}:{}: {e:#}", file.display(), i + 1);
                    }
                }
            }
            sink.finish()?;
            for a in &added {
                notify_new_document(ctx, a, &target.user)?;
            }
            if failed > 0 {
                return Err(user_error(format!("{failed} line(s) rejected, {} added", added.len())));
            }
            Ok(())
        }
        IngestCmd::File {
            paths,
            media_hint,
            user,
        } => {
            check_user(&user)?;
            let target = IngestTarget { broker: None, user };
            let mut sink = Sink::open(ctx, &target)?;
            let mut added = Vec::new();
            for path in &paths {
                let bytes = std::fs::read(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .or_user()?;
                let hint = media_hint.as_deref().unwrap_or_else(|| hint_for_path(path));
                let record = gather(&bytes, hint, &file_url(path)?)
                    .with_context(|| path.display().to_string())
                    .or_user()?;
                let a = sink.add(record, &target.user).await?;
                emit(added_line(&a.resource, a.id, &a.url));
                added.push(a);
            }
            sink.finish()?;
            for a in &added {
                notify_new_document(ctx, a, &target.user)?;
            }
            Ok(())
        }
    }
}

pub async fn query(ctx: &Ctx, args: QueryArgs) -> Result<()> {
    check_user(&args.user)?;
    let mediators = if args.mediators.is_empty() {
        ctx.config.mediators.clone()
    } else {
        args.mediators
    };
    if mediators.is_empty() {
        return Err(user_error("no mediator (use --mediator or mediators = in the config)"));
    }
    let mut paa = Paa::new(args.user.clone(), mediators, ctx.ontology()?);
    paa.limit = args.limit;
    paa.client = paa.client.with_timeout(Duration::from_millis(args.timeout_ms));
    let outcome = paa.query(&args.text).await.map_err(paa_err)?;

    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if outcome.partial {
        eprintln!("warning: results are partial");
    }
    for h in &outcome.hits {
        emit(if args.json { hit_json(h) } else { hit_line(h) });
    }

    if let Some(dir) = ctx.data_dir() {
        let profiles = ProfileStore::new(dir);
        profiles
            .record_query(&args.user, &args.text, &outcome.plan, ctx.config.profile_blend)
            .map_err(paa_err)?;
        if !outcome.plan.vector.is_empty() {
            let event = Event::PeerQuery {
                user: args.user.clone(),
                vector: outcome.plan.vector.clone(),
            };
            let all = profiles.all().map_err(paa_err)?;
            let sent = proactive_scan(&event, &all, ctx.config.notify_threshold, &paa.client.sender);
            profiles.deliver(&sent).map_err(paa_err)?;
        }
    }
    Ok(())
}

fn write_ontology(ctx: &Ctx, o: &trilogy_core::ontology::Ontology) -> Result<()> {
    let dir = ctx.ontology_target()?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join(HIERARCHY_FILE), &o.hierarchy_tsv())?;
    write_atomic(&dir.join(LINKS_FILE), &o.links_tsv())
}

pub fn ontology(ctx: &Ctx, cmd: OntologyCmd) -> Result<()> {
    match cmd {
        OntologyCmd::List { links } => {
            let o = ctx.ontology()?;
            if links {
                for l in o.links() {
                    emit(format!("{}\t{}\t{}", l.keyword, l.concept, l.weight));
                }
            } else {
                for line in concept_tree(&o) {
                    emit(line);
                }
            }
            Ok(())
        }
        OntologyCmd::AddConcept { name, parent } => {
            let next = ctx
                .ontology_for_edit()?
                .add_concept(&name, parent.as_deref())
                .or_user()?;
            write_ontology(ctx, &next)
        }
        OntologyCmd::Link {
            keyword,
            concept,
            weight,
        } => {
            let next = ctx
                .ontology_for_edit()?
                .set_link(&keyword, &concept, weight)
                .or_user()?;
            write_ontology(ctx, &next)
        }
        OntologyCmd::Validate => {
            let violations = ctx.ontology_unchecked()?.validate();
            for v in &violations {
                emit(v);
            }
            if violations.is_empty() {
                Ok(())
            } else {
                Err(user_error(format!("{} violation(s)", violations.len())))
            }
        }
        OntologyCmd::Lookup { keyword } => {
            for (concept, weight) in ctx.ontology()?.concepts_for(&keyword) {
                emit(format!("{concept}\t{weight}"));
            }
            Ok(())
        }
    }
}

pub fn refresh(ctx: &Ctx) -> Result<()> {
    let (dir, mut store) = ctx.open_store()?;
    let ontology = Arc::clone(store.ontology());
    let report = run_refresh(&mut store, ontology, &FileProbe);
    store.save(&dir)?;
    emit(report_line(&report));
    Ok(())
}

pub fn inbox(ctx: &Ctx, args: InboxArgs) -> Result<()> {
    let dir = ctx.require_data_dir()?;
    for m in ProfileStore::new(dir).inbox(&args.user).map_err(paa_err)? {
        match m.body::<NotifyBody>() {
            Ok(n) => emit(notify_line(&n)),
            Err(e) => eprintln!("warning: skipped message {}: {e}", m.id),
        }
    }
    Ok(())
}

pub async fn service(ctx: &Ctx, args: ServiceArgs) -> Result<()> {
    check_user(&args.user)?;
    let mediators = if args.mediators.is_empty() {
        ctx.config.mediators.clone()
    } else {
        args.mediators
    };
    if mediators.is_empty() {
        return Err(user_error("no mediator (use --mediator or mediators = in the config)"));
    }
    let client = Client::new(format!("paa:{}", args.user)).with_timeout(Duration::from_millis(args.timeout_ms));
    let request = RouteRequestBody {
        kind: RouteKind::Topic,
        value: args.topic.clone(),
    };
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for m in &mediators {
        match client.route(m, &request).await {
            Ok(found) => entries.extend(found),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if entries.is_empty() && !errors.is_empty() {
        return Err(anyhow::anyhow!("no mediator reachable: {}", errors.join("; ")));
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    entries.dedup_by(|a, b| a.name == b.name);
    let entry = entries
        .into_iter()
        .filter(|e| args.resource.as_deref().is_none_or(|r| r == e.name))
        .find(|e| e.services.iter().any(|s| s.name == args.service))
        .ok_or_else(|| {
            user_error(format!(
                "no resource offers {:?} for topic {:?}",
                args.service, args.topic
            ))
        })?;
    let payload = client
        .call_service(&entry.address, &args.service, args.inputs, &args.user, |pos| {
            eprintln!("queued\t{pos}");
        })
        .await
        .map_err(call_err)?;
    emit(payload);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_split_on_first_equals() {
        let f = parse_fields(&["title=a=b".into(), " year =1999".into()]).unwrap();
        assert_eq!(f["title"], "a=b");
        assert_eq!(f["year"], "1999");
        assert!(parse_fields(&["title".into()]).is_err());
    }

    #[test]
    fn hints_follow_extensions() {
        assert_eq!(hint_for_path(Path::new("a/b.HTML")), "html");
        assert_eq!(hint_for_path(Path::new("r.bib")), "bib");
        assert_eq!(hint_for_path(Path::new("notes.txt")), "text");
        assert_eq!(hint_for_path(Path::new("README")), "text");
    }

    #[test]
    fn user_names_are_checked() {
        assert!(check_user("alice").is_ok());
        assert!(check_user("../x").is_err());
        assert!(check_user(".hidden").is_err());
    }

    #[test]
    fn bad_input_is_a_user_error() {
        let e = call_err(CallError::Service {
            class: FailureClass::BadInput,
            reason: "nope".into(),
        });
        assert!(crate::context::is_user_error(&e));
        let e = call_err(CallError::Service {
            class: FailureClass::ResourceCrash,
            reason: "boom".into(),
        });
        assert!(!crate::context::is_user_error(&e));
        assert_eq!(e.to_string(), "boom");
    }
}
