//! The personal assistant: query decomposition, fan-out and merging, user
//! profiles and proactive notification.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::task::JoinSet;
use trilogy_core::broker::{rank_order, SEARCH_BY_KEYWORD, SEARCH_BY_TOPIC};
use trilogy_core::indexer::ConceptVector;
use trilogy_core::ontology::{Ontology, MAX_WEIGHT};
use trilogy_core::text::{canonical_phrase, tokenize};

use crate::client::{CallError, Client};
use crate::protocol::{
    EventKind, Message, MessageType, NotifyBody, RouteEntry, RouteKind, RouteRequestBody, SearchPayload,
};

pub const DEFAULT_BLEND: f64 = 0.8;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub timestamp: u64,
    pub query: String,
    pub concepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: String,
    pub interests: ConceptVector,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
}

impl UserProfile {
    pub fn new(user: impl Into<String>) -> Self {
        Self {
            user: user.into(),
            interests: ConceptVector::new(),
            history: Vec::new(),
        }
    }

    pub fn with_interests(mut self, interests: ConceptVector) -> Self {
        self.interests = interests;
        self
    }
}

/// Blends `vector` into the profile's interests with weight `1 - blend`.
/// An empty vector leaves the profile as it was.
pub fn update_profile(profile: &UserProfile, vector: &ConceptVector, blend: f64) -> UserProfile {
    let mut next = profile.clone();
    if vector.is_empty() {
        return next;
    }
    let mut mixed: BTreeMap<&str, f64> = BTreeMap::new();
    for (c, v) in profile.interests.iter() {
        *mixed.entry(c).or_insert(0.0) += blend * v;
    }
    for (c, v) in vector.iter() {
        *mixed.entry(c).or_insert(0.0) += (1.0 - blend) * v;
    }
    next.interests = ConceptVector::normalized(mixed);
    next
}

/// Cosine similarity clamped to [0, 1]; 0 when either side is empty.
pub fn similarity(a: &ConceptVector, b: &ConceptVector) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let dot: f64 = a.iter().map(|(c, v)| v * b.get(c)).sum();
    let norm = |v: &ConceptVector| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return 0.0;
    }
    (dot / denom).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    NewDocument {
        url: String,
        vector: ConceptVector,
        /// The contributing user, never notified about their own document.
        by: Option<String>,
    },
    PeerQuery {
        user: String,
        vector: ConceptVector,
    },
}

/// NOTIFY messages for every profile at or above `threshold`, skipping the
/// event's originator.
pub fn proactive_scan(event: &Event, profiles: &[UserProfile], threshold: f64, sender: &str) -> Vec<Message> {
    let (kind, trigger, vector, origin) = match event {
        Event::NewDocument { url, vector, by } => (EventKind::NewDocument, url, vector, by.as_deref()),
        Event::PeerQuery { user, vector } => (EventKind::PeerQuery, user, vector, Some(user.as_str())),
    };
    profiles
        .iter()
        .filter(|p| Some(p.user.as_str()) != origin)
        .filter_map(|p| {
            let s = similarity(&p.interests, vector);
            (s >= threshold).then(|| {
                let body = NotifyBody {
                    user: p.user.clone(),
                    event: kind,
                    trigger: trigger.clone(),
                    similarity: s,
                };
                Message::new(MessageType::Notify, sender, body)
            })
        })
        .collect()
}

/// How a query string maps onto the ontology.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryPlan {
    /// Concepts named in the query or linked to its keywords.
    pub topics: Vec<String>,
    /// Matched keyword phrases followed by leftover tokens.
    pub keyword_terms: Vec<String>,
    pub vector: ConceptVector,
}

impl QueryPlan {
    pub fn is_empty(&self) -> bool {
        self.topics.is_empty() && self.keyword_terms.is_empty()
    }
}

pub fn analyze_query(text: &str, ontology: &Ontology) -> QueryPlan {
    let tokens = tokenize(text);
    let mut raw: BTreeMap<String, u64> = BTreeMap::new();
    let mut topics: Vec<String> = Vec::new();
    let push_topic = |topics: &mut Vec<String>, c: &str| {
        if !topics.iter().any(|t| t == c) {
            topics.push(c.to_string());
        }
    };

    let by_canonical: HashMap<String, &str> = ontology
        .concepts()
        .iter()
        .map(|c| (canonical_phrase(&c.name), c.name.as_str()))
        .collect();
    let ctrie = ontology.concept_trie();
    for (_, _, id) in ctrie.find_all(&tokens) {
        if let Some(name) = by_canonical.get(ctrie.phrase(id)) {
            push_topic(&mut topics, name);
            *raw.entry(name.to_string()).or_insert(0) += u64::from(MAX_WEIGHT);
        }
    }

    let ktrie = ontology.keyword_trie();
    let mut consumed = vec![false; tokens.len()];
    let mut terms: Vec<String> = Vec::new();
    for (start, len, id) in ktrie.find_all(&tokens) {
        consumed[start..start + len].iter_mut().for_each(|c| *c = true);
        let phrase = ktrie.phrase(id);
        if !terms.iter().any(|t| t == phrase) {
            terms.push(phrase.to_string());
        }
        for link in ontology.links_for_canonical(phrase) {
            push_topic(&mut topics, &link.concept);
            *raw.entry(link.concept.clone()).or_insert(0) += u64::from(link.weight);
        }
    }
    for (token, used) in tokens.iter().zip(&consumed) {
        if !used && !terms.contains(token) {
            terms.push(token.clone());
        }
    }
    QueryPlan {
        topics,
        keyword_terms: terms,
        vector: ConceptVector::normalized(raw.into_iter().map(|(c, s)| (c, s as f64))),
    }
}

/// Union of the subtrees of `topics`, sorted. Unknown names pass through.
pub fn expand_topics(topics: &[String], ontology: &Ontology) -> Vec<String> {
    let mut out = BTreeSet::new();
    for t in topics {
        match ontology.subtree(t) {
            Ok(set) => out.extend(set),
            Err(_) => {
                out.insert(t.clone());
            }
        }
    }
    out.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedHit {
    pub score: f64,
    pub resource: String,
    pub url: String,
    pub title: String,
}

/// One hit per url at its best score, ranked. A score tie between two
/// resources credits the alphabetically first.
pub fn merge(results: &[SearchPayload], limit: usize) -> Vec<MergedHit> {
    let mut best: HashMap<&str, MergedHit> = HashMap::new();
    for r in results {
        for h in &r.hits {
            let candidate = MergedHit {
                score: h.score,
                resource: r.resource.clone(),
                url: h.url.clone(),
                title: h.title.clone(),
            };
            match best.get_mut(h.url.as_str()) {
                Some(cur) => {
                    if h.score > cur.score || (h.score == cur.score && r.resource < cur.resource) {
                        *cur = candidate;
                    }
                }
                None => {
                    best.insert(&h.url, candidate);
                }
            }
        }
    }
    let mut hits: Vec<MergedHit> = best.into_values().collect();
    hits.sort_by(|a, b| rank_order(a.score, &a.url, b.score, &b.url));
    hits.truncate(limit);
    hits
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryOutcome {
    pub plan: QueryPlan,
    pub hits: Vec<MergedHit>,
    /// Set when some resource failed to answer.
    pub partial: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PaaError {
    #[error("no mediator configured")]
    NoMediator,
    #[error("no mediator reachable: {0}")]
    MediatorUnreachable(String),
    #[error("invalid user name {0:?}")]
    InvalidUser(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    BadProfile { path: PathBuf, reason: String },
}

/// A user's assistant, talking to the configured mediators.
#[derive(Debug, Clone)]
pub struct Paa {
    pub user: String,
    pub mediators: Vec<String>,
    pub ontology: Arc<Ontology>,
    pub client: Client,
    pub limit: usize,
}

impl Paa {
    pub fn new(user: impl Into<String>, mediators: Vec<String>, ontology: Arc<Ontology>) -> Self {
        let user = user.into();
        Self {
            client: Client::new(format!("paa:{user}")),
            user,
            mediators,
            ontology,
            limit: DEFAULT_LIMIT,
        }
    }

    /// Routes every topic and term through every mediator and returns the
    /// resources found, by name.
    async fn route_all(&self, plan: &QueryPlan) -> Result<(BTreeMap<String, RouteEntry>, Vec<String>), PaaError> {
        if self.mediators.is_empty() {
            return Err(PaaError::NoMediator);
        }
        let requests: Vec<RouteRequestBody> = plan
            .topics
            .iter()
            .map(|t| RouteRequestBody {
                kind: RouteKind::Topic,
                value: t.clone(),
            })
            .chain(plan.keyword_terms.iter().map(|k| RouteRequestBody {
                kind: RouteKind::Keyword,
                value: k.clone(),
            }))
            .collect();
        let mut set = JoinSet::new();
        for m in &self.mediators {
            for r in &requests {
                let (client, m, r) = (self.client.clone(), m.clone(), r.clone());
                set.spawn(async move {
                    let out = client.route(&m, &r).await;
                    (m, out)
                });
            }
        }
        let mut found = BTreeMap::new();
        let mut warnings = Vec::new();
        let mut reached = BTreeSet::new();
        let mut failed = BTreeMap::new();
        while let Some(joined) = set.join_next().await {
            let Ok((mediator, out)) = joined else { continue };
            match out {
                Ok(entries) => {
                    reached.insert(mediator);
                    for e in entries {
                        found.entry(e.name.clone()).or_insert(e);
                    }
                }
                Err(e) => {
                    failed.entry(mediator).or_insert_with(|| e.to_string());
                }
            }
        }
        if reached.is_empty() && !failed.is_empty() {
            let list: Vec<String> = failed.values().cloned().collect();
            return Err(PaaError::MediatorUnreachable(list.join("; ")));
        }
        for (m, e) in failed {
            if !reached.contains(&m) {
                warnings.push(format!("mediator {m}: {e}"));
            }
        }
        Ok((found, warnings))
    }

    pub async fn query(&self, text: &str) -> Result<QueryOutcome, PaaError> {
        let plan = analyze_query(text, &self.ontology);
        if plan.is_empty() {
            return Ok(QueryOutcome {
                plan,
                ..QueryOutcome::default()
            });
        }
        let (resources, mut warnings) = self.route_all(&plan).await?;
        let concepts = expand_topics(&plan.topics, &self.ontology);
        let mut calls = JoinSet::new();
        for entry in resources.values() {
            let offers = |s: &str| entry.services.iter().any(|x| x.name == s);
            let mut wanted = Vec::new();
            if !concepts.is_empty() && offers(SEARCH_BY_TOPIC) {
                wanted.push((SEARCH_BY_TOPIC, concepts.join("\n")));
            }
            if !plan.keyword_terms.is_empty() && offers(SEARCH_BY_KEYWORD) {
                wanted.push((SEARCH_BY_KEYWORD, plan.keyword_terms.join("\n")));
            }
            for (service, input) in wanted {
                let client = self.client.clone();
                let (name, addr, user) = (entry.name.clone(), entry.address.clone(), self.user.clone());
                calls.spawn(async move {
                    let out = client.call_service(&addr, service, vec![input], &user, |_| {}).await;
                    (name, service, out)
                });
            }
        }
        let mut payloads = Vec::new();
        let mut partial = false;
        while let Some(joined) = calls.join_next().await {
            let Ok((name, service, out)) = joined else {
                partial = true;
                continue;
            };
            match out.and_then(|v| {
                serde_json::from_value::<SearchPayload>(v).map_err(|e| CallError::Service {
                    class: crate::protocol::FailureClass::BadInput,
                    reason: format!("unreadable result: {e}"),
                })
            }) {
                Ok(p) => payloads.push(p),
                Err(e) => {
                    partial = true;
                    warnings.push(format!("{name} {service}: {e}"));
                }
            }
        }
        warnings.sort();
        Ok(QueryOutcome {
            hits: merge(&payloads, self.limit),
            plan,
            partial,
            warnings,
        })
    }
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Profiles and notification inboxes under `<data_dir>/profiles`.
#[derive(Debug, Clone)]
pub struct ProfileStore {
    dir: PathBuf,
}

/// User names double as file names: `[A-Za-z0-9_.-]`, not starting with `.`.
pub fn valid_user(user: &str) -> bool {
    !user.is_empty()
        && !user.starts_with('.')
        && user
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl ProfileStore {
    pub fn new(data_dir: &Path) -> Self {
        Self {
            dir: data_dir.join("profiles"),
        }
    }

    fn path(&self, user: &str, ext: &str) -> Result<PathBuf, PaaError> {
        if !valid_user(user) {
            return Err(PaaError::InvalidUser(user.to_string()));
        }
        Ok(self.dir.join(format!("{user}.{ext}")))
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PaaError + '_ {
        move |source| PaaError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// The stored profile, or a fresh one for an unknown user.
    pub fn load(&self, user: &str) -> Result<UserProfile, PaaError> {
        let path = self.path(user, "json")?;
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| PaaError::BadProfile {
                path: path.clone(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(UserProfile::new(user)),
            Err(e) => Err(Self::io(&path)(e)),
        }
    }

    pub fn save(&self, profile: &UserProfile) -> Result<(), PaaError> {
        let path = self.path(&profile.user, "json")?;
        std::fs::create_dir_all(&self.dir).map_err(Self::io(&self.dir))?;
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec_pretty(profile).expect("profiles serialize");
        std::fs::write(&tmp, bytes).map_err(Self::io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(Self::io(&path))
    }

    /// Every stored profile, by user name.
    pub fn all(&self) -> Result<Vec<UserProfile>, PaaError> {
        let entries = match std::fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Self::io(&self.dir)(e)),
        };
        let mut users: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(".json").filter(|u| valid_user(u)).map(str::to_string)
            })
            .collect();
        users.sort();
        users.iter().map(|u| self.load(u)).collect()
    }

    /// Folds a query into the user's profile and history.
    pub fn record_query(&self, user: &str, text: &str, plan: &QueryPlan, blend: f64) -> Result<UserProfile, PaaError> {
        let mut profile = update_profile(&self.load(user)?, &plan.vector, blend);
        profile.history.push(HistoryEntry {
            timestamp: now_secs(),
            query: text.to_string(),
            concepts: plan.topics.clone(),
        });
        self.save(&profile)?;
        Ok(profile)
    }

    pub fn append_inbox(&self, user: &str, m: &Message) -> Result<(), PaaError> {
        let path = self.path(user, "inbox")?;
        std::fs::create_dir_all(&self.dir).map_err(Self::io(&self.dir))?;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(Self::io(&path))?;
        f.write_all(m.to_line().as_bytes()).map_err(Self::io(&path))
    }

    /// Files each NOTIFY in its addressee's inbox.
    pub fn deliver(&self, notifications: &[Message]) -> Result<(), PaaError> {
        for m in notifications {
            if let Ok(body) = m.body::<NotifyBody>() {
                self.append_inbox(&body.user, m)?;
            }
        }
        Ok(())
    }

    pub fn inbox(&self, user: &str) -> Result<Vec<Message>, PaaError> {
        let path = self.path(user, "inbox")?;
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Self::io(&path)(e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                Message::from_line(l).map_err(|e| PaaError::BadProfile {
                    path: path.clone(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }
}
