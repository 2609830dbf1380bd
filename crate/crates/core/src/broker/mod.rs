//! Topic repository: stores SOIF summaries, keeps their concept vectors and
//! the inverted concept index current, and answers keyword and concept
//! queries.
//!
//! [`BrokerStore`] is a plain value with `&mut self` writers. [`SharedStore`]
//! wraps it for concurrent use: readers take an immutable snapshot, writers
//! are serialized and publish a new snapshot when they finish.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::indexer::{self, ConceptVector, DocId, InvertedIndex, MatchCounts, MATCHED_FIELDS};
use crate::ontology::Ontology;
use crate::soif::{SoifError, SoifRecord};
use crate::text::{canonical_phrase, contains_phrase, tokenize};

mod persist;

pub use persist::{LoadIssue, LoadReport, INDEX_FILE, MAINTENANCE_FILE, STORE_DIR};

pub const SEARCH_BY_KEYWORD: &str = "search-by-keyword";
pub const SEARCH_BY_TOPIC: &str = "search-by-topic";
pub const ADD_DOCUMENT: &str = "add-document";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub input_arity: u32,
    pub max_instances: u32,
}

impl ServiceSpec {
    pub fn new(name: impl Into<String>, input_arity: u32, max_instances: u32) -> Self {
        Self {
            name: name.into(),
            input_arity,
            max_instances,
        }
    }
}

/// What a resource offers: its unique name, specialization, and services.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerDescriptor {
    pub resource_name: String,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    pub services: Vec<ServiceSpec>,
}

impl BrokerDescriptor {
    pub fn validate(&self) -> Result<(), BrokerError> {
        if self.resource_name.trim().is_empty() {
            return Err(BrokerError::InvalidDescriptor("empty resource name".into()));
        }
        let mut names = HashSet::new();
        for s in &self.services {
            if s.name.trim().is_empty() {
                return Err(BrokerError::InvalidDescriptor("empty service name".into()));
            }
            if !names.insert(s.name.as_str()) {
                return Err(BrokerError::InvalidDescriptor(format!(
                    "duplicate service {:?}",
                    s.name
                )));
            }
            if s.max_instances == 0 {
                return Err(BrokerError::InvalidDescriptor(format!(
                    "service {:?} has max_instances 0",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn service(&self, name: &str) -> Option<&ServiceSpec> {
        self.services.iter().find(|s| s.name == name)
    }
}

/// Broker identity and specialization, read from its configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokerProfile {
    pub resource_name: String,
    pub topics: Vec<String>,
    pub keywords: Vec<String>,
    pub max_instances: u32,
}

impl BrokerProfile {
    pub fn new(resource_name: impl Into<String>, topics: Vec<String>) -> Self {
        Self {
            resource_name: resource_name.into(),
            topics,
            keywords: Vec::new(),
            max_instances: 1,
        }
    }

    pub fn validate(&self) -> Result<(), BrokerError> {
        if self.resource_name.trim().is_empty() {
            return Err(BrokerError::InvalidConfig("resource_name is empty".into()));
        }
        if self.topics.iter().all(|t| t.trim().is_empty()) {
            return Err(BrokerError::InvalidConfig("topics list is empty".into()));
        }
        if self.max_instances == 0 {
            return Err(BrokerError::InvalidConfig("max_instances must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("duplicate url {0:?}")]
    DuplicateUrl(String),
    #[error("invalid record: {0}")]
    InvalidRecord(#[from] SoifError),
    #[error("unknown document id {0}")]
    UnknownId(DocId),
    #[error("query needs at least one term")]
    EmptyTerms,
    #[error("query needs at least one concept")]
    EmptyConcepts,
    #[error("limit must be positive")]
    ZeroLimit,
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid broker configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct DocumentEntry {
    pub id: DocId,
    pub record: SoifRecord,
    pub vector: ConceptVector,
    pub matches: MatchCounts,
    pub failure_count: u32,
    pub last_verified: u64,
    field_tokens: Vec<Vec<String>>,
}

impl DocumentEntry {
    fn new(id: DocId, record: SoifRecord, matches: MatchCounts, vector: ConceptVector) -> Self {
        let field_tokens = MATCHED_FIELDS
            .iter()
            .filter_map(|f| record.get(f))
            .map(|v| tokenize(&String::from_utf8_lossy(v)))
            .collect();
        Self {
            id,
            record,
            vector,
            matches,
            failure_count: 0,
            last_verified: 0,
            field_tokens,
        }
    }

    fn mentions(&self, term: &[String]) -> bool {
        self.field_tokens.iter().any(|f| contains_phrase(f, term))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: DocId,
    pub url: String,
    pub title: String,
    pub score: f64,
}

/// Ranked hits: score descending, ties by url.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
}

impl QueryResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn urls(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.url.as_str()).collect()
    }
}

pub fn rank_order(a_score: f64, a_url: &str, b_score: f64, b_url: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_url.cmp(b_url))
}

#[derive(Debug, Clone)]
pub struct BrokerStore {
    profile: BrokerProfile,
    ontology: Arc<Ontology>,
    entries: BTreeMap<DocId, Arc<DocumentEntry>>,
    by_url: HashMap<String, DocId>,
    index: InvertedIndex,
    next_id: DocId,
}

impl BrokerStore {
    pub fn new(profile: BrokerProfile, ontology: Arc<Ontology>) -> Self {
        Self {
            profile,
            ontology,
            entries: BTreeMap::new(),
            by_url: HashMap::new(),
            index: InvertedIndex::new(),
            next_id: 1,
        }
    }

    pub fn profile(&self) -> &BrokerProfile {
        &self.profile
    }

    pub fn ontology(&self) -> &Arc<Ontology> {
        &self.ontology
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: DocId) -> Option<&DocumentEntry> {
        self.entries.get(&id).map(Arc::as_ref)
    }

    pub fn id_for_url(&self, url: &str) -> Option<DocId> {
        self.by_url.get(url).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = &DocumentEntry> {
        self.entries.values().map(Arc::as_ref)
    }

    /// Validates, analyzes and indexes `record`; the entry is queryable on return.
    pub fn add_document(&mut self, record: SoifRecord) -> Result<DocId, BrokerError> {
        record.validate()?;
        if self.by_url.contains_key(&record.url) {
            return Err(BrokerError::DuplicateUrl(record.url));
        }
        let id = self.next_id;
        self.insert_entry(id, record, None);
        Ok(id)
    }

    fn insert_entry(
        &mut self,
        id: DocId,
        record: SoifRecord,
        analysis: Option<(MatchCounts, ConceptVector)>,
    ) -> &DocumentEntry {
        let (matches, vector) = analysis.unwrap_or_else(|| indexer::analyze(&record, &self.ontology));
        self.index.insert(id, &vector);
        self.by_url.insert(record.url.clone(), id);
        self.next_id = self.next_id.max(id + 1);
        let entry = Arc::new(DocumentEntry::new(id, record, matches, vector));
        self.entries.insert(id, entry);
        &self.entries[&id]
    }

    pub fn remove_document(&mut self, id: DocId) -> Result<DocumentEntry, BrokerError> {
        let entry = self.entries.remove(&id).ok_or(BrokerError::UnknownId(id))?;
        self.index.remove(id, &entry.vector);
        self.by_url.remove(&entry.record.url);
        Ok(Arc::unwrap_or_clone(entry))
    }

    fn entry_mut(&mut self, id: DocId) -> Option<&mut DocumentEntry> {
        self.entries.get_mut(&id).map(Arc::make_mut)
    }

    /// Documents containing any of `terms` on token boundaries, scored by the
    /// fraction of distinct terms matched.
    pub fn query_keywords<S: AsRef<str>>(&self, terms: &[S], limit: usize) -> Result<QueryResult, BrokerError> {
        if limit == 0 {
            return Err(BrokerError::ZeroLimit);
        }
        let mut seen = HashSet::new();
        let terms: Vec<Vec<String>> = terms
            .iter()
            .map(|t| tokenize(t.as_ref()))
            .filter(|t| !t.is_empty() && seen.insert(t.clone()))
            .collect();
        if terms.is_empty() {
            return Err(BrokerError::EmptyTerms);
        }
        let total = terms.len() as f64;
        let hits = self.entries.values().filter_map(|e| {
            let matched = terms.iter().filter(|t| e.mentions(t)).count();
            (matched > 0).then(|| (e.as_ref(), matched as f64 / total))
        });
        Ok(self.ranked(hits, limit))
    }

    /// Union of the concepts' postings, scored by the best emphasis among
    /// the requested concepts. Unknown concepts contribute nothing.
    pub fn query_concepts<S: AsRef<str>>(&self, concepts: &[S], limit: usize) -> Result<QueryResult, BrokerError> {
        if limit == 0 {
            return Err(BrokerError::ZeroLimit);
        }
        if concepts.is_empty() {
            return Err(BrokerError::EmptyConcepts);
        }
        let mut best: HashMap<DocId, f64> = HashMap::new();
        for concept in concepts {
            for p in self.index.postings_ignore_case(concept.as_ref()) {
                let slot = best.entry(p.doc).or_insert(0.0);
                if p.emphasis > *slot {
                    *slot = p.emphasis;
                }
            }
        }
        let hits = best
            .into_iter()
            .filter_map(|(id, score)| self.entries.get(&id).map(|e| (e.as_ref(), score)));
        Ok(self.ranked(hits, limit))
    }

    fn ranked<'a>(&self, hits: impl Iterator<Item = (&'a DocumentEntry, f64)>, limit: usize) -> QueryResult {
        let mut hits: Vec<Hit> = hits
            .map(|(e, score)| Hit {
                id: e.id,
                url: e.record.url.clone(),
                title: e.record.title(),
                score,
            })
            .collect();
        hits.sort_by(|a, b| rank_order(a.score, &a.url, b.score, &b.url));
        hits.truncate(limit);
        QueryResult { hits }
    }

    pub fn describe(&self) -> BrokerDescriptor {
        let max = self.profile.max_instances.max(1);
        BrokerDescriptor {
            resource_name: self.profile.resource_name.clone(),
            topics: self.profile.topics.clone(),
            keywords: self.profile.keywords.iter().map(|k| canonical_phrase(k)).collect(),
            services: vec![
                ServiceSpec::new(SEARCH_BY_KEYWORD, 1, max),
                ServiceSpec::new(SEARCH_BY_TOPIC, 1, max),
                ServiceSpec::new(ADD_DOCUMENT, 1, 1),
            ],
        }
    }

    /// Store rebuilt from the same records and maintenance state under
    /// `ontology`.
    pub fn reindexed(&self, ontology: Arc<Ontology>) -> BrokerStore {
        let documents: Vec<(DocId, SoifRecord)> = self.entries.values().map(|e| (e.id, e.record.clone())).collect();
        let mut fresh = BrokerStore::new(self.profile.clone(), ontology);
        fresh.next_id = self.next_id;
        fresh.bulk_insert(documents);
        for (id, old) in &self.entries {
            if let Some(e) = fresh.entry_mut(*id) {
                e.failure_count = old.failure_count;
                e.last_verified = old.last_verified;
            }
        }
        fresh
    }

    fn bulk_insert(&mut self, documents: Vec<(DocId, SoifRecord)>) {
        use rayon::prelude::*;
        let ontology = Arc::clone(&self.ontology);
        let analyzed: Vec<_> = documents
            .into_par_iter()
            .map(|(id, record)| {
                let analysis = indexer::analyze(&record, &ontology);
                (id, record, analysis)
            })
            .collect();
        let mut entries = BTreeMap::new();
        for (id, record, (matches, vector)) in analyzed {
            self.by_url.insert(record.url.clone(), id);
            self.next_id = self.next_id.max(id + 1);
            entries.insert(id, Arc::new(DocumentEntry::new(id, record, matches, vector)));
        }
        self.index = InvertedIndex::from_vectors(entries.iter().map(|(id, e)| (*id, &e.vector)));
        self.entries = entries;
    }

    /// Re-inserts `record` under an existing id with its maintenance state.
    pub(crate) fn restore(&mut self, id: DocId, record: SoifRecord, failure_count: u32, last_verified: u64) {
        self.insert_entry(id, record, None);
        self.set_maintenance(id, failure_count, last_verified);
    }

    pub(crate) fn set_maintenance(&mut self, id: DocId, failure_count: u32, last_verified: u64) {
        if let Some(e) = self.entry_mut(id) {
            e.failure_count = failure_count;
            e.last_verified = last_verified;
        }
    }
}

/// Concurrent handle: snapshot reads, serialized copy-on-write writes.
#[derive(Debug)]
pub struct SharedStore {
    current: RwLock<Arc<BrokerStore>>,
    writer: Mutex<()>,
}

impl SharedStore {
    pub fn new(store: BrokerStore) -> Self {
        Self {
            current: RwLock::new(Arc::new(store)),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<BrokerStore> {
        Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()))
    }

    /// Runs `f` on a private copy and publishes it when `f` returns.
    pub fn write<R>(&self, f: impl FnOnce(&mut BrokerStore) -> R) -> R {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next);
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALTL: &str = "Adaptation Layer And Transport Layer";

    fn store() -> BrokerStore {
        BrokerStore::new(
            BrokerProfile::new("atm-broker", vec!["ATM General".into()]),
            Arc::new(Ontology::seed()),
        )
    }

    fn rec(url: &str, title: &str) -> SoifRecord {
        SoifRecord::new("FILE", url).with("title", title)
    }

    #[test]
    fn add_then_query_concepts() {
        let mut s = store();
        let id = s.add_document(rec("u1", "AAL")).unwrap();
        let r = s.query_concepts(&[ALTL], 10).unwrap();
        assert_eq!(r.hits.len(), 1);
        assert_eq!(r.hits[0].id, id);
        assert_eq!(r.hits[0].score, 20.0 / 23.0);
        let r = s.query_concepts(&["ATM Introduction"], 10).unwrap();
        assert_eq!(r.hits[0].score, 3.0 / 23.0);
        let r = s.query_concepts(&["ATM Introduction", ALTL], 10).unwrap();
        assert_eq!(r.hits[0].score, 20.0 / 23.0);
        assert!(s.query_concepts(&["No Such Concept"], 10).unwrap().is_empty());
    }

    #[test]
    fn duplicate_url_leaves_store_unchanged() {
        let mut s = store();
        s.add_document(rec("u1", "aal")).unwrap();
        let before = s.clone();
        assert!(matches!(
            s.add_document(rec("u1", "wdm")),
            Err(BrokerError::DuplicateUrl(_))
        ));
        assert_eq!(s.len(), 1);
        assert_eq!(s.index(), before.index());
    }

    #[test]
    fn unmatched_document_found_by_keyword_only() {
        let mut s = store();
        let id = s.add_document(rec("u1", "hello world")).unwrap();
        assert!(!s.index().contains_doc(id));
        let r = s.query_keywords(&["hello"], 5).unwrap();
        assert_eq!(r.hits[0].score, 1.0);
        let r = s.query_keywords(&["hello", "absent"], 5).unwrap();
        assert_eq!(r.hits[0].score, 0.5);
        assert!(matches!(s.query_keywords::<&str>(&[], 5), Err(BrokerError::EmptyTerms)));
        assert!(matches!(s.query_keywords(&["x"], 0), Err(BrokerError::ZeroLimit)));
        assert!(matches!(
            s.query_concepts::<&str>(&[], 5),
            Err(BrokerError::EmptyConcepts)
        ));
    }

    #[test]
    fn phrase_terms_need_contiguous_tokens() {
        let mut s = store();
        s.add_document(rec("u1", "admission control for connection")).unwrap();
        assert!(s
            .query_keywords(&["connection admission control"], 5)
            .unwrap()
            .is_empty());
        assert_eq!(s.query_keywords(&["Admission Control"], 5).unwrap().len(), 1);
    }

    #[test]
    fn remove_document_cases() {
        let mut s = store();
        let a = s.add_document(rec("a", "aal")).unwrap();
        let b = s.add_document(rec("b", "aal wdm")).unwrap();
        let before = s.index().postings(ALTL).iter().find(|p| p.doc == b).copied().unwrap();
        s.remove_document(a).unwrap();
        assert_eq!(s.index().postings(ALTL), &[before]);
        s.remove_document(b).unwrap();
        assert!(s.index().is_empty());
        assert!(s.query_keywords(&["aal"], 5).unwrap().is_empty());
        assert!(matches!(s.remove_document(a), Err(BrokerError::UnknownId(_))));
    }

    #[test]
    fn describe_lists_search_services() {
        let mut p = BrokerProfile::new("b", vec!["ATM general".into()]);
        p.max_instances = 4;
        let s = BrokerStore::new(p, Arc::new(Ontology::seed()));
        let d = s.describe();
        assert_eq!(d.service(SEARCH_BY_KEYWORD).unwrap().max_instances, 4);
        assert_eq!(d.service(SEARCH_BY_KEYWORD).unwrap().input_arity, 1);
        assert_eq!(d.service(SEARCH_BY_TOPIC).unwrap().input_arity, 1);
        assert!(d.validate().is_ok());
    }

    #[test]
    fn profile_validation() {
        assert!(BrokerProfile::new("b", vec![]).validate().is_err());
        assert!(BrokerProfile::new("", vec!["x".into()]).validate().is_err());
        assert!(BrokerProfile::new("b", vec!["x".into()]).validate().is_ok());
    }

    #[test]
    fn ties_ranked_by_url() {
        let mut s = store();
        s.add_document(rec("z", "wdm")).unwrap();
        s.add_document(rec("a", "wdm")).unwrap();
        let r = s.query_concepts(&["Wavelength Division Multiplexing"], 5).unwrap();
        assert_eq!(r.urls(), ["a", "z"]);
        let r = s.query_concepts(&["Wavelength Division Multiplexing"], 1).unwrap();
        assert_eq!(r.urls(), ["a"]);
    }

    #[test]
    fn shared_store_snapshots_are_stable() {
        let shared = SharedStore::new(store());
        let before = shared.snapshot();
        shared.write(|s| s.add_document(rec("u", "aal")).unwrap());
        assert!(before.is_empty());
        assert_eq!(shared.snapshot().len(), 1);
    }
}
