//! Concept indexing: keyword occurrence extraction, keyword-to-concept
//! mapping, per-document weight normalization, and the inverted concept
//! index.
//!
//! A document's raw score for concept `c` is the sum, over every matched
//! keyword `k` linked to `c`, of `count(k) * weight(k, c)`. Emphases are raw
//! scores divided by the document's total, so a non-empty vector sums to 1.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ontology::Ontology;
use crate::soif::SoifRecord;
use crate::text::tokenize;

mod maintenance;

pub use maintenance::{refresh, AvailabilityProbe, FileProbe, MaintenanceReport, ProbeOutcome, MAX_PROBE_FAILURES};

pub type DocId = u64;

/// Attributes that feed keyword matching, each matched on its own.
pub const MATCHED_FIELDS: [&str; 3] = ["title", "keywords", "abstract"];

/// Occurrences of ontology keywords (canonical form) in one document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts(BTreeMap<String, u32>);

impl MatchCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, keyword: impl Into<String>, count: u32) {
        if count > 0 {
            *self.0.entry(keyword.into()).or_insert(0) += count;
        }
    }

    pub fn get(&self, keyword: &str) -> u32 {
        self.0.get(keyword).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, u32)> for MatchCounts {
    fn from_iter<T: IntoIterator<Item = (String, u32)>>(iter: T) -> Self {
        let mut m = MatchCounts::new();
        for (k, c) in iter {
            m.add(k, c);
        }
        m
    }
}

/// Normalized concept emphases of one document (or one query, or one user).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptVector(BTreeMap<String, f64>);

impl ConceptVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// L1-normalizes non-negative scores, dropping zero entries.
    pub fn normalized<I, S>(scores: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let raw: BTreeMap<String, f64> = scores
            .into_iter()
            .filter(|(_, v)| *v > 0.0 && v.is_finite())
            .map(|(k, v)| (k.into(), v))
            .collect();
        let total: f64 = raw.values().sum();
        if total <= 0.0 {
            return Self::default();
        }
        Self(raw.into_iter().map(|(k, v)| (k, v / total)).collect())
    }

    /// Wraps emphases as given. Callers are expected to pass a normalized map.
    pub fn from_map(map: BTreeMap<String, f64>) -> Self {
        Self(map)
    }

    pub fn get(&self, concept: &str) -> f64 {
        self.0.get(concept).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.0.contains_key(concept)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn as_map(&self) -> &BTreeMap<String, f64> {
        &self.0
    }

    /// Emphases in (0, 1] summing to 1 within 1e-9, or empty.
    pub fn is_valid(&self) -> bool {
        self.is_empty() || (self.0.values().all(|&v| v > 0.0 && v <= 1.0) && (self.sum() - 1.0).abs() <= 1e-9)
    }
}

/// Keyword occurrences in free text, leftmost-longest and non-overlapping.
pub fn extract_matches_text(text: &str, ontology: &Ontology) -> MatchCounts {
    let mut counts = MatchCounts::new();
    add_matches(text, ontology, &mut counts);
    counts
}

fn add_matches(text: &str, ontology: &Ontology, counts: &mut MatchCounts) {
    let trie = ontology.keyword_trie();
    if trie.is_empty() {
        return;
    }
    let tokens = tokenize(text);
    for (_, _, id) in trie.find_all(&tokens) {
        counts.add(trie.phrase(id), 1);
    }
}

/// Keyword occurrences in a record's title, keywords and abstract.
pub fn extract_matches(record: &SoifRecord, ontology: &Ontology) -> MatchCounts {
    let mut counts = MatchCounts::new();
    for field in MATCHED_FIELDS {
        if let Some(value) = record.get(field) {
            add_matches(&String::from_utf8_lossy(value), ontology, &mut counts);
        }
    }
    counts
}

pub fn concept_vector(matches: &MatchCounts, ontology: &Ontology) -> ConceptVector {
    let mut raw: BTreeMap<String, u64> = BTreeMap::new();
    for (keyword, count) in matches.iter() {
        for link in ontology.links_for_canonical(keyword) {
            *raw.entry(link.concept.clone()).or_insert(0) += u64::from(count) * u64::from(link.weight);
        }
    }
    let total: u64 = raw.values().sum();
    if total == 0 {
        return ConceptVector::default();
    }
    ConceptVector(
        raw.into_iter()
            .filter(|(_, s)| *s > 0)
            .map(|(c, s)| (c, s as f64 / total as f64))
            .collect(),
    )
}

/// Matches and vector for one record.
pub fn analyze(record: &SoifRecord, ontology: &Ontology) -> (MatchCounts, ConceptVector) {
    let matches = extract_matches(record, ontology);
    let vector = concept_vector(&matches, ontology);
    (matches, vector)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: DocId,
    pub emphasis: f64,
}

fn posting_order(a: &Posting, b: &Posting) -> std::cmp::Ordering {
    b.emphasis.total_cmp(&a.emphasis).then(a.doc.cmp(&b.doc))
}

/// Concept to postings, each list sorted by emphasis descending then doc id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_vectors<'a, I>(vectors: I) -> Self
    where
        I: IntoIterator<Item = (DocId, &'a ConceptVector)>,
    {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (doc, vector) in vectors {
            for (concept, emphasis) in vector.iter() {
                postings
                    .entry(concept.to_string())
                    .or_default()
                    .push(Posting { doc, emphasis });
            }
        }
        for list in postings.values_mut() {
            list.sort_by(posting_order);
        }
        Self { postings }
    }

    pub fn insert(&mut self, doc: DocId, vector: &ConceptVector) {
        for (concept, emphasis) in vector.iter() {
            let list = self.postings.entry(concept.to_string()).or_default();
            let posting = Posting { doc, emphasis };
            let at = list.partition_point(|p| posting_order(p, &posting).is_lt());
            list.insert(at, posting);
        }
    }

    pub fn remove(&mut self, doc: DocId, vector: &ConceptVector) {
        for concept in vector.concepts() {
            if let Some(list) = self.postings.get_mut(concept) {
                list.retain(|p| p.doc != doc);
                if list.is_empty() {
                    self.postings.remove(concept);
                }
            }
        }
    }

    pub fn postings(&self, concept: &str) -> &[Posting] {
        self.postings.get(concept).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Postings for a concept name compared case-insensitively.
    pub fn postings_ignore_case(&self, concept: &str) -> &[Posting] {
        if let Some(list) = self.postings.get(concept) {
            return list;
        }
        self.postings
            .iter()
            .find(|(name, _)| name.to_lowercase() == concept.to_lowercase())
            .map(|(_, list)| list.as_slice())
            .unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(c, l)| (c.as_str(), l.as_slice()))
    }

    pub fn concept_count(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    pub fn contains_doc(&self, doc: DocId) -> bool {
        self.postings.values().any(|l| l.iter().any(|p| p.doc == doc))
    }

    /// Every postings list non-empty, strictly ordered, and free of duplicate docs.
    pub fn is_well_ordered(&self) -> bool {
        self.postings
            .values()
            .all(|list| !list.is_empty() && list.windows(2).all(|w| posting_order(&w[0], &w[1]).is_lt()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate document id {0}")]
    DuplicateId(DocId),
}

/// Vectors for every document plus the inverted index over them.
pub fn build_index(
    documents: &[(DocId, SoifRecord)],
    ontology: &Ontology,
) -> Result<(BTreeMap<DocId, ConceptVector>, InvertedIndex), IndexError> {
    let mut seen = HashSet::with_capacity(documents.len());
    for (id, _) in documents {
        if !seen.insert(*id) {
            return Err(IndexError::DuplicateId(*id));
        }
    }
    let vectors: BTreeMap<DocId, ConceptVector> = documents
        .par_iter()
        .map(|(id, record)| (*id, analyze(record, ontology).1))
        .collect();
    let index = InvertedIndex::from_vectors(vectors.iter().map(|(id, v)| (*id, v)));
    Ok((vectors, index))
}
