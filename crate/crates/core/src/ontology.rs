//! Domain conceptualisation: a forest of concepts plus a weighted
//! keyword-to-concept table.
//!
//! Snapshots are immutable. Every mutating operation returns a fresh
//! [`Ontology`] and leaves the receiver untouched, so a broker can hold one
//! snapshot while a replacement is being built.
//!
//! Concept names and keywords are compared case-insensitively. Keywords are
//! reduced to their canonical token form (see [`crate::text`]) for lookup.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::{canonical_phrase, fold, tokenize, PhraseTrie};

pub const MIN_WEIGHT: u32 = 1;
pub const MAX_WEIGHT: u32 = 20;
pub const MAX_KEYWORD_TOKENS: usize = 8;

const SEED_HIERARCHY: &str = include_str!("../data/seed/hierarchy.tsv");
const SEED_LINKS: &str = include_str!("../data/seed/links.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    pub parent: Option<String>,
}

impl Concept {
    pub fn root(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            parent: None,
        }
    }

    pub fn child(name: impl Into<String>, parent: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            parent: Some(parent.into()),
        }
    }
}

/// One row of the keyword/concept table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordLink {
    pub keyword: String,
    pub concept: String,
    pub weight: u32,
}

impl KeywordLink {
    pub fn new(keyword: impl Into<String>, concept: impl Into<String>, weight: u32) -> Self {
        Self {
            keyword: keyword.into(),
            concept: concept.into(),
            weight,
        }
    }
}

/// A single broken invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    InvalidConceptName {
        name: String,
    },
    DuplicateConcept {
        name: String,
    },
    UnknownParent {
        concept: String,
        parent: String,
    },
    Cycle {
        concept: String,
    },
    EmptyKeyword {
        concept: String,
    },
    InvalidKeyword {
        keyword: String,
    },
    KeywordTooLong {
        keyword: String,
        tokens: usize,
    },
    WeightOutOfBounds {
        keyword: String,
        concept: String,
        weight: i64,
    },
    DuplicateLink {
        keyword: String,
        concept: String,
    },
    UnknownConcept {
        keyword: String,
        concept: String,
    },
    LookupMismatch {
        keyword: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidConceptName { name } => write!(f, "invalid concept name {name:?}"),
            Violation::DuplicateConcept { name } => write!(f, "duplicate concept {name:?}"),
            Violation::UnknownParent { concept, parent } => {
                write!(f, "concept {concept:?} has unknown parent {parent:?}")
            }
            Violation::Cycle { concept } => write!(f, "concept {concept:?} is part of a hierarchy cycle"),
            Violation::EmptyKeyword { concept } => write!(f, "empty keyword linked to {concept:?}"),
            Violation::InvalidKeyword { keyword } => write!(f, "invalid keyword {keyword:?}"),
            Violation::KeywordTooLong { keyword, tokens } => write!(
                f,
                "keyword {keyword:?} has {tokens} tokens (max {MAX_KEYWORD_TOKENS})"
            ),
            Violation::WeightOutOfBounds {
                keyword,
                concept,
                weight,
            } => write!(
                f,
                "weight out of bounds: {keyword:?} -> {concept:?} has weight {weight} (allowed {MIN_WEIGHT}..={MAX_WEIGHT})"
            ),
            Violation::DuplicateLink { keyword, concept } => {
                write!(f, "duplicate link {keyword:?} -> {concept:?}")
            }
            Violation::UnknownConcept { keyword, concept } => {
                write!(f, "keyword {keyword:?} links to unknown concept {concept:?}")
            }
            Violation::LookupMismatch { keyword } => {
                write!(f, "lookup table disagrees with links for keyword {keyword:?}")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("{file} line {line}: {reason}")]
    Malformed {
        file: &'static str,
        line: usize,
        reason: String,
    },
    #[error("{0}")]
    Invalid(Violation),
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
}

impl From<Violation> for OntologyError {
    fn from(v: Violation) -> Self {
        OntologyError::Invalid(v)
    }
}

/// Immutable ontology snapshot.
#[derive(Debug, Clone)]
pub struct Ontology {
    concepts: Vec<Concept>,
    links: Vec<KeywordLink>,
    // Derived tables, rebuilt on every construction.
    concept_index: HashMap<String, usize>,
    lookup: HashMap<String, Vec<usize>>,
    keyword_trie: PhraseTrie,
    concept_trie: PhraseTrie,
}

impl PartialEq for Ontology {
    fn eq(&self, other: &Self) -> bool {
        self.concepts == other.concepts && self.links == other.links
    }
}

impl Default for Ontology {
    fn default() -> Self {
        Self::from_parts_unchecked(Vec::new(), Vec::new())
    }
}

fn valid_name(name: &str) -> bool {
    // A leading `#` would read back as a TSV comment.
    !name.trim().is_empty() && name.trim() == name && !name.starts_with('#') && !name.contains(['\t', '\n', '\r'])
}

impl Ontology {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The shipped seed: the six first-level topics, `Wireless ATM`, and the
    /// five keyword rows of the reference table.
    pub fn seed() -> Self {
        load_ontology(SEED_HIERARCHY, SEED_LINKS).expect("shipped seed ontology is valid")
    }

    pub fn seed_sources() -> (&'static str, &'static str) {
        (SEED_HIERARCHY, SEED_LINKS)
    }

    /// Builds an ontology without checking invariants. Use [`Ontology::validate`]
    /// to inspect the result.
    pub fn from_parts_unchecked(concepts: Vec<Concept>, links: Vec<KeywordLink>) -> Self {
        let mut concept_index = HashMap::new();
        let mut concept_trie = PhraseTrie::new();
        for (i, c) in concepts.iter().enumerate() {
            concept_index.entry(fold(&c.name)).or_insert(i);
            concept_trie.insert(&c.name);
        }
        let lookup = build_lookup(&links);
        let mut keyword_trie = PhraseTrie::new();
        for link in &links {
            keyword_trie.insert(&link.keyword);
        }
        Self {
            concepts,
            links,
            concept_index,
            lookup,
            keyword_trie,
            concept_trie,
        }
    }

    /// Builds an ontology and rejects it on the first violation.
    pub fn from_parts(concepts: Vec<Concept>, links: Vec<KeywordLink>) -> Result<Self, OntologyError> {
        let ontology = Self::from_parts_unchecked(concepts, links);
        match ontology.validate().into_iter().next() {
            Some(v) => Err(v.into()),
            None => Ok(ontology),
        }
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn links(&self) -> &[KeywordLink] {
        &self.links
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty() && self.links.is_empty()
    }

    pub fn concept(&self, name: &str) -> Option<&Concept> {
        self.concept_index.get(&fold(name)).map(|&i| &self.concepts[i])
    }

    pub fn roots(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.iter().filter(|c| c.parent.is_none())
    }

    pub fn children<'a>(&'a self, name: &str) -> impl Iterator<Item = &'a Concept> + 'a {
        let key = fold(name);
        self.concepts
            .iter()
            .filter(move |c| c.parent.as_deref().map(fold).as_deref() == Some(key.as_str()))
    }

    /// Adds a concept, optionally under an existing parent.
    pub fn add_concept(&self, name: &str, parent: Option<&str>) -> Result<Ontology, OntologyError> {
        let name = name.trim();
        if !valid_name(name) {
            return Err(Violation::InvalidConceptName { name: name.to_string() }.into());
        }
        if self.concept(name).is_some() {
            return Err(Violation::DuplicateConcept { name: name.to_string() }.into());
        }
        let parent = match parent.map(str::trim).filter(|p| !p.is_empty()) {
            None => None,
            Some(p) if fold(p) == fold(name) => {
                return Err(Violation::Cycle {
                    concept: name.to_string(),
                }
                .into())
            }
            Some(p) => match self.concept(p) {
                Some(existing) => Some(existing.name.clone()),
                None => {
                    return Err(Violation::UnknownParent {
                        concept: name.to_string(),
                        parent: p.to_string(),
                    }
                    .into())
                }
            },
        };
        let mut concepts = self.concepts.clone();
        concepts.push(Concept {
            name: name.to_string(),
            parent,
        });
        Ontology::from_parts(concepts, self.links.clone())
    }

    /// Creates or re-weights the link between `keyword` and `concept`.
    pub fn set_link(&self, keyword: &str, concept: &str, weight: i64) -> Result<Ontology, OntologyError> {
        let keyword = keyword.trim();
        let target = self.concept(concept).map(|c| c.name.clone());
        check_link(keyword, target.as_deref().unwrap_or(concept), weight)?;
        let Some(concept_name) = target else {
            return Err(Violation::UnknownConcept {
                keyword: keyword.to_string(),
                concept: concept.to_string(),
            }
            .into());
        };
        let key = canonical_phrase(keyword);
        let folded = fold(&concept_name);
        let weight = weight as u32;
        let mut links = self.links.clone();
        match links
            .iter_mut()
            .find(|l| canonical_phrase(&l.keyword) == key && fold(&l.concept) == folded)
        {
            Some(existing) => existing.weight = weight,
            None => links.push(KeywordLink::new(keyword, concept_name, weight)),
        }
        Ontology::from_parts(self.concepts.clone(), links)
    }

    /// Links for `keyword`, heaviest first, ties by concept name.
    pub fn concepts_for(&self, keyword: &str) -> Vec<(String, u32)> {
        let mut out: Vec<(String, u32)> = self
            .links_for_canonical(&canonical_phrase(keyword))
            .map(|l| (l.concept.clone(), l.weight))
            .collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    /// Links whose keyword has the given canonical form.
    pub fn links_for_canonical<'a>(&'a self, canonical: &str) -> impl Iterator<Item = &'a KeywordLink> + 'a {
        self.lookup
            .get(canonical)
            .into_iter()
            .flatten()
            .map(move |&i| &self.links[i])
    }

    pub fn has_keyword(&self, canonical: &str) -> bool {
        self.lookup.contains_key(canonical)
    }

    pub fn keyword_trie(&self) -> &PhraseTrie {
        &self.keyword_trie
    }

    pub fn concept_trie(&self) -> &PhraseTrie {
        &self.concept_trie
    }

    /// The concept plus all of its transitive descendants.
    pub fn subtree(&self, concept: &str) -> Result<BTreeSet<String>, OntologyError> {
        let root = self
            .concept(concept)
            .ok_or_else(|| OntologyError::UnknownConcept(concept.to_string()))?;
        let mut children: HashMap<String, Vec<&str>> = HashMap::new();
        for c in &self.concepts {
            if let Some(p) = &c.parent {
                children.entry(fold(p)).or_default().push(&c.name);
            }
        }
        let mut out = BTreeSet::new();
        let mut stack = vec![root.name.as_str()];
        while let Some(name) = stack.pop() {
            if !out.insert(name.to_string()) {
                continue;
            }
            if let Some(kids) = children.get(&fold(name)) {
                stack.extend(kids.iter().copied());
            }
        }
        Ok(out)
    }

    /// Every broken invariant. Empty iff the ontology is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();
        let mut seen = HashSet::new();
        for c in &self.concepts {
            if !valid_name(&c.name) {
                report.push(Violation::InvalidConceptName { name: c.name.clone() });
            }
            if !seen.insert(fold(&c.name)) {
                report.push(Violation::DuplicateConcept { name: c.name.clone() });
            }
            if let Some(p) = &c.parent {
                if self.concept(p).is_none() {
                    report.push(Violation::UnknownParent {
                        concept: c.name.clone(),
                        parent: p.clone(),
                    });
                }
            }
        }
        for c in &self.concepts {
            if self.on_cycle(c) {
                report.push(Violation::Cycle {
                    concept: c.name.clone(),
                });
            }
        }

        let mut pairs = HashSet::new();
        for link in &self.links {
            let weight = i64::from(link.weight);
            if let Err(v) = check_link(&link.keyword, &link.concept, weight) {
                report.push(v);
            }
            if self.concept(&link.concept).is_none() {
                report.push(Violation::UnknownConcept {
                    keyword: link.keyword.clone(),
                    concept: link.concept.clone(),
                });
            }
            if !pairs.insert((canonical_phrase(&link.keyword), fold(&link.concept))) {
                report.push(Violation::DuplicateLink {
                    keyword: link.keyword.clone(),
                    concept: link.concept.clone(),
                });
            }
        }

        let fresh = build_lookup(&self.links);
        let mut keys: BTreeSet<&String> = fresh.keys().collect();
        keys.extend(self.lookup.keys());
        for key in keys {
            if fresh.get(key) != self.lookup.get(key) {
                report.push(Violation::LookupMismatch { keyword: key.clone() });
            }
        }
        report
    }

    fn on_cycle(&self, start: &Concept) -> bool {
        let origin = fold(&start.name);
        let mut current = start.parent.clone();
        let mut steps = 0;
        while let Some(p) = current {
            if fold(&p) == origin {
                return true;
            }
            steps += 1;
            if steps > self.concepts.len() {
                // Cycle above us that does not include `start`.
                return false;
            }
            current = self.concept(&p).and_then(|c| c.parent.clone());
        }
        false
    }

    pub fn hierarchy_tsv(&self) -> String {
        let mut out = String::new();
        for c in &self.concepts {
            out.push_str(&c.name);
            out.push('\t');
            if let Some(p) = &c.parent {
                out.push_str(p);
            }
            out.push('\n');
        }
        out
    }

    pub fn links_tsv(&self) -> String {
        let mut out = String::new();
        for l in &self.links {
            out.push_str(&format!("{}\t{}\t{}\n", l.keyword, l.concept, l.weight));
        }
        out
    }

    /// Hex digest of the serialized ontology; changes whenever any link,
    /// weight or concept changes.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.hierarchy_tsv().as_bytes());
        hasher.update([0u8]);
        hasher.update(self.links_tsv().as_bytes());
        hex::encode(hasher.finalize())
    }
}

fn check_link(keyword: &str, concept: &str, weight: i64) -> Result<(), Violation> {
    if keyword.trim().is_empty() {
        return Err(Violation::EmptyKeyword {
            concept: concept.to_string(),
        });
    }
    if keyword.starts_with('#') || keyword.contains(['\t', '\n', '\r']) {
        return Err(Violation::InvalidKeyword {
            keyword: keyword.to_string(),
        });
    }
    let tokens = tokenize(keyword).len();
    if tokens == 0 {
        return Err(Violation::InvalidKeyword {
            keyword: keyword.to_string(),
        });
    }
    if tokens > MAX_KEYWORD_TOKENS {
        return Err(Violation::KeywordTooLong {
            keyword: keyword.to_string(),
            tokens,
        });
    }
    if weight < i64::from(MIN_WEIGHT) || weight > i64::from(MAX_WEIGHT) {
        return Err(Violation::WeightOutOfBounds {
            keyword: keyword.to_string(),
            concept: concept.to_string(),
            weight,
        });
    }
    Ok(())
}

fn build_lookup(links: &[KeywordLink]) -> HashMap<String, Vec<usize>> {
    let mut lookup: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, link) in links.iter().enumerate() {
        let key = canonical_phrase(&link.keyword);
        if !key.is_empty() {
            lookup.entry(key).or_default().push(i);
        }
    }
    lookup
}

fn data_lines(src: &str) -> impl Iterator<Item = (usize, &str)> {
    src.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Parses the hierarchy and links TSV sources into a validated ontology.
pub fn load_ontology(hierarchy_source: &str, links_source: &str) -> Result<Ontology, OntologyError> {
    parse_sources(hierarchy_source, links_source, true)
}

/// Parses the TSV sources checking only their syntax. Use
/// [`Ontology::validate`] to list every broken invariant.
pub fn parse_ontology_unchecked(hierarchy_source: &str, links_source: &str) -> Result<Ontology, OntologyError> {
    parse_sources(hierarchy_source, links_source, false)
}

fn parse_sources(hierarchy_source: &str, links_source: &str, strict: bool) -> Result<Ontology, OntologyError> {
    let mut concepts = Vec::new();
    for (line, text) in data_lines(hierarchy_source) {
        let mut fields = text.split('\t');
        let name = fields.next().unwrap_or("").trim();
        let parent = fields.next().map(str::trim).filter(|p| !p.is_empty());
        if fields.next().is_some() {
            return Err(OntologyError::Malformed {
                file: "hierarchy",
                line,
                reason: "expected `concept<TAB>parent`".into(),
            });
        }
        if name.is_empty() {
            return Err(OntologyError::Malformed {
                file: "hierarchy",
                line,
                reason: "empty concept name".into(),
            });
        }
        concepts.push(Concept {
            name: name.to_string(),
            parent: parent.map(str::to_string),
        });
    }

    // Parents may reference concepts declared later in the file.
    let names: HashMap<String, String> = concepts.iter().map(|c| (fold(&c.name), c.name.clone())).collect();
    for c in &mut concepts {
        if let Some(p) = &c.parent {
            if let Some(canonical) = names.get(&fold(p)) {
                c.parent = Some(canonical.clone());
            }
        }
    }

    let mut links = Vec::new();
    for (line, text) in data_lines(links_source) {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(OntologyError::Malformed {
                file: "links",
                line,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let keyword = fields[0].trim();
        let concept = fields[1].trim();
        let weight: i64 = fields[2].trim().parse().map_err(|_| OntologyError::Malformed {
            file: "links",
            line,
            reason: format!("weight {:?} is not an integer", fields[2].trim()),
        })?;
        if strict {
            check_link(keyword, concept, weight)?;
        }
        let weight = u32::try_from(weight).map_err(|_| OntologyError::Malformed {
            file: "links",
            line,
            reason: format!("weight {weight} is negative or too large"),
        })?;
        let concept = names
            .get(&fold(concept))
            .cloned()
            .unwrap_or_else(|| concept.to_string());
        links.push(KeywordLink::new(keyword, concept, weight));
    }
    if strict {
        Ontology::from_parts(concepts, links)
    } else {
        Ok(Ontology::from_parts_unchecked(concepts, links))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALTL: &str = "Adaptation Layer And Transport Layer";

    #[test]
    fn seed_contains_reference_rows() {
        let o = Ontology::seed();
        assert_eq!(o.links().len(), 5);
        assert_eq!(o.roots().count(), 6);
        assert!(o.validate().is_empty());
        assert_eq!(
            o.concepts_for("aal"),
            vec![(ALTL.to_string(), 20), ("ATM Introduction".to_string(), 3)]
        );
    }

    #[test]
    fn concepts_for_is_case_insensitive() {
        let o = Ontology::seed();
        let folded_lower = o.concepts_for(&"AAL".to_lowercase());
        assert_eq!(o.concepts_for("AAL"), folded_lower);
        assert!(o.concepts_for("unlisted phrase").is_empty());
    }

    #[test]
    fn empty_sources_give_empty_valid_ontology() {
        let o = load_ontology("", "").unwrap();
        assert!(o.is_empty());
        assert!(o.validate().is_empty());
    }

    #[test]
    fn unchecked_parse_reports_every_violation() {
        let o = parse_ontology_unchecked("A\tB\nB\tA\n", "k\tA\t0\nk\tZ\t3\n").unwrap();
        let report = o.validate();
        assert!(report.iter().any(|v| matches!(v, Violation::Cycle { .. })));
        assert!(report
            .iter()
            .any(|v| matches!(v, Violation::WeightOutOfBounds { weight: 0, .. })));
        assert!(report.iter().any(|v| matches!(v, Violation::UnknownConcept { .. })));
        assert!(parse_ontology_unchecked("", "k\tA\t-1\n").is_err());
    }

    #[test]
    fn weight_21_is_rejected() {
        let err = load_ontology("A\t\n", "k\tA\t21\n").unwrap_err();
        assert!(err.to_string().contains("weight out of bounds"), "{err}");
        let err = load_ontology("A\t\n", "k\tA\t0\n").unwrap_err();
        assert!(err.to_string().contains("weight out of bounds"));
    }

    #[test]
    fn malformed_and_referential_errors() {
        assert!(matches!(
            load_ontology("A\t\n", "k\tA\n"),
            Err(OntologyError::Malformed {
                file: "links",
                line: 1,
                ..
            })
        ));
        assert!(matches!(
            load_ontology("A\t\n", "k\tA\tten\n"),
            Err(OntologyError::Malformed { .. })
        ));
        assert!(matches!(
            load_ontology("A\t\n", "k\tB\t3\n"),
            Err(OntologyError::Invalid(Violation::UnknownConcept { .. }))
        ));
        assert!(matches!(
            load_ontology("A\t\n", "k\tA\t3\nK\ta\t4\n"),
            Err(OntologyError::Invalid(Violation::DuplicateLink { .. }))
        ));
        assert!(matches!(
            load_ontology("A\tB\nB\tA\n", ""),
            Err(OntologyError::Invalid(Violation::Cycle { .. }))
        ));
        assert!(matches!(
            load_ontology("A\tZ\n", ""),
            Err(OntologyError::Invalid(Violation::UnknownParent { .. }))
        ));
    }

    #[test]
    fn add_concept_under_parent() {
        let base = Ontology::seed();
        let o = base.add_concept("Mobile ATM", Some("ATM General")).unwrap();
        assert_eq!(o.concept("mobile atm").unwrap().parent.as_deref(), Some("ATM General"));
        assert!(o.subtree("ATM General").unwrap().contains("Mobile ATM"));
        assert!(base.concept("Mobile ATM").is_none());
    }

    #[test]
    fn add_concept_errors() {
        let o = Ontology::empty();
        let root = o.add_concept("X", None).unwrap();
        assert_eq!(root.concept("X").unwrap().parent, None);
        assert!(matches!(
            o.add_concept("X", Some("X")),
            Err(OntologyError::Invalid(Violation::Cycle { .. }))
        ));
        assert!(matches!(
            root.add_concept("x", None),
            Err(OntologyError::Invalid(Violation::DuplicateConcept { .. }))
        ));
        assert!(matches!(
            root.add_concept("Y", Some("Nope")),
            Err(OntologyError::Invalid(Violation::UnknownParent { .. }))
        ));
    }

    #[test]
    fn set_link_upserts() {
        let o = Ontology::seed();
        let o = o.set_link("wdm", "Wavelength Division Multiplexing", 10).unwrap();
        let wdm: Vec<_> = o.concepts_for("WDM");
        assert_eq!(wdm, vec![("Wavelength Division Multiplexing".to_string(), 10)]);
        assert_eq!(o.links().len(), 5);
        let o = o.set_link("optical burst", "optical networks", 7).unwrap();
        assert_eq!(
            o.concepts_for("Optical Burst"),
            vec![("Optical Networks".to_string(), 7)]
        );
    }

    #[test]
    fn set_link_errors() {
        let o = Ontology::seed();
        assert!(matches!(
            o.set_link("x", "Nonexistent", 5),
            Err(OntologyError::Invalid(Violation::UnknownConcept { .. }))
        ));
        assert!(matches!(
            o.set_link("x", "Optical Networks", 21),
            Err(OntologyError::Invalid(Violation::WeightOutOfBounds { .. }))
        ));
        assert!(matches!(
            o.set_link("  ", "Optical Networks", 2),
            Err(OntologyError::Invalid(Violation::EmptyKeyword { .. }))
        ));
        assert!(matches!(
            o.set_link("a b c d e f g h i", "Optical Networks", 2),
            Err(OntologyError::Invalid(Violation::KeywordTooLong { tokens: 9, .. }))
        ));
    }

    #[test]
    fn subtree_cases() {
        let o = Ontology::seed();
        assert_eq!(
            o.subtree("Wireless ATM").unwrap(),
            BTreeSet::from(["Wireless ATM".to_string()])
        );
        let atm = o.subtree("atm general").unwrap();
        assert!(atm.contains("ATM General") && atm.contains("Wireless ATM"));
        assert!(!atm.contains("SDH General"));
        assert!(matches!(o.subtree("nope"), Err(OntologyError::UnknownConcept(_))));
    }

    #[test]
    fn validate_reports_hand_built_violations() {
        let cyclic = Ontology::from_parts_unchecked(vec![Concept::child("A", "B"), Concept::child("B", "A")], vec![]);
        let report = cyclic.validate();
        assert!(report.contains(&Violation::Cycle { concept: "A".into() }));
        assert!(report.contains(&Violation::Cycle { concept: "B".into() }));

        let zero = Ontology::from_parts_unchecked(vec![Concept::root("A")], vec![KeywordLink::new("k", "A", 0)]);
        assert_eq!(
            zero.validate(),
            vec![Violation::WeightOutOfBounds {
                keyword: "k".into(),
                concept: "A".into(),
                weight: 0
            }]
        );
    }

    #[test]
    fn serialize_round_trips_seed() {
        let o = Ontology::seed();
        let back = load_ontology(&o.hierarchy_tsv(), &o.links_tsv()).unwrap();
        assert_eq!(back, o);
        assert_eq!(back.fingerprint(), o.fingerprint());
    }
}
