//! On-disk layout of a broker directory:
//!
//! ```text
//! store/<id>.soif        one SOIF record per file (authoritative)
//! index/concepts.idx     vectors, matches and postings (rebuildable)
//! maintenance.tsv        id, consecutive probe failures, last verification
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{BrokerError, BrokerProfile, BrokerStore, DocumentEntry};
use crate::indexer::{ConceptVector, DocId, InvertedIndex, MatchCounts};
use crate::ontology::Ontology;
use crate::soif::{self, SoifRecord};

pub const STORE_DIR: &str = "store";
pub const INDEX_FILE: &str = "index/concepts.idx";
pub const MAINTENANCE_FILE: &str = "maintenance.tsv";

const INDEX_HEADER: &str = "trilogy-concept-index 1";

/// A store file that could not be loaded. Other files are unaffected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadIssue {
    pub file: PathBuf,
    pub reason: String,
}

#[derive(Debug)]
pub struct LoadReport {
    pub store: BrokerStore,
    pub issues: Vec<LoadIssue>,
    pub index_rebuilt: bool,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BrokerError + '_ {
    move |source| BrokerError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BrokerError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn record_bytes(record: &SoifRecord) -> Vec<u8> {
    let mut out = Vec::new();
    // Stored records were validated on insertion.
    soif::write_record(record, &mut out).expect("stored record is valid");
    out
}

fn fingerprint<'a>(ontology: &Ontology, records: impl Iterator<Item = (DocId, &'a SoifRecord)>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(ontology.fingerprint().as_bytes());
    for (id, record) in records {
        hasher.update(id.to_le_bytes());
        hasher.update(record_bytes(record));
    }
    hex::encode(hasher.finalize())
}

impl BrokerStore {
    pub fn store_fingerprint(&self) -> String {
        fingerprint(&self.ontology, self.entries.values().map(|e| (e.id, &e.record)))
    }

    /// Text encoding of vectors, matches and postings, stamped with the
    /// fingerprint of the records and ontology it was computed from.
    pub fn encode_index(&self) -> String {
        let mut out = format!("{INDEX_HEADER}\nfingerprint\t{}\n", self.store_fingerprint());
        for e in self.entries.values() {
            for (concept, emphasis) in e.vector.iter() {
                out.push_str(&format!("vector\t{}\t{}\t{:?}\n", e.id, concept, emphasis));
            }
            for (keyword, count) in e.matches.iter() {
                out.push_str(&format!("match\t{}\t{}\t{}\n", e.id, keyword, count));
            }
        }
        for (concept, postings) in self.index.iter() {
            for p in postings {
                out.push_str(&format!("posting\t{}\t{}\t{:?}\n", concept, p.doc, p.emphasis));
            }
        }
        out
    }

    /// Writes every record, the index and maintenance state under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), BrokerError> {
        let store_dir = dir.join(STORE_DIR);
        fs::create_dir_all(&store_dir).map_err(io_err(&store_dir))?;
        for e in self.entries.values() {
            let path = store_dir.join(format!("{}.soif", e.id));
            let bytes = record_bytes(&e.record);
            if fs::read(&path).ok().as_deref() != Some(bytes.as_slice()) {
                write_atomic(&path, &bytes)?;
            }
        }
        for file in fs::read_dir(&store_dir).map_err(io_err(&store_dir))? {
            let path = file.map_err(io_err(&store_dir))?.path();
            let stale = soif_id(&path).is_some_and(|id| !self.entries.contains_key(&id));
            if stale {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }

        let mut maintenance = String::new();
        for e in self.entries.values() {
            maintenance.push_str(&format!("{}\t{}\t{}\n", e.id, e.failure_count, e.last_verified));
        }
        write_atomic(&dir.join(MAINTENANCE_FILE), maintenance.as_bytes())?;
        write_atomic(&dir.join(INDEX_FILE), self.encode_index().as_bytes())
    }

    /// Writes one record's store file. The index file goes stale and is
    /// rebuilt on the next load unless [`BrokerStore::save`] runs first.
    pub fn save_record(&self, dir: &Path, id: DocId) -> Result<(), BrokerError> {
        let entry = self.entries.get(&id).ok_or(BrokerError::UnknownId(id))?;
        let path = dir.join(STORE_DIR).join(format!("{id}.soif"));
        write_atomic(&path, &record_bytes(&entry.record))
    }

    /// Loads a broker directory. Missing directories give an empty store; a
    /// missing, stale or inconsistent index is rebuilt from the records.
    pub fn load(dir: &Path, profile: BrokerProfile, ontology: Arc<Ontology>) -> Result<LoadReport, BrokerError> {
        let mut store = BrokerStore::new(profile, Arc::clone(&ontology));
        let mut issues = Vec::new();
        if !dir.exists() {
            return Ok(LoadReport {
                store,
                issues,
                index_rebuilt: false,
            });
        }
        fs::read_dir(dir).map_err(io_err(dir))?;

        let store_dir = dir.join(STORE_DIR);
        let mut records: BTreeMap<DocId, SoifRecord> = BTreeMap::new();
        if store_dir.exists() {
            let mut urls: HashMap<String, DocId> = HashMap::new();
            let mut paths = Vec::new();
            for file in fs::read_dir(&store_dir).map_err(io_err(&store_dir))? {
                paths.push(file.map_err(io_err(&store_dir))?.path());
            }
            let mut numbered: Vec<(DocId, PathBuf)> = paths
                .into_iter()
                .filter_map(|p| soif_id(&p).map(|id| (id, p)))
                .collect();
            numbered.sort();
            for (id, path) in numbered {
                match read_single_record(&path) {
                    Ok(record) => {
                        if let Some(other) = urls.insert(record.url.clone(), id) {
                            issues.push(LoadIssue {
                                file: path.clone(),
                                reason: format!("duplicate url {:?} (also in {other}.soif)", record.url),
                            });
                            urls.insert(record.url.clone(), other);
                            continue;
                        }
                        records.insert(id, record);
                    }
                    Err(reason) => issues.push(LoadIssue { file: path, reason }),
                }
            }
        }
        issues.sort_by(|a, b| a.file.cmp(&b.file));

        let expected = fingerprint(&ontology, records.iter().map(|(id, r)| (*id, r)));
        let cached = fs::read_to_string(dir.join(INDEX_FILE))
            .ok()
            .and_then(|text| decode_index(&text, &expected));

        let index_rebuilt = match cached {
            Some(cached) if cached.consistent_with(&records) => {
                for (id, record) in records {
                    let matches = cached.matches.get(&id).cloned().unwrap_or_default();
                    let vector = cached.vectors.get(&id).cloned().unwrap_or_default();
                    store.by_url.insert(record.url.clone(), id);
                    store.next_id = store.next_id.max(id + 1);
                    store
                        .entries
                        .insert(id, Arc::new(DocumentEntry::new(id, record, matches, vector)));
                }
                store.index = cached.index;
                false
            }
            _ => {
                store.bulk_insert(records.into_iter().collect());
                true
            }
        };

        if let Ok(text) = fs::read_to_string(dir.join(MAINTENANCE_FILE)) {
            for line in text.lines() {
                let f: Vec<&str> = line.split('\t').collect();
                if let [id, failures, verified] = f[..] {
                    if let (Ok(id), Ok(failures), Ok(verified)) = (id.parse(), failures.parse(), verified.parse()) {
                        store.set_maintenance(id, failures, verified);
                    }
                }
            }
        }
        Ok(LoadReport {
            store,
            issues,
            index_rebuilt,
        })
    }
}

fn soif_id(path: &Path) -> Option<DocId> {
    if path.extension()? != "soif" {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok().filter(|&id| id > 0)
}

fn read_single_record(path: &Path) -> Result<SoifRecord, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let mut records = soif::parse(&bytes).map_err(|e| e.to_string())?;
    if records.len() != 1 {
        return Err(format!("expected one record, found {}", records.len()));
    }
    let record = records.pop().expect("one record");
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

struct CachedIndex {
    vectors: HashMap<DocId, ConceptVector>,
    matches: HashMap<DocId, MatchCounts>,
    index: InvertedIndex,
}

impl CachedIndex {
    fn consistent_with(&self, records: &BTreeMap<DocId, SoifRecord>) -> bool {
        if self
            .vectors
            .keys()
            .chain(self.matches.keys())
            .any(|id| !records.contains_key(id))
        {
            return false;
        }
        let rebuilt = InvertedIndex::from_vectors(self.vectors.iter().map(|(id, v)| (*id, v)));
        rebuilt == self.index
    }
}

fn decode_index(text: &str, expected_fingerprint: &str) -> Option<CachedIndex> {
    let mut lines = text.lines();
    if lines.next()? != INDEX_HEADER {
        return None;
    }
    let fp = lines.next()?.strip_prefix("fingerprint\t")?;
    if fp != expected_fingerprint {
        return None;
    }
    let mut vectors: HashMap<DocId, BTreeMap<String, f64>> = HashMap::new();
    let mut matches: HashMap<DocId, MatchCounts> = HashMap::new();
    let mut postings: Vec<(DocId, String, f64)> = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        match f[..] {
            ["vector", id, concept, emphasis] => {
                vectors
                    .entry(id.parse().ok()?)
                    .or_default()
                    .insert(concept.to_string(), emphasis.parse().ok()?);
            }
            ["match", id, keyword, count] => {
                matches
                    .entry(id.parse().ok()?)
                    .or_default()
                    .add(keyword, count.parse().ok()?);
            }
            ["posting", concept, id, emphasis] => {
                postings.push((id.parse().ok()?, concept.to_string(), emphasis.parse().ok()?));
            }
            _ => return None,
        }
    }
    let vectors: HashMap<DocId, ConceptVector> = vectors
        .into_iter()
        .map(|(id, m)| (id, ConceptVector::from_map(m)))
        .collect();
    let mut per_doc: HashMap<DocId, BTreeMap<String, f64>> = HashMap::new();
    for (id, concept, emphasis) in postings {
        per_doc.entry(id).or_default().insert(concept, emphasis);
    }
    let per_doc: Vec<(DocId, ConceptVector)> = per_doc
        .into_iter()
        .map(|(id, m)| (id, ConceptVector::from_map(m)))
        .collect();
    let index = InvertedIndex::from_vectors(per_doc.iter().map(|(id, v)| (*id, v)));
    Some(CachedIndex {
        vectors,
        matches,
        index,
    })
}
