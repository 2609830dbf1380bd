//! Typed bibliographic records: per-kind field schemas, validation, and
//! conversion to SOIF summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::soif::SoifRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    ConferenceArticle,
    Book,
    BookChapter,
    JournalArticle,
    Thesis,
    TechnicalReport,
}

impl DocKind {
    pub const ALL: [DocKind; 6] = [
        DocKind::ConferenceArticle,
        DocKind::Book,
        DocKind::BookChapter,
        DocKind::JournalArticle,
        DocKind::Thesis,
        DocKind::TechnicalReport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DocKind::ConferenceArticle => "conference_article",
            DocKind::Book => "book",
            DocKind::BookChapter => "book_chapter",
            DocKind::JournalArticle => "journal_article",
            DocKind::Thesis => "thesis",
            DocKind::TechnicalReport => "technical_report",
        }
    }
}

impl fmt::Display for DocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocKind {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DocKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| IngestError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: &'static str,
    pub required: bool,
}

const fn req(name: &'static str) -> FieldSpec {
    FieldSpec { name, required: true }
}

const fn opt(name: &'static str) -> FieldSpec {
    FieldSpec { name, required: false }
}

const CONFERENCE_ARTICLE: &[FieldSpec] = &[
    req("title"),
    req("authors"),
    req("conference"),
    req("year"),
    req("keywords"),
    opt("abstract"),
    opt("url"),
];
const BOOK: &[FieldSpec] = &[
    req("title"),
    req("authors"),
    req("publisher"),
    req("year"),
    opt("isbn"),
    req("keywords"),
    opt("abstract"),
    opt("url"),
];
const BOOK_CHAPTER: &[FieldSpec] = &[
    req("title"),
    req("chapter_title"),
    req("authors"),
    req("editors"),
    req("publisher"),
    req("year"),
    opt("isbn"),
    req("keywords"),
    opt("abstract"),
    opt("url"),
];
const JOURNAL_ARTICLE: &[FieldSpec] = &[
    req("title"),
    req("authors"),
    req("journal"),
    opt("volume"),
    req("year"),
    req("keywords"),
    opt("abstract"),
    opt("url"),
];
const THESIS: &[FieldSpec] = &[
    req("title"),
    req("author"),
    req("institution"),
    req("year"),
    req("degree"),
    req("keywords"),
    opt("abstract"),
    opt("url"),
];
const TECHNICAL_REPORT: &[FieldSpec] = &[
    req("title"),
    req("authors"),
    req("institution"),
    opt("report_number"),
    req("year"),
    req("keywords"),
    opt("abstract"),
    opt("url"),
];

/// Field schema for a document kind, in prompting order.
pub fn required_fields(kind: DocKind) -> &'static [FieldSpec] {
    match kind {
        DocKind::ConferenceArticle => CONFERENCE_ARTICLE,
        DocKind::Book => BOOK,
        DocKind::BookChapter => BOOK_CHAPTER,
        DocKind::JournalArticle => JOURNAL_ARTICLE,
        DocKind::Thesis => THESIS,
        DocKind::TechnicalReport => TECHNICAL_REPORT,
    }
}

// Fields holding `;`-separated person lists.
const PERSON_LISTS: &[&str] = &["authors", "editors"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("unknown document kind {0:?}")]
    UnknownKind(String),
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("unknown field `{field}` for {kind}")]
    UnknownField { kind: DocKind, field: String },
    #[error("malformed year {0:?}: expected four digits")]
    MalformedYear(String),
    #[error("url {0:?} must be a single line")]
    InvalidUrl(String),
    #[error("invalid batch line: {0}")]
    BadJson(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibRecord {
    pub kind: DocKind,
    pub fields: BTreeMap<String, String>,
}

impl BibRecord {
    pub fn get(&self, field: &str) -> Option<&str> {
        self.fields.get(field).map(String::as_str)
    }

    /// Authors (or the single `author` of a thesis) as a list.
    pub fn authors(&self) -> Vec<String> {
        let raw = self.get("authors").or_else(|| self.get("author")).unwrap_or("");
        split_people(raw)
    }

    /// Parses one line of a batch ingest file: `{"kind": ..., "fields": {...}}`.
    pub fn from_json(line: &str) -> Result<BibRecord, IngestError> {
        #[derive(Deserialize)]
        struct Raw {
            kind: String,
            fields: BTreeMap<String, String>,
        }
        let raw: Raw = serde_json::from_str(line).map_err(|e| IngestError::BadJson(e.to_string()))?;
        build_record(raw.kind.parse()?, raw.fields)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bib records serialize")
    }
}

fn split_people(raw: &str) -> Vec<String> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Validates `fields` against the kind's schema.
pub fn build_record(kind: DocKind, fields: BTreeMap<String, String>) -> Result<BibRecord, IngestError> {
    let schema = required_fields(kind);
    let mut clean = BTreeMap::new();
    for (name, value) in fields {
        let name = name.trim().to_string();
        if !schema.iter().any(|f| f.name == name) {
            return Err(IngestError::UnknownField { kind, field: name });
        }
        let mut value = value.trim().to_string();
        if PERSON_LISTS.contains(&name.as_str()) {
            value = split_people(&value).join("; ");
        }
        if !value.is_empty() {
            clean.insert(name, value);
        }
    }
    if let Some(missing) = schema.iter().find(|f| f.required && !clean.contains_key(f.name)) {
        return Err(IngestError::MissingField(missing.name.to_string()));
    }
    if let Some(year) = clean.get("year") {
        if year.len() != 4 || !year.bytes().all(|b| b.is_ascii_digit()) {
            return Err(IngestError::MalformedYear(year.clone()));
        }
    }
    if let Some(url) = clean.get("url") {
        if url.contains(['\n', '\r']) {
            return Err(IngestError::InvalidUrl(url.clone()));
        }
    }
    Ok(BibRecord { kind, fields: clean })
}

/// Stable locator for records without a `url` field.
pub fn synthesized_url(record: &BibRecord) -> String {
    let mut hasher = Sha256::new();
    hasher.update(record.kind.as_str().as_bytes());
    for (name, value) in &record.fields {
        hasher.update([0u8]);
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(value.as_bytes());
    }
    let digest = hex::encode(hasher.finalize());
    format!("bib:{}:{}", record.kind, &digest[..32])
}

pub fn to_soif(record: &BibRecord) -> SoifRecord {
    let url = record
        .get("url")
        .map(str::to_string)
        .unwrap_or_else(|| synthesized_url(record));
    let mut soif = SoifRecord::new(record.kind.as_str(), url);
    for field in required_fields(record.kind) {
        if let Some(value) = record.get(field.name) {
            soif.push(field.name, value.as_bytes().to_vec());
        }
    }
    soif
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soif;

    fn fields(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn conference() -> BTreeMap<String, String> {
        fields(&[
            ("title", "Cell Level Simulation in ATM Networks"),
            ("authors", "Chevalier, F.; Harle, D."),
            ("conference", "WESIC 98"),
            ("year", "1998"),
            ("keywords", "ATM; simulation"),
        ])
    }

    fn names(kind: DocKind) -> Vec<String> {
        required_fields(kind)
            .iter()
            .map(|f| format!("{}{}", f.name, if f.required { "" } else { "?" }))
            .collect()
    }

    #[test]
    fn schema_tables() {
        assert_eq!(
            names(DocKind::ConferenceArticle),
            [
                "title",
                "authors",
                "conference",
                "year",
                "keywords",
                "abstract?",
                "url?"
            ]
        );
        assert_eq!(
            names(DocKind::Thesis),
            [
                "title",
                "author",
                "institution",
                "year",
                "degree",
                "keywords",
                "abstract?",
                "url?"
            ]
        );
        let all: std::collections::HashSet<_> = DocKind::ALL.iter().map(|k| names(*k)).collect();
        assert_eq!(all.len(), 6);
        assert!(all.iter().all(|l| !l.is_empty()));
    }

    #[test]
    fn builds_conference_article() {
        let r = build_record(DocKind::ConferenceArticle, conference()).unwrap();
        assert_eq!(r.authors(), vec!["Chevalier, F.", "Harle, D."]);
    }

    #[test]
    fn missing_unknown_and_year_errors() {
        let mut f = conference();
        f.remove("conference");
        assert_eq!(
            build_record(DocKind::ConferenceArticle, f),
            Err(IngestError::MissingField("conference".into()))
        );
        let mut f = conference();
        f.insert("publisher".into(), "x".into());
        assert!(matches!(
            build_record(DocKind::ConferenceArticle, f),
            Err(IngestError::UnknownField { .. })
        ));
        let mut f = conference();
        f.insert("year".into(), "98".into());
        assert_eq!(
            build_record(DocKind::ConferenceArticle, f),
            Err(IngestError::MalformedYear("98".into()))
        );
        let mut f = conference();
        f.insert("authors".into(), " ; ;".into());
        assert_eq!(
            build_record(DocKind::ConferenceArticle, f),
            Err(IngestError::MissingField("authors".into()))
        );
    }

    #[test]
    fn to_soif_passes_fields_through() {
        let r = build_record(DocKind::ConferenceArticle, conference()).unwrap();
        let s = to_soif(&r);
        assert_eq!(s.template_type, "conference_article");
        assert_eq!(s.title(), "Cell Level Simulation in ATM Networks");
        assert!(s.url.starts_with("bib:conference_article:"));
        assert_eq!(to_soif(&r).url, s.url);
        let bytes = soif::serialize(std::slice::from_ref(&s)).unwrap();
        assert_eq!(soif::parse(&bytes).unwrap(), vec![s]);
    }

    #[test]
    fn explicit_url_is_kept() {
        let mut f = conference();
        f.insert("url".into(), "http://example.org/p.ps".into());
        let r = build_record(DocKind::ConferenceArticle, f).unwrap();
        assert_eq!(to_soif(&r).url, "http://example.org/p.ps");
    }

    #[test]
    fn json_lines() {
        let line = r#"{"kind":"thesis","fields":{"title":"T","author":"A","institution":"I","year":"1999","degree":"PhD","keywords":"wdm"}}"#;
        let r = BibRecord::from_json(line).unwrap();
        assert_eq!(r.kind, DocKind::Thesis);
        assert_eq!(BibRecord::from_json(&r.to_json()).unwrap(), r);
        assert!(matches!(BibRecord::from_json("{"), Err(IngestError::BadJson(_))));
        assert!(matches!(
            BibRecord::from_json(r#"{"kind":"poem","fields":{}}"#),
            Err(IngestError::UnknownKind(_))
        ));
    }
}
