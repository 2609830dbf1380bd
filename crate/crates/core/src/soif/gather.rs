//! The gatherer: turns a source document into a SOIF summary.

use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use super::SoifRecord;
use crate::ingest::{self, BibRecord, DocKind, IngestError};

/// Maximum size of the `abstract` attribute in bytes.
pub const ABSTRACT_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MediaHint {
    Text,
    Html,
    Bib,
}

impl FromStr for MediaHint {
    type Err = GatherError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(MediaHint::Text),
            "html" => Ok(MediaHint::Html),
            "bib" => Ok(MediaHint::Bib),
            other => Err(GatherError::UnknownMediaHint(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatherError {
    #[error("empty source")]
    EmptySource,
    #[error("unknown media hint {0:?} (expected text, html or bib)")]
    UnknownMediaHint(String),
    #[error("empty url")]
    EmptyUrl,
    #[error(transparent)]
    Bib(#[from] IngestError),
}

/// Guesses the media hint a record was gathered with: bibliographic kinds
/// map to `bib`, `.htm`/`.html` urls to `html`, anything else to `text`.
pub fn media_hint_for(record: &SoifRecord) -> MediaHint {
    if record.template_type.parse::<DocKind>().is_ok() {
        return MediaHint::Bib;
    }
    let path = record.url.split(['?', '#']).next().unwrap_or("").to_ascii_lowercase();
    if path.ends_with(".html") || path.ends_with(".htm") {
        MediaHint::Html
    } else {
        MediaHint::Text
    }
}

pub fn gather(source: &[u8], media_hint: &str, url: &str) -> Result<SoifRecord, GatherError> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    gather_at(source, media_hint.parse()?, url, now)
}

/// [`gather`] with an explicit timestamp.
pub fn gather_at(source: &[u8], hint: MediaHint, url: &str, gathered_at: u64) -> Result<SoifRecord, GatherError> {
    if source.is_empty() {
        return Err(GatherError::EmptySource);
    }
    let url = url.trim();
    if url.is_empty() || url.contains('\n') {
        return Err(GatherError::EmptyUrl);
    }
    let text = String::from_utf8_lossy(source);
    let mut record = match hint {
        MediaHint::Text => {
            let title = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
            SoifRecord::new("FILE", url)
                .with("title", collapse_whitespace(title))
                .with("keywords", "")
                .with("abstract", truncate_utf8(&collapse_whitespace(&text), ABSTRACT_LIMIT))
        }
        MediaHint::Html => {
            let page = extract_html(&text);
            SoifRecord::new("FILE", url)
                .with("title", page.title)
                .with("keywords", page.keywords)
                .with("abstract", truncate_utf8(&page.body, ABSTRACT_LIMIT))
        }
        MediaHint::Bib => {
            let bib = BibRecord::from_json(text.trim())?;
            let mut record = ingest::to_soif(&bib);
            record.url = url.to_string();
            if let Some(abs) = record.get_text("abstract") {
                record.set("abstract", truncate_utf8(&abs, ABSTRACT_LIMIT));
            }
            record
        }
    };
    record.push("gathered-time", gathered_at.to_string());
    record.push("file-size", source.len().to_string());
    Ok(record)
}

pub(crate) fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn truncate_utf8(s: &str, limit: usize) -> String {
    if s.len() <= limit {
        return s.to_string();
    }
    let mut end = limit;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].to_string()
}

#[derive(Debug, Default, PartialEq)]
struct HtmlSummary {
    title: String,
    keywords: String,
    body: String,
}

fn extract_html(html: &str) -> HtmlSummary {
    let mut title: Option<String> = None;
    let mut heading: Option<String> = None;
    let mut keywords = String::new();
    let mut body = String::new();

    let mut in_title = false;
    let mut title_buf = String::new();
    let mut heading_depth: Option<String> = None;
    let mut heading_buf = String::new();

    let mut rest = html;
    while !rest.is_empty() {
        let Some(lt) = rest.find('<') else {
            push_text(
                rest,
                in_title,
                &mut title_buf,
                &mut body,
                heading_depth.is_some(),
                &mut heading_buf,
            );
            break;
        };
        push_text(
            &rest[..lt],
            in_title,
            &mut title_buf,
            &mut body,
            heading_depth.is_some(),
            &mut heading_buf,
        );
        rest = &rest[lt..];

        if let Some(after) = rest.strip_prefix("<!--") {
            rest = after.find("-->").map_or("", |i| &after[i + 3..]);
            continue;
        }
        let Some(gt) = rest.find('>') else {
            break;
        };
        let inner = &rest[1..gt];
        rest = &rest[gt + 1..];

        let closing = inner.starts_with('/');
        let name: String = inner
            .trim_start_matches('/')
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        body.push(' ');

        match (name.as_str(), closing) {
            ("script" | "style", false) => {
                let end_tag = format!("</{name}");
                let lower = rest.to_ascii_lowercase();
                rest = match lower.find(&end_tag) {
                    Some(i) => rest[i..].find('>').map_or("", |j| &rest[i + j + 1..]),
                    None => "",
                };
            }
            ("title", false) => in_title = true,
            ("title", true) => {
                in_title = false;
                if title.is_none() {
                    title = Some(collapse_whitespace(&decode_entities(&title_buf)));
                }
            }
            ("h1" | "h2" | "h3" | "h4" | "h5" | "h6", false) if heading.is_none() => {
                heading_depth = Some(name.clone());
                heading_buf.clear();
            }
            ("h1" | "h2" | "h3" | "h4" | "h5" | "h6", true) if heading_depth.as_deref() == Some(name.as_str()) => {
                heading_depth = None;
                heading = Some(collapse_whitespace(&decode_entities(&heading_buf)));
            }
            ("meta", false) => {
                let attrs = parse_attributes(inner);
                let is_keywords = attrs
                    .iter()
                    .any(|(k, v)| k == "name" && v.eq_ignore_ascii_case("keywords"));
                if is_keywords && keywords.is_empty() {
                    if let Some((_, content)) = attrs.iter().find(|(k, _)| k == "content") {
                        keywords = collapse_whitespace(&decode_entities(content));
                    }
                }
            }
            _ => {}
        }
    }

    let body = collapse_whitespace(&decode_entities(&body));
    let title = title
        .filter(|t| !t.is_empty())
        .or(heading.filter(|h| !h.is_empty()))
        .unwrap_or_else(|| truncate_utf8(&body, 200));
    HtmlSummary { title, keywords, body }
}

fn push_text(
    text: &str,
    in_title: bool,
    title: &mut String,
    body: &mut String,
    in_heading: bool,
    heading: &mut String,
) {
    if in_title {
        title.push_str(text);
        return;
    }
    if in_heading {
        heading.push_str(text);
    }
    body.push_str(text);
}

fn parse_attributes(tag: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    // Skip the tag name.
    let mut rest = tag.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    loop {
        rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == '/');
        if rest.is_empty() {
            return out;
        }
        let key_end = rest
            .find(|c: char| c == '=' || c.is_whitespace() || c == '/')
            .unwrap_or(rest.len());
        let key = rest[..key_end].to_ascii_lowercase();
        rest = rest[key_end..].trim_start();
        if let Some(after) = rest.strip_prefix('=') {
            let after = after.trim_start();
            let (value, remaining) = match after.chars().next() {
                Some(q @ ('"' | '\'')) => {
                    let body = &after[1..];
                    match body.find(q) {
                        Some(i) => (&body[..i], &body[i + 1..]),
                        None => (body, ""),
                    }
                }
                _ => {
                    let end = after.find(char::is_whitespace).unwrap_or(after.len());
                    (&after[..end], &after[end..])
                }
            };
            out.push((key, value.to_string()));
            rest = remaining;
        } else {
            if key.is_empty() {
                // Stray character; skip it.
                rest = rest.get(1..).unwrap_or("");
                continue;
            }
            out.push((key, String::new()));
        }
    }
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let Some(semi) = rest[..rest.len().min(12)].find(';') else {
            out.push('&');
            rest = &rest[1..];
            continue;
        };
        let entity = &rest[1..semi];
        let decoded = match entity {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" | "#39" => Some('\''),
            "nbsp" => Some(' '),
            _ => entity
                .strip_prefix("#x")
                .or_else(|| entity.strip_prefix("#X"))
                .and_then(|h| u32::from_str_radix(h, 16).ok())
                .or_else(|| entity.strip_prefix('#').and_then(|d| d.parse().ok()))
                .and_then(char::from_u32),
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}
