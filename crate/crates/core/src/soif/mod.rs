//! Summary Object Interchange Format.
//!
//! ```text
//! record     = "@" template-type " { " url LF attribute* "}" LF
//! attribute  = name "{" decimal-byte-count "}:" TAB value-bytes LF
//! ```
//!
//! Values are raw bytes framed by their declared length, so they may hold
//! newlines, braces or invalid UTF-8.

use std::fmt;

mod gather;

pub use gather::{gather, gather_at, media_hint_for, GatherError, MediaHint, ABSTRACT_LIMIT};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SoifRecord {
    pub template_type: String,
    pub url: String,
    pub attributes: Vec<(String, Vec<u8>)>,
}

impl SoifRecord {
    pub fn new(template_type: impl Into<String>, url: impl Into<String>) -> Self {
        Self {
            template_type: template_type.into(),
            url: url.into(),
            attributes: Vec::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<Vec<u8>>) -> Self {
        self.push(name, value);
        self
    }

    pub fn push(&mut self, name: impl Into<String>, value: impl Into<Vec<u8>>) {
        self.attributes.push((name.into(), value.into()));
    }

    /// Replaces the first attribute named `name`, appending if absent.
    pub fn set(&mut self, name: &str, value: impl Into<Vec<u8>>) {
        let value = value.into();
        match self.attributes.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = value,
            None => self.attributes.push((name.to_string(), value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.attributes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Attribute value as text, lossily decoded.
    pub fn get_text(&self, name: &str) -> Option<String> {
        self.get(name).map(|v| String::from_utf8_lossy(v).into_owned())
    }

    pub fn title(&self) -> String {
        self.get_text("title").unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), SoifError> {
        if !valid_template_type(&self.template_type) {
            return Err(SoifError::InvalidTemplateType(self.template_type.clone()));
        }
        if self.url.is_empty() || self.url.contains('\n') {
            return Err(SoifError::InvalidUrl(self.url.clone()));
        }
        for (name, _) in &self.attributes {
            if !valid_attribute_name(name) {
                return Err(SoifError::InvalidAttributeName(name.clone()));
            }
        }
        Ok(())
    }
}

pub fn valid_attribute_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(|c| c.is_whitespace() || matches!(c, '{' | '}' | ':'))
}

fn valid_template_type(t: &str) -> bool {
    !t.is_empty() && !t.chars().any(|c| c.is_whitespace() || c == '{')
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SoifError {
    #[error("offset {offset}: record header does not match `@TYPE {{ url`")]
    BadHeader { offset: usize },
    #[error("offset {offset}: malformed attribute: {reason}")]
    BadAttribute { offset: usize, reason: String },
    #[error("offset {offset}: attribute {name:?} declares {declared} bytes but {available} are available")]
    ByteCount {
        offset: usize,
        name: String,
        declared: usize,
        available: usize,
    },
    #[error("offset {offset}: missing closing `}}`")]
    Unterminated { offset: usize },
    #[error("invalid attribute name {0:?}")]
    InvalidAttributeName(String),
    #[error("invalid template type {0:?}")]
    InvalidTemplateType(String),
    #[error("invalid url {0:?}")]
    InvalidUrl(String),
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.buf.get(self.pos).copied()
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    fn eat(&mut self, expected: &[u8]) -> bool {
        if self.rest().starts_with(expected) {
            self.pos += expected.len();
            true
        } else {
            false
        }
    }

    /// Bytes up to (not including) the next LF; consumes the LF.
    fn line(&mut self) -> Option<&'a [u8]> {
        let rest = self.rest();
        let end = rest.iter().position(|&b| b == b'\n')?;
        self.pos += end + 1;
        Some(&rest[..end])
    }
}

/// Parses zero or more concatenated records.
pub fn parse(input: &[u8]) -> Result<Vec<SoifRecord>, SoifError> {
    let mut cur = Cursor { buf: input, pos: 0 };
    let mut records = Vec::new();
    loop {
        while cur.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            cur.pos += 1;
        }
        if cur.peek().is_none() {
            return Ok(records);
        }
        records.push(parse_record(&mut cur)?);
    }
}

fn parse_record(cur: &mut Cursor<'_>) -> Result<SoifRecord, SoifError> {
    let start = cur.pos;
    let header = cur.line().ok_or(SoifError::BadHeader { offset: start })?;
    let header = std::str::from_utf8(header).map_err(|_| SoifError::BadHeader { offset: start })?;
    let body = header.strip_prefix('@').ok_or(SoifError::BadHeader { offset: start })?;
    let (template_type, url) = body.split_once(" { ").ok_or(SoifError::BadHeader { offset: start })?;
    if !valid_template_type(template_type) || url.is_empty() {
        return Err(SoifError::BadHeader { offset: start });
    }
    let mut record = SoifRecord::new(template_type, url);

    loop {
        let offset = cur.pos;
        match cur.peek() {
            None => return Err(SoifError::Unterminated { offset }),
            Some(b'}') => {
                cur.pos += 1;
                // A record may end at EOF without its final LF.
                if cur.peek().is_some() && !cur.eat(b"\n") {
                    return Err(SoifError::BadAttribute {
                        offset: cur.pos,
                        reason: "expected LF after `}`".into(),
                    });
                }
                return Ok(record);
            }
            Some(_) => {
                let (name, value) = parse_attribute(cur)?;
                record.attributes.push((name, value));
            }
        }
    }
}

fn parse_attribute(cur: &mut Cursor<'_>) -> Result<(String, Vec<u8>), SoifError> {
    let offset = cur.pos;
    let rest = cur.rest();
    let brace = rest
        .iter()
        .position(|&b| b == b'{' || b == b'\n')
        .filter(|&i| rest[i] == b'{');
    let Some(brace) = brace else {
        // Not an attribute and not `}`: the record was never closed.
        return Err(SoifError::Unterminated { offset });
    };
    let name = std::str::from_utf8(&rest[..brace])
        .ok()
        .filter(|n| valid_attribute_name(n))
        .ok_or_else(|| SoifError::BadAttribute {
            offset,
            reason: format!("invalid name {:?}", String::from_utf8_lossy(&rest[..brace])),
        })?
        .to_string();
    cur.pos += brace + 1;

    let digits_start = cur.pos;
    let mut declared: usize = 0;
    while let Some(b @ b'0'..=b'9') = cur.peek() {
        declared = declared
            .checked_mul(10)
            .and_then(|d| d.checked_add(usize::from(b - b'0')))
            .ok_or_else(|| SoifError::BadAttribute {
                offset: digits_start,
                reason: "byte count overflows".into(),
            })?;
        cur.pos += 1;
    }
    if cur.pos == digits_start {
        return Err(SoifError::BadAttribute {
            offset: digits_start,
            reason: "missing byte count".into(),
        });
    }
    if !cur.eat(b"}:\t") {
        return Err(SoifError::BadAttribute {
            offset: cur.pos,
            reason: "expected `}:` followed by TAB".into(),
        });
    }
    let available = cur.rest().len();
    // The value must be followed by its LF terminator.
    if declared >= available || cur.rest()[declared] != b'\n' {
        return Err(SoifError::ByteCount {
            offset,
            name,
            declared,
            available,
        });
    }
    let value = cur.rest()[..declared].to_vec();
    cur.pos += declared + 1;
    Ok((name, value))
}

/// Serializes records in the normative framing.
pub fn serialize(records: &[SoifRecord]) -> Result<Vec<u8>, SoifError> {
    let mut out = Vec::new();
    for r in records {
        write_record(r, &mut out)?;
    }
    Ok(out)
}

pub fn write_record(record: &SoifRecord, out: &mut Vec<u8>) -> Result<(), SoifError> {
    record.validate()?;
    out.push(b'@');
    out.extend_from_slice(record.template_type.as_bytes());
    out.extend_from_slice(b" { ");
    out.extend_from_slice(record.url.as_bytes());
    out.push(b'\n');
    for (name, value) in &record.attributes {
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(format!("{{{}}}:\t", value.len()).as_bytes());
        out.extend_from_slice(value);
        out.push(b'\n');
    }
    out.extend_from_slice(b"}\n");
    Ok(())
}

impl fmt::Display for SoifRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = Vec::new();
        write_record(self, &mut buf).map_err(|_| fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&buf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_record() {
        let records = parse(b"@FILE { file:///a\ntitle{5}:\thello\n}\n").unwrap();
        assert_eq!(
            records,
            vec![SoifRecord::new("FILE", "file:///a").with("title", "hello")]
        );
        assert_eq!(
            serialize(&records).unwrap(),
            b"@FILE { file:///a\ntitle{5}:\thello\n}\n"
        );
    }

    #[test]
    fn empty_input() {
        assert!(parse(b"").unwrap().is_empty());
        assert!(parse(b" \n\t\n").unwrap().is_empty());
        assert!(serialize(&[]).unwrap().is_empty());
    }

    #[test]
    fn byte_count_larger_than_input() {
        let err = parse(b"@FILE { u\ntitle{99}:\thello\n}\n").unwrap_err();
        assert!(matches!(err, SoifError::ByteCount { declared: 99, .. }), "{err:?}");
    }

    #[test]
    fn byte_count_smaller_than_value() {
        let err = parse(b"@FILE { u\ntitle{3}:\thello\n}\n").unwrap_err();
        assert!(matches!(err, SoifError::ByteCount { declared: 3, .. }), "{err:?}");
    }

    #[test]
    fn bad_header_and_unterminated() {
        assert!(matches!(parse(b"FILE { u\n}\n"), Err(SoifError::BadHeader { .. })));
        assert!(matches!(parse(b"@FILE u\n}\n"), Err(SoifError::BadHeader { .. })));
        assert!(matches!(
            parse(b"@FILE { u\ntitle{1}:\tx\n"),
            Err(SoifError::Unterminated { .. })
        ));
        assert!(matches!(
            parse(b"@FILE { u\ngarbage\n"),
            Err(SoifError::Unterminated { .. })
        ));
    }

    #[test]
    fn value_with_closing_brace_round_trips() {
        let r = SoifRecord::new("FILE", "x").with("body", b"line\n}\n@FILE { y\n".to_vec());
        let bytes = serialize(std::slice::from_ref(&r)).unwrap();
        assert_eq!(parse(&bytes).unwrap(), vec![r]);
    }

    #[test]
    fn multiple_records_with_whitespace_between() {
        let a = SoifRecord::new("FILE", "a").with("k", "1");
        let b = SoifRecord::new("book", "b");
        let mut bytes = serialize(std::slice::from_ref(&a)).unwrap();
        bytes.extend_from_slice(b"\n\n  ");
        bytes.extend(serialize(std::slice::from_ref(&b)).unwrap());
        assert_eq!(parse(&bytes).unwrap(), vec![a, b]);
    }

    #[test]
    fn invalid_names_rejected_on_serialize() {
        for bad in ["my title", "a:b", "x{", "}", ""] {
            let r = SoifRecord::new("FILE", "u").with(bad, "v");
            assert!(
                matches!(serialize(&[r]), Err(SoifError::InvalidAttributeName(_))),
                "{bad:?}"
            );
        }
        assert!(serialize(&[SoifRecord::new("FILE", "")]).is_err());
        assert!(serialize(&[SoifRecord::new("", "u")]).is_err());
    }

    #[test]
    fn overflowing_count_is_an_error() {
        let err = parse(b"@FILE { u\nt{999999999999999999999999}:\tx\n}\n").unwrap_err();
        assert!(matches!(err, SoifError::BadAttribute { .. }));
    }
}
