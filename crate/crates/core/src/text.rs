//! Tokenization and phrase matching shared by the ontology, the indexer and
//! the broker's keyword search.
//!
//! A token is a maximal run of alphanumeric characters, lowercased. Every
//! other character is a boundary, so `"ATM-based"` yields `atm`, `based`.

use std::collections::HashMap;

/// Case-fold for name comparison.
pub fn fold(s: &str) -> String {
    s.to_lowercase()
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Canonical form of a phrase: its tokens joined by single spaces.
pub fn canonical_phrase(phrase: &str) -> String {
    tokenize(phrase).join(" ")
}

/// True when `needle` occurs as a contiguous run inside `haystack`.
pub fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: HashMap<String, usize>,
    terminal: Option<usize>,
}

/// Token trie over a fixed phrase set, matched leftmost-longest without
/// overlap.
#[derive(Debug, Clone)]
pub struct PhraseTrie {
    nodes: Vec<TrieNode>,
    phrases: Vec<String>,
}

impl Default for PhraseTrie {
    fn default() -> Self {
        Self {
            nodes: vec![TrieNode::default()],
            phrases: Vec::new(),
        }
    }
}

impl PhraseTrie {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a phrase, returning its id. Phrases with no tokens are ignored.
    pub fn insert(&mut self, phrase: &str) -> Option<usize> {
        let tokens = tokenize(phrase);
        if tokens.is_empty() {
            return None;
        }
        let mut node = 0;
        for token in tokens {
            node = match self.nodes[node].children.get(&token) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(token, next);
                    next
                }
            };
        }
        if let Some(id) = self.nodes[node].terminal {
            return Some(id);
        }
        let id = self.phrases.len();
        self.phrases.push(canonical_phrase(phrase));
        self.nodes[node].terminal = Some(id);
        Some(id)
    }

    pub fn phrase(&self, id: usize) -> &str {
        &self.phrases[id]
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// Scans `tokens` and returns `(start, len, phrase id)` for every match.
    /// At each position the longest phrase wins; matched tokens are consumed.
    pub fn find_all(&self, tokens: &[String]) -> Vec<(usize, usize, usize)> {
        let mut found = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut node = 0;
            let mut best: Option<(usize, usize)> = None;
            for (offset, token) in tokens[i..].iter().enumerate() {
                match self.nodes[node].children.get(token) {
                    Some(&next) => {
                        node = next;
                        if let Some(id) = self.nodes[node].terminal {
                            best = Some((offset + 1, id));
                        }
                    }
                    None => break,
                }
            }
            match best {
                Some((len, id)) => {
                    found.push((i, len, id));
                    i += len;
                }
                None => i += 1,
            }
        }
        found
    }
}
