//! Line formats for command output. Every line is tab-separated with no
//! embedded tabs or newlines.

use std::io::Write;

use trilogy_agents::paa::MergedHit;
use trilogy_agents::protocol::{EventKind, NotifyBody};
use trilogy_core::indexer::MaintenanceReport;
use trilogy_core::ontology::Ontology;

/// Prints one line to stdout. A closed pipe (`trilogy ... | head`) ends
/// the process quietly.
pub fn emit(line: impl std::fmt::Display) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing output: {e}");
        std::process::exit(2);
    }
}

/// Replaces tabs and line breaks so a value fits in one field.
pub fn field(s: &str) -> String {
    s.chars()
        .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
        .collect()
}

pub fn hit_line(h: &MergedHit) -> String {
    format!(
        "{:.6}\t{}\t{}\t{}",
        h.score,
        field(&h.resource),
        field(&h.url),
        field(&h.title)
    )
}

pub fn hit_json(h: &MergedHit) -> String {
    serde_json::to_string(h).expect("hits serialize")
}

pub fn added_line(resource: &str, id: u64, url: &str) -> String {
    format!("added\t{}\t{id}\t{}", field(resource), field(url))
}

pub fn event_name(e: EventKind) -> &'static str {
    match e {
        EventKind::NewDocument => "new_document",
        EventKind::PeerQuery => "peer_query",
    }
}

pub fn notify_line(n: &NotifyBody) -> String {
    format!("{}\t{}\t{:.6}", event_name(n.event), field(&n.trigger), n.similarity)
}

pub fn report_line(r: &MaintenanceReport) -> String {
    format!(
        "refreshed={} removed={} failed_probe={} elapsed_ms={}",
        r.refreshed, r.removed, r.failed_probe, r.elapsed_ms
    )
}

/// The concept forest, two spaces of indent per level, in file order.
pub fn concept_tree(o: &Ontology) -> Vec<String> {
    fn walk(o: &Ontology, name: &str, depth: usize, out: &mut Vec<String>) {
        out.push(format!("{}{}", "  ".repeat(depth), name));
        for child in o.children(name) {
            walk(o, &child.name, depth + 1, out);
        }
    }
    let mut out = Vec::new();
    for root in o.roots() {
        walk(o, &root.name, 0, &mut out);
    }
    out
}
