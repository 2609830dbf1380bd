//! Collection maintenance: re-verify every source, drop documents that stay
//! unavailable, re-gather the ones that changed, and rebuild the index.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::broker::BrokerStore;
use crate::ontology::Ontology;
use crate::soif::{gather_at, media_hint_for, SoifRecord};

/// Consecutive failed probes after which a document is removed.
pub const MAX_PROBE_FAILURES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeOutcome {
    Available,
    Unavailable(String),
    /// The source now has different content.
    Changed(Vec<u8>),
}

pub trait AvailabilityProbe {
    fn probe(&self, record: &SoifRecord) -> ProbeOutcome;
}

impl<F> AvailabilityProbe for F
where
    F: Fn(&SoifRecord) -> ProbeOutcome,
{
    fn probe(&self, record: &SoifRecord) -> ProbeOutcome {
        self(record)
    }
}

/// Probes `file://` urls (and bare absolute paths) on the local filesystem.
/// Other schemes, including synthesized `bib:` locators, are reported
/// available.
#[derive(Debug, Clone, Copy, Default)]
pub struct FileProbe;

impl FileProbe {
    pub fn local_path(url: &str) -> Option<PathBuf> {
        if let Some(rest) = url.strip_prefix("file://") {
            // file:///abs/path or file://localhost/abs/path
            let rest = rest.strip_prefix("localhost").unwrap_or(rest);
            return Some(PathBuf::from(rest));
        }
        url.starts_with('/').then(|| PathBuf::from(url))
    }
}

fn without_time(record: &SoifRecord) -> SoifRecord {
    let mut r = record.clone();
    r.attributes.retain(|(n, _)| n != "gathered-time");
    r
}

impl AvailabilityProbe for FileProbe {
    fn probe(&self, record: &SoifRecord) -> ProbeOutcome {
        let Some(path) = Self::local_path(&record.url) else {
            return ProbeOutcome::Available;
        };
        match fs::read(&path) {
            Err(e) => ProbeOutcome::Unavailable(format!("{}: {e}", path.display())),
            Ok(bytes) => match gather_at(&bytes, media_hint_for(record), &record.url, 0) {
                Ok(fresh) if without_time(&fresh) == without_time(record) => ProbeOutcome::Available,
                _ => ProbeOutcome::Changed(bytes),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceReport {
    /// Documents re-gathered because their source changed.
    pub refreshed: usize,
    pub removed: usize,
    pub failed_probe: usize,
    pub elapsed_ms: u64,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Probes every document, applies the outcomes, and replaces `store` with a
/// store fully re-indexed under `ontology`. Probe failures are counted, never
/// returned as errors.
pub fn refresh(store: &mut BrokerStore, ontology: Arc<Ontology>, probe: &dyn AvailabilityProbe) -> MaintenanceReport {
    let started = Instant::now();
    let now = now_secs();
    let mut report = MaintenanceReport::default();
    let mut next = store.clone();

    let ids: Vec<_> = store.entries().map(|e| e.id).collect();
    for id in ids {
        let entry = store.get(id).expect("id listed above");
        match probe.probe(&entry.record) {
            ProbeOutcome::Available => next.set_maintenance(id, 0, now),
            ProbeOutcome::Unavailable(reason) => {
                report.failed_probe += 1;
                let failures = entry.failure_count + 1;
                if failures >= MAX_PROBE_FAILURES {
                    tracing::info!(url = %entry.record.url, %reason, "removing unavailable document");
                    next.remove_document(id).expect("present");
                    report.removed += 1;
                } else {
                    tracing::debug!(url = %entry.record.url, %reason, "probe failed");
                    next.set_maintenance(id, failures, entry.last_verified);
                }
            }
            ProbeOutcome::Changed(bytes) => {
                match gather_at(&bytes, media_hint_for(&entry.record), &entry.record.url, now) {
                    Ok(record) => {
                        next.remove_document(id).expect("present");
                        next.restore(id, record, 0, now);
                        report.refreshed += 1;
                    }
                    Err(e) => {
                        // Content we cannot summarize counts as a failed probe.
                        report.failed_probe += 1;
                        let failures = entry.failure_count + 1;
                        if failures >= MAX_PROBE_FAILURES {
                            next.remove_document(id).expect("present");
                            report.removed += 1;
                        } else {
                            tracing::debug!(url = %entry.record.url, error = %e, "re-gather failed");
                            next.set_maintenance(id, failures, entry.last_verified);
                        }
                    }
                }
            }
        }
    }

    *store = next.reindexed(ontology);
    report.elapsed_ms = started.elapsed().as_millis() as u64;
    report
}
