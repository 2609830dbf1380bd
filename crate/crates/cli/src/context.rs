//! Settings shared by every command: resolved config, data directory,
//! ontology source, and the user/system error split behind exit codes.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context as _, Result};
use trilogy_core::broker::{BrokerProfile, BrokerStore};
use trilogy_core::ontology::{load_ontology, parse_ontology_unchecked, Ontology};

use crate::config::Config;

pub const HIERARCHY_FILE: &str = "hierarchy.tsv";
pub const LINKS_FILE: &str = "links.tsv";

/// A mistake in the command line, config or input data (exit status 1).
/// Anything else is a system error (exit status 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UserError(pub String);

pub fn user_error(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

pub trait OrUser<T> {
    /// Marks the error as the user's.
    fn or_user(self) -> Result<T>;
}

impl<T, E: Display> OrUser<T> for std::result::Result<T, E> {
    fn or_user(self) -> Result<T> {
        self.map_err(|e| user_error(format!("{e:#}")))
    }
}

pub fn is_user_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.is::<UserError>())
}

pub struct Ctx {
    pub config: Config,
    pub ontology_dir: Option<PathBuf>,
}

/// Where the ontology came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OntologySource {
    Dir(PathBuf),
    Seed,
}

impl Ctx {
    pub fn data_dir(&self) -> Option<&Path> {
        self.config.data_dir.as_deref()
    }

    pub fn require_data_dir(&self) -> Result<&Path> {
        self.data_dir()
            .ok_or_else(|| user_error("no data directory (use --data-dir or data_dir = in the config)"))
    }

    /// `--ontology`, else a data directory holding `hierarchy.tsv`, else
    /// the built-in seed.
    pub fn ontology_source(&self) -> OntologySource {
        if let Some(dir) = &self.ontology_dir {
            return OntologySource::Dir(dir.clone());
        }
        match self.data_dir() {
            Some(dir) if dir.join(HIERARCHY_FILE).exists() => OntologySource::Dir(dir.to_path_buf()),
            _ => OntologySource::Seed,
        }
    }

    /// Directory that ontology edits are written to.
    pub fn ontology_target(&self) -> Result<PathBuf> {
        match (&self.ontology_dir, self.data_dir()) {
            (Some(dir), _) => Ok(dir.clone()),
            (None, Some(dir)) => Ok(dir.to_path_buf()),
            (None, None) => Err(user_error(
                "ontology edits need a directory (use --ontology or --data-dir)",
            )),
        }
    }

    fn sources(&self) -> Result<(String, String)> {
        match self.ontology_source() {
            OntologySource::Seed => {
                let (h, l) = Ontology::seed_sources();
                Ok((h.to_string(), l.to_string()))
            }
            OntologySource::Dir(dir) => {
                let h = dir.join(HIERARCHY_FILE);
                let hierarchy = std::fs::read_to_string(&h)
                    .with_context(|| format!("reading {}", h.display()))
                    .or_user()?;
                let l = dir.join(LINKS_FILE);
                let links = match std::fs::read_to_string(&l) {
                    Ok(t) => t,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
                    Err(e) => return Err(anyhow::Error::new(e).context(format!("reading {}", l.display()))),
                };
                Ok((hierarchy, links))
            }
        }
    }

    pub fn ontology(&self) -> Result<Arc<Ontology>> {
        let (h, l) = self.sources()?;
        load_ontology(&h, &l)
            .map(Arc::new)
            .map_err(|e| user_error(format!("ontology: {e}")))
    }

    /// The ontology an edit starts from: the target directory's files, or
    /// the seed when that directory holds none yet.
    pub fn ontology_for_edit(&self) -> Result<Arc<Ontology>> {
        let target = self.ontology_target()?;
        if target.join(HIERARCHY_FILE).exists() {
            let ctx = Ctx {
                config: self.config.clone(),
                ontology_dir: Some(target),
            };
            ctx.ontology()
        } else {
            Ok(Arc::new(Ontology::seed()))
        }
    }

    /// The ontology with only its syntax checked.
    pub fn ontology_unchecked(&self) -> Result<Ontology> {
        let (h, l) = self.sources()?;
        parse_ontology_unchecked(&h, &l).map_err(|e| user_error(format!("ontology: {e}")))
    }

    /// Broker identity from the config, for stores opened offline.
    pub fn broker_profile(&self) -> BrokerProfile {
        let mut p = BrokerProfile::new(
            self.config.resource_name.clone().unwrap_or_else(|| "local".into()),
            self.config.topics.clone(),
        );
        p.keywords = self.config.keywords.clone();
        p.max_instances = self.config.max_instances;
        p
    }

    /// Loads the broker store in the data directory, reporting skipped files.
    pub fn open_store(&self) -> Result<(PathBuf, BrokerStore)> {
        let dir = self.require_data_dir()?.to_path_buf();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let report = BrokerStore::load(&dir, self.broker_profile(), self.ontology()?)?;
        for issue in &report.issues {
            eprintln!("warning: {}: {}", issue.file.display(), issue.reason);
        }
        Ok((dir, report.store))
    }
}

/// Writes `text` to `path` through a temporary sibling.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}
