//! Core of the Trilogy resource-discovery system: the concept ontology, SOIF
//! summaries, the concept indexer, the broker store and bibliographic ingest.

pub mod broker;
pub mod indexer;
pub mod ingest;
pub mod ontology;
pub mod soif;
pub mod text;
