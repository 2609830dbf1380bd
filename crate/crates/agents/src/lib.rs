//! The agent layer: wire protocol, resource agents with scheduling, the
//! mediator's yellow pages and the personal assistant.

pub mod client;
pub mod mediator;
pub mod paa;
pub mod protocol;
pub mod resource;
pub mod scheduler;
