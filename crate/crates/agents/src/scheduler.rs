//! Per-service FIFO admission with a cap on concurrently running instances.
//!
//! The scheduler is plain data; the resource agent owns one and mutates it
//! only from its inbox loop.

use std::collections::{HashMap, VecDeque};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission<T> {
    /// Start `T` now.
    Run(T),
    /// Waiting; 1 means next in line.
    Queued(u32),
}

#[derive(Debug)]
struct ServiceQueue<T> {
    max_instances: usize,
    running: usize,
    waiting: VecDeque<T>,
}

#[derive(Debug)]
pub struct Scheduler<T> {
    services: HashMap<String, ServiceQueue<T>>,
}

impl<T> Default for Scheduler<T> {
    fn default() -> Self {
        Self {
            services: HashMap::new(),
        }
    }
}

impl<T> Scheduler<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a service. A zero limit is treated as 1.
    pub fn add_service(&mut self, name: impl Into<String>, max_instances: u32) {
        self.services.insert(
            name.into(),
            ServiceQueue {
                max_instances: max_instances.max(1) as usize,
                running: 0,
                waiting: VecDeque::new(),
            },
        );
    }

    pub fn has_service(&self, name: &str) -> bool {
        self.services.contains_key(name)
    }

    /// Admits `item`, or queues it behind earlier requests. An undeclared
    /// service hands the item back as `Err`.
    pub fn submit(&mut self, service: &str, item: T) -> Result<Admission<T>, T> {
        let Some(q) = self.services.get_mut(service) else {
            return Err(item);
        };
        if q.running < q.max_instances && q.waiting.is_empty() {
            q.running += 1;
            Ok(Admission::Run(item))
        } else {
            q.waiting.push_back(item);
            Ok(Admission::Queued(q.waiting.len() as u32))
        }
    }

    /// Marks one running instance finished and returns the next item to
    /// start, if any.
    pub fn complete(&mut self, service: &str) -> Option<T> {
        let q = self.services.get_mut(service)?;
        q.running = q.running.saturating_sub(1);
        if q.running < q.max_instances {
            if let Some(next) = q.waiting.pop_front() {
                q.running += 1;
                return Some(next);
            }
        }
        None
    }

    /// Waiting items with their current positions, front first.
    pub fn waiting(&self, service: &str) -> impl Iterator<Item = (u32, &T)> {
        self.services
            .get(service)
            .into_iter()
            .flat_map(|q| q.waiting.iter().enumerate().map(|(i, t)| (i as u32 + 1, t)))
    }

    pub fn running(&self, service: &str) -> usize {
        self.services.get(service).map_or(0, |q| q.running)
    }

    pub fn queued(&self, service: &str) -> usize {
        self.services.get(service).map_or(0, |q| q.waiting.len())
    }
}

/// Client-side view of one service request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TicketState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceTicket {
    pub request_id: String,
    pub state: TicketState,
    pub queue_position: Option<u32>,
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal ticket transition from {from:?} to {to:?}")]
pub struct TicketError {
    pub from: TicketState,
    pub to: TicketState,
}

impl ServiceTicket {
    pub fn new(request_id: impl Into<String>) -> Self {
        Self {
            request_id: request_id.into(),
            state: TicketState::Running,
            queue_position: None,
            failure_reason: None,
        }
    }

    /// A queue update. Positions must strictly decrease.
    pub fn queued(&mut self, position: u32) -> Result<(), TicketError> {
        let ok = match (&self.state, self.queue_position) {
            // Nothing observed yet: a fresh ticket starts optimistic.
            (TicketState::Running, None) => true,
            (TicketState::Queued, Some(prev)) => position < prev,
            _ => false,
        };
        if !ok || position == 0 {
            return Err(TicketError {
                from: self.state.clone(),
                to: TicketState::Queued,
            });
        }
        self.state = TicketState::Queued;
        self.queue_position = Some(position);
        Ok(())
    }

    pub fn finish(&mut self, failure: Option<String>) -> Result<(), TicketError> {
        let to = if failure.is_some() {
            TicketState::Failed
        } else {
            TicketState::Done
        };
        if matches!(self.state, TicketState::Done | TicketState::Failed) {
            return Err(TicketError {
                from: self.state.clone(),
                to,
            });
        }
        self.state = to;
        self.queue_position = None;
        self.failure_reason = failure;
        Ok(())
    }
}
