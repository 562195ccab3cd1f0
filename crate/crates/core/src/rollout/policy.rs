//! Policies map the rendered context text to a response text.

use std::sync::Arc;

use thiserror::Error;

use crate::backfill::{ClientError, CompletionBackend};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("scripted policy has no responses left")]
    Exhausted,
    #[error(transparent)]
    Client(#[from] ClientError),
}

pub trait Policy {
    fn respond(&mut self, context: &str) -> Result<String, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn respond(&mut self, context: &str) -> Result<String, PolicyError> {
        (**self).respond(context)
    }
}

/// Emits a fixed list of responses in order, optionally cycling.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    responses: Vec<String>,
    cursor: usize,
    cycle: bool,
}

impl ScriptedPolicy {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            cursor: 0,
            cycle: false,
        }
    }

    pub fn cycling(responses: Vec<String>) -> Self {
        Self {
            cycle: true,
            ..Self::new(responses)
        }
    }
}

impl Policy for ScriptedPolicy {
    fn respond(&mut self, _context: &str) -> Result<String, PolicyError> {
        if self.responses.is_empty() {
            return Err(PolicyError::Exhausted);
        }
        let i = if self.cycle {
            self.cursor % self.responses.len()
        } else if self.cursor < self.responses.len() {
            self.cursor
        } else {
            return Err(PolicyError::Exhausted);
        };
        self.cursor += 1;
        Ok(self.responses[i].clone())
    }
}

/// Uses any completion backend (live endpoint, replay transcript) as a policy.
pub struct ClientPolicy {
    backend: Arc<dyn CompletionBackend>,
}

impl ClientPolicy {
    pub fn new(backend: Arc<dyn CompletionBackend>) -> Self {
        Self { backend }
    }
}

impl Policy for ClientPolicy {
    fn respond(&mut self, context: &str) -> Result<String, PolicyError> {
        Ok(self.backend.complete(context)?)
    }
}
