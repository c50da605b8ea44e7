use std::fmt;

use thiserror::Error;

pub type Result<T, E = CgpflError> = std::result::Result<T, E>;

/// Where in a run a numerical failure happened.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NumericContext {
    pub round: Option<usize>,
    pub client: Option<usize>,
    pub step: Option<usize>,
}

impl fmt::Display for NumericContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(r) = self.round {
            parts.push(format!("round {r}"));
        }
        if let Some(c) = self.client {
            parts.push(format!("client {c}"));
        }
        if let Some(s) = self.step {
            parts.push(format!("step {s}"));
        }
        if parts.is_empty() {
            f.write_str("no context")
        } else {
            f.write_str(&parts.join(", "))
        }
    }
}

#[derive(Debug, Error)]
pub enum CgpflError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("numerical error ({context}): {what}")]
    Numerical {
        what: String,
        context: NumericContext,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("class {class} exhausted: requested {requested} samples, {available} available")]
    Exhausted {
        class: usize,
        requested: usize,
        available: usize,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CgpflError {
    pub fn numerical(what: impl Into<String>) -> Self {
        CgpflError::Numerical {
            what: what.into(),
            context: NumericContext::default(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CgpflError::Config(msg.into())
    }

    /// Fills in missing round/client/step context on numerical errors.
    /// Context already present is kept.
    pub fn at(mut self, round: Option<usize>, client: Option<usize>, step: Option<usize>) -> Self {
        if let CgpflError::Numerical { context, .. } = &mut self {
            context.round = context.round.or(round);
            context.client = context.client.or(client);
            context.step = context.step.or(step);
        }
        self
    }

    pub fn in_round(self, round: usize) -> Self {
        self.at(Some(round), None, None)
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            CgpflError::Config(_) | CgpflError::DimensionMismatch { .. }
        )
    }
}
