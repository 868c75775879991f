//! Block voting over per-round verdicts.
//!
//! Rounds are numbered from 1. Round `t` writes row `(t − 1) mod ξ` of the
//! buffer and the buffer is cleared when a new block starts. At a block
//! boundary (`t mod ξ = 0`) a client is excluded when it was flagged
//! malicious in at least ε rounds of the block.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteBuffer {
    xi: usize,
    epsilon: usize,
    clients: usize,
    /// Benign verdicts (true = O of 1) of the current block, oldest first.
    window: Vec<Vec<bool>>,
    last_round: usize,
}

impl VoteBuffer {
    pub fn new(xi: usize, epsilon: usize, clients: usize) -> Result<Self> {
        if xi == 0 {
            return Err(Error::InvalidParameter(
                "voting interval ξ must be ≥ 1".into(),
            ));
        }
        Ok(Self {
            xi,
            epsilon,
            clients,
            window: Vec::with_capacity(xi),
            last_round: 0,
        })
    }

    pub fn xi(&self) -> usize {
        self.xi
    }

    pub fn epsilon(&self) -> usize {
        self.epsilon
    }

    pub fn window(&self) -> &[Vec<bool>] {
        &self.window
    }

    pub fn push_verdicts(&mut self, verdicts: &[bool], t: usize) -> Result<()> {
        if verdicts.len() != self.clients {
            return Err(Error::Alignment {
                what: "verdict vector",
                expected: self.clients,
                actual: verdicts.len(),
            });
        }
        if t == 0 {
            return Err(Error::InvalidParameter("rounds are numbered from 1".into()));
        }
        let row = (t - 1) % self.xi;
        if row == 0 {
            self.window.clear();
        }
        if self.window.len() != row {
            return Err(Error::InvalidParameter(format!(
                "round {t} arrived out of order after round {}",
                self.last_round
            )));
        }
        self.window.push(verdicts.to_vec());
        self.last_round = t;
        Ok(())
    }

    /// Malicious-flag count per client over the current block.
    pub fn flag_counts(&self) -> Vec<usize> {
        (0..self.clients)
            .map(|l| self.window.iter().filter(|row| !row[l]).count())
            .collect()
    }

    /// `true` keeps the client. Only valid once the block is complete.
    pub fn decide(&self) -> Result<Vec<bool>> {
        if self.window.len() != self.xi {
            return Err(Error::IncompleteBlock {
                filled: self.window.len(),
                xi: self.xi,
            });
        }
        Ok(self
            .flag_counts()
            .into_iter()
            .map(|flags| flags < self.epsilon)
            .collect())
    }
}

/// Aggregation mask of round `t`: the instantaneous verdicts between block
/// boundaries, the block decision on them. Falls back to the verdicts when no
/// decision is available.
pub fn include_mask(
    verdicts: &[bool],
    decision: Option<&[bool]>,
    t: usize,
    xi: usize,
) -> Vec<bool> {
    match decision {
        Some(y) if xi > 0 && t.is_multiple_of(xi) => y.to_vec(),
        _ => verdicts.to_vec(),
    }
}
