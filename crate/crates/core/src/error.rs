use thiserror::Error;

/// Errors raised by the jet model, the oracles and the inference engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of a density or kinematic formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parent table or merge list does not describe a rooted binary tree.
    #[error("malformed topology: {0}")]
    Structure(String),

    /// An exact method was asked to run on more leaves than it allows.
    #[error("size guard: {method} supports at most {limit} leaves, got {n}")]
    SizeGuard {
        method: &'static str,
        limit: usize,
        n: usize,
    },

    /// A count does not fit in the integer type used to report it.
    #[error("overflow: {0}")]
    Overflow(String),

    /// A search reached a forest from which no valid merge exists.
    #[error("dead end: no valid merge remains with {trees} trees left")]
    DeadEnd { trees: usize },

    /// Every particle carried zero weight at the same rank.
    #[error("all {particles} particles died at rank {rank}")]
    TotalDeath { rank: usize, particles: usize },

    /// The optimizer produced or consumed a non-finite objective.
    #[error("non-finite objective at step {step}")]
    NonFinite { step: usize },

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
