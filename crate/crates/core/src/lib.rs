//! Universal online convex optimization.
//!
//! One learner, three layers: a top multiplicative-weights meta-learner over
//! `K` step-size regimes, `K` mid meta-learners over `N` base learners, and a
//! pool of optimistic gradient/Newton base learners spanning a geometric grid
//! of curvature guesses. The ensemble never needs to know whether the loss
//! sequence is convex, exp-concave, or strongly convex, adapts to the
//! gradient variation of the environment, and queries exactly one gradient
//! per round in its default feedback mode.
//!
//! The crate also ships the synthetic environments (drifting quadratics and
//! linears, log losses, a stochastic/adversarial hybrid sampler, two-player
//! zero-sum games) and the regret-accounting metrics used to exercise the
//! learner at desk scale.

pub mod base;
pub mod ensemble;
pub mod env;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod msmwc;
pub mod runner;
pub mod surrogate;

pub use ensemble::{BaseTopology, Ensemble, EnsembleConfig, FeedbackMode};
pub use error::Error;
pub use geometry::{BoundsBundle, Domain};

/// Shorthand used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
