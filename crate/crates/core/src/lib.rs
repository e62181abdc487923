//! Online structured meta-learning.
//!
//! A meta-learner is kept as a layered graph of *knowledge blocks*. For every
//! task in a sequential stream the learner searches a pathway (one block per
//! layer) through a softmax-relaxed mixture of the existing blocks plus one
//! freshly spawned candidate, commits the argmax pathway, meta-updates the
//! selected blocks by replaying buffered tasks, fine-tunes and evaluates.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`graph`]: the block graph, relaxed and committed forward passes.
//! - [`search`]: per-task pathway search over importance coefficients.
//! - [`metaupdate`]: task buffer, block replay updates, fine-tuning and the
//!   full per-task pipeline.
//! - [`tasks`]: episodic task streams (Rainbow MNIST from IDX files and a
//!   procedural multi-mode stream).
//! - [`baselines`]: NT, FT and FTML comparison learners plus regret.
//! - [`harness`]: configuration, orchestration, metrics and reports.

pub mod autodiff;
pub mod baselines;
mod error;
pub mod graph;
pub mod harness;
pub mod metaupdate;
pub mod rng;
pub mod search;
pub mod tasks;

pub use autodiff::{ParamSet, Real, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use graph::{BlockId, BlockSpec, GraphSpec, ImportanceVector, MetaGraph, Pathway};
pub use metaupdate::{TaskBuffer, TaskRecord, TaskResult, UpdateConfig};
pub use search::SearchConfig;
pub use tasks::{Dataset, Episode};
