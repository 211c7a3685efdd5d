//! Budget-constrained adaptive computation over simulated anytime readers.
//!
//! A question comes with `n` retrieved passages. Reading a passage means
//! running a stack ("tower") of transformer layers over it; after every
//! layer the reader reports a HasAnswer logit. The schedulers in this crate
//! decide which tower to extend next under a global layer budget, then pick
//! the towers whose answers are read out.
//!
//! The reader itself is replaced by frozen per-layer traces
//! ([`trace::PassageTrace`]), either loaded from JSONL or produced by the
//! seeded generator in [`synth`].
//!
//! Module map:
//!
//! - [`trace`]: passage/question traces and their JSONL format.
//! - [`skyline`]: the mutable per-question tower state.
//! - [`calibration`]: per-layer temperature scaling of HasAnswer logits.
//! - [`synth`]: seeded synthetic trace corpora.
//! - [`policy`]: the learned priority policy and its analytic gradient.
//! - [`schedulers`]: local early exit, greedy and learned global
//!   scheduling, static baselines and the output phase.
//! - [`train`]: REINFORCE training of the policy.
//! - [`eval`]: accuracy/cost curves, diagnostics and reduction factors.
//!
//! Work that fans out over questions goes through [`par`], which uses rayon
//! when the `parallel` feature is enabled and a plain loop otherwise.

pub mod calibration;
pub mod error;
pub mod eval;
pub mod par;
pub mod policy;
pub mod schedulers;
pub mod skyline;
pub mod synth;
pub mod train;
pub mod trace;

pub use calibration::CalibrationTable;
pub use error::{Error, Result};
pub use par::Exec;
pub use policy::{InitPriority, PolicyParams, PolicyShape};
pub use schedulers::{
    Budget, InitRule, OutputMode, PolicyAction, ScheduleLog, SchedulerConfig, Strategy,
};
pub use skyline::Skyline;
pub use synth::GeneratorConfig;
pub use train::{TrainConfig, TrainHistory};
pub use trace::{PassageTrace, QuestionInstance};
