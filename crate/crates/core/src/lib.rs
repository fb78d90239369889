//! Evaluation harness for how language models choose between gendered and
//! gender-neutral variants under metalinguistic prompt contexts.
//!
//! The pipeline runs stimuli → prompt suites → variant scoring → statistics →
//! reports; each stage lives in its own module.

pub mod prompt;
pub mod report;
pub mod scorer;
pub mod stats;
pub mod stimulus;
