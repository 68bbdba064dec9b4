//! Interactive machine teaching for intent classification: an online
//! softmax learner, deletion-based token importance, confusion-ranked
//! example selection, a replacement knowledge base, feedback-driven
//! augmentation, the teaching session state machine and a simulated-teacher
//! experiment harness.

pub mod api;
pub mod artifacts;
pub mod augment;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod interpret;
pub mod jsonl;
pub mod knowledge;
pub mod learner;
pub mod pack;
pub mod selector;
pub mod session;

pub use error::{Error, Result};
