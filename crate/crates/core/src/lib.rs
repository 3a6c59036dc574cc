//! Preference alignment for conversational query suggestion at desk scale.
//!
//! The crate covers probabilistic reward modelling over Gaussian preference
//! scores, a composite rule-based reward suite, two-stage reward fusion,
//! GRPO and rejection-sampling fine-tuning of a Plackett-Luce suggestion
//! policy, and a click simulator with positional bias and distribution
//! shift that supplies training data and ground truth for evaluation.

pub mod clicksim;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod grpo;
pub mod math;
pub mod optim;
pub mod pipeline;
pub mod probcore;
pub mod report;
pub mod rmodels;
pub mod rng;
pub mod text;
pub mod textrewards;

pub use error::{Error, Result};
