//! Deep Q-learning for direct-marketing control over RFM-I customer states.
//!
//! The crate turns per-customer timelines into transition tuples
//! ([`rfmi`]), trains a Q-network on them with experience replay and a
//! cloned target network ([`qlearn`]), selects greedy actions in discrete or
//! mixed discrete/continuous action spaces ([`action_space`]), evaluates and
//! interprets the resulting policy as customer lifetime value
//! ([`policy_eval`]), and runs a cold-start exploration loop against a
//! synthetic donor population ([`env`]).

pub mod action_space;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod io;
pub mod kv;
pub mod model;
pub mod nn;
pub mod policy_eval;
pub mod qlearn;
pub mod rfmi;

#[cfg(feature = "oracles")]
pub mod oracles;

pub use action_space::{ActionSpace, ActionSpec, ContOptConfig, MixedAction, Mode};
pub use error::{Error, Result};
pub use model::{QModel, Recommendation};
pub use nn::{Activation, Gradients, LayerSpec, Mlp, RmsProp};
pub use policy_eval::{ClvEstimate, EvaluationReport, GroupStats};
pub use qlearn::{TrainConfig, TrainHistory};
pub use rfmi::{CustomerTimeline, NormStats, RfmiState, TransitionTuple};
