//! Satellite-swarm pursuit-attachment with a mixture-of-experts
//! multi-agent transformer trained by a clipped on-policy objective.

pub mod env;
pub mod eval;
pub mod experts;
pub mod learner;
pub mod nn;
pub mod orbit;
pub mod policy;
pub mod queue;
pub mod runtime;
pub mod seed;
pub mod verify;
