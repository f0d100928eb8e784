//! Capability-hypergraph safety engine.
//!
//! Capabilities are vertices; a hyperedge `S -> T` grants every capability in
//! `T` once every capability in `S` is held. The crate computes closures with
//! replayable certificates, characterises the minimal unsafe configurations
//! of a deployment, gates agent coalitions and proposed tool invocations
//! before they execute, and ranks safe goals by marginal closure gain.

pub mod adversarial;
pub mod boundary;
pub mod closure;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod fixtures;
pub mod goals;
pub mod graph;
pub mod projection;
mod subsets;

pub use closure::{
    closure, closure_naive, extend_closure, is_safe, verify_certificate, ClosureResult,
};
pub use config::{Configuration, ForbiddenSet};
pub use error::{BudgetExceeded, GraphError, ParseError};
pub use graph::{parse_hypergraph, CapabilityHypergraph, Deployment, Hyperedge};
