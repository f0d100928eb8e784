//! The Telco deployment and the shipped parameter and script fixtures.

use crate::graph::{parse_hypergraph, Deployment};

pub const TELCO: &str = include_str!("../fixtures/telco.capgraph");
pub const TELCO_TRACE: &str = include_str!("../fixtures/telco_trace.session");
pub const TELCO_VALUES: &str = include_str!("../fixtures/telco.values");
pub const CONSERVATIVE_PARAMS: &str = include_str!("../fixtures/conservative.params");
pub const MODERATE_PARAMS: &str = include_str!("../fixtures/moderate.params");

/// The parsed Telco deployment (n = 12, m = 6, k = 2, F = {c11, c12}).
pub fn telco() -> Deployment {
    parse_hypergraph(TELCO).expect("shipped Telco fixture parses")
}
