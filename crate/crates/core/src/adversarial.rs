//! Single-step capability injection: enumeration of dangerous proposed
//! edges and the pre-execution gate for a single tool invocation.

use serde::Serialize;
use thiserror::Error;

use crate::closure::closure;
use crate::config::{Configuration, ForbiddenSet};
use crate::error::BudgetExceeded;
use crate::graph::{CapabilityHypergraph, Hyperedge};
use crate::subsets::{check_budget, count_subsets, subsets_of_size};

pub const DEFAULT_INJECTION_BUDGET: u128 = 1 << 24;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TailMode {
    /// Tails of exactly `k_max` capabilities.
    #[default]
    Exact,
    /// Tails of 1 to `k_max` capabilities.
    UpTo,
}

/// A proposed edge `tail -> {forbidden}` whose tail is already reachable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct InjectionCandidate {
    pub tail: Configuration,
    pub forbidden: usize,
}

impl InjectionCandidate {
    pub fn to_line(&self, graph: &CapabilityHypergraph) -> String {
        format!(
            "inject: {} -> {}",
            graph.format_set(&self.tail),
            graph.token(self.forbidden)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InjectionError {
    #[error("starting configuration is unsafe")]
    UnsafeStart,
    #[error("k_max must be positive")]
    ZeroK,
    #[error(transparent)]
    Budget(#[from] BudgetExceeded),
}

/// Every dangerous single-step injection against `start`, ordered by tail
/// (size, then lexicographic) and then by forbidden head.
pub fn enumerate_injections(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    forbidden: &ForbiddenSet,
    k_max: usize,
    mode: TailMode,
    budget: u128,
) -> Result<Vec<InjectionCandidate>, InjectionError> {
    if k_max == 0 {
        return Err(InjectionError::ZeroK);
    }
    let cl = closure(graph, start);
    if !cl.is_safe(forbidden) {
        return Err(InjectionError::UnsafeStart);
    }
    if forbidden.is_empty() {
        return Ok(Vec::new());
    }
    let pool = &cl.closure;
    let sizes = match mode {
        TailMode::Exact => k_max..=k_max,
        TailMode::UpTo => 1..=k_max,
    };
    let tails = count_subsets(pool.len(), sizes.clone());
    check_budget(
        "injection candidates",
        tails.saturating_mul(forbidden.len() as u128),
        budget,
    )?;
    let mut out = Vec::new();
    for size in sizes {
        for tail in subsets_of_size(pool, size) {
            for f in forbidden.as_set().iter() {
                out.push(InjectionCandidate {
                    tail: tail.clone(),
                    forbidden: f,
                });
            }
        }
    }
    Ok(out)
}

pub fn injections_to_text(
    graph: &CapabilityHypergraph,
    candidates: &[InjectionCandidate],
) -> String {
    candidates.iter().map(|c| c.to_line(graph) + "\n").collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum GateDecision {
    Allow,
    Deny { witness: usize },
}

impl GateDecision {
    pub fn is_allow(&self) -> bool {
        matches!(self, GateDecision::Allow)
    }
}

/// Decides a proposed invocation by closing `start` over the graph with the
/// invocation's edge added. Only the tail and head matter; the id is ignored.
pub fn gate_invocation(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    forbidden: &ForbiddenSet,
    invocation: &Hyperedge,
) -> GateDecision {
    let tentative = graph.with_extra_edge(&invocation.tail, &invocation.head);
    match closure(&tentative, start).first_forbidden(forbidden) {
        Some(reached) => GateDecision::Deny {
            witness: reached.capability(),
        },
        None => GateDecision::Allow,
    }
}
