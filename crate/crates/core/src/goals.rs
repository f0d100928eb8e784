//! Emergent goals of agent coalitions and safety-filtered goal selection.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::closure::{closure, extend_closure, ClosureResult};
use crate::config::{Configuration, ForbiddenSet};
use crate::error::{BudgetExceeded, ParseError, ParseErrorKind};
use crate::graph::{is_valid_id, strip_comment, CapabilityHypergraph};
use crate::subsets::{check_budget, count_subsets, subsets_of_size};

#[derive(Debug, Clone, Serialize)]
pub struct EmergentGoalReport {
    pub first: Configuration,
    pub second: Configuration,
    pub closure_first: Configuration,
    pub closure_second: Configuration,
    pub closure_joint: Configuration,
    /// `cl(A1 ∪ A2) \ (cl(A1) ∪ cl(A2) ∪ F)` when the coalition is safe, else empty.
    pub emergent: Configuration,
    pub coalition_safe: bool,
}

/// Goals reachable by the coalition but by neither agent alone. An unsafe
/// coalition has no emergent goals.
pub fn emergent_goals(
    graph: &CapabilityHypergraph,
    forbidden: &ForbiddenSet,
    first: &Configuration,
    second: &Configuration,
) -> EmergentGoalReport {
    let c1 = closure(graph, first).closure;
    let c2 = closure(graph, second).closure;
    let joint = extend_closure(graph, &closure(graph, first), second).closure;
    let coalition_safe = forbidden.avoided_by(&joint);
    let emergent = if coalition_safe {
        joint.difference(&c1).difference(&c2)
    } else {
        Configuration::new()
    };
    EmergentGoalReport {
        first: first.clone(),
        second: second.clone(),
        closure_first: c1,
        closure_second: c2,
        closure_joint: joint,
        emergent,
        coalition_safe,
    }
}

/// `f_F(B) = |cl(A ∪ B) \ (cl(A) ∪ F)|`, given `base = closure(A)`.
pub fn filtered_gain(
    graph: &CapabilityHypergraph,
    base: &ClosureResult,
    forbidden: &ForbiddenSet,
    goals: &Configuration,
) -> usize {
    extend_closure(graph, base, goals)
        .closure
        .difference(&base.closure)
        .difference(forbidden.as_set())
        .len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MarginalGain {
    pub gain: usize,
    pub safe: bool,
}

/// Safety-filtered marginal gain of acquiring `goal` from `start`.
pub fn marginal_gain(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    forbidden: &ForbiddenSet,
    goal: usize,
) -> MarginalGain {
    let base = closure(graph, start);
    let after = extend_closure(graph, &base, &Configuration::singleton(goal));
    MarginalGain {
        gain: after
            .closure
            .difference(&base.closure)
            .difference(forbidden.as_set())
            .len(),
        safe: after.is_safe(forbidden),
    }
}

/// Per-capability goal values; capabilities without an entry are worth 1.0.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GoalValueMap {
    values: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GoalValueError {
    #[error("value for `{0}` must be finite and non-negative")]
    InvalidValue(String),
    #[error("forbidden capability `{0}` cannot carry a goal value")]
    Forbidden(String),
    #[error("undeclared capability `{0}`")]
    Undeclared(String),
}

impl GoalValueMap {
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn get(&self, capability: usize) -> f64 {
        self.values.get(&capability).copied().unwrap_or(1.0)
    }

    pub fn set(
        &mut self,
        graph: &CapabilityHypergraph,
        forbidden: &ForbiddenSet,
        capability: usize,
        value: f64,
    ) -> Result<(), GoalValueError> {
        let token = graph.token(capability).to_string();
        if !value.is_finite() || value < 0.0 {
            return Err(GoalValueError::InvalidValue(token));
        }
        if forbidden.contains(capability) {
            return Err(GoalValueError::Forbidden(token));
        }
        self.values.insert(capability, value);
        Ok(())
    }

    /// Parses `value <cap> <decimal>` lines.
    pub fn parse(
        text: &str,
        graph: &CapabilityHypergraph,
        forbidden: &ForbiddenSet,
    ) -> Result<Self, ParseError> {
        let mut map = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = strip_comment(raw);
            let words: Vec<(usize, &str)> = line
                .split_whitespace()
                .map(|w| (w.as_ptr() as usize - line.as_ptr() as usize + 1, w))
                .collect();
            match words.as_slice() {
                [] => {}
                [(_, "value"), (cap_col, cap), (val_col, val)] => {
                    if !is_valid_id(cap) {
                        return Err(ParseError::new(
                            line_no,
                            *cap_col,
                            ParseErrorKind::Syntax(format!("invalid id `{cap}`")),
                        ));
                    }
                    let index = graph.lookup(cap).ok_or_else(|| {
                        ParseError::new(
                            line_no,
                            *cap_col,
                            ParseErrorKind::UndeclaredCapability(cap.to_string()),
                        )
                    })?;
                    let value: f64 = val.parse().map_err(|_| {
                        ParseError::new(
                            line_no,
                            *val_col,
                            ParseErrorKind::InvalidValue(format!("`{val}` is not a decimal")),
                        )
                    })?;
                    map.set(graph, forbidden, index, value).map_err(|e| {
                        ParseError::new(
                            line_no,
                            *val_col,
                            ParseErrorKind::InvalidValue(e.to_string()),
                        )
                    })?;
                }
                [(col, _), ..] => {
                    return Err(ParseError::new(
                        line_no,
                        *col,
                        ParseErrorKind::Syntax("expected `value <cap> <decimal>`".into()),
                    ))
                }
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionStep {
    pub goal: usize,
    /// Safety-filtered cardinality gain of this step.
    pub gain: usize,
    /// `gain × value(goal)`, the quantity maximised.
    pub weighted_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoalSelection {
    pub steps: Vec<SelectionStep>,
    /// `f_F` of the chosen set.
    pub total: usize,
    pub weighted_total: f64,
    /// Filled in when the brute-force optimum was also computed.
    pub optimum: Option<usize>,
}

impl GoalSelection {
    pub fn chosen(&self) -> Configuration {
        self.steps.iter().map(|s| s.goal).collect()
    }

    pub fn ratio(&self) -> Option<f64> {
        self.optimum.map(|opt| {
            if opt == 0 {
                1.0
            } else {
                self.total as f64 / opt as f64
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GoalError {
    #[error("starting configuration is unsafe")]
    UnsafeStart,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Budget(#[from] BudgetExceeded),
}

/// Greedy k-goal selection.
///
/// Each round takes the capability outside the current closure with the
/// largest value-weighted safe marginal gain. Candidates whose acquisition
/// would reach `F` are skipped; ties go to the lowest index; the loop stops
/// early when no candidate has positive gain.
pub fn greedy_select(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    forbidden: &ForbiddenSet,
    k: usize,
    values: &GoalValueMap,
) -> Result<GoalSelection, GoalError> {
    if k == 0 {
        return Err(GoalError::ZeroK);
    }
    let base = closure(graph, start);
    if !base.is_safe(forbidden) {
        return Err(GoalError::UnsafeStart);
    }
    let mut current = base.clone();
    let mut steps = Vec::new();
    for _ in 0..k {
        let mut best: Option<(usize, usize, f64)> = None;
        for v in graph.universe().difference(&current.closure).iter() {
            let after = extend_closure(graph, &current, &Configuration::singleton(v));
            if !after.is_safe(forbidden) {
                continue;
            }
            let gain = after.closure.difference(&current.closure).len();
            let weighted = gain as f64 * values.get(v);
            if weighted > 0.0 && best.is_none_or(|(_, _, w)| weighted > w) {
                best = Some((v, gain, weighted));
            }
        }
        let Some((goal, gain, weighted_gain)) = best else {
            break;
        };
        current = extend_closure(graph, &current, &Configuration::singleton(goal));
        steps.push(SelectionStep {
            goal,
            gain,
            weighted_gain,
        });
    }
    let chosen: Configuration = steps.iter().map(|s| s.goal).collect();
    Ok(GoalSelection {
        total: filtered_gain(graph, &base, forbidden, &chosen),
        weighted_total: steps.iter().map(|s| s.weighted_gain).sum(),
        steps,
        optimum: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OptimalSelection {
    pub goals: Configuration,
    pub value: usize,
}

/// Exact maximiser of `f_F` over safe goal sets of size at most `k`, drawn
/// from the capabilities outside `cl(A)`. First maximiser in size-then-lex
/// order wins.
pub fn optimal_select_bruteforce(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    forbidden: &ForbiddenSet,
    k: usize,
    budget: u128,
) -> Result<OptimalSelection, GoalError> {
    let base = closure(graph, start);
    if !base.is_safe(forbidden) {
        return Err(GoalError::UnsafeStart);
    }
    let pool = graph.universe().difference(&base.closure);
    let k = k.min(pool.len());
    check_budget(
        "optimal selection",
        count_subsets(pool.len(), 0..=k),
        budget,
    )?;
    let mut best = OptimalSelection {
        goals: Configuration::new(),
        value: 0,
    };
    for size in 1..=k {
        for goals in subsets_of_size(&pool, size) {
            let after = extend_closure(graph, &base, &goals);
            if !after.is_safe(forbidden) {
                continue;
            }
            let value = after.closure.difference(&base.closure).len();
            if value > best.value {
                best = OptimalSelection { goals, value };
            }
        }
    }
    Ok(best)
}
