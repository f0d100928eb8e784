//! Live sessions: agents join and leave, capabilities are granted, and tool
//! integrations add or remove hyperedges, with the pooled configuration kept
//! safe at every event boundary.
//!
//! Joins and grants are gated against the unsafe antichain before they take
//! effect. Leaves and edge deletions can only shrink the closure and are
//! applied without a check. An edge whose tail is not already reachable is
//! inert ("lazy") and leaves the closure untouched; an edge that would fire
//! immediately is evaluated on a tentative graph and rejected if the result
//! reaches a forbidden capability.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::boundary::{minimal_unsafe_antichain, AntichainOptions, Domain, UnsafeAntichain};
use crate::closure::{closure, extend_closure, ClosureResult};
use crate::config::{Configuration, ForbiddenSet};
use crate::error::{GraphError, ParseError, ParseErrorKind};
use crate::graph::{
    is_valid_id, parse_edge_body, strip_comment, tokenize, CapabilityHypergraph, Hyperedge, Tok,
};

/// When the cached closure is rebuilt after an agent leaves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LeaveMode {
    #[default]
    Eager,
    /// Mark the cache stale; it is rebuilt by the next event that needs it.
    Deferred,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("agent `{0}` is already in the session")]
    DuplicateAgent(String),
    #[error("no such agent `{0}`")]
    NoSuchAgent(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    Join {
        agent: String,
        caps: Vec<String>,
    },
    JoinRecover {
        agent: String,
        caps: Vec<String>,
    },
    Leave {
        agent: String,
    },
    Grant {
        caps: Vec<String>,
    },
    GainEdge {
        edge: String,
        tail: Vec<String>,
        head: Vec<String>,
    },
    LoseEdge {
        edge: String,
    },
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Join { agent, caps } => write!(f, "join {agent} : {}", caps.join(" ")),
            EventKind::JoinRecover { agent, caps } => {
                write!(f, "join! {agent} : {}", caps.join(" "))
            }
            EventKind::Leave { agent } => write!(f, "leave {agent}"),
            EventKind::Grant { caps } => write!(f, "grant {}", caps.join(" ")),
            EventKind::GainEdge { edge, tail, head } => {
                write!(
                    f,
                    "gain-edge {edge} : {} -> {}",
                    tail.join(" "),
                    head.join(" ")
                )
            }
            EventKind::LoseEdge { edge } => write!(f, "lose-edge {edge}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    Accepted,
    Blocked {
        violations: Vec<Vec<String>>,
    },
    Recovered {
        kept: Vec<String>,
        removed: Vec<String>,
        violations: Vec<Vec<String>>,
    },
    BlockedEntirely {
        violations: Vec<Vec<String>>,
    },
    Lazy,
    ActiveAccepted,
    ActiveBlocked {
        witness: String,
    },
    Error {
        message: String,
    },
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Accepted => "accepted",
            Verdict::Blocked { .. } => "blocked",
            Verdict::Recovered { .. } => "recovered",
            Verdict::BlockedEntirely { .. } => "blocked-entirely",
            Verdict::Lazy => "lazy",
            Verdict::ActiveAccepted => "active-accepted",
            Verdict::ActiveBlocked { .. } => "active-blocked",
            Verdict::Error { .. } => "error",
        }
    }

    pub fn is_blocked(&self) -> bool {
        matches!(
            self,
            Verdict::Blocked { .. }
                | Verdict::BlockedEntirely { .. }
                | Verdict::ActiveBlocked { .. }
        )
    }
}

fn braces(sets: &[Vec<String>]) -> String {
    sets.iter()
        .map(|s| format!("{{{}}}", s.join(" ")))
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Blocked { violations } => write!(f, "blocked by {}", braces(violations)),
            Verdict::BlockedEntirely { violations } => {
                write!(f, "blocked-entirely by {}", braces(violations))
            }
            Verdict::Recovered { kept, removed, .. } => {
                write!(
                    f,
                    "recovered {{{}}} removed {{{}}}",
                    kept.join(" "),
                    removed.join(" ")
                )
            }
            Verdict::ActiveBlocked { witness } => write!(f, "active-blocked (reaches {witness})"),
            Verdict::Error { message } => write!(f, "error: {message}"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounters {
    pub edges_examined: usize,
    pub antichain_tests: usize,
}

impl std::ops::AddAssign for EventCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.edges_examined += rhs.edges_examined;
        self.antichain_tests += rhs.antichain_tests;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionEvent {
    pub seq: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub event: EventKind,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub counters: EventCounters,
    /// Closure after the event; `None` while a deferred rebuild is pending.
    pub closure: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<String>,
}

/// Shared state of a multi-agent session.
#[derive(Debug, Clone)]
pub struct Session {
    graph: CapabilityHypergraph,
    forbidden: ForbiddenSet,
    // None when the boundary no longer fits the enumeration budget; gating
    // then falls back to closure checks.
    antichain: Option<UnsafeAntichain>,
    antichain_options: AntichainOptions,
    agents: BTreeMap<String, Configuration>,
    granted: Configuration,
    pooled: Configuration,
    cached: ClosureResult,
    stale: bool,
    leave_mode: LeaveMode,
    log: Vec<SessionEvent>,
}

struct Gate {
    violations: Vec<Configuration>,
    counters: EventCounters,
}

impl Session {
    /// An empty session. `antichain` must have been computed for `(graph, forbidden)`.
    pub fn new(
        graph: CapabilityHypergraph,
        forbidden: ForbiddenSet,
        antichain: UnsafeAntichain,
    ) -> Self {
        let cached = closure(&graph, &Configuration::new());
        let antichain_options = AntichainOptions {
            max_set_size: Some(antichain.max_set_size()),
            domain: antichain.domain(),
            ..AntichainOptions::default()
        };
        Self {
            graph,
            forbidden,
            antichain: Some(antichain),
            antichain_options,
            agents: BTreeMap::new(),
            granted: Configuration::new(),
            pooled: Configuration::new(),
            cached,
            stale: false,
            leave_mode: LeaveMode::Eager,
            log: Vec::new(),
        }
    }

    pub fn with_leave_mode(mut self, mode: LeaveMode) -> Self {
        self.leave_mode = mode;
        self
    }

    pub fn graph(&self) -> &CapabilityHypergraph {
        &self.graph
    }

    pub fn forbidden(&self) -> &ForbiddenSet {
        &self.forbidden
    }

    pub fn antichain(&self) -> Option<&UnsafeAntichain> {
        self.antichain.as_ref()
    }

    pub fn agents(&self) -> &BTreeMap<String, Configuration> {
        &self.agents
    }

    pub fn pooled(&self) -> &Configuration {
        &self.pooled
    }

    pub fn log(&self) -> &[SessionEvent] {
        &self.log
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    /// The cached closure of the pooled configuration, rebuilt first if a
    /// deferred leave left it stale.
    pub fn closure(&mut self) -> &ClosureResult {
        if self.stale {
            self.cached = closure(&self.graph, &self.pooled);
            self.stale = false;
        }
        &self.cached
    }

    /// Checks the session invariants against from-scratch recomputation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut union = self.granted.clone();
        for caps in self.agents.values() {
            union.union_with(caps);
        }
        if union != self.pooled {
            return Err("pooled configuration is not the union of agent sets and grants".into());
        }
        let fresh = closure(&self.graph, &self.pooled);
        if !fresh.is_safe(&self.forbidden) {
            return Err(format!("pooled configuration {:?} is unsafe", self.pooled));
        }
        if !self.stale && fresh.closure != self.cached.closure {
            return Err("cached closure differs from a fresh closure".into());
        }
        Ok(())
    }

    fn names(&self, set: &Configuration) -> Vec<String> {
        self.graph.tokens(set)
    }

    fn names_all(&self, sets: &[Configuration]) -> Vec<Vec<String>> {
        sets.iter().map(|s| self.names(s)).collect()
    }

    /// Shrinks an unsafe set to a minimal unsafe subset by single deletions.
    fn shrink_unsafe(&self, set: &Configuration, counters: &mut EventCounters) -> Configuration {
        let mut current = set.clone();
        for c in set.iter() {
            let mut smaller = current.clone();
            smaller.remove(c);
            let r = closure(&self.graph, &smaller);
            counters.edges_examined += r.counters.edges_examined;
            if !r.is_safe(&self.forbidden) {
                current = smaller;
            }
        }
        current
    }

    /// Every minimal unsafe set contained in `candidate`.
    fn gate(&self, candidate: &Configuration) -> Gate {
        let mut counters = EventCounters::default();
        let mut violations = Vec::new();
        match &self.antichain {
            Some(b) => {
                counters.antichain_tests += b.len();
                violations.extend(b.violations(candidate).into_iter().cloned());
                if b.domain() == Domain::NonForbidden {
                    for f in candidate.intersection(self.forbidden.as_set()).iter() {
                        violations.insert(0, Configuration::singleton(f));
                    }
                }
                if violations.is_empty() && candidate.len() > b.max_set_size() {
                    // the antichain is only complete up to its enumeration size
                    let r = closure(&self.graph, candidate);
                    counters.edges_examined += r.counters.edges_examined;
                    if !r.is_safe(&self.forbidden) {
                        violations.push(self.shrink_unsafe(candidate, &mut counters));
                    }
                }
            }
            None => {
                let r = closure(&self.graph, candidate);
                counters.edges_examined += r.counters.edges_examined;
                if !r.is_safe(&self.forbidden) {
                    violations.push(self.shrink_unsafe(candidate, &mut counters));
                }
            }
        }
        Gate {
            violations,
            counters,
        }
    }

    fn refresh_antichain(&mut self) {
        self.antichain =
            minimal_unsafe_antichain(&self.graph, &self.forbidden, &self.antichain_options).ok();
    }

    fn closure_tokens(&self) -> Option<Vec<String>> {
        (!self.stale).then(|| self.names(&self.cached.closure))
    }

    fn record(&mut self, event: EventKind, verdict: Verdict, counters: EventCounters) -> Verdict {
        self.log.push(SessionEvent {
            seq: self.log.len() + 1,
            line: None,
            event,
            verdict: verdict.clone(),
            counters,
            closure: self.closure_tokens(),
            expected: None,
            divergence: None,
        });
        verdict
    }

    /// Adds `caps` to the pool and brings the cached closure up to date.
    fn absorb(&mut self, caps: &Configuration, counters: &mut EventCounters) {
        self.pooled.union_with(caps);
        let r = if self.stale {
            closure(&self.graph, &self.pooled)
        } else {
            extend_closure(&self.graph, &self.cached, caps)
        };
        counters.edges_examined += r.counters.edges_examined;
        self.cached = r;
        self.stale = false;
    }

    /// Admits an agent if the joint configuration covers no minimal unsafe set.
    pub fn agent_join(
        &mut self,
        agent: &str,
        caps: &Configuration,
    ) -> Result<Verdict, SessionError> {
        if self.agents.contains_key(agent) {
            return Err(SessionError::DuplicateAgent(agent.to_string()));
        }
        self.graph.check_config(caps)?;
        let event = EventKind::Join {
            agent: agent.to_string(),
            caps: self.names(caps),
        };
        let gate = self.gate(&self.pooled.union(caps));
        let mut counters = gate.counters;
        if !gate.violations.is_empty() {
            let verdict = Verdict::Blocked {
                violations: self.names_all(&gate.violations),
            };
            return Ok(self.record(event, verdict, counters));
        }
        self.agents.insert(agent.to_string(), caps.clone());
        self.absorb(caps, &mut counters);
        Ok(self.record(event, Verdict::Accepted, counters))
    }

    /// Joins with as much of `caps` as can be admitted safely.
    ///
    /// While the joint configuration covers some minimal unsafe set, each
    /// covered set loses its highest-index member among the capabilities the
    /// joiner adds beyond the pool. Incumbents are never touched. If nothing
    /// survives the join is blocked entirely.
    pub fn agent_join_with_recovery(
        &mut self,
        agent: &str,
        caps: &Configuration,
    ) -> Result<Verdict, SessionError> {
        if self.agents.contains_key(agent) {
            return Err(SessionError::DuplicateAgent(agent.to_string()));
        }
        self.graph.check_config(caps)?;
        let event = EventKind::JoinRecover {
            agent: agent.to_string(),
            caps: self.names(caps),
        };
        let mut counters = EventCounters::default();
        let mut kept = caps.clone();
        let mut first_violations: Option<Vec<Configuration>> = None;
        loop {
            let candidate = self.pooled.union(&kept);
            let gate = self.gate(&candidate);
            counters += gate.counters;
            if gate.violations.is_empty() {
                break;
            }
            let violations = first_violations
                .get_or_insert_with(|| gate.violations.clone())
                .clone();
            let mut progressed = false;
            for b in &gate.violations {
                if !b.is_subset(&self.pooled.union(&kept)) {
                    continue;
                }
                let removable = b.intersection(&kept).difference(&self.pooled);
                if let Some(c) = removable.last() {
                    kept.remove(c);
                    progressed = true;
                }
            }
            if !progressed || kept.is_empty() {
                let verdict = Verdict::BlockedEntirely {
                    violations: self.names_all(&violations),
                };
                return Ok(self.record(event, verdict, counters));
            }
        }
        self.agents.insert(agent.to_string(), kept.clone());
        self.absorb(&kept, &mut counters);
        let verdict = match first_violations {
            None => Verdict::Accepted,
            Some(v) => Verdict::Recovered {
                kept: self.names(&kept),
                removed: self.names(&caps.difference(&kept)),
                violations: self.names_all(&v),
            },
        };
        Ok(self.record(event, verdict, counters))
    }

    /// Removes an agent. The pool can only shrink, so no check is made.
    pub fn agent_leave(&mut self, agent: &str) -> Result<Verdict, SessionError> {
        if self.agents.remove(agent).is_none() {
            return Err(SessionError::NoSuchAgent(agent.to_string()));
        }
        let mut pooled = self.granted.clone();
        for caps in self.agents.values() {
            pooled.union_with(caps);
        }
        self.pooled = pooled;
        let mut counters = EventCounters::default();
        match self.leave_mode {
            LeaveMode::Eager => {
                self.cached = closure(&self.graph, &self.pooled);
                counters.edges_examined = self.cached.counters.edges_examined;
                self.stale = false;
            }
            LeaveMode::Deferred => self.stale = true,
        }
        let event = EventKind::Leave {
            agent: agent.to_string(),
        };
        Ok(self.record(event, Verdict::Accepted, counters))
    }

    /// Grants capabilities to the session directly, outside any agent.
    pub fn grant(&mut self, caps: &Configuration) -> Result<Verdict, SessionError> {
        self.graph.check_config(caps)?;
        let event = EventKind::Grant {
            caps: self.names(caps),
        };
        let gate = self.gate(&self.pooled.union(caps));
        let mut counters = gate.counters;
        if !gate.violations.is_empty() {
            let verdict = Verdict::Blocked {
                violations: self.names_all(&gate.violations),
            };
            return Ok(self.record(event, verdict, counters));
        }
        self.granted.union_with(caps);
        self.absorb(caps, &mut counters);
        Ok(self.record(event, Verdict::Accepted, counters))
    }

    /// Adds a hyperedge. Lazy when its tail is not yet reachable; otherwise
    /// the edge is committed only if the new closure stays safe.
    pub fn edge_gain(&mut self, edge: Hyperedge) -> Result<Verdict, SessionError> {
        let mut tentative = self.graph.clone();
        tentative.add_edge(edge.clone())?;
        let event = EventKind::GainEdge {
            edge: edge.id.clone(),
            tail: self.names(&edge.tail),
            head: self.names(&edge.head),
        };
        let mut counters = EventCounters::default();
        if self.stale {
            self.cached = closure(&self.graph, &self.pooled);
            counters.edges_examined += self.cached.counters.edges_examined;
            self.stale = false;
        }
        if !edge.tail.is_subset(&self.cached.closure) {
            counters.edges_examined += 1;
            self.graph = tentative;
            self.refresh_antichain();
            return Ok(self.record(event, Verdict::Lazy, counters));
        }
        let r = closure(&tentative, &self.pooled);
        counters.edges_examined += r.counters.edges_examined;
        if let Some(reached) = r.first_forbidden(&self.forbidden) {
            let verdict = Verdict::ActiveBlocked {
                witness: tentative.token(reached.capability()).to_string(),
            };
            return Ok(self.record(event, verdict, counters));
        }
        self.graph = tentative;
        self.cached = r;
        self.refresh_antichain();
        Ok(self.record(event, Verdict::ActiveAccepted, counters))
    }

    /// Deletes a hyperedge and rebuilds the closure; deletion cannot make a
    /// safe session unsafe.
    pub fn edge_loss(&mut self, edge_id: &str) -> Result<Verdict, SessionError> {
        self.graph.remove_edge(edge_id)?;
        self.cached = closure(&self.graph, &self.pooled);
        self.stale = false;
        let counters = EventCounters {
            edges_examined: self.cached.counters.edges_examined,
            antichain_tests: 0,
        };
        self.refresh_antichain();
        let event = EventKind::LoseEdge {
            edge: edge_id.to_string(),
        };
        Ok(self.record(event, Verdict::Accepted, counters))
    }
}

/// A verdict stated alongside a script step, for comparison with the engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectedVerdict {
    pub verdict: String,
    /// For `recovered`: the capabilities expected to be kept.
    pub caps: Option<Vec<String>>,
}

impl fmt::Display for ExpectedVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.verdict)?;
        if let Some(caps) = &self.caps {
            write!(f, " {{{}}}", caps.join(" "))?;
        }
        Ok(())
    }
}

impl ExpectedVerdict {
    fn matches(&self, actual: &Verdict) -> bool {
        if self.verdict != actual.name() {
            return false;
        }
        match (&self.caps, actual) {
            (Some(want), Verdict::Recovered { kept, .. }) => {
                let mut w = want.clone();
                w.sort();
                let mut k = kept.clone();
                k.sort();
                w == k
            }
            _ => true,
        }
    }
}

const VERDICT_NAMES: [&str; 8] = [
    "accepted",
    "blocked",
    "recovered",
    "blocked-entirely",
    "lazy",
    "active-accepted",
    "active-blocked",
    "error",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptOp {
    Join {
        agent: String,
        caps: Vec<String>,
        recover: bool,
    },
    Leave {
        agent: String,
    },
    Grant {
        caps: Vec<String>,
    },
    GainEdge {
        edge: String,
        tail: Vec<String>,
        head: Vec<String>,
    },
    LoseEdge {
        edge: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptStep {
    pub line: usize,
    pub op: ScriptOp,
    pub expected: Option<ExpectedVerdict>,
}

fn script_syntax(line: usize, column: usize, msg: impl Into<String>) -> ParseError {
    ParseError::new(line, column, ParseErrorKind::Syntax(msg.into()))
}

fn ids<'a>(line: usize, toks: &[(usize, Tok<'a>)]) -> Result<Vec<String>, ParseError> {
    toks.iter()
        .map(|(col, t)| match t {
            Tok::Word(w) if is_valid_id(w) => Ok(w.to_string()),
            Tok::Word(w) => Err(script_syntax(line, *col, format!("invalid id `{w}`"))),
            _ => Err(script_syntax(line, *col, "unexpected punctuation")),
        })
        .collect()
}

/// Parses a session script.
///
/// ```text
/// join <agent> : <cap>...        # gated join
/// join! <agent> : <cap>...       # join with greedy recovery
/// leave <agent>
/// grant <cap>...
/// gain-edge <id> : <tail>... -> <head>...
/// lose-edge <id>
/// ```
///
/// Any line may end with `@expect <verdict> [<cap>...]`, a verdict the
/// replay log compares against and annotates when it differs.
pub fn parse_script(text: &str) -> Result<Vec<ScriptStep>, ParseError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = strip_comment(raw);
        let (body, expected) = match line.find("@expect") {
            Some(at) => {
                let words: Vec<&str> = line[at + "@expect".len()..].split_whitespace().collect();
                let Some((verdict, caps)) = words.split_first() else {
                    return Err(script_syntax(line_no, at + 1, "`@expect` needs a verdict"));
                };
                if !VERDICT_NAMES.contains(verdict) {
                    return Err(script_syntax(
                        line_no,
                        at + 1,
                        format!("unknown verdict `{verdict}`"),
                    ));
                }
                let caps = (!caps.is_empty()).then(|| caps.iter().map(|c| c.to_string()).collect());
                (
                    &line[..at],
                    Some(ExpectedVerdict {
                        verdict: verdict.to_string(),
                        caps,
                    }),
                )
            }
            None => (line, None),
        };
        let toks = tokenize(body);
        let Some((kw_col, kw)) = toks.first() else {
            if expected.is_some() {
                return Err(script_syntax(line_no, 1, "`@expect` without a command"));
            }
            continue;
        };
        let eol = body.trim_end().len() + 1;
        let word_at = |i: usize| match toks.get(i) {
            Some((_, Tok::Word(w))) if is_valid_id(w) => Ok(w.to_string()),
            Some((c, _)) => Err(script_syntax(line_no, *c, "expected an id")),
            None => Err(script_syntax(line_no, eol, "expected an id")),
        };
        let colon_at = |i: usize| match toks.get(i) {
            Some((_, Tok::Colon)) => Ok(()),
            Some((c, _)) => Err(script_syntax(line_no, *c, "expected `:`")),
            None => Err(script_syntax(line_no, eol, "expected `:`")),
        };
        let end_at = |i: usize| match toks.get(i) {
            None => Ok(()),
            Some((c, _)) => Err(script_syntax(line_no, *c, "unexpected trailing input")),
        };
        let op = match kw {
            Tok::Word(w @ ("join" | "join!")) => {
                let agent = word_at(1)?;
                colon_at(2)?;
                ScriptOp::Join {
                    agent,
                    caps: ids(line_no, &toks[3..])?,
                    recover: *w == "join!",
                }
            }
            Tok::Word("leave") => {
                let agent = word_at(1)?;
                end_at(2)?;
                ScriptOp::Leave { agent }
            }
            Tok::Word("grant") => {
                if toks.len() < 2 {
                    return Err(script_syntax(line_no, eol, "expected a capability"));
                }
                ScriptOp::Grant {
                    caps: ids(line_no, &toks[1..])?,
                }
            }
            Tok::Word("gain-edge") => {
                let edge = word_at(1)?;
                colon_at(2)?;
                let (tail, head) = parse_edge_body(line_no, &toks[3..], eol)?;
                ScriptOp::GainEdge {
                    edge,
                    tail: tail.into_iter().map(|(_, t)| t.to_string()).collect(),
                    head: head.into_iter().map(|(_, t)| t.to_string()).collect(),
                }
            }
            Tok::Word("lose-edge") => {
                let edge = word_at(1)?;
                end_at(2)?;
                ScriptOp::LoseEdge { edge }
            }
            Tok::Word(other) => {
                return Err(script_syntax(
                    line_no,
                    *kw_col,
                    format!("unknown command `{other}`"),
                ))
            }
            _ => return Err(script_syntax(line_no, *kw_col, "expected a command")),
        };
        steps.push(ScriptStep {
            line: line_no,
            op,
            expected,
        });
    }
    Ok(steps)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayLog {
    pub events: Vec<SessionEvent>,
    pub totals: EventCounters,
    pub divergences: usize,
}

impl ReplayLog {
    /// Aligned text rendering, one row per event plus a totals line.
    pub fn to_text(&self) -> String {
        let header = [
            "seq", "line", "event", "verdict", "examined", "tests", "closure",
        ];
        let rows: Vec<[String; 7]> = self
            .events
            .iter()
            .map(|e| {
                [
                    e.seq.to_string(),
                    e.line.map_or("-".into(), |l| l.to_string()),
                    e.event.to_string().trim_end().to_string(),
                    e.verdict.to_string(),
                    e.counters.edges_examined.to_string(),
                    e.counters.antichain_tests.to_string(),
                    e.closure.as_ref().map_or("(stale)".into(), |c| c.join(" ")),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row.iter()) {
                *w = (*w).max(cell.len());
            }
        }
        let fmt_row = |cells: &[String]| -> String {
            let mut s = String::new();
            for (i, (cell, w)) in cells.iter().zip(widths.iter()).enumerate() {
                if i + 1 == cells.len() {
                    s.push_str(cell);
                } else {
                    s.push_str(&format!("{cell:<w$}  "));
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = fmt_row(&header.map(String::from));
        for (row, e) in rows.iter().zip(&self.events) {
            out.push_str(&fmt_row(row));
            if let Some(d) = &e.divergence {
                out.push_str(&format!("    ! {d}\n"));
            }
        }
        out.push_str(&format!(
            "totals: events={} edges_examined={} antichain_tests={} divergences={}\n",
            self.events.len(),
            self.totals.edges_examined,
            self.totals.antichain_tests,
            self.divergences
        ));
        out
    }
}

fn resolve_caps(
    graph: &CapabilityHypergraph,
    caps: &[String],
) -> Result<Configuration, SessionError> {
    Ok(graph.config(caps)?)
}

fn apply(session: &mut Session, op: &ScriptOp) -> Result<Verdict, SessionError> {
    match op {
        ScriptOp::Join {
            agent,
            caps,
            recover,
        } => {
            let caps = resolve_caps(session.graph(), caps)?;
            if *recover {
                session.agent_join_with_recovery(agent, &caps)
            } else {
                session.agent_join(agent, &caps)
            }
        }
        ScriptOp::Leave { agent } => session.agent_leave(agent),
        ScriptOp::Grant { caps } => {
            let caps = resolve_caps(session.graph(), caps)?;
            session.grant(&caps)
        }
        ScriptOp::GainEdge { edge, tail, head } => {
            let tail = resolve_caps(session.graph(), tail)?;
            let head = resolve_caps(session.graph(), head)?;
            session.edge_gain(Hyperedge::new(edge.clone(), tail, head))
        }
        ScriptOp::LoseEdge { edge } => session.edge_loss(edge),
    }
}

fn describe(op: &ScriptOp) -> EventKind {
    match op.clone() {
        ScriptOp::Join {
            agent,
            caps,
            recover: false,
        } => EventKind::Join { agent, caps },
        ScriptOp::Join {
            agent,
            caps,
            recover: true,
        } => EventKind::JoinRecover { agent, caps },
        ScriptOp::Leave { agent } => EventKind::Leave { agent },
        ScriptOp::Grant { caps } => EventKind::Grant { caps },
        ScriptOp::GainEdge { edge, tail, head } => EventKind::GainEdge { edge, tail, head },
        ScriptOp::LoseEdge { edge } => EventKind::LoseEdge { edge },
    }
}

/// Replays a script against a fresh session. Steps that fail (unknown
/// agent, undeclared capability, ...) are logged as errors and leave the
/// state unchanged.
pub fn replay(
    graph: &CapabilityHypergraph,
    forbidden: &ForbiddenSet,
    antichain: &UnsafeAntichain,
    script: &str,
) -> Result<ReplayLog, ParseError> {
    let steps = parse_script(script)?;
    let mut session = Session::new(graph.clone(), forbidden.clone(), antichain.clone());
    Ok(replay_steps(&mut session, &steps))
}

pub fn replay_steps(session: &mut Session, steps: &[ScriptStep]) -> ReplayLog {
    let mut events = Vec::with_capacity(steps.len());
    let mut totals = EventCounters::default();
    let mut divergences = 0;
    for step in steps {
        let mut event = match apply(session, &step.op) {
            Ok(_) => session.log.last().cloned().expect("event recorded"),
            Err(e) => SessionEvent {
                seq: 0,
                line: None,
                event: describe(&step.op),
                verdict: Verdict::Error {
                    message: e.to_string(),
                },
                counters: EventCounters::default(),
                closure: session.closure_tokens(),
                expected: None,
                divergence: None,
            },
        };
        event.seq = events.len() + 1;
        event.line = Some(step.line);
        if let Some(expected) = &step.expected {
            event.expected = Some(expected.to_string());
            if !expected.matches(&event.verdict) {
                divergences += 1;
                event.divergence = Some(format!("expected {expected}; engine: {}", event.verdict));
            }
        }
        totals += event.counters;
        events.push(event);
    }
    ReplayLog {
        events,
        totals,
        divergences,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::AntichainOptions;
    use crate::closure::is_safe;
    use crate::fixtures::telco;

    fn telco_session() -> Session {
        let d = telco();
        let b =
            minimal_unsafe_antichain(&d.graph, &d.forbidden, &AntichainOptions::default()).unwrap();
        Session::new(d.graph, d.forbidden, b)
    }

    fn cl(s: &mut Session) -> String {
        let set = s.closure().closure.clone();
        s.graph().format_set(&set)
    }

    fn caps(s: &Session, t: &[&str]) -> Configuration {
        s.graph().config(t).unwrap()
    }

    #[test]
    fn new_session_is_empty_and_safe() {
        let mut s = telco_session();
        assert!(s.pooled().is_empty());
        assert!(s.closure().closure.is_empty());
        assert_eq!(
            s.agent_leave("x"),
            Err(SessionError::NoSuchAgent("x".into()))
        );
        s.check_invariants().unwrap();
    }

    #[test]
    fn emergent_join() {
        let mut s = telco_session();
        let a = caps(&s, &["c1", "c3", "c4", "c5"]);
        assert_eq!(s.agent_join("billing", &a).unwrap(), Verdict::Accepted);
        let c8 = caps(&s, &["c8"]);
        assert_eq!(s.agent_join("service", &c8).unwrap(), Verdict::Accepted);
        assert!(s.closure().closure.contains(8));
        s.check_invariants().unwrap();
        assert_eq!(
            s.agent_join("service", &c8),
            Err(SessionError::DuplicateAgent("service".into()))
        );
    }

    #[test]
    fn forbidden_join_is_blocked_and_state_unchanged() {
        let mut s = telco_session();
        s.agent_join("a", &caps(&s, &["c1"])).unwrap();
        let before = (s.pooled().clone(), s.closure().clone());
        let v = s.agent_join("evil", &caps(&s, &["c11"])).unwrap();
        assert_eq!(
            v,
            Verdict::Blocked {
                violations: vec![vec!["c11".into()]]
            }
        );
        assert_eq!((s.pooled().clone(), s.closure().clone()), before);
        assert!(!s.agents().contains_key("evil"));
        assert_eq!(s.log().len(), 2);
    }

    #[test]
    fn empty_join_changes_nothing() {
        let mut s = telco_session();
        s.agent_join("a", &caps(&s, &["c7", "c8"])).unwrap();
        let before = s.closure().closure.clone();
        assert_eq!(
            s.agent_join("idle", &Configuration::new()).unwrap(),
            Verdict::Accepted
        );
        assert_eq!(s.closure().closure, before);
    }

    #[test]
    fn recovery_removes_joiner_capabilities_only() {
        let mut s = telco_session();
        s.agent_join("billing", &caps(&s, &["c1", "c3", "c4", "c5"]))
            .unwrap();
        s.agent_join("service", &caps(&s, &["c8"])).unwrap();
        let v = s
            .agent_join_with_recovery("payment", &caps(&s, &["c1", "c2", "c10"]))
            .unwrap();
        match v {
            Verdict::Recovered {
                kept,
                removed,
                violations,
            } => {
                assert_eq!(kept, ["c1"]);
                assert_eq!(removed, ["c2", "c10"]);
                assert_eq!(violations.len(), 3);
            }
            other => panic!("{other:?}"),
        }
        s.check_invariants().unwrap();
    }

    #[test]
    fn recovery_single_removal() {
        let mut s = telco_session();
        let v = s
            .agent_join_with_recovery("x", &caps(&s, &["c7", "c11"]))
            .unwrap();
        assert!(matches!(&v, Verdict::Recovered { kept, .. } if kept == &["c7"]));
    }

    #[test]
    fn recovery_to_nothing_is_blocked_entirely() {
        let mut s = telco_session();
        s.agent_join("b", &caps(&s, &["c1", "c3"])).unwrap();
        let v = s
            .agent_join_with_recovery("p", &caps(&s, &["c2", "c10"]))
            .unwrap();
        assert_eq!(v.name(), "blocked-entirely");
        assert!(!s.agents().contains_key("p"));
        let v = s
            .agent_join_with_recovery("q", &caps(&s, &["c11"]))
            .unwrap();
        assert_eq!(v.name(), "blocked-entirely");
    }

    #[test]
    fn leave_shrinks_and_round_trips() {
        let mut s = telco_session();
        s.agent_join("billing", &caps(&s, &["c1", "c3", "c4", "c5"]))
            .unwrap();
        let before = (s.pooled().clone(), s.closure().closure.clone());
        s.agent_join("service", &caps(&s, &["c3", "c8"])).unwrap();
        let big = s.closure().closure.clone();
        s.agent_leave("service").unwrap();
        // c3 is still held by billing
        assert_eq!((s.pooled().clone(), s.closure().closure.clone()), before);
        assert!(s.closure().closure.is_subset(&big));
        s.agent_leave("billing").unwrap();
        assert!(s.pooled().is_empty() && s.closure().closure.is_empty());
    }

    #[test]
    fn deferred_leave_marks_stale() {
        let mut s = telco_session().with_leave_mode(LeaveMode::Deferred);
        s.agent_join("a", &caps(&s, &["c7", "c8"])).unwrap();
        s.agent_join("b", &caps(&s, &["c1"])).unwrap();
        s.agent_leave("a").unwrap();
        assert!(s.is_stale());
        assert_eq!(s.log().last().unwrap().closure, None);
        s.check_invariants().unwrap();
        assert_eq!(cl(&mut s), "c1 c3 c7");
        assert!(!s.is_stale());
    }

    #[test]
    fn edge_gain_lazy_active_blocked() {
        let mut s = telco_session();
        s.agent_join("a", &caps(&s, &["c1"])).unwrap();
        let g = s.graph().clone();
        let e = Hyperedge::new(
            "h7",
            g.config(&["c2", "c10"]).unwrap(),
            g.config(&["c6"]).unwrap(),
        );
        assert_eq!(s.edge_gain(e).unwrap(), Verdict::Lazy);
        assert_eq!(s.graph().m(), 7);

        let mut s = telco_session();
        s.agent_join("a", &caps(&s, &["c1", "c3", "c4", "c5"]))
            .unwrap();
        let e = Hyperedge::new(
            "h8",
            g.config(&["c3", "c5"]).unwrap(),
            g.config(&["c8"]).unwrap(),
        );
        assert_eq!(s.edge_gain(e).unwrap(), Verdict::ActiveAccepted);
        assert!(s.closure().closure.contains(7) && s.closure().closure.contains(8));
        s.check_invariants().unwrap();

        let mut s = telco_session();
        s.agent_join("a", &caps(&s, &["c3"])).unwrap();
        let e = Hyperedge::new(
            "h9",
            g.config(&["c3"]).unwrap(),
            g.config(&["c12"]).unwrap(),
        );
        assert_eq!(
            s.edge_gain(e).unwrap(),
            Verdict::ActiveBlocked {
                witness: "c12".into()
            }
        );
        assert_eq!(s.graph().m(), 6);
        let dup = Hyperedge::new("h1", g.config(&["c3"]).unwrap(), g.config(&["c4"]).unwrap());
        assert!(matches!(
            s.edge_gain(dup),
            Err(SessionError::Graph(GraphError::DuplicateEdge(_)))
        ));
    }

    #[test]
    fn lazy_edge_updates_the_boundary() {
        let mut s = telco_session();
        s.agent_join("a", &caps(&s, &["c1"])).unwrap();
        let g = s.graph().clone();
        // not reachable now, but it makes {c4, c8} unsafe for later joins
        let e = Hyperedge::new(
            "h7",
            g.config(&["c4", "c8"]).unwrap(),
            g.config(&["c11"]).unwrap(),
        );
        assert_eq!(s.edge_gain(e).unwrap(), Verdict::Lazy);
        let v = s.agent_join("b", &caps(&s, &["c4", "c8"])).unwrap();
        assert!(v.is_blocked());
        assert!(is_safe(s.graph(), s.pooled(), s.forbidden()));
    }

    #[test]
    fn edge_loss() {
        let mut s = telco_session();
        s.agent_join("a", &caps(&s, &["c7", "c8"])).unwrap();
        assert_eq!(cl(&mut s), "c7 c8 c9");
        s.edge_loss("h4").unwrap();
        assert_eq!(cl(&mut s), "c7 c8");
        let g = s.graph().clone();
        s.edge_gain(Hyperedge::new(
            "h4",
            g.config(&["c7", "c8"]).unwrap(),
            g.config(&["c9"]).unwrap(),
        ))
        .unwrap();
        assert_eq!(cl(&mut s), "c7 c8 c9");
        assert!(matches!(
            s.edge_loss("nope"),
            Err(SessionError::Graph(GraphError::NoSuchEdge(_)))
        ));
    }

    #[test]
    fn partial_antichain_falls_back_to_closure() {
        let d = telco();
        let opts = AntichainOptions {
            max_set_size: Some(1),
            ..Default::default()
        };
        let b = minimal_unsafe_antichain(&d.graph, &d.forbidden, &opts).unwrap();
        let mut s = Session::new(d.graph, d.forbidden, b);
        let v = s.agent_join("p", &caps(&s, &["c3", "c10"])).unwrap();
        assert_eq!(
            v,
            Verdict::Blocked {
                violations: vec![vec!["c3".into(), "c10".into()]]
            }
        );
    }

    #[test]
    fn script_parsing() {
        let steps = parse_script(
            "# t\njoin a : c1 c2 @expect accepted\njoin! b : \nleave a\ngrant c1 c3\ngain-edge h7: c1 -> c2\nlose-edge h7\n",
        )
        .unwrap();
        assert_eq!(steps.len(), 6);
        assert_eq!(steps[0].line, 2);
        assert_eq!(steps[0].expected.as_ref().unwrap().verdict, "accepted");
        assert_eq!(
            steps[1].op,
            ScriptOp::Join {
                agent: "b".into(),
                caps: vec![],
                recover: true
            }
        );
        for (bad, line) in [
            ("join a c1\n", 1),
            ("leave\n", 1),
            ("\nleave a b\n", 2),
            ("grant\n", 1),
            ("gain-edge h : c1 c2\n", 1),
            ("dance a\n", 1),
            ("join a : c1 @expect maybe\n", 1),
        ] {
            assert_eq!(
                parse_script(bad).unwrap_err().location.line,
                line,
                "{bad:?}"
            );
        }
    }

    #[test]
    fn replay_errors_leave_state_unchanged() {
        let d = telco();
        let b =
            minimal_unsafe_antichain(&d.graph, &d.forbidden, &AntichainOptions::default()).unwrap();
        let log = replay(
            &d.graph,
            &d.forbidden,
            &b,
            "join a : c1\njoin b : c99\nleave zz\njoin c : c7\n",
        )
        .unwrap();
        assert_eq!(log.events.len(), 4);
        assert_eq!(log.events[1].verdict.name(), "error");
        assert_eq!(log.events[2].verdict.name(), "error");
        assert_eq!(log.events[1].closure, log.events[0].closure);
        assert_eq!(log.events[3].seq, 4);
        assert!(replay(&d.graph, &d.forbidden, &b, "")
            .unwrap()
            .events
            .is_empty());
    }
}
