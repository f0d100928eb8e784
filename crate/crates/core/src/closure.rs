//! Capability closure by counting-trigger worklist, with derivation certificates.
//!
//! Every edge keeps a count of tail members already reached. When a
//! capability is dequeued, each edge it triggers has its count bumped; the
//! edge fires exactly once, when the count reaches its tail size. Pending
//! capabilities are dequeued in ascending index order and the edges a
//! capability triggers are visited in declaration order, so the fired
//! sequence is a deterministic function of the input.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use serde::Serialize;

use crate::config::{Configuration, ForbiddenSet};
use crate::graph::CapabilityHypergraph;

/// How one capability entered the closure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Derivation {
    pub capability: usize,
    pub edge: usize,
    /// The tail members that were present when the edge fired.
    pub witnesses: Configuration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DerivationCertificate {
    /// Edge indices in firing order.
    pub fired: Vec<usize>,
    /// One entry per derived capability, in derivation order.
    pub derivations: Vec<Derivation>,
}

impl DerivationCertificate {
    pub fn derivation_of(&self, capability: usize) -> Option<&Derivation> {
        self.derivations.iter().find(|d| d.capability == capability)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClosureCounters {
    /// Distinct edges whose trigger count was touched.
    pub edges_examined: usize,
    pub edges_fired: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClosureResult {
    pub start: Configuration,
    pub closure: Configuration,
    pub certificate: DerivationCertificate,
    pub counters: ClosureCounters,
}

impl ClosureResult {
    /// `cl(A) \ F`.
    pub fn safe_goals(&self, forbidden: &ForbiddenSet) -> Configuration {
        self.closure.difference(forbidden.as_set())
    }

    pub fn is_safe(&self, forbidden: &ForbiddenSet) -> bool {
        forbidden.avoided_by(&self.closure)
    }

    /// The first forbidden capability reached: a directly granted one (lowest
    /// index) if any, otherwise the earliest derived.
    pub fn first_forbidden(&self, forbidden: &ForbiddenSet) -> Option<Reached> {
        if let Some(c) = self.start.intersection(forbidden.as_set()).first() {
            return Some(Reached::Granted(c));
        }
        self.certificate
            .derivations
            .iter()
            .find(|d| forbidden.contains(d.capability))
            .map(|d| Reached::Derived {
                capability: d.capability,
                edge: d.edge,
            })
    }
}

/// How a capability came to be in a closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reached {
    Granted(usize),
    Derived { capability: usize, edge: usize },
}

impl Reached {
    pub fn capability(&self) -> usize {
        match *self {
            Reached::Granted(c) => c,
            Reached::Derived { capability, .. } => capability,
        }
    }
}

struct Worklist<'g> {
    graph: &'g CapabilityHypergraph,
    closure: Configuration,
    counts: Vec<usize>,
    fired: Vec<bool>,
    touched: Vec<bool>,
    queue: BinaryHeap<Reverse<usize>>,
    certificate: DerivationCertificate,
    counters: ClosureCounters,
}

impl<'g> Worklist<'g> {
    fn new(graph: &'g CapabilityHypergraph) -> Self {
        let m = graph.m();
        Self {
            graph,
            closure: Configuration::new(),
            counts: vec![0; m],
            fired: vec![false; m],
            touched: vec![false; m],
            queue: BinaryHeap::new(),
            certificate: DerivationCertificate::default(),
            counters: ClosureCounters::default(),
        }
    }

    fn seed(&mut self, set: &Configuration) {
        for c in set.iter() {
            if self.closure.insert(c) {
                self.queue.push(Reverse(c));
            }
        }
    }

    fn run(&mut self) {
        let graph = self.graph;
        while let Some(Reverse(c)) = self.queue.pop() {
            for &e in graph.triggers(c) {
                if self.fired[e] {
                    continue;
                }
                if !self.touched[e] {
                    self.touched[e] = true;
                    self.counters.edges_examined += 1;
                }
                self.counts[e] += 1;
                let edge = graph.edge(e);
                if self.counts[e] == edge.tail.len() {
                    self.fire(e);
                }
            }
        }
    }

    fn fire(&mut self, e: usize) {
        let edge = self.graph.edge(e);
        self.fired[e] = true;
        self.counters.edges_fired += 1;
        self.certificate.fired.push(e);
        for h in edge.head.iter() {
            if self.closure.insert(h) {
                self.queue.push(Reverse(h));
                self.certificate.derivations.push(Derivation {
                    capability: h,
                    edge: e,
                    witnesses: edge.tail.clone(),
                });
            }
        }
    }
}

/// Least fixpoint of all edges containing `start`.
///
/// Runs in `O(n + mk)`: each capability is dequeued once and each edge's
/// counter is bumped at most `|tail|` times.
pub fn closure(graph: &CapabilityHypergraph, start: &Configuration) -> ClosureResult {
    let mut wl = Worklist::new(graph);
    wl.seed(start);
    wl.run();
    ClosureResult {
        start: start.clone(),
        closure: wl.closure,
        certificate: wl.certificate,
        counters: wl.counters,
    }
}

/// Resumes a finished closure after adding `extra` to its start set.
///
/// Since `cl(A ∪ X) = cl(cl(A) ∪ X)`, only the new capabilities are
/// enqueued; edge counts are rebuilt from the previous closure. The
/// certificate extends the previous one and stays valid for `A ∪ X`.
/// `previous` must have been computed on `graph`.
pub fn extend_closure(
    graph: &CapabilityHypergraph,
    previous: &ClosureResult,
    extra: &Configuration,
) -> ClosureResult {
    let mut wl = Worklist::new(graph);
    wl.closure = previous.closure.clone();
    wl.certificate = previous.certificate.clone();
    for &e in &previous.certificate.fired {
        wl.fired[e] = true;
    }
    wl.counters.edges_fired = previous.certificate.fired.len();
    for (e, edge) in graph.edges().iter().enumerate() {
        if !wl.fired[e] {
            wl.counts[e] = edge.tail.intersection_len(&previous.closure);
        }
    }
    wl.seed(extra);
    wl.run();
    ClosureResult {
        start: previous.start.union(extra),
        closure: wl.closure,
        certificate: wl.certificate,
        counters: wl.counters,
    }
}

/// Reference fixpoint: rescan every edge until a full pass adds nothing.
pub fn closure_naive(graph: &CapabilityHypergraph, start: &Configuration) -> Configuration {
    let mut set = start.clone();
    loop {
        let mut changed = false;
        for edge in graph.edges() {
            if edge.tail.is_subset(&set) && !edge.head.is_subset(&set) {
                set.union_with(&edge.head);
                changed = true;
            }
        }
        if !changed {
            return set;
        }
    }
}

/// `cl(A) ∩ F = ∅`.
pub fn is_safe(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    forbidden: &ForbiddenSet,
) -> bool {
    closure(graph, start).is_safe(forbidden)
}

/// First problem found while checking a certificate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CertificateViolation {
    StartMismatch,
    UnknownEdge(usize),
    EdgeFiredTwice(usize),
    /// The edge appears in the sequence before all of its tail was available.
    TailNotAvailable {
        edge: usize,
        missing: Configuration,
    },
    ReplayMismatch {
        replayed: Configuration,
        claimed: Configuration,
    },
    NotClosed {
        edge: usize,
    },
    MissingDerivation(usize),
    BadDerivation {
        capability: usize,
        edge: usize,
    },
}

impl fmt::Display for CertificateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::StartMismatch => write!(f, "result was produced for a different start set"),
            Self::UnknownEdge(e) => write!(f, "fired edge #{e} does not exist"),
            Self::EdgeFiredTwice(e) => write!(f, "edge #{e} fired twice"),
            Self::TailNotAvailable { edge, missing } => {
                write!(
                    f,
                    "edge #{edge} fired before tail members {missing:?} were available"
                )
            }
            Self::ReplayMismatch { replayed, claimed } => {
                write!(
                    f,
                    "replay yields {replayed:?} but closure claims {claimed:?}"
                )
            }
            Self::NotClosed { edge } => {
                write!(f, "edge #{edge} is enabled but its head is missing")
            }
            Self::MissingDerivation(c) => write!(f, "capability #{c} has no derivation"),
            Self::BadDerivation { capability, edge } => {
                write!(
                    f,
                    "derivation of #{capability} via edge #{edge} is not justified"
                )
            }
        }
    }
}

impl std::error::Error for CertificateViolation {}

/// Checks a closure result against its certificate.
///
/// Replays the fired sequence from `start`: each edge must be fired at most
/// once and only after its whole tail is available. The replay must equal
/// the claimed closure, the closure must be a fixpoint, and every derived
/// capability needs a derivation whose edge heads it and whose witnesses were
/// available before it fired.
pub fn verify_certificate(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    result: &ClosureResult,
) -> Result<(), CertificateViolation> {
    if &result.start != start {
        return Err(CertificateViolation::StartMismatch);
    }
    let m = graph.m();
    let mut known = start.clone();
    let mut position = vec![None; m];
    // known set snapshot before each firing, for witness checks
    let mut before = Vec::with_capacity(result.certificate.fired.len());
    for (step, &e) in result.certificate.fired.iter().enumerate() {
        if e >= m {
            return Err(CertificateViolation::UnknownEdge(e));
        }
        if position[e].is_some() {
            return Err(CertificateViolation::EdgeFiredTwice(e));
        }
        let edge = graph.edge(e);
        if !edge.tail.is_subset(&known) {
            return Err(CertificateViolation::TailNotAvailable {
                edge: e,
                missing: edge.tail.difference(&known),
            });
        }
        position[e] = Some(step);
        before.push(known.clone());
        known.union_with(&edge.head);
    }
    if known != result.closure {
        return Err(CertificateViolation::ReplayMismatch {
            replayed: known,
            claimed: result.closure.clone(),
        });
    }
    for (e, edge) in graph.edges().iter().enumerate() {
        if edge.tail.is_subset(&known) && !edge.head.is_subset(&known) {
            return Err(CertificateViolation::NotClosed { edge: e });
        }
    }
    let mut justified = start.clone();
    for d in &result.certificate.derivations {
        let bad = CertificateViolation::BadDerivation {
            capability: d.capability,
            edge: d.edge,
        };
        let Some(step) = position.get(d.edge).copied().flatten() else {
            return Err(bad);
        };
        let edge = graph.edge(d.edge);
        if !edge.head.contains(d.capability)
            || d.witnesses != edge.tail
            || !d.witnesses.is_subset(&before[step])
        {
            return Err(bad);
        }
        justified.insert(d.capability);
    }
    if let Some(c) = result.closure.difference(&justified).first() {
        return Err(CertificateViolation::MissingDerivation(c));
    }
    Ok(())
}
