//! The safety boundary of a deployment.
//!
//! The safe configurations form a lower set under inclusion, so they are
//! characterised by the antichain of minimal unsafe sets: a configuration is
//! unsafe iff it contains one of them. Computing the antichain is an offline,
//! exhaustive job; checking a configuration against it is a handful of word
//! operations per element.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::closure::{closure, extend_closure, ClosureResult};
use crate::config::{size_then_lex, Configuration, ForbiddenSet};
use crate::error::BudgetExceeded;
use crate::graph::CapabilityHypergraph;
use crate::subsets::{check_budget, count_subsets, subsets_of_size};

pub const DEFAULT_SUBSET_BUDGET: u128 = 1 << 24;

/// Which capabilities a configuration may contain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// Any capability, forbidden ones included.
    #[default]
    All,
    /// Only capabilities outside the forbidden set.
    NonForbidden,
}

impl Domain {
    fn pool(self, graph: &CapabilityHypergraph, forbidden: &ForbiddenSet) -> Configuration {
        match self {
            Domain::All => graph.universe(),
            Domain::NonForbidden => graph.universe().difference(forbidden.as_set()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AntichainOptions {
    /// Largest set size enumerated; `None` means `n`.
    pub max_set_size: Option<usize>,
    /// Cap on the number of subsets tested.
    pub budget: u128,
    pub domain: Domain,
}

impl Default for AntichainOptions {
    fn default() -> Self {
        Self {
            max_set_size: None,
            budget: DEFAULT_SUBSET_BUDGET,
            domain: Domain::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoundaryError {
    #[error(transparent)]
    Budget(#[from] BudgetExceeded),
    #[error("max set size {max} exceeds the {n} capabilities of the graph")]
    MaxSizeTooLarge { max: usize, n: usize },
    #[error("capability index {0} is not declared")]
    Undeclared(usize),
    #[error("antichain invariant violated: {0}")]
    Invariant(String),
}

/// The minimal unsafe configurations, sorted by size then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnsafeAntichain {
    elements: Vec<Configuration>,
    max_set_size: usize,
    domain: Domain,
}

impl UnsafeAntichain {
    pub fn elements(&self) -> &[Configuration] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Sets up to this size were enumerated; the antichain decides safety
    /// exactly for configurations no larger than this.
    pub fn max_set_size(&self) -> usize {
        self.max_set_size
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// The first element contained in `set`, if any.
    pub fn covers(&self, set: &Configuration) -> Option<&Configuration> {
        self.covers_counted(set).0
    }

    /// Like [`covers`](Self::covers), also returning how many elements were tested.
    pub fn covers_counted(&self, set: &Configuration) -> (Option<&Configuration>, usize) {
        for (i, b) in self.elements.iter().enumerate() {
            if b.is_subset(set) {
                return (Some(b), i + 1);
            }
        }
        (None, self.elements.len())
    }

    /// Every element contained in `set`, in antichain order.
    pub fn violations(&self, set: &Configuration) -> Vec<&Configuration> {
        self.elements.iter().filter(|b| b.is_subset(set)).collect()
    }

    /// One `unsafe-min: <ids>` line per element.
    pub fn to_text(&self, graph: &CapabilityHypergraph) -> String {
        let mut out = String::new();
        for b in &self.elements {
            let _ = writeln!(out, "unsafe-min: {}", graph.format_set(b));
        }
        out
    }

    /// Checks the antichain invariants: elements sorted and pairwise
    /// incomparable, each unsafe, and each minimal (dropping any one member
    /// gives a safe set, which suffices because the safe region is a lower set).
    pub fn verify(
        &self,
        graph: &CapabilityHypergraph,
        forbidden: &ForbiddenSet,
    ) -> Result<(), String> {
        for w in self.elements.windows(2) {
            if size_then_lex(&w[0], &w[1]) != std::cmp::Ordering::Less {
                return Err(format!("elements {:?} and {:?} out of order", w[0], w[1]));
            }
        }
        for (i, a) in self.elements.iter().enumerate() {
            for b in &self.elements[i + 1..] {
                if a.is_subset(b) || b.is_subset(a) {
                    return Err(format!("{a:?} and {b:?} are comparable"));
                }
            }
            if closure(graph, a).is_safe(forbidden) {
                return Err(format!("{a:?} is safe"));
            }
            for c in a.iter() {
                let mut smaller = a.clone();
                smaller.remove(c);
                if !closure(graph, &smaller).is_safe(forbidden) {
                    return Err(format!("{a:?} is not minimal"));
                }
            }
        }
        Ok(())
    }
}

/// Enumerates the minimal unsafe sets of size at most `max_set_size`.
///
/// Subsets are visited by increasing size in lexicographic order. A subset
/// that contains an element already kept is unsafe but not minimal and is
/// skipped; any other subset has only safe proper subsets, so it is kept iff
/// its closure meets `F`. Exponential in the worst case; the subset budget
/// guards against deployments too large for exhaustive treatment.
pub fn minimal_unsafe_antichain(
    graph: &CapabilityHypergraph,
    forbidden: &ForbiddenSet,
    options: &AntichainOptions,
) -> Result<UnsafeAntichain, BoundaryError> {
    let n = graph.n();
    let max = options.max_set_size.unwrap_or(n);
    if max > n {
        return Err(BoundaryError::MaxSizeTooLarge { max, n });
    }
    let pool = options.domain.pool(graph, forbidden);
    check_budget(
        "antichain enumeration",
        count_subsets(pool.len(), 1..=max),
        options.budget,
    )?;

    let mut elements: Vec<Configuration> = Vec::new();
    for size in 1..=max {
        let found_before = elements.len();
        for candidate in subsets_of_size(&pool, size) {
            if elements[..found_before]
                .iter()
                .any(|b| b.is_subset(&candidate))
            {
                continue;
            }
            if !closure(graph, &candidate).is_safe(forbidden) {
                elements.push(candidate);
            }
        }
    }

    let antichain = UnsafeAntichain {
        elements,
        max_set_size: max,
        domain: options.domain,
    };
    antichain
        .verify(graph, forbidden)
        .map_err(BoundaryError::Invariant)?;
    Ok(antichain)
}

/// An edge exactly one tail capability away from firing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NearMissEntry {
    pub edge: usize,
    /// The single tail member outside the closure.
    pub missing: usize,
    /// Whether acquiring `missing` keeps the configuration safe.
    pub safe_after: bool,
    /// Non-forbidden capabilities newly reachable after acquiring `missing`.
    pub closure_gain: usize,
}

/// Every edge with exactly one tail member outside `base.closure`, in
/// declaration order.
pub fn near_miss_frontier(
    graph: &CapabilityHypergraph,
    base: &ClosureResult,
    forbidden: &ForbiddenSet,
) -> Vec<NearMissEntry> {
    let reached = &base.closure;
    let mut out = Vec::new();
    for (e, edge) in graph.edges().iter().enumerate() {
        let outside = edge.tail.difference(reached);
        if outside.len() != 1 {
            continue;
        }
        let missing = outside.first().expect("one member");
        let after = extend_closure(graph, base, &Configuration::singleton(missing));
        let gained = after
            .closure
            .difference(reached)
            .difference(forbidden.as_set())
            .len();
        out.push(NearMissEntry {
            edge: e,
            missing,
            safe_after: after.is_safe(forbidden),
            closure_gain: gained,
        });
    }
    out
}

/// A forbidden capability together with a smallest set of acquisitions that
/// would make it reachable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StructuralThreat {
    pub forbidden: usize,
    pub acquisition: Configuration,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditSurface {
    /// The one closure run every other field derives from.
    pub closure: ClosureResult,
    pub reachable: Configuration,
    pub safe_goals: Configuration,
    pub frontier_raw: Vec<NearMissEntry>,
    pub frontier_safe: Vec<NearMissEntry>,
    pub structurally_unsafe: Vec<StructuralThreat>,
}

/// Reachable set, safe goals, near-miss frontier and the acquisitions that
/// would expose each forbidden capability.
pub fn audit_surface(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    forbidden: &ForbiddenSet,
) -> Result<AuditSurface, BoundaryError> {
    if let Err(crate::GraphError::IndexOutOfRange { index, .. }) = graph.check_config(start) {
        return Err(BoundaryError::Undeclared(index));
    }
    let base = closure(graph, start);
    let frontier_raw = near_miss_frontier(graph, &base, forbidden);
    let frontier_safe = frontier_raw
        .iter()
        .filter(|e| e.safe_after)
        .cloned()
        .collect();
    let options = AcquisitionOptions::default();
    let mut structurally_unsafe = Vec::new();
    for f in forbidden.as_set().iter() {
        if let Distance::Reachable { acquisition, .. } =
            distance_from(graph, &base, start, f, forbidden, &options)?
        {
            structurally_unsafe.push(StructuralThreat {
                forbidden: f,
                acquisition,
            });
        }
    }
    Ok(AuditSurface {
        reachable: base.closure.clone(),
        safe_goals: base.safe_goals(forbidden),
        closure: base,
        frontier_raw,
        frontier_safe,
        structurally_unsafe,
    })
}

#[derive(Debug, Clone)]
pub struct AcquisitionOptions {
    /// Whether forbidden capabilities may be acquired directly.
    pub include_forbidden: bool,
    /// Largest acquisition set searched; `None` means unbounded.
    pub max_size: Option<usize>,
    pub budget: u128,
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        Self {
            include_forbidden: true,
            max_size: None,
            budget: DEFAULT_SUBSET_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distance {
    /// `acquisition` is the lexicographically first set of minimum size.
    Reachable {
        distance: usize,
        acquisition: Configuration,
    },
    /// No acquisition from the allowed pool reaches the target.
    Unreachable,
    /// Reachable, but not with at most `cap` acquisitions.
    BeyondCap { cap: usize },
}

impl Distance {
    pub fn value(&self) -> Option<usize> {
        match self {
            Distance::Reachable { distance, .. } => Some(*distance),
            _ => None,
        }
    }
}

/// Minimum number of capabilities to add to `start` so that `target` becomes
/// reachable, by exhaustive search over acquisition sets of size 0, 1, 2, ...
///
/// Unreachability is proven up front: by monotonicity, if acquiring the whole
/// pool does not reach the target, nothing does.
pub fn acquisition_distance(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    target: usize,
    forbidden: &ForbiddenSet,
    options: &AcquisitionOptions,
) -> Result<Distance, BoundaryError> {
    if target >= graph.n() {
        return Err(BoundaryError::Undeclared(target));
    }
    if let Err(crate::GraphError::IndexOutOfRange { index, .. }) = graph.check_config(start) {
        return Err(BoundaryError::Undeclared(index));
    }
    let base = closure(graph, start);
    distance_from(graph, &base, start, target, forbidden, options)
}

fn distance_from(
    graph: &CapabilityHypergraph,
    base: &ClosureResult,
    start: &Configuration,
    target: usize,
    forbidden: &ForbiddenSet,
    options: &AcquisitionOptions,
) -> Result<Distance, BoundaryError> {
    if base.closure.contains(target) {
        return Ok(Distance::Reachable {
            distance: 0,
            acquisition: Configuration::new(),
        });
    }
    let mut pool = graph.universe().difference(start);
    if !options.include_forbidden {
        pool.difference_with(forbidden.as_set());
    }
    if !extend_closure(graph, base, &pool).closure.contains(target) {
        return Ok(Distance::Unreachable);
    }
    let cap = options.max_size.unwrap_or(pool.len()).min(pool.len());
    let mut spent: u128 = 0;
    for size in 1..=cap {
        spent = spent.saturating_add(count_subsets(pool.len(), size..=size));
        check_budget("acquisition search", spent, options.budget)?;
        for s in subsets_of_size(&pool, size) {
            if extend_closure(graph, base, &s).closure.contains(target) {
                return Ok(Distance::Reachable {
                    distance: size,
                    acquisition: s,
                });
            }
        }
    }
    Ok(Distance::BeyondCap { cap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::is_safe;
    use crate::fixtures::telco;
    use crate::graph::parse_hypergraph;

    fn antichain_text(opts: &AntichainOptions) -> String {
        let d = telco();
        minimal_unsafe_antichain(&d.graph, &d.forbidden, opts)
            .unwrap()
            .to_text(&d.graph)
    }

    #[test]
    fn telco_antichain_by_exhaustive_enumeration() {
        let d = telco();
        let g = &d.graph;
        let b = minimal_unsafe_antichain(g, &d.forbidden, &AntichainOptions::default()).unwrap();
        // Independent oracle: every minimal unsafe subset of the 4096, via the naive fixpoint.
        let unsafe_: Vec<Configuration> = (0u32..4096)
            .map(|mask| {
                (0..12)
                    .filter(|i| mask >> i & 1 == 1)
                    .collect::<Configuration>()
            })
            .filter(|a| !d.forbidden.avoided_by(&crate::closure::closure_naive(g, a)))
            .collect();
        let mut minimal: Vec<Configuration> = unsafe_
            .iter()
            .filter(|a| !unsafe_.iter().any(|b| b != *a && b.is_subset(a)))
            .cloned()
            .collect();
        minimal.sort_by(size_then_lex);
        assert_eq!(b.elements(), &minimal[..]);
        assert_eq!(
            b.to_text(g),
            "unsafe-min: c11\nunsafe-min: c12\nunsafe-min: c1 c2\nunsafe-min: c1 c10\nunsafe-min: c3 c10\n"
        );
    }

    #[test]
    fn restricted_domain_and_size() {
        let opts = AntichainOptions {
            domain: Domain::NonForbidden,
            ..Default::default()
        };
        assert_eq!(
            antichain_text(&opts),
            "unsafe-min: c1 c2\nunsafe-min: c1 c10\nunsafe-min: c3 c10\n"
        );
        let opts = AntichainOptions {
            max_set_size: Some(1),
            ..Default::default()
        };
        assert_eq!(antichain_text(&opts), "unsafe-min: c11\nunsafe-min: c12\n");
    }

    #[test]
    fn budget_and_size_errors() {
        let d = telco();
        let opts = AntichainOptions {
            budget: 100,
            ..Default::default()
        };
        assert!(matches!(
            minimal_unsafe_antichain(&d.graph, &d.forbidden, &opts),
            Err(BoundaryError::Budget(BudgetExceeded { required: 4095, .. }))
        ));
        let opts = AntichainOptions {
            max_set_size: Some(13),
            ..Default::default()
        };
        assert!(matches!(
            minimal_unsafe_antichain(&d.graph, &d.forbidden, &opts),
            Err(BoundaryError::MaxSizeTooLarge { .. })
        ));
    }

    #[test]
    fn edgeless_graph() {
        let d = parse_hypergraph("capability a\ncapability x forbidden\n").unwrap();
        let b =
            minimal_unsafe_antichain(&d.graph, &d.forbidden, &AntichainOptions::default()).unwrap();
        assert_eq!(b.to_text(&d.graph), "unsafe-min: x\n");
        let a = Configuration::singleton(0);
        let s = audit_surface(&d.graph, &a, &d.forbidden).unwrap();
        assert!(s.frontier_raw.is_empty());
        assert_eq!(s.safe_goals, a);
    }

    #[test]
    fn covers_reports_first_element() {
        let d = telco();
        let g = &d.graph;
        let b = minimal_unsafe_antichain(g, &d.forbidden, &AntichainOptions::default()).unwrap();
        let a = g.config(&["c1", "c2", "c3", "c4", "c5", "c10"]).unwrap();
        assert_eq!(g.format_set(b.covers(&a).unwrap()), "c1 c2");
        let all: Vec<String> = b
            .violations(&a)
            .into_iter()
            .map(|v| g.format_set(v))
            .collect();
        assert_eq!(all, ["c1 c2", "c1 c10", "c3 c10"]);
        assert_eq!(b.covers(&Configuration::new()), None);
        assert_eq!(
            g.format_set(b.covers(&g.config(&["c11"]).unwrap()).unwrap()),
            "c11"
        );
        assert_eq!(b.covers_counted(&g.config(&["c11"]).unwrap()).1, 1);
    }

    #[test]
    fn gate_agrees_with_closure_on_every_telco_subset() {
        let d = telco();
        let g = &d.graph;
        let b = minimal_unsafe_antichain(g, &d.forbidden, &AntichainOptions::default()).unwrap();
        for mask in 0u32..4096 {
            let a: Configuration = (0..12).filter(|i| mask >> i & 1 == 1).collect();
            assert_eq!(
                b.covers(&a).is_none(),
                is_safe(g, &a, &d.forbidden),
                "{a:?}"
            );
        }
    }

    #[test]
    fn audit_of_minimal_billing_agent() {
        let d = telco();
        let g = &d.graph;
        let a = g.config(&["c1", "c3", "c4", "c5"]).unwrap();
        let s = audit_surface(g, &a, &d.forbidden).unwrap();
        assert_eq!(g.format_set(&s.reachable), "c1 c3 c4 c5 c6 c7");
        let raw: Vec<(&str, &str, bool)> = s
            .frontier_raw
            .iter()
            .map(|e| (g.edge(e.edge).id.as_str(), g.token(e.missing), e.safe_after))
            .collect();
        assert_eq!(
            raw,
            [
                ("h2", "c2", false),
                ("h4", "c8", true),
                ("h5", "c2", false),
                ("h6", "c10", false)
            ]
        );
        assert_eq!(s.frontier_safe.len(), 1);
        assert_eq!(s.frontier_safe[0].closure_gain, 2);
        let threats: Vec<(String, String)> = s
            .structurally_unsafe
            .iter()
            .map(|t| {
                (
                    g.token(t.forbidden).to_string(),
                    g.format_set(&t.acquisition),
                )
            })
            .collect();
        assert_eq!(
            threats,
            [("c11".into(), "c11".into()), ("c12".into(), "c2".into())]
        );
    }

    #[test]
    fn audit_of_billing_read_alone() {
        let d = telco();
        let g = &d.graph;
        let s = audit_surface(g, &g.config(&["c3"]).unwrap(), &d.forbidden).unwrap();
        let h6 = s
            .frontier_raw
            .iter()
            .find(|e| g.edge(e.edge).id == "h6")
            .unwrap();
        assert_eq!(g.token(h6.missing), "c10");
        assert!(!h6.safe_after);
        let c12 = s
            .structurally_unsafe
            .iter()
            .find(|t| t.forbidden == 11)
            .unwrap();
        assert_eq!(g.format_set(&c12.acquisition), "c10");
    }

    #[test]
    fn acquisition_distances() {
        let d = telco();
        let g = &d.graph;
        let dist = |a: &[&str], t: &str, opts: &AcquisitionOptions| {
            acquisition_distance(
                g,
                &g.config(a).unwrap(),
                g.lookup(t).unwrap(),
                &d.forbidden,
                opts,
            )
            .unwrap()
        };
        let all = AcquisitionOptions::default();
        let strict = AcquisitionOptions {
            include_forbidden: false,
            ..Default::default()
        };
        assert_eq!(dist(&["c7"], "c9", &strict).value(), Some(1));
        assert_eq!(dist(&["c7", "c8"], "c9", &all).value(), Some(0));
        // c12 itself is acquirable by default
        assert_eq!(
            dist(&[], "c12", &all),
            Distance::Reachable {
                distance: 1,
                acquisition: g.config(&["c12"]).unwrap()
            }
        );
        // ...otherwise c1 alone reaches c3 and c10 needs c2: {c1, c2}
        assert_eq!(
            dist(&[], "c12", &strict),
            Distance::Reachable {
                distance: 2,
                acquisition: g.config(&["c1", "c2"]).unwrap()
            }
        );
        assert_eq!(dist(&[], "c11", &strict), Distance::Unreachable);
        let capped = AcquisitionOptions {
            max_size: Some(1),
            ..strict.clone()
        };
        assert_eq!(dist(&[], "c12", &capped), Distance::BeyondCap { cap: 1 });
    }
}
