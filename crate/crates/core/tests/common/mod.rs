#![allow(dead_code)]

use capgraph::closure_naive;
use capgraph::{CapabilityHypergraph, Configuration, Deployment, ForbiddenSet, Hyperedge};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_subset(rng: &mut impl Rng, n: usize, size: usize) -> Configuration {
    sample(rng, n, size.min(n)).into_iter().collect()
}

/// Any subset of `0..n`, each member kept with probability `p`.
pub fn bernoulli_subset(rng: &mut impl Rng, n: usize, p: f64) -> Configuration {
    (0..n).filter(|_| rng.gen_bool(p)).collect()
}

pub fn random_edge(rng: &mut impl Rng, n: usize, k: usize, id: String) -> Hyperedge {
    let tail_size = rng.gen_range(1..=k.min(n));
    let tail = random_subset(rng, n, tail_size);
    let head_size = rng.gen_range(1..=2.min(n));
    let head = random_subset(rng, n, head_size);
    Hyperedge::new(id, tail, head)
}

/// Capabilities `v1..vn`, `m` edges with tails of 1..=k members and heads of
/// one or two members, and `forbidden` capabilities chosen at random.
pub fn random_deployment(
    rng: &mut impl Rng,
    n: usize,
    m: usize,
    k: usize,
    forbidden: usize,
) -> Deployment {
    let mut graph = CapabilityHypergraph::new();
    for i in 1..=n {
        graph.add_capability(format!("v{i}"), None).unwrap();
    }
    for j in 1..=m {
        graph
            .add_edge(random_edge(rng, n, k, format!("e{j}")))
            .unwrap();
    }
    let forbidden = ForbiddenSet::new(random_subset(rng, n, forbidden));
    Deployment { graph, forbidden }
}

pub fn oracle_safe(
    graph: &CapabilityHypergraph,
    start: &Configuration,
    forbidden: &ForbiddenSet,
) -> bool {
    closure_naive(graph, start).is_disjoint(forbidden.as_set())
}

/// Every subset of `0..n`, as bitmask order.
pub fn all_subsets(n: usize) -> impl Iterator<Item = Configuration> {
    (0u32..1 << n).map(move |mask| (0..n).filter(|i| mask >> i & 1 == 1).collect())
}

/// Inclusion-minimal unsafe subsets by brute force, sorted by size then
/// lexicographically.
pub fn oracle_minimal_unsafe(
    graph: &CapabilityHypergraph,
    forbidden: &ForbiddenSet,
) -> Vec<Configuration> {
    let n = graph.n();
    let unsafe_sets: Vec<Configuration> = all_subsets(n)
        .filter(|s| !oracle_safe(graph, s, forbidden))
        .collect();
    let mut minimal: Vec<Configuration> = unsafe_sets
        .iter()
        .filter(|s| !unsafe_sets.iter().any(|t| t != *s && t.is_subset(s)))
        .cloned()
        .collect();
    minimal.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    minimal
}
