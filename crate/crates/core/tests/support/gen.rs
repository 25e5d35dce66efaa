//! Seeded generators for randomized integration tests.

// Included from several test targets, each using a subset.
#![allow(dead_code)]

use std::collections::BTreeSet;

use peercompose::descriptor::{
    Advertisement, ParameterSpec, PeerId, ServiceDescriptor, ServiceState, TypeTag,
};
use peercompose::planner::CompositeRequest;
use peercompose::registry::RegistryEntry;
use rand::Rng;

/// Fixed parameter pool; the name determines the type, except where a
/// generator deliberately mismatches it.
const POOL: usize = 8;

fn pool_type(i: usize) -> TypeTag {
    match i % 4 {
        0 => TypeTag::Int,
        1 => TypeTag::String,
        2 => TypeTag::Decimal,
        _ => TypeTag::Bool,
    }
}

fn pool_spec(i: usize) -> ParameterSpec {
    ParameterSpec {
        name: format!("g{i}"),
        type_tag: pool_type(i),
    }
}

fn distinct_indices(rng: &mut impl Rng, count: usize) -> Vec<usize> {
    let mut picked = BTreeSet::new();
    while picked.len() < count {
        picked.insert(rng.random_range(0..POOL));
    }
    picked.into_iter().collect()
}

/// A random registry snapshot plus a composite request against it. At
/// most `max_peers` peers and `max_services` services; service names are
/// globally unique so `(provider, service)` pairs never collide. Roughly
/// one goal in ten carries a wrong type for its name, exercising the
/// type-match side of coverage.
pub fn random_snapshot(
    rng: &mut impl Rng,
    max_peers: usize,
    max_services: usize,
) -> (Vec<RegistryEntry>, CompositeRequest) {
    let n_peers = rng.random_range(1..=max_peers);
    let peers: Vec<PeerId> = (1..=n_peers)
        .map(|i| PeerId::new(&format!("peer{i}")).unwrap())
        .collect();

    let n_services = rng.random_range(0..=max_services);
    let mut snapshot = Vec::new();
    for s in 0..n_services {
        let provider = peers[rng.random_range(0..peers.len())].clone();
        let n_inputs = rng.random_range(0..=2);
        let inputs: Vec<ParameterSpec> = distinct_indices(rng, n_inputs)
            .into_iter()
            .map(pool_spec)
            .collect();
        let n_outputs = rng.random_range(1..=2);
        let outputs: Vec<ParameterSpec> = distinct_indices(rng, n_outputs)
            .into_iter()
            .map(pool_spec)
            .collect();
        let status = if rng.random_bool(0.4) {
            ServiceState::Deactivated
        } else {
            ServiceState::Activated
        };
        let descriptor = ServiceDescriptor {
            service_name: format!("svc{s}"),
            version: 1,
            inputs,
            outputs,
            status,
            provider: provider.clone(),
            endpoint: format!("{provider}.sim"),
        };
        let ad = Advertisement {
            origin: provider,
            descriptor,
            seqno: 1,
            hops_remaining: 4,
        };
        ad.validate().expect("generated advertisement is well-formed");
        snapshot.push(RegistryEntry {
            advertisement: ad,
            received_at: s as u64,
        });
    }

    let n_goals = rng.random_range(1..=2);
    let goals: Vec<ParameterSpec> = distinct_indices(rng, n_goals)
        .into_iter()
        .map(|i| {
            let mut spec = pool_spec(i);
            if rng.random_bool(0.1) {
                spec.type_tag = pool_type(rng.random_range(0..4));
            }
            spec
        })
        .collect();
    let n_provided = rng.random_range(0..=3);
    let provided: Vec<ParameterSpec> = distinct_indices(rng, n_provided)
        .into_iter()
        .map(pool_spec)
        .collect();
    let request = CompositeRequest { goals, provided };
    request.validate().expect("generated request is well-formed");
    (snapshot, request)
}

/// A random connected undirected graph on `n` nodes: a random spanning
/// tree plus extra edges with probability 0.3 each. Edges are `(a, b)`
/// with `a < b`.
pub fn random_connected_graph(rng: &mut impl Rng, n: usize) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.insert((u, v));
    }
    for a in 0..n {
        for b in (a + 1)..n {
            if !edges.contains(&(a, b)) && rng.random_bool(0.3) {
                edges.insert((a, b));
            }
        }
    }
    edges
}

/// Longest shortest path over the graph; the graph must be connected.
pub fn diameter(n: usize, edges: &BTreeSet<(usize, usize)>) -> u32 {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut widest = 0;
    for start in 0..n {
        let mut dist = vec![u32::MAX; n];
        dist[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if dist[w] == u32::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        let ecc = *dist.iter().max().unwrap();
        assert_ne!(ecc, u32::MAX, "graph must be connected");
        widest = widest.max(ecc);
    }
    widest
}
