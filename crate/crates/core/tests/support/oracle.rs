//! Reference planner used to cross-check the production search.
//!
//! Deliberately naive and fully independent: it enumerates every
//! permutation of registry entries up to the length cap, rechecks
//! validity of each sequence from scratch, and recomputes scores from
//! descriptor data alone. It shares no pruning, ordering, or scoring
//! code with the planner under test. Do not "optimize" it into the
//! implementation it exists to check.

// Included from several test targets, each using a subset.
#![allow(dead_code)]

use std::collections::BTreeSet;

use peercompose::descriptor::{ParameterSpec, ServiceDescriptor, ServiceState};
use peercompose::planner::CompositeRequest;
use peercompose::registry::RegistryEntry;

/// Score tuple in selection order: item count, injection count, distinct
/// provider count, comma-joined `provider/service` key.
pub type OracleScore = (usize, usize, usize, String);

fn spec_in(haystack: &[&ParameterSpec], needle: &ParameterSpec) -> bool {
    haystack
        .iter()
        .any(|p| p.name == needle.name && p.type_tag == needle.type_tag)
}

/// A sequence is valid when every step's inputs are covered by the
/// provided params plus outputs of strictly earlier steps, and every
/// goal is covered by the provided params plus outputs of any step.
pub fn sequence_is_valid(
    steps: &[&ServiceDescriptor],
    request: &CompositeRequest,
) -> bool {
    for (k, step) in steps.iter().enumerate() {
        let mut available: Vec<&ParameterSpec> = request.provided.iter().collect();
        for earlier in &steps[..k] {
            available.extend(earlier.outputs.iter());
        }
        if !step.inputs.iter().all(|i| spec_in(&available, i)) {
            return false;
        }
    }
    let mut available: Vec<&ParameterSpec> = request.provided.iter().collect();
    for step in steps {
        available.extend(step.outputs.iter());
    }
    request.goals.iter().all(|g| spec_in(&available, g))
}

pub fn score_sequence(steps: &[&ServiceDescriptor]) -> OracleScore {
    let injections = steps
        .iter()
        .filter(|d| d.status == ServiceState::Deactivated)
        .count();
    let providers: BTreeSet<&str> = steps.iter().map(|d| d.provider.as_str()).collect();
    let key = steps
        .iter()
        .map(|d| format!("{}/{}", d.provider, d.service_name))
        .collect::<Vec<_>>()
        .join(",");
    (steps.len(), injections, providers.len(), key)
}

/// Exhaustive minimum over every permutation of distinct entries with
/// length 0 to `max_len`, skipping sequences that repeat a
/// `(provider, service)` pair. `None` means no valid sequence exists.
pub fn best_score(
    snapshot: &[RegistryEntry],
    request: &CompositeRequest,
    max_len: usize,
) -> Option<OracleScore> {
    let descriptors: Vec<&ServiceDescriptor> =
        snapshot.iter().map(|e| e.descriptor()).collect();
    let mut best: Option<OracleScore> = None;
    let mut chosen: Vec<usize> = Vec::new();
    permute(&descriptors, request, max_len, &mut chosen, &mut best);
    best
}

fn permute(
    descriptors: &[&ServiceDescriptor],
    request: &CompositeRequest,
    max_len: usize,
    chosen: &mut Vec<usize>,
    best: &mut Option<OracleScore>,
) {
    let steps: Vec<&ServiceDescriptor> = chosen.iter().map(|&i| descriptors[i]).collect();
    if sequence_is_valid(&steps, request) {
        let score = score_sequence(&steps);
        if best.as_ref().map_or(true, |b| score < *b) {
            *best = Some(score);
        }
    }
    if chosen.len() == max_len {
        return;
    }
    for i in 0..descriptors.len() {
        if chosen.contains(&i) {
            continue;
        }
        let pair_repeats = chosen.iter().any(|&j| {
            descriptors[j].provider == descriptors[i].provider
                && descriptors[j].service_name == descriptors[i].service_name
        });
        if pair_repeats {
            continue;
        }
        chosen.push(i);
        permute(descriptors, request, max_len, chosen, best);
        chosen.pop();
    }
}
