//! Forward-chaining composition planning over a registry snapshot.
//!
//! Given a composite request (typed goal outputs plus typed provided
//! inputs), the planner enumerates every checklist of at most `max_len`
//! registry services in which each step's inputs are all available when
//! it runs, and whose accumulated outputs cover every goal. Both
//! availability and goal coverage match parameters exactly by name and
//! type; there is no coercion.
//!
//! Bindings are canonical: each input is bound to the earliest source
//! that offers it, the client-provided set first, then the lowest
//! producing step index. A checklist is therefore fully determined by its
//! service sequence, which makes the selection below a total order.
//!
//! Selection minimizes [`PlanScore`]: fewer items, then fewer injections
//! (services dormant in the planning snapshot), then fewer distinct
//! peers, then the lexicographically least sequence key. Distinct
//! checklists always differ in their sequence key, so the minimum is
//! unique and planning is deterministic for a given snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{
    is_valid_identifier, ParameterSpec, PeerId, ServiceState,
};
use crate::registry::RegistryEntry;

/// Default cap on checklist length.
pub const DEFAULT_MAX_PLAN_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no candidate plan satisfies the request")]
    NoCandidatePlan,
    #[error("invalid composite request: {0}")]
    InvalidRequest(String),
}

/// What a client asks for: outputs it wants and inputs it brings, both as
/// name/type pairs. Values for the provided inputs travel separately at
/// execution time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeRequest {
    pub goals: Vec<ParameterSpec>,
    pub provided: Vec<ParameterSpec>,
}

impl CompositeRequest {
    /// Goals must be non-empty; names are unique within the goals and
    /// within the provided set separately. A goal may coincide with a
    /// provided input (satisfied outright when the types match).
    pub fn validate(&self) -> Result<(), String> {
        if self.goals.is_empty() {
            return Err("request has no goals".to_string());
        }
        for (label, side) in [("goal", &self.goals), ("provided input", &self.provided)] {
            let mut names: BTreeSet<&str> = BTreeSet::new();
            for p in side {
                if !is_valid_identifier(&p.name) {
                    return Err(format!("invalid parameter name {:?}", p.name));
                }
                if !names.insert(&p.name) {
                    return Err(format!("{label} name {:?} appears twice", p.name));
                }
            }
        }
        Ok(())
    }
}

/// Where a step input or goal value comes from at execution time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum BindingSource {
    /// The value the client supplied under the same name.
    Provided,
    /// The named output of an earlier checklist item (0-based index).
    StepOutput { step: usize },
}

/// One planned invocation, self-contained for execution and display:
/// schema and routing facts are copied from the registry entry at
/// planning time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub provider: PeerId,
    pub service_name: String,
    pub endpoint: String,
    /// Status in the planning snapshot. `Deactivated` means executing
    /// this step is expected to inject the service.
    pub planned_status: ServiceState,
    pub inputs: Vec<ParameterSpec>,
    pub outputs: Vec<ParameterSpec>,
    /// Input name to canonical source.
    pub bindings: BTreeMap<String, BindingSource>,
}

impl ChecklistItem {
    fn key(&self) -> String {
        format!("{}/{}", self.provider, self.service_name)
    }
}

/// An executable plan: items in invocation order plus, per goal name, the
/// source that satisfies it. An empty item list is a valid plan when
/// every goal is already among the provided inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checklist {
    pub items: Vec<ChecklistItem>,
    pub goal_sources: BTreeMap<String, BindingSource>,
}

impl Checklist {
    /// The sequence key: item keys joined in order. Two distinct
    /// checklists over one snapshot never share it.
    pub fn sequence_key(&self) -> String {
        let keys: Vec<String> = self.items.iter().map(|i| i.key()).collect();
        keys.join(",")
    }
}

/// Selection order, lexicographic over the fields in declaration order,
/// all ascending.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlanScore {
    pub item_count: usize,
    pub injection_count: usize,
    pub distinct_peer_count: usize,
    pub tiebreak_key: String,
}

impl fmt::Display for PlanScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "items={} injections={} peers={} key={}",
            self.item_count, self.injection_count, self.distinct_peer_count, self.tiebreak_key
        )
    }
}

/// A checklist with its score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredPlan {
    pub checklist: Checklist,
    pub score: PlanScore,
}

pub fn score_of(checklist: &Checklist) -> PlanScore {
    let peers: BTreeSet<&PeerId> = checklist.items.iter().map(|i| &i.provider).collect();
    PlanScore {
        item_count: checklist.items.len(),
        injection_count: checklist
            .items
            .iter()
            .filter(|i| i.planned_status == ServiceState::Deactivated)
            .count(),
        distinct_peer_count: peers.len(),
        tiebreak_key: checklist.sequence_key(),
    }
}

/// Enumerates every valid checklist of length 0 to `max_len`.
///
/// A checklist is valid when each item's inputs are covered by the
/// provided set plus the outputs of strictly earlier items, no
/// `(provider, service)` pair repeats, and the goals are all covered at
/// the end. When the goals are already covered by the provided inputs,
/// the empty checklist is among the results (and wins selection). Cost
/// is exponential in `max_len`; the default of [`DEFAULT_MAX_PLAN_LEN`]
/// keeps it tractable for realistic registries.
pub fn enumerate(
    snapshot: &[RegistryEntry],
    request: &CompositeRequest,
    max_len: usize,
) -> Result<Vec<Checklist>, PlanError> {
    request.validate().map_err(PlanError::InvalidRequest)?;

    let provided: BTreeSet<ParameterSpec> = request.provided.iter().cloned().collect();
    let mut results = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    let mut used = vec![false; snapshot.len()];
    let mut available = provided.clone();
    dfs(
        snapshot,
        request,
        &provided,
        max_len,
        &mut chosen,
        &mut used,
        &mut available,
        &mut results,
    );
    Ok(results)
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    snapshot: &[RegistryEntry],
    request: &CompositeRequest,
    provided: &BTreeSet<ParameterSpec>,
    max_len: usize,
    chosen: &mut Vec<usize>,
    used: &mut Vec<bool>,
    available: &mut BTreeSet<ParameterSpec>,
    results: &mut Vec<Checklist>,
) {
    if goals_covered(snapshot, request, provided, chosen) {
        results.push(build_checklist(snapshot, request, provided, chosen));
    }
    if chosen.len() == max_len {
        return;
    }
    for i in 0..snapshot.len() {
        if used[i] {
            continue;
        }
        let d = snapshot[i].descriptor();
        if !d.inputs.iter().all(|p| available.contains(p)) {
            continue;
        }
        let added: Vec<ParameterSpec> = d
            .outputs
            .iter()
            .filter(|p| !available.contains(*p))
            .cloned()
            .collect();
        used[i] = true;
        chosen.push(i);
        for p in &added {
            available.insert(p.clone());
        }
        dfs(
            snapshot, request, provided, max_len, chosen, used, available, results,
        );
        for p in &added {
            available.remove(p);
        }
        chosen.pop();
        used[i] = false;
    }
}

fn goals_covered(
    snapshot: &[RegistryEntry],
    request: &CompositeRequest,
    provided: &BTreeSet<ParameterSpec>,
    chosen: &[usize],
) -> bool {
    request.goals.iter().all(|g| {
        provided.contains(g)
            || chosen
                .iter()
                .any(|&i| snapshot[i].descriptor().outputs.contains(g))
    })
}

fn build_checklist(
    snapshot: &[RegistryEntry],
    request: &CompositeRequest,
    provided: &BTreeSet<ParameterSpec>,
    chosen: &[usize],
) -> Checklist {
    let earliest_step = |p: &ParameterSpec, before: usize| -> Option<usize> {
        (0..before).find(|&j| snapshot[chosen[j]].descriptor().outputs.contains(p))
    };

    let items = chosen
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let d = snapshot[i].descriptor();
            let bindings = d
                .inputs
                .iter()
                .map(|p| {
                    let source = if provided.contains(p) {
                        BindingSource::Provided
                    } else {
                        let step = earliest_step(p, pos)
                            .expect("applicability guaranteed an earlier producer");
                        BindingSource::StepOutput { step }
                    };
                    (p.name.clone(), source)
                })
                .collect();
            ChecklistItem {
                provider: d.provider.clone(),
                service_name: d.service_name.clone(),
                endpoint: d.endpoint.clone(),
                planned_status: d.status,
                inputs: d.inputs.clone(),
                outputs: d.outputs.clone(),
                bindings,
            }
        })
        .collect();

    let goal_sources = request
        .goals
        .iter()
        .map(|g| {
            let source = if provided.contains(g) {
                BindingSource::Provided
            } else {
                let step = earliest_step(g, chosen.len()).expect("goal coverage was checked");
                BindingSource::StepOutput { step }
            };
            (g.name.clone(), source)
        })
        .collect();

    Checklist {
        items,
        goal_sources,
    }
}

/// Plans one request: enumerate, then take the unique score minimum.
pub fn plan(
    snapshot: &[RegistryEntry],
    request: &CompositeRequest,
    max_len: usize,
) -> Result<ScoredPlan, PlanError> {
    enumerate(snapshot, request, max_len)?
        .into_iter()
        .map(|checklist| ScoredPlan {
            score: score_of(&checklist),
            checklist,
        })
        .min_by(|a, b| a.score.cmp(&b.score))
        .ok_or(PlanError::NoCandidatePlan)
}
